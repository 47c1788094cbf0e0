"""Run the bundled hand-checked fixtures through the public API and diff the results.

Each fixture directory holds ``input/``, ``expected/`` and ``oracle.md``;
derived fixtures also ship an ``oracle.py`` that recomputes ``expected/``
without importing this package.
"""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

FIXTURE_NAMES = ("timeline", "km_two_instance", "harrell_small", "uno_six", "brier_four", "auc_eight",
                 "pdc_shift", "identity_calibration")


@dataclass
class FixtureResult:
    name: str
    mismatches: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches


def fixtures_root() -> Path:
    return Path(str(resources.files("survrisk").joinpath("fixtures")))


def _json(path: Path) -> Any:
    return json.loads(path.read_text())


def _labels(path: Path, extra: str | None = None):
    rows = list(csv.DictReader(open(path, newline="")))
    t = np.array([float(r["time"]) for r in rows])
    e = np.array([int(r["event"]) for r in rows])
    x = np.array([float(r[extra]) for r in rows]) if extra else None
    return t, e, x


def _close(label: str, got: float, want: float, tol: float, out: list[str]) -> None:
    if tol == 0.0:
        ok = got == want
    else:
        ok = math.isclose(got, want, rel_tol=tol, abs_tol=tol)
    if not ok:
        out.append(f"{label}: got {got!r}, expected {want!r}")


def _timeline(d: Path, out: list[str]) -> None:
    from .ehr import load_dataset
    from .labeling import CohortSpec, EventKind, EventRecord, build_instances, label_table

    ds = load_dataset(d / "input")
    events = [EventRecord(r["patient_id"], EventKind(r["kind"]), date.fromisoformat(r["first_date"]))
              for r in csv.DictReader(open(d / "input" / "events.csv"))]
    spec = CohortSpec.from_dict(_json(d / "input" / "cohort.json"))
    got = []
    for row in label_table(ds, events, spec):
        na = "N.A."
        got.append([row.encounter_id, str(row.event_indicator),
                    na if row.time_to_event is None else str(row.time_to_event),
                    na if row.censored_time is None else str(row.censored_time),
                    str(row.observed_time), "" if row.used else row.remark])
    want = [r for r in csv.reader(open(d / "expected" / "label_table.csv"))][1:]
    if got != want:
        out.append(f"label table differs:\n got  {got}\n want {want}")
    used = [r[0] for r in want if r[5] == ""]
    inst = build_instances(ds, events, spec, _NoFeatures())
    if [i.encounter_id for i in inst] != used:
        out.append(f"instances {[i.encounter_id for i in inst]} != {used}")


class _NoFeatures:
    def extract(self, dataset, patient, encounter):
        return {}


def _km(d: Path, out: list[str]) -> None:
    from .survival import kaplan_meier

    t, e, _ = _labels(d / "input" / "labels.csv")
    km = kaplan_meier(t, e)
    for row in _json(d / "expected" / "km.json"):
        _close(f"S({row['time']})", float(km(row["time"])), row["survival"], 0.0, out)


def _harrell(d: Path, out: list[str]) -> None:
    from .evaluation import concordance_harrell

    t, e, s = _labels(d / "input" / "labels.csv", "score")
    _close("c_index", concordance_harrell(s, t, e), _json(d / "expected" / "c_index.json")["c_index"], 0.0, out)


def _uno(d: Path, out: list[str]) -> None:
    from .evaluation import concordance_uno

    t, e, s = _labels(d / "input" / "labels.csv", "score")
    _close("uno", concordance_uno(s, t, e), _json(d / "expected" / "uno.json")["c_index"], 1e-12, out)


def _brier(d: Path, out: list[str]) -> None:
    from .evaluation import brier_curve, integrated_brier

    rows = list(csv.DictReader(open(d / "input" / "labels.csv", newline="")))
    grid = _json(d / "input" / "grid.json")["grid"]
    t = np.array([float(r["time"]) for r in rows])
    e = np.array([int(r["event"]) for r in rows])
    surv = np.array([[float(r[f"s_{k + 1}"]) for k in range(len(grid))] for r in rows])
    want = _json(d / "expected" / "brier.json")
    bs = brier_curve(surv, t, e, grid)
    for k, g in enumerate(grid):
        _close(f"brier({g})", float(bs[k]), want["brier"][k], 1e-12, out)
    _close("ibs", integrated_brier(grid, bs), want["ibs"], 1e-12, out)


def _auc(d: Path, out: list[str]) -> None:
    from .evaluation import time_dependent_auc

    t, e, p = _labels(d / "input" / "labels.csv", "prob")
    want = _json(d / "expected" / "auc.json")
    _close("auc", time_dependent_auc(p, t, e, want["t"]), want["auc"], 0.0, out)


def _pdc(d: Path, out: list[str]) -> None:
    from .adherence import CombineRule, coverage_timeline, mpr, pdc, pdc_multiclass
    from .ehr import DispensingRecord, Route

    base = date(2020, 1, 1)
    periods = _json(d / "input" / "periods.json")["period_days"]
    scen: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for r in csv.DictReader(open(d / "input" / "fills.csv", newline="")):
        scen[r["scenario"]][r["drug_class"]].append(DispensingRecord(
            "P", r["drug_class"], base + timedelta(days=int(r["fill_day"])), int(r["days_supply"]), Route(r["route"])))
    want = _json(d / "expected" / "adherence.json")
    for name, classes in scen.items():
        n = periods[name]
        w = want[name]
        for cls, fills in classes.items():
            _close(f"{name}/{cls} pdc", pdc(fills, base, n).pdc, w["per_class_pdc"][cls], 0.0, out)
            _close(f"{name}/{cls} mpr", mpr(fills, base, n), w["per_class_mpr"][cls], 0.0, out)
            got_days = coverage_timeline(fills, base, n).numerator
            if got_days != w["per_class_covered_days"][cls]:
                out.append(f"{name}/{cls} covered days {got_days} != {w['per_class_covered_days'][cls]}")
        if len(classes) > 1:
            for rule in CombineRule:
                _close(f"{name} {rule.value}", pdc_multiclass(classes, base, n, rule=rule).pdc, w[rule.value], 0.0,
                       out)


def _identity(d: Path, out: list[str]) -> None:
    from .calibration import CalibratedModel, compare_before_after
    from .survival import CoxModel

    rows = list(csv.DictReader(open(d / "input" / "cohort.csv", newline="")))
    X = np.array([[float(r["x1"]), float(r["x2"])] for r in rows])
    t = np.array([float(r["time"]) for r in rows])
    e = np.array([int(r["event"]) for r in rows])
    model = CoxModel.from_dict(_json(d / "input" / "model.json"))
    report = compare_before_after(model, CalibratedModel.identity(model), X, t, e)
    want = _json(d / "expected" / "equal_pairs.json")
    for a, b in want["equal_pairs"]:
        if report[a] != report[b]:
            out.append(f"{a}={report[a]!r} differs from {b}={report[b]!r}")
    _close("kendall_tau", report["kendall_tau"], want["kendall_tau"], 0.0, out)
    _close("beta_cal", report["beta_cal"], want["beta_cal"], 0.0, out)


RUNNERS: dict[str, Callable[[Path, list[str]], None]] = {
    "timeline": _timeline,
    "km_two_instance": _km,
    "harrell_small": _harrell,
    "uno_six": _uno,
    "brier_four": _brier,
    "auc_eight": _auc,
    "pdc_shift": _pdc,
    "identity_calibration": _identity,
}


def verify_fixtures(root: str | Path | None = None) -> list[FixtureResult]:
    """Pass/fail per fixture with itemized mismatches."""
    base = Path(root) if root is not None else fixtures_root()
    results = []
    for name in FIXTURE_NAMES:
        res = FixtureResult(name)
        d = base / name
        if not (d / "expected").is_dir() or not (d / "oracle.md").exists():
            res.mismatches.append(f"fixture directory incomplete: {d}")
        else:
            try:
                RUNNERS[name](d, res.mismatches)
            except Exception as exc:  # report, don't abort the suite
                res.mismatches.append(f"{type(exc).__name__}: {exc}")
        results.append(res)
    return results
