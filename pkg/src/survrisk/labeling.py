"""Clinical event detection and right-censored instance construction."""
from __future__ import annotations

import csv
import enum
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .ehr import Dataset, Encounter, LabKind, LabResult, LabSetting, Patient
from .errors import EmptyCohort, InvalidConfig

DAYS_PER_MONTH = 30.4375


class EventKind(str, enum.Enum):
    PreDM = "PreDM"
    DM = "DM"
    UncontrolledDM = "UncontrolledDM"
    DiabeticNephropathy = "DiabeticNephropathy"
    DiabeticNeuropathy = "DiabeticNeuropathy"
    DiabeticRetinopathy = "DiabeticRetinopathy"
    T1DM = "T1DM"


class Task(str, enum.Enum):
    PreDMtoDM = "PreDMtoDM"
    DMtoUncontrolled = "DMtoUncontrolled"
    PreDMtoUncontrolled = "PreDMtoUncontrolled"
    DMtoNephropathy = "DMtoNephropathy"
    DMtoNeuropathy = "DMtoNeuropathy"
    DMtoRetinopathy = "DMtoRetinopathy"


E = EventKind
# task -> (prerequisite kinds (any), target kinds (earliest), extra exclusion kinds)
TASK_EVENTS: dict[Task, tuple[tuple[EventKind, ...], tuple[EventKind, ...], tuple[EventKind, ...]]] = {
    Task.PreDMtoDM: ((E.PreDM,), (E.DM, E.UncontrolledDM), ()),
    Task.DMtoUncontrolled: ((E.DM,), (E.UncontrolledDM,), ()),
    Task.PreDMtoUncontrolled: ((E.PreDM,), (E.UncontrolledDM,), (E.DM,)),
    Task.DMtoNephropathy: ((E.DM, E.UncontrolledDM), (E.DiabeticNephropathy,), ()),
    Task.DMtoNeuropathy: ((E.DM, E.UncontrolledDM), (E.DiabeticNeuropathy,), ()),
    Task.DMtoRetinopathy: ((E.DM, E.UncontrolledDM), (E.DiabeticRetinopathy,), ()),
}

ICD_PREFIXES: dict[EventKind, tuple[str, ...]] = {
    E.DiabeticNephropathy: ("E11.2",),
    E.DiabeticNeuropathy: ("E11.4",),
    E.DiabeticRetinopathy: ("E11.3",),
    E.T1DM: ("E10",),
}


def normalize_code(code: str) -> str:
    return code.strip().upper().replace(".", "")


def code_matches(code: str, prefixes: Iterable[str]) -> bool:
    c = normalize_code(code)
    return any(c.startswith(normalize_code(p)) for p in prefixes)


def months_between(start: date, end: date) -> int:
    """Whole months from ``start`` to ``end``; 30.4375-day months, truncated toward zero."""
    return int((end - start).days / DAYS_PER_MONTH)


@dataclass(frozen=True)
class DetectionCriteria:
    """Diagnostic thresholds; glucose in mg/dL, A1C in percent."""

    prediabetes_a1c: tuple[float, float] = (5.7, 6.4)
    prediabetes_fpg: tuple[float, float] = (100.0, 125.0)
    prediabetes_2hpg: tuple[float, float] = (140.0, 199.0)
    prediabetes_rpg: tuple[float, float] = (140.0, 199.0)
    diabetes_a1c: float = 6.5
    diabetes_fpg: float = 126.0
    diabetes_2hpg: float = 200.0
    diabetes_rpg: float = 200.0
    diabetes_window_days: int = 27
    uncontrolled_a1c: float = 9.0

    def is_prediabetic(self, lab: LabResult) -> bool:
        if lab.kind is LabKind.A1C:
            lo, hi = self.prediabetes_a1c
            return lo <= lab.value <= hi
        if lab.setting is not LabSetting.OUTPATIENT:
            return False
        lo, hi = {LabKind.FPG: self.prediabetes_fpg, LabKind.TWO_HOUR_PG: self.prediabetes_2hpg,
                  LabKind.RPG: self.prediabetes_rpg}[lab.kind]
        return lo <= lab.value <= hi

    def is_diabetic(self, lab: LabResult) -> bool:
        if lab.kind is LabKind.A1C:
            return lab.value >= self.diabetes_a1c
        if lab.setting is not LabSetting.OUTPATIENT:
            return False
        return lab.value >= {LabKind.FPG: self.diabetes_fpg, LabKind.TWO_HOUR_PG: self.diabetes_2hpg,
                             LabKind.RPG: self.diabetes_rpg}[lab.kind]


@dataclass(frozen=True, order=True)
class EventRecord:
    patient_id: str
    kind: EventKind
    first_date: date


def _detect_patient(pid: str, labs: Sequence[LabResult], encounters: Sequence[Encounter],
                    crit: DetectionCriteria) -> list[EventRecord]:
    found: dict[EventKind, date] = {}
    for lab in labs:
        if E.PreDM not in found and crit.is_prediabetic(lab):
            found[E.PreDM] = lab.date
        if E.UncontrolledDM not in found and lab.kind is LabKind.A1C and lab.value >= crit.uncontrolled_a1c:
            found[E.UncontrolledDM] = lab.date
    abnormal = sorted(lab.date for lab in labs if crit.is_diabetic(lab))
    for prev, cur in zip(abnormal, abnormal[1:]):
        if (cur - prev).days <= crit.diabetes_window_days:
            found[E.DM] = cur
            break
    for enc in encounters:
        for kind, prefixes in ICD_PREFIXES.items():
            if kind not in found and any(code_matches(c, prefixes) for c in enc.diagnoses):
                found[kind] = enc.date
    return [EventRecord(pid, k, found[k]) for k in EventKind if k in found]


def detect_events(dataset: Dataset, criteria: DetectionCriteria | None = None) -> list[EventRecord]:
    """First-occurrence date of every event kind per patient.

    A DM event needs two abnormal results dated 0-27 days apart and is dated
    at the second one; the other kinds are dated at their first qualifying
    lab or diagnosis.
    """
    crit = criteria or DetectionCriteria()
    out: list[EventRecord] = []
    for p in dataset.patients:
        out.extend(_detect_patient(p.patient_id, dataset.labs_by_patient.get(p.patient_id, []),
                                   dataset.encounters_by_patient.get(p.patient_id, []), crit))
    return out


def events_by_patient(events: Iterable[EventRecord]) -> dict[str, dict[EventKind, date]]:
    out: dict[str, dict[EventKind, date]] = {}
    for ev in events:
        slot = out.setdefault(ev.patient_id, {})
        if ev.kind in slot and slot[ev.kind] != ev.first_date:
            raise ValueError(f"duplicate {ev.kind.value} record for patient {ev.patient_id}")
        slot[ev.kind] = ev.first_date
    return out


@dataclass(frozen=True)
class CohortSpec:
    task: Task
    window: tuple[date, date] = (date(2016, 1, 1), date(2020, 6, 30))
    min_age: int = 18
    max_age: int = 110
    left_censor_days: int = 90
    confirmation_lookahead_days: int = 6
    prerequisite: tuple[EventKind, ...] | None = None
    target: tuple[EventKind, ...] | None = None
    exclude: tuple[EventKind, ...] | None = None
    pregnancy_codes: tuple[str, ...] = ("O", "Z33", "Z34")
    pregnancy_lookback_days: int = 280
    dnr_codes: tuple[str, ...] = ("Z66",)

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if not self.min_age < self.max_age:
            raise InvalidConfig("min_age must be below max_age")
        if self.window[0] > self.window[1]:
            raise InvalidConfig("cohort window is empty")
        pre, tgt, exc = TASK_EVENTS[self.task]
        for name, default in (("prerequisite", pre), ("target", tgt), ("exclude", exc)):
            val = getattr(self, name)
            object.__setattr__(self, name, default if val is None else tuple(EventKind(v) for v in val))
        if not self.target:
            raise InvalidConfig("cohort needs at least one target event kind")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CohortSpec":
        d = dict(d)
        if "window" in d:
            d["window"] = tuple(date.fromisoformat(x) if isinstance(x, str) else x for x in d["window"])
        for key in ("pregnancy_codes", "dnr_codes"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass(frozen=True)
class SurvivalInstance:
    patient_id: str
    encounter_id: str
    encounter_date: date
    features: dict[str, Any] = field(hash=False)
    event_indicator: int
    observed_time: int
    history_months: int = 0

    def __post_init__(self):
        if self.event_indicator not in (0, 1):
            raise ValueError("event_indicator must be 0 or 1")
        if self.observed_time < 0:
            raise ValueError("observed_time must be >= 0")


@dataclass(frozen=True)
class LabelRow:
    """One encounter's label before the usability filters, as in a label table."""

    patient_id: str
    encounter_id: str
    encounter_date: date
    event_indicator: int
    time_to_event: int | None
    censored_time: int | None
    observed_time: int
    used: bool
    remark: str = ""


class FeatureExtractor(Protocol):
    def extract(self, dataset: Dataset, patient: Patient, encounter: Encounter) -> dict[str, Any]: ...


def _patient_label_rows(dataset: Dataset, patient: Patient, evs: dict[EventKind, date],
                        spec: CohortSpec) -> list[LabelRow]:
    encs = dataset.encounters_by_patient.get(patient.patient_id, [])
    if not encs:
        return []
    censor = min(encs[-1].date, dataset.observation_end)
    targets = [evs[k] for k in spec.target if k in evs and evs[k] <= dataset.observation_end]
    target = min(targets) if targets else None
    first = encs[0].date
    lookahead = timedelta(days=spec.confirmation_lookahead_days)
    t1dm = E.T1DM in evs
    preg = [e.date for e in encs if any(code_matches(c, spec.pregnancy_codes) for c in e.diagnoses)]
    dnr = [e.date for e in encs if any(code_matches(c, spec.dnr_codes) for c in e.diagnoses)]

    rows = []
    for enc in encs:
        d = enc.date
        if target is not None:
            y = months_between(d, target)
            row = dict(event_indicator=1, time_to_event=y, censored_time=None, observed_time=y)
        else:
            y = months_between(d, censor)
            row = dict(event_indicator=0, time_to_event=None, censored_time=y, observed_time=y)
        remark = ""
        age = patient.age_at(d)
        if not (spec.window[0] <= d <= spec.window[1]):
            remark = "outside window"
        elif (d - first).days < spec.left_censor_days:
            remark = f"within first {spec.left_censor_days} days"
        elif not (spec.min_age <= age <= spec.max_age):
            remark = "age out of range"
        elif t1dm:
            remark = "T1DM"
        elif any(0 <= (d - p).days <= spec.pregnancy_lookback_days for p in preg):
            remark = "pregnant"
        elif any(x <= d for x in dnr):
            remark = "do not resuscitate"
        elif spec.prerequisite and not any(k in evs and evs[k] < d for k in spec.prerequisite):
            remark = "no prerequisite event"
        elif any(k in evs and evs[k] <= d + lookahead for k in spec.exclude):
            remark = "excluded event"
        elif target is not None and target < d:
            remark = "Not used (y <= 0)"
        elif target is not None and target <= d + lookahead:
            remark = "event within confirmation lookahead"
        elif row["event_indicator"] == 1 and y <= 0:
            remark = "Not used (y <= 0)"
        rows.append(LabelRow(patient.patient_id, enc.encounter_id, d, used=not remark, remark=remark, **row))
    return rows


def label_table(dataset: Dataset, events: Iterable[EventRecord], spec: CohortSpec) -> list[LabelRow]:
    """Label every encounter and mark the ones the cohort filters drop."""
    evs = events_by_patient(events)
    rows = []
    for p in dataset.patients:
        rows.extend(_patient_label_rows(dataset, p, evs.get(p.patient_id, {}), spec))
    return rows


def build_instances(dataset: Dataset, events: Iterable[EventRecord], spec: CohortSpec,
                    features: FeatureExtractor | None = None) -> list[SurvivalInstance]:
    """Right-censored survival instances, one per eligible encounter.

    Raises
    ------
    EmptyCohort
        If no encounter survives the cohort filters.
    """
    if features is None:
        from .features import EncounterFeatures

        features = EncounterFeatures()
    enc_index = {e.encounter_id: e for e in dataset.encounters}
    out = []
    for row in label_table(dataset, events, spec):
        if not row.used:
            continue
        patient = dataset.patient_index[row.patient_id]
        enc = enc_index[row.encounter_id]
        first = dataset.encounters_by_patient[row.patient_id][0].date
        out.append(SurvivalInstance(
            row.patient_id, row.encounter_id, row.encounter_date,
            features.extract(dataset, patient, enc),
            row.event_indicator, row.observed_time, months_between(first, row.encounter_date),
        ))
    if not out:
        raise EmptyCohort(f"no encounter survives the {spec.task.value} cohort filters")
    return out


def split_train_test(instances: Sequence[SurvivalInstance], fraction: float = 0.70,
                     seed: int = 0) -> tuple[list[SurvivalInstance], list[SurvivalInstance]]:
    """Random instance-level partition; both halves keep the input order."""
    if not instances:
        raise ValueError("cannot split an empty instance list")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be within [0, 1]")
    n = len(instances)
    n_train = int(math.floor(fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = set(perm[:n_train].tolist())
    train = [inst for i, inst in enumerate(instances) if i in train_idx]
    test = [inst for i, inst in enumerate(instances) if i not in train_idx]
    return train, test


def split_summary(train: Sequence[SurvivalInstance], test: Sequence[SurvivalInstance]) -> dict[str, dict[str, int]]:
    def counts(rows):
        events = sum(r.event_indicator for r in rows)
        return {"instances": len(rows), "events": events, "censored": len(rows) - events,
                "patients": len({r.patient_id for r in rows})}

    return {"train": counts(train), "test": counts(test)}


def cohort_summary(dataset: Dataset, instances: Sequence[SurvivalInstance]) -> dict[str, int]:
    return {
        "patients_total": len(dataset.patients),
        "encounters_total": len(dataset.encounters),
        "patients_in_cohort": len({i.patient_id for i in instances}),
        "encounters_in_cohort": len(instances),
        "events": sum(i.event_indicator for i in instances),
    }


def labels_of(instances: Sequence[SurvivalInstance]) -> tuple[np.ndarray, np.ndarray]:
    """(observed_time, event_indicator) arrays."""
    t = np.array([i.observed_time for i in instances], dtype=float)
    e = np.array([i.event_indicator for i in instances], dtype=int)
    return t, e


INSTANCE_COLUMNS = ("patient_id", "encounter_id", "encounter_date", "event_indicator", "observed_time")


def write_instances(instances: Sequence[SurvivalInstance], path: str | Path,
                    feature_names: Sequence[str] | None = None) -> None:
    if feature_names is None:
        feature_names = list(instances[0].features) if instances else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*INSTANCE_COLUMNS, *feature_names])
        for inst in instances:
            vals = []
            for name in feature_names:
                v = inst.features.get(name)
                vals.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else v)
            w.writerow([inst.patient_id, inst.encounter_id, inst.encounter_date.isoformat(),
                        inst.event_indicator, inst.observed_time, *vals])


def read_instances(path: str | Path) -> tuple[list[SurvivalInstance], list[str]]:
    """Read an instance CSV; label columns are optional (scoring input).

    Returns the instances and the feature column names found in the file.
    """
    instances = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        feature_names = [c for c in header if c not in INSTANCE_COLUMNS and c != "history_months"]
        for row in reader:
            feats = {}
            for name in feature_names:
                raw = row[name]
                if raw is None or raw == "":
                    feats[name] = math.nan
                else:
                    try:
                        feats[name] = float(raw)
                    except ValueError:
                        feats[name] = raw
            instances.append(SurvivalInstance(
                row.get("patient_id", ""), row.get("encounter_id", ""),
                date.fromisoformat(row["encounter_date"]) if row.get("encounter_date") else date.min,
                feats, int(row.get("event_indicator") or 0), int(row.get("observed_time") or 0),
                int(row.get("history_months") or 0),
            ))
    return instances, feature_names


def with_features(inst: SurvivalInstance, features: dict[str, Any]) -> SurvivalInstance:
    return replace(inst, features=features)
