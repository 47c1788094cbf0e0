"""Medication adherence from dispensing records: PDC, MPR and the adherence label.

Coverage is walked day by day. Overlapping fills are shifted to start the day
after the previous supply runs out, so PDC never exceeds 1. Hospital days are
removed from both numerator and denominator; supply is still consumed on them.
"""
from __future__ import annotations

import csv
import enum
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Any

import numpy as np

from .ehr import Dataset, DispensingRecord, EncounterType, Route
from .errors import EmptyPeriod

INSULIN_FACTOR = (45, 30)
DEFAULT_THRESHOLD = 0.80
DEFAULT_GAP_DAYS = 90
PERIOD_DAYS = 365


class CombineRule(str, enum.Enum):
    ANY_COVERED = "AnyCovered"
    ALL_COVERED = "AllCovered"
    MEAN_OF_CLASS_MEANS = "MeanOfClassMeans"


def effective_supply(fill: DispensingRecord, insulin_adjust: bool = True) -> int:
    """Days supplied, scaled by 45/30 (rounded half up) for insulin when adjusting."""
    if insulin_adjust and fill.route is Route.INSULIN:
        num, den = INSULIN_FACTOR
        return (2 * fill.days_supply * num + den) // (2 * den)
    return fill.days_supply


@dataclass(frozen=True)
class CoverageTimeline:
    start: date
    covered: np.ndarray
    excluded: np.ndarray

    @property
    def days(self) -> int:
        return len(self.covered)

    @property
    def denominator(self) -> int:
        return int(np.count_nonzero(~self.excluded))

    @property
    def numerator(self) -> int:
        return int(np.count_nonzero(self.covered & ~self.excluded))

    def pdc(self) -> float:
        if self.denominator == 0:
            raise EmptyPeriod("period has no countable days")
        return self.numerator / self.denominator

    def longest_gap(self) -> int:
        """Longest run of uncovered days, skipping excluded days."""
        best = run = 0
        for cov, exc in zip(self.covered, self.excluded):
            if exc:
                continue
            run = 0 if cov else run + 1
            best = max(best, run)
        return best


def _in_period(fills: Iterable[DispensingRecord], start: date, days: int) -> list[DispensingRecord]:
    end = start + timedelta(days=days)
    return sorted((f for f in fills if start <= f.fill_date < end), key=lambda f: (f.fill_date, f.days_supply))


def coverage_timeline(fills: Sequence[DispensingRecord], start: date, days: int,
                      hospital_days: Iterable[date] = (), insulin_adjust: bool = True,
                      shift: bool = True) -> CoverageTimeline:
    """Per-day coverage over ``[start, start + days)`` from fills dated inside the period.

    Raises
    ------
    EmptyPeriod
    """
    if days <= 0:
        raise EmptyPeriod("period length must be positive")
    covered = np.zeros(days, dtype=bool)
    excluded = np.zeros(days, dtype=bool)
    for d in hospital_days:
        k = (d - start).days
        if 0 <= k < days:
            excluded[k] = True
    next_free = 0
    for f in _in_period(fills, start, days):
        s = (f.fill_date - start).days
        if shift:
            s = max(s, next_free)
        e = s + effective_supply(f, insulin_adjust)
        covered[min(s, days):min(e, days)] = True
        next_free = max(next_free, e)
    return CoverageTimeline(start, covered, excluded)


@dataclass(frozen=True)
class AdherenceResult:
    pdc: float
    mpr: float
    threshold: float = DEFAULT_THRESHOLD
    longest_gap: int = 0
    gap_days: int = DEFAULT_GAP_DAYS

    @property
    def label(self) -> bool:
        return self.pdc >= self.threshold

    @property
    def gap_discontinued(self) -> bool:
        return self.longest_gap >= self.gap_days


def mpr(fills: Sequence[DispensingRecord], start: date, days: int, insulin_adjust: bool = False) -> float:
    """Total days supplied by fills dated in the period over the period length; may exceed 1.

    Raises
    ------
    EmptyPeriod
    """
    if days <= 0:
        raise EmptyPeriod("period length must be positive")
    return sum(effective_supply(f, insulin_adjust) for f in _in_period(fills, start, days)) / days


def pdc(fills: Sequence[DispensingRecord], start: date, days: int, hospital_days: Iterable[date] = (),
        insulin_adjust: bool = True, threshold: float = DEFAULT_THRESHOLD,
        gap_days: int = DEFAULT_GAP_DAYS) -> AdherenceResult:
    """Proportion of days covered for one drug class.

    Raises
    ------
    EmptyPeriod
    """
    tl = coverage_timeline(fills, start, days, hospital_days, insulin_adjust)
    return AdherenceResult(tl.pdc(), mpr(fills, start, days, insulin_adjust), threshold, tl.longest_gap(), gap_days)


def pdc_multiclass(fills_by_class: Mapping[str, Sequence[DispensingRecord]], start: date, days: int,
                   hospital_days: Iterable[date] = (), rule: CombineRule | str = CombineRule.ALL_COVERED,
                   insulin_adjust: bool = True, threshold: float = DEFAULT_THRESHOLD,
                   gap_days: int = DEFAULT_GAP_DAYS) -> AdherenceResult:
    """Combine several drug classes into one PDC.

    ``AnyCovered`` counts a day when any class covers it, ``AllCovered``
    when every class does, and ``MeanOfClassMeans`` averages per-class PDCs.
    The reported MPR is the mean of per-class MPRs.

    Raises
    ------
    EmptyPeriod
    """
    rule = CombineRule(rule)
    if not fills_by_class:
        raise ValueError("at least one drug class is required")
    hospital_days = list(hospital_days)
    timelines = [coverage_timeline(f, start, days, hospital_days, insulin_adjust) for f in fills_by_class.values()]
    ratio = float(np.mean([mpr(f, start, days, insulin_adjust) for f in fills_by_class.values()]))
    excluded = timelines[0].excluded
    if rule is CombineRule.MEAN_OF_CLASS_MEANS:
        value = float(np.mean([t.pdc() for t in timelines]))
        gap = max(t.longest_gap() for t in timelines)
        return AdherenceResult(value, ratio, threshold, gap, gap_days)
    stack = np.vstack([t.covered for t in timelines])
    covered = stack.any(axis=0) if rule is CombineRule.ANY_COVERED else stack.all(axis=0)
    tl = CoverageTimeline(start, covered, excluded)
    return AdherenceResult(tl.pdc(), ratio, threshold, tl.longest_gap(), gap_days)


def hospital_days_by_patient(dataset: Dataset) -> dict[str, set[date]]:
    out: dict[str, set[date]] = defaultdict(set)
    for enc in dataset.encounters:
        if enc.encounter_type is EncounterType.INPATIENT:
            out[enc.patient_id].add(enc.date)
    return out


ADHERENCE_COLUMNS = ("patient_id", "drug_class", "pdc", "mpr", "label", "gap_discontinued")


def adherence_table(dataset: Dataset, period_days: int = PERIOD_DAYS, threshold: float = DEFAULT_THRESHOLD,
                    insulin_adjust: bool = True, rule: CombineRule | str = CombineRule.ALL_COVERED,
                    gap_days: int = DEFAULT_GAP_DAYS) -> list[dict[str, Any]]:
    """Per-patient, per-class adherence over the year starting at the patient's first fill.

    Patients with more than one class also get a combined row (``drug_class`` = ``ALL``).
    """
    by_patient: dict[str, dict[str, list[DispensingRecord]]] = defaultdict(lambda: defaultdict(list))
    for f in dataset.dispensings:
        by_patient[f.patient_id][f.drug_class].append(f)
    hosp = hospital_days_by_patient(dataset)
    rows = []
    for pid in sorted(by_patient):
        classes = by_patient[pid]
        start = min(f.fill_date for fs in classes.values() for f in fs)
        days = period_days
        for cls in sorted(classes):
            res = pdc(classes[cls], start, days, hosp.get(pid, ()), insulin_adjust, threshold, gap_days)
            rows.append(_row(pid, cls, res))
        if len(classes) > 1:
            res = pdc_multiclass(classes, start, days, hosp.get(pid, ()), rule, insulin_adjust, threshold, gap_days)
            rows.append(_row(pid, "ALL", res))
    return rows


def _row(pid: str, cls: str, res: AdherenceResult) -> dict[str, Any]:
    return {"patient_id": pid, "drug_class": cls, "pdc": res.pdc, "mpr": res.mpr, "label": int(res.label),
            "gap_discontinued": int(res.gap_discontinued)}


def write_adherence(rows: Sequence[Mapping[str, Any]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ADHERENCE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
