"""Censoring-aware evaluation of survival predictions.

Inverse-probability-of-censoring weights use the Kaplan-Meier estimate of the
censoring distribution (event indicator flipped), evaluated just before each
event time. Weights are truncated where that estimate drops below
``G_FLOOR``.
"""
from __future__ import annotations

import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Any

import numpy as np

from .errors import (
    DegenerateWeights, NoComparablePairs, NoCoveredInstances, OneClassOnly, TruncationWarning,
)
from .survival import KMCurve, kaplan_meier

HORIZONS = (3, 6, 9, 12, 18, 24)
THRESHOLD_GRID = np.round(np.arange(101) / 100.0, 2)
G_FLOOR = 0.05
HISTORY_BUCKETS = ((0, 6, "<=6"), (7, 12, "7-12"), (13, 24, "13-24"), (25, 36, "25-36"), (37, 60, "37-60"))


def _labels(time, event):
    return np.asarray(time, dtype=float), np.asarray(event, dtype=int)


def censoring_km(time, event) -> KMCurve:
    time, event = _labels(time, event)
    return kaplan_meier(time, 1 - event)


# ---------------------------------------------------------------------------
# concordance

def _pair_counts(risk, time, event, rows, chunk: int = 512):
    """Per-row (concordant, tied, comparable) counts against later-time rows."""
    conc = np.zeros(len(rows), dtype=np.int64)
    ties = np.zeros(len(rows), dtype=np.int64)
    comp = np.zeros(len(rows), dtype=np.int64)
    for lo in range(0, len(rows), chunk):
        idx = rows[lo:lo + chunk]
        later = time[None, :] > time[idx][:, None]
        r = risk[idx][:, None]
        conc[lo:lo + chunk] = np.sum(later & (risk[None, :] < r), axis=1)
        ties[lo:lo + chunk] = np.sum(later & (risk[None, :] == r), axis=1)
        comp[lo:lo + chunk] = np.sum(later, axis=1)
    return conc, ties, comp


def concordance_harrell(risk, time, event) -> float:
    """Fraction of comparable pairs ordered correctly; score ties count 1/2.

    A pair (i, j) is comparable when ``time[i] < time[j]`` and ``event[i] == 1``.
    """
    risk = np.asarray(risk, dtype=float)
    time, event = _labels(time, event)
    rows = np.flatnonzero(event == 1)
    conc, ties, comp = _pair_counts(risk, time, event, rows)
    pairs = int(comp.sum())
    if pairs == 0:
        raise NoComparablePairs("no comparable pairs")
    return (int(conc.sum()) + 0.5 * int(ties.sum())) / pairs


def concordance_uno(risk, time, event, censoring: KMCurve | None = None, floor: float = G_FLOOR) -> float:
    """IPCW concordance with weights ``1 / G(y_i-)**2``.

    Events whose censoring-survival weight falls below ``floor`` are dropped
    (truncation), with a :class:`TruncationWarning`.
    """
    risk = np.asarray(risk, dtype=float)
    time, event = _labels(time, event)
    G = censoring if censoring is not None else censoring_km(time, event)
    rows = np.flatnonzero(event == 1)
    g = G.left(time[rows])
    keep = g >= floor if floor > 0 else g > 0
    if floor <= 0 and not keep.all():
        raise DegenerateWeights("censoring survival reaches 0 at an event time")
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} events truncated where censoring survival < {floor}",
                      TruncationWarning, stacklevel=2)
    rows, g = rows[keep], g[keep]
    conc, ties, comp = _pair_counts(risk, time, event, rows)
    w = 1.0 / (g * g)
    den = math.fsum(w * comp)
    if den == 0:
        raise NoComparablePairs("no comparable pairs after truncation")
    return math.fsum(w * (conc + 0.5 * ties)) / den


# ---------------------------------------------------------------------------
# Brier score

def brier_score(surv_at_t, time, event, t: float, censoring: KMCurve | None = None) -> float:
    """IPCW Brier score at ``t`` for predicted survival probabilities ``S(t|x)``."""
    s = np.asarray(surv_at_t, dtype=float)
    time, event = _labels(time, event)
    G = censoring if censoring is not None else censoring_km(time, event)
    g_t = float(G(t))
    if g_t <= 0:
        raise DegenerateWeights(f"censoring survival is 0 at t={t}")
    died = (time <= t) & (event == 1)
    alive = time > t
    terms = np.zeros(len(s))
    g_i = G.left(time[died])
    if np.any(g_i <= 0):
        raise DegenerateWeights("censoring survival is 0 before an event time")
    terms[died] = s[died] ** 2 / g_i
    terms[alive] = (1.0 - s[alive]) ** 2 / g_t
    # the KM weights sum to n, so values past [0, 1] are rounding only
    return float(np.clip(terms.sum() / len(s), 0.0, 1.0))


def brier_curve(surv, time, event, grid, censoring: KMCurve | None = None) -> np.ndarray:
    """Brier score at every grid time; ``surv`` has one column per grid time."""
    surv = np.asarray(surv, dtype=float)
    time, event = _labels(time, event)
    G = censoring if censoring is not None else censoring_km(time, event)
    return np.array([brier_score(surv[:, k], time, event, t, G) for k, t in enumerate(grid)])


def integrated_brier(grid, scores) -> float:
    """Trapezoid integral of the Brier curve divided by the grid span."""
    grid = np.asarray(grid, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if len(grid) == 1:
        return float(scores[0])
    area = float(np.sum((grid[1:] - grid[:-1]) * (scores[1:] + scores[:-1]) / 2.0))
    return area / float(grid[-1] - grid[0])


def evaluation_grid(time, event, floor: float = G_FLOOR, max_time: float | None = None) -> np.ndarray:
    """Whole months from 1 up to (not including) the last observed time, cut
    where the censoring survival falls below ``floor``."""
    time, event = _labels(time, event)
    top = float(time.max()) if max_time is None else min(float(time.max()), max_time)
    grid = np.arange(1, int(math.ceil(top)), dtype=float)
    grid = grid[grid < time.max()]
    if grid.size:
        G = censoring_km(time, event)
        grid = grid[G(grid) >= floor]
    if grid.size == 0:
        grid = np.array([float(np.min(time[time > 0])) if np.any(time > 0) else 1.0])
    return grid


# ---------------------------------------------------------------------------
# horizon classification

def _mann_whitney(pos, neg) -> float:
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    greater = 0
    ties = 0
    for lo in range(0, len(pos), 1024):
        block = pos[lo:lo + 1024, None]
        greater += int(np.sum(block > neg[None, :]))
        ties += int(np.sum(block == neg[None, :]))
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def horizon_split(time, event, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Masks of instances with the event by ``t`` and instances known event-free at ``t``."""
    time, event = _labels(time, event)
    return (time <= t) & (event == 1), time > t


def time_dependent_auc(prob, time, event, t: float) -> float:
    """AUC of event probabilities at ``t``; instances censored before ``t`` are excluded."""
    prob = np.asarray(prob, dtype=float)
    pos, neg = horizon_split(time, event, t)
    if not pos.any() or not neg.any():
        raise OneClassOnly(f"only one class present at t={t}")
    return _mann_whitney(prob[pos], prob[neg])


@dataclass(frozen=True)
class HorizonResult:
    t: float
    n_positive: int
    n_negative: int
    auc: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    balanced_accuracy: float | None = None
    threshold: float | None = None


def threshold_table(prob, time, event, t: float, grid=THRESHOLD_GRID) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sensitivity, specificity and balanced accuracy per grid threshold (``p >= threshold`` is positive)."""
    prob = np.asarray(prob, dtype=float)
    pos, neg = horizon_split(time, event, t)
    grid = np.asarray(grid, dtype=float)
    sens = np.array([np.count_nonzero(prob[pos] >= thr) for thr in grid]) / max(pos.sum(), 1)
    spec = np.array([np.count_nonzero(prob[neg] < thr) for thr in grid]) / max(neg.sum(), 1)
    return sens, spec, (sens + spec) / 2.0


def horizon_classification(prob, time, event, t: float, grid=THRESHOLD_GRID) -> HorizonResult:
    """AUC plus the balanced-accuracy-optimal threshold at horizon ``t``.

    Ties between thresholds go to the smallest one.

    Raises
    ------
    OneClassOnly
    """
    pos, neg = horizon_split(time, event, t)
    if not pos.any() or not neg.any():
        raise OneClassOnly(f"only one class present at t={t}")
    sens, spec, bal = threshold_table(prob, time, event, t, grid)
    k = int(np.argmax(bal))
    return HorizonResult(float(t), int(pos.sum()), int(neg.sum()), time_dependent_auc(prob, time, event, t),
                         float(sens[k]), float(spec[k]), float(bal[k]), float(np.asarray(grid)[k]))


def horizon_or_undefined(prob, time, event, t: float, threshold: float | None = None) -> HorizonResult:
    """Like :func:`horizon_classification` but returns null metrics for one-class horizons.

    With ``threshold`` given, sensitivity/specificity are reported at that
    threshold instead of re-optimizing.
    """
    pos, neg = horizon_split(time, event, t)
    if not pos.any() or not neg.any():
        return HorizonResult(float(t), int(pos.sum()), int(neg.sum()))
    if threshold is None:
        return horizon_classification(prob, time, event, t)
    prob = np.asarray(prob, dtype=float)
    sens = float(np.mean(prob[pos] >= threshold))
    spec = float(np.mean(prob[neg] < threshold))
    return HorizonResult(float(t), int(pos.sum()), int(neg.sum()), time_dependent_auc(prob, time, event, t),
                         sens, spec, (sens + spec) / 2.0, float(threshold))


# ---------------------------------------------------------------------------
# risk stratification

def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    k = max(1, int(math.ceil(pct / 100.0 * len(v))))
    return float(v[k - 1])


@dataclass(frozen=True)
class Stratification:
    tiers: list[str]
    low_cut: float
    high_cut: float
    counts: dict[str, int]
    ranges: dict[str, tuple[float | None, float | None]]

    def table(self) -> list[dict[str, Any]]:
        pct = {"Low": "0-25th", "Medium": "25th-75th", "High": "75th-100th"}
        return [{"tier": t, "percentiles": pct[t], "count": self.counts[t],
                 "score_min": self.ranges[t][0], "score_max": self.ranges[t][1]} for t in ("Low", "Medium", "High")]


def stratify(scores) -> Stratification:
    """Low / Medium / High tiers at the nearest-rank 25th and 75th percentiles.

    Low is ``score <= q25`` (and strictly below q75), High is ``score > q75``,
    the rest Medium; equal scores therefore all land in Medium.
    """
    s = np.asarray(scores, dtype=float)
    if len(s) < 4:
        raise ValueError("stratification needs at least 4 scores")
    q25, q75 = nearest_rank(s, 25), nearest_rank(s, 75)
    tiers = np.where((s <= q25) & (s < q75), "Low", np.where(s > q75, "High", "Medium"))
    counts = {t: int(np.sum(tiers == t)) for t in ("Low", "Medium", "High")}
    ranges = {}
    for t in ("Low", "Medium", "High"):
        m = tiers == t
        ranges[t] = (float(s[m].min()), float(s[m].max())) if m.any() else (None, None)
    return Stratification(tiers.tolist(), q25, q75, counts, ranges)


# ---------------------------------------------------------------------------
# summary rows and subgroups

@dataclass
class Predictions:
    """Model outputs aligned with a labelled cohort."""

    risk: np.ndarray
    time: np.ndarray
    event: np.ndarray
    grid: np.ndarray
    surv_grid: np.ndarray
    horizons: tuple[float, ...]
    surv_horizons: np.ndarray

    @classmethod
    def from_model(cls, model, X, time, event, horizons=HORIZONS, grid=None) -> "Predictions":
        time, event = _labels(time, event)
        if grid is None:
            grid = evaluation_grid(time, event)
        return cls(model.risk_score(X), time, event, np.asarray(grid, dtype=float), model.survival(X, grid),
                   tuple(float(h) for h in horizons), model.survival(X, horizons))

    def subset(self, mask) -> "Predictions":
        m = np.asarray(mask, dtype=bool)
        return Predictions(self.risk[m], self.time[m], self.event[m], self.grid, self.surv_grid[m],
                           self.horizons, self.surv_horizons[m])


def _safe(fn, *args, **kwargs):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            return fn(*args, **kwargs)
    except (NoComparablePairs, OneClassOnly, DegenerateWeights, ValueError):
        return None


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summary_row(pred: Predictions, censoring: KMCurve, thresholds: Mapping[float, float | None] | None = None,
                **labels) -> dict[str, Any]:
    """Metrics for one (sub)cohort; undefined metrics are ``None``."""
    n = len(pred.time)
    row: dict[str, Any] = {**labels, "n": n, "events": int(pred.event.sum())}
    if n == 0:
        row.update(c_index_harrell=None, c_index_uno=None, ibs=None, brier_at={}, mean_auc=None,
                   mean_sensitivity=None, mean_specificity=None, mean_survival={str(h): None for h in pred.horizons})
        return row
    row["c_index_harrell"] = _safe(concordance_harrell, pred.risk, pred.time, pred.event)
    row["c_index_uno"] = _safe(concordance_uno, pred.risk, pred.time, pred.event, censoring)
    bs = [_safe(brier_score, pred.surv_grid[:, k], pred.time, pred.event, t, censoring)
          for k, t in enumerate(pred.grid)]
    row["brier_at"] = {_tkey(t): b for t, b in zip(pred.grid, bs)}
    row["ibs"] = integrated_brier(pred.grid, bs) if all(b is not None for b in bs) else None
    hz = []
    for k, t in enumerate(pred.horizons):
        thr = None if thresholds is None else thresholds.get(t)
        hz.append(horizon_or_undefined(1.0 - pred.surv_horizons[:, k], pred.time, pred.event, t, thr))
    row["mean_auc"] = _mean_defined(h.auc for h in hz)
    row["mean_sensitivity"] = _mean_defined(h.sensitivity for h in hz)
    row["mean_specificity"] = _mean_defined(h.specificity for h in hz)
    row["mean_survival"] = {_tkey(t): float(pred.surv_horizons[:, k].mean()) for k, t in enumerate(pred.horizons)}
    return row


def _tkey(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def history_bucket(months: int) -> str:
    for lo, hi, name in HISTORY_BUCKETS:
        if lo <= months <= hi:
            return name
    return ">60"


def subgroup_metrics(pred: Predictions, groups: Mapping[str, Sequence[Any]], censoring: KMCurve | None = None,
                     thresholds: Mapping[float, float | None] | None = None,
                     levels: Mapping[str, Sequence[Any]] | None = None) -> list[dict[str, Any]]:
    """One summary row per (grouping, level); empty levels yield zero-count rows."""
    G = censoring if censoring is not None else censoring_km(pred.time, pred.event)
    rows = []
    for gname, values in groups.items():
        values = np.asarray(values, dtype=object)
        lv = list(levels[gname]) if levels and gname in levels else sorted({v for v in values}, key=str)
        for level in lv:
            mask = values == level
            rows.append(summary_row(pred.subset(mask), G, thresholds, group=gname, level=level))
    return rows


# ---------------------------------------------------------------------------
# permutation importance

def permutation_importance(model, X, time, event, repeats: int = 5, seed: int = 0) -> list[dict[str, Any]]:
    """Mean drop in Harrell C-index when each feature is shuffled, sorted descending."""
    time, event = _labels(time, event)
    names = list(getattr(X, "names", model.features))
    arr = np.asarray(getattr(X, "values", X), dtype=float)
    base = concordance_harrell(model.linear_predictor(arr), time, event)
    rng = np.random.default_rng(seed)
    out = []
    for j, name in enumerate(names):
        drops = []
        for _ in range(repeats):
            perm = arr.copy()
            perm[:, j] = perm[rng.permutation(len(perm)), j]
            drops.append(base - concordance_harrell(model.linear_predictor(perm), time, event))
        out.append({"feature": name, "importance": float(np.mean(drops)), "std": float(np.std(drops))})
    out.sort(key=lambda r: (-r["importance"], r["feature"]))
    return out


# ---------------------------------------------------------------------------
# last-A1C baseline

def last_a1c(dataset, patient_id: str, on: date, max_days: int | None = None) -> tuple[float, date] | None:
    """Most recent A1C on or before ``on`` (optionally within ``max_days``)."""
    from .ehr import LabKind

    best = None
    for lab in dataset.labs_by_patient.get(patient_id, []):
        if lab.kind is not LabKind.A1C or lab.date > on or lab.value > 20:
            continue
        if max_days is not None and (on - lab.date).days > max_days:
            continue
        best = (lab.value, lab.date)
    return best


RECENT_A1C_DAYS = 91


@dataclass
class A1CBaselineResult:
    recency_days: int | None
    coverage: float
    coverage_breakdown: dict[str, float]
    n_covered: int
    c_index_model: float | None
    c_index_a1c: float | None
    auc_model: dict[str, float | None]
    auc_a1c: dict[str, float | None]

    def coverage_text(self) -> str:
        return f"{100.0 * self.coverage:.2f}%"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["coverage_percent"] = self.coverage_text()
        return d


def a1c_baseline(instances, dataset, risk, event_probs: Mapping[float, Sequence[float]] | None = None,
                 recency_days: int | None = None, horizons=HORIZONS) -> A1CBaselineResult:
    """Compare model risk against the last A1C value as a ranking score.

    Metrics are computed on the sub-cohort that has a qualifying A1C.

    Raises
    ------
    NoCoveredInstances
    """
    risk = np.asarray(risk, dtype=float)
    vals = np.full(len(instances), np.nan)
    missing = stale = recent = 0
    for i, inst in enumerate(instances):
        hit = last_a1c(dataset, inst.patient_id, inst.encounter_date)
        if hit is None:
            missing += 1
            continue
        age_days = (inst.encounter_date - hit[1]).days
        if age_days <= RECENT_A1C_DAYS:
            recent += 1
        else:
            stale += 1
        if recency_days is None or age_days <= recency_days:
            vals[i] = hit[0]
    covered = ~np.isnan(vals)
    if not covered.any():
        raise NoCoveredInstances("no instance has a qualifying A1C value")
    n = len(instances)
    time = np.array([i.observed_time for i in instances], dtype=float)[covered]
    event = np.array([i.event_indicator for i in instances], dtype=int)[covered]
    a1c = vals[covered]
    auc_model, auc_a1c = {}, {}
    for t in horizons:
        key = _tkey(t)
        auc_a1c[key] = _safe(time_dependent_auc, a1c, time, event, t)
        if event_probs is not None:
            p = np.asarray(event_probs[t], dtype=float)[covered]
            auc_model[key] = _safe(time_dependent_auc, p, time, event, t)
    return A1CBaselineResult(
        recency_days, float(covered.mean()),
        {"missing": missing / n, "older_than_3_months": stale / n, "within_3_months": recent / n},
        int(covered.sum()),
        _safe(concordance_harrell, risk[covered], time, event),
        _safe(concordance_harrell, a1c, time, event),
        auc_model, auc_a1c,
    )


# ---------------------------------------------------------------------------
# predicted vs actual curves

def curve_errors(surv, time, event, grid) -> dict[str, float]:
    """Errors between predicted and KM-implied counts of survivors and of new events per grid step."""
    surv = np.atleast_2d(np.asarray(surv, dtype=float))
    time, event = _labels(time, event)
    grid = np.asarray(grid, dtype=float)
    n = len(time)
    km = kaplan_meier(time, event)(grid)
    actual_surv = n * km
    pred_surv = surv.sum(axis=0)
    prev_km = np.concatenate([[1.0], km[:-1]])
    prev_pred = np.concatenate([[float(n)], pred_surv[:-1]])
    actual_density = n * (prev_km - km)
    pred_density = prev_pred - pred_surv
    out = {}
    for name, a, p in (("density", actual_density, pred_density), ("survival", actual_surv, pred_surv)):
        err = p - a
        out[f"{name}_rmse"] = float(np.sqrt(np.mean(err ** 2)))
        out[f"{name}_median_abs_error"] = float(np.median(np.abs(err)))
        out[f"{name}_mean_abs_error"] = float(np.mean(np.abs(err)))
    return out


# ---------------------------------------------------------------------------
# full report

@dataclass
class EvaluationReport:
    c_index_harrell: float | None
    c_index_uno: float | None
    brier_at: dict[str, float | None]
    ibs: float | None
    horizons: list[dict[str, Any]]
    mean_survival: dict[str, float]
    km_survival: dict[str, float]
    curve_errors: dict[str, float]
    thresholds: dict[str, float | None]
    stratification: list[dict[str, Any]]
    subgroups: list[dict[str, Any]] = field(default_factory=list)
    permutation_importance: list[dict[str, Any]] = field(default_factory=list)
    a1c_baseline: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def evaluate(pred: Predictions, groups: Mapping[str, Sequence[Any]] | None = None,
             levels: Mapping[str, Sequence[Any]] | None = None) -> EvaluationReport:
    """Assemble the overall metrics, threshold table, tiers and subgroup rows."""
    G = censoring_km(pred.time, pred.event)
    hz = [horizon_or_undefined(1.0 - pred.surv_horizons[:, k], pred.time, pred.event, t)
          for k, t in enumerate(pred.horizons)]
    thresholds = {t: h.threshold for t, h in zip(pred.horizons, hz)}
    overall = summary_row(pred, G)
    strat = stratify(pred.risk) if len(pred.risk) >= 4 else None
    groups = dict(groups or {})
    levels = dict(levels or {})
    if strat is not None:
        groups = {"risk_tier": strat.tiers, **groups}
        levels = {"risk_tier": ["Low", "Medium", "High"], **levels}
    km = kaplan_meier(pred.time, pred.event)
    return EvaluationReport(
        c_index_harrell=overall["c_index_harrell"],
        c_index_uno=overall["c_index_uno"],
        brier_at=overall["brier_at"],
        ibs=overall["ibs"],
        horizons=[asdict(h) for h in hz],
        mean_survival=overall["mean_survival"],
        km_survival={_tkey(t): float(km(t)) for t in pred.horizons},
        curve_errors=curve_errors(pred.surv_grid, pred.time, pred.event, pred.grid),
        thresholds={_tkey(t): v for t, v in thresholds.items()},
        stratification=strat.table() if strat is not None else [],
        subgroups=[{**overall, "group": "all", "level": "all"}]
        + subgroup_metrics(pred, groups, G, thresholds, levels),
    )
