"""Feature selection: imbalanced-binary prefilter and two-stage backward elimination."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .errors import DegenerateMatrix
from .features import FeatureKind, FeatureMatrix, FeatureSpec
from .survival import cross_validate, fit_cox, make_folds

log = logging.getLogger(__name__)


def positive_fraction(values: np.ndarray) -> float:
    """Share of rows at the upper level of a two-level column.

    Works on raw 0/1 values and on z-scored columns alike, since scaling
    preserves order.
    """
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return 0.0
    lo = v.min()
    if np.all(v == lo):
        return 1.0 if lo > 0 else 0.0
    return float(np.count_nonzero(v > lo)) / v.size


def prefilter_imbalanced(matrix: FeatureMatrix | pd.DataFrame, specs: Sequence[FeatureSpec] | None = None,
                         low: float = 0.02, high: float = 0.98) -> list[str]:
    """Names of columns kept after dropping rare or near-universal binary columns.

    A binary column is dropped when its positive fraction is ``< low`` or
    ``> high``; the bounds themselves are kept. Mandatory and non-binary
    columns are always kept.
    """
    if isinstance(matrix, FeatureMatrix):
        specs = matrix.columns
        columns = {s.name: matrix.values[:, j] for j, s in enumerate(specs)}
    else:
        if specs is None:
            raise ValueError("specs are required when passing a DataFrame")
        columns = {s.name: matrix[s.name].to_numpy(dtype=float) for s in specs}
    kept = []
    for spec in specs:
        if spec.kind is FeatureKind.BINARY and not spec.mandatory:
            frac = positive_fraction(columns[spec.name])
            if frac < low or frac > high:
                log.debug("prefilter drops %s (positive fraction %.4f)", spec.name, frac)
                continue
        kept.append(spec.name)
    return kept


@dataclass
class ModelSignature:
    """Selected features in rank order plus the stage-2 score curve."""

    selected: list[str]
    mandatory: list[str]
    curve: list[dict[str, Any]]
    elimination_order: list[str] = field(default_factory=list)
    cv_score: float | None = None

    def to_dict(self) -> dict[str, Any]:
        mand = set(self.mandatory)
        return {
            "selected": [{"name": n, "rank": i + 1, "mandatory": n in mand} for i, n in enumerate(self.selected)],
            "curve": [{"n_features": c["n_features"], "cv_score": c["cv_score"]} for c in self.curve],
            "elimination_order": list(self.elimination_order),
            "cv_score": self.cv_score,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSignature":
        sel = sorted(d["selected"], key=lambda r: r["rank"])
        return cls([r["name"] for r in sel], [r["name"] for r in sel if r["mandatory"]],
                   [dict(c) for c in d.get("curve", [])], list(d.get("elimination_order", [])), d.get("cv_score"))

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["n_features", "cv_score"])
                for c in self.curve:
                    w.writerow([c["n_features"], repr(c["cv_score"])])


def _importance(matrix: FeatureMatrix, names: list[str], time, event, fit_options, rows=None,
                method: str = "coefficient", val_rows=None, seed: int = 0) -> dict[str, float]:
    sub = matrix.subset(names)
    X = sub.values if rows is None else sub.values[rows]
    t = time if rows is None else time[rows]
    e = event if rows is None else event[rows]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        model = fit_cox(X, t, e, names, **fit_options)
    if method == "permutation":
        from .evaluation import permutation_importance

        vr = np.arange(len(time)) if val_rows is None else val_rows
        res = permutation_importance(model, sub.values[vr], time[vr], event[vr], repeats=3, seed=seed)
        return {r["feature"]: r["importance"] for r in res}
    sd = X.std(axis=0)
    return {n: float(abs(b) * s) for n, b, s in zip(names, model.beta, sd)}


def _weakest(imp: Mapping[str, float], candidates: Sequence[str], count: int) -> list[str]:
    return [n for n, _ in sorted(((n, imp[n]) for n in candidates), key=lambda kv: (kv[1], kv[0]))[:count]]


def backward_eliminate(matrix: FeatureMatrix, time, event, mandatory: Sequence[str] | None = None, *,
                       stage1_frac: float = 0.05, stage1_target: int = 30, margin: float = 0.01, k: int = 5,
                       seed: int = 0, fit_options: Mapping[str, Any] | None = None,
                       importance: str = "coefficient", validation_fraction: float = 0.3) -> ModelSignature:
    """Two-stage backward elimination with protected mandatory features.

    Stage 1 drops the weakest ``ceil(stage1_frac * m)`` non-mandatory features
    per round (fit on a single train split) until at most ``stage1_target``
    remain. Stage 2 drops one feature at a time down to the mandatory set,
    recording the k-fold CV C-index at each size. The signature is the
    smallest recorded set scoring within ``margin`` of the best.

    Raises
    ------
    DegenerateMatrix
        If the matrix has no columns.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    fit_options = dict(fit_options or {})
    names = matrix.names
    if not names:
        raise DegenerateMatrix("feature matrix has no columns")
    if mandatory is None:
        mandatory = [s.name for s in matrix.columns if s.mandatory]
    mand = [n for n in names if n in set(mandatory)]
    unknown = set(mandatory) - set(names)
    if unknown:
        raise DegenerateMatrix(f"mandatory features not in matrix: {sorted(unknown)}")
    current = list(names)
    order: list[str] = []
    rng = np.random.default_rng(seed)

    def free(cols):
        return [n for n in cols if n not in mand]

    # stage 1
    if len(free(current)) > stage1_target:
        perm = rng.permutation(len(time))
        n_val = int(math.floor(validation_fraction * len(time) + 0.5))
        val_rows, train_rows = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        while len(free(current)) > stage1_target:
            m = len(free(current))
            drop_n = min(int(math.ceil(stage1_frac * m)), m - stage1_target)
            imp = _importance(matrix, current, time, event, fit_options, train_rows, importance, val_rows, seed)
            dropped = _weakest(imp, free(current), drop_n)
            order.extend(dropped)
            current = [n for n in current if n not in set(dropped)]
            log.info("stage 1: dropped %d, %d non-mandatory remain", len(dropped), len(free(current)))

    # stage 2
    curve: list[dict[str, Any]] = []
    floor_size = max(len(mand), 1)
    if len(free(current)) == 0:
        return ModelSignature(_rank_mandatory(matrix, current, time, event, fit_options), list(mand), curve,
                              order, None)
    folds = make_folds(time, event, k, seed)
    while True:
        score = cross_validate(matrix.subset(current), time, event, k, fit_options, folds=folds).mean
        curve.append({"n_features": len(current), "cv_score": score, "features": list(current)})
        if len(current) <= floor_size or not free(current):
            break
        imp = _importance(matrix, current, time, event, fit_options, None, importance, None, seed)
        (dropped,) = _weakest(imp, free(current), 1)
        order.append(dropped)
        current = [n for n in current if n != dropped]

    best = max(c["cv_score"] for c in curve)
    chosen = min((c for c in curve if c["cv_score"] >= best - margin), key=lambda c: c["n_features"])
    chosen_set = set(chosen["features"])
    eliminated_later = [n for n in reversed(order) if n in chosen_set]
    remaining = [n for n in chosen["features"] if n not in set(eliminated_later)]
    selected = _rank_mandatory(matrix, remaining, time, event, fit_options) + eliminated_later
    return ModelSignature(selected, list(mand), [{"n_features": c["n_features"], "cv_score": c["cv_score"]}
                                                  for c in curve], order, chosen["cv_score"])


def _rank_mandatory(matrix, names, time, event, fit_options) -> list[str]:
    """Order never-eliminated features by standardized coefficient size."""
    if len(names) <= 1:
        return list(names)
    imp = _importance(matrix, list(names), time, event, fit_options)
    return [n for n, _ in sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))]
