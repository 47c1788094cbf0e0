"""Recalibration of a trained Cox model on a new population.

The source coefficients stay fixed. A one-covariate Cox model is fitted on the
target with the source's centered linear predictor ``eta`` as the covariate,
giving a scale ``beta_cal`` and a new Breslow baseline:
``S(t|x) = S0_target(t) ** exp(beta_cal * eta)``.
"""
from __future__ import annotations

import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .evaluation import brier_curve, censoring_km, concordance_harrell, curve_errors, evaluation_grid, integrated_brier
from .survival import CoxModel, breslow_baseline, fit_cox

Z95 = 1.959963984540054


@dataclass
class CalibratedModel:
    source: CoxModel
    beta_cal: float
    ci_low: float
    ci_high: float
    baseline_times: np.ndarray
    baseline_survival: np.ndarray
    metadata: dict[str, Any] = field(default_factory=lambda: {"covariate": "centered_linear_predictor"})

    @classmethod
    def identity(cls, source: CoxModel) -> "CalibratedModel":
        """Calibration that reproduces the source model exactly."""
        return cls(source, 1.0, 1.0, 1.0, source.baseline_times.copy(), source.baseline_survival.copy())

    @property
    def features(self) -> list[str]:
        return self.source.features

    def linear_predictor(self, X) -> np.ndarray:
        eta = self.source.linear_predictor(X)
        return eta if self.beta_cal == 1.0 else self.beta_cal * eta

    def risk_score(self, X) -> np.ndarray:
        return np.exp(self.linear_predictor(X))

    def baseline_at(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.baseline_times, t, side="right") - 1
        out = np.ones(t.shape)
        ok = idx >= 0
        out[ok] = self.baseline_survival[idx[ok]]
        return out

    def survival(self, X, times) -> np.ndarray:
        s0 = self.baseline_at(times)
        r = self.risk_score(X)
        return np.clip(s0[None, :] ** r[:, None], 0.0, 1.0)

    def coefficient_text(self, digits: int = 3) -> str:
        """Coefficient with its interval, e.g. ``0.032 (0.031, 0.032)``."""
        return f"{self.beta_cal:.{digits}f} ({self.ci_low:.{digits}f}, {self.ci_high:.{digits}f})"

    def to_dict(self) -> dict[str, Any]:
        d = self.source.to_dict()
        d.update(beta_cal=float(self.beta_cal), ci_low=float(self.ci_low), ci_high=float(self.ci_high),
                 target_baseline={"times": [float(t) for t in self.baseline_times],
                                  "survival": [float(s) for s in self.baseline_survival]},
                 calibration=dict(self.metadata))
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CalibratedModel":
        src = CoxModel.from_dict(d)
        tb = d["target_baseline"]
        return cls(src, float(d["beta_cal"]), float(d["ci_low"]), float(d["ci_high"]),
                   np.asarray(tb["times"], dtype=float), np.asarray(tb["survival"], dtype=float),
                   dict(d.get("calibration", {})))


def calibrate(source: CoxModel, X, time, event, horizon: float | None = None) -> CalibratedModel:
    """Fit ``beta_cal`` and a target baseline, keeping source coefficients fixed.

    Parameters
    ----------
    source : CoxModel
    X : array-like or FeatureMatrix
        Target covariates in the source model's feature space.
    time, event : array-like
        Target labels.
    horizon : float, optional
        Intended prediction horizon; a warning is issued when target
        follow-up is shorter.

    Raises
    ------
    NoEvents, Singular
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if horizon is not None and time.size and time.max() < horizon:
        warnings.warn(f"target follow-up ({time.max():g}) is shorter than the horizon ({horizon:g})", stacklevel=2)
    eta = source.linear_predictor(X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        fit = fit_cox(eta[:, None], time, event, ["eta"], ridge=0.0)
    b = float(fit.beta[0])
    se = math.sqrt(fit.covariance[0, 0]) if fit.covariance is not None and fit.covariance[0, 0] > 0 else float("nan")
    bt, bs = breslow_baseline(b * eta, time, event.astype(bool))
    return CalibratedModel(source, b, b - Z95 * se, b + Z95 * se, bt, bs,
                           {"covariate": "centered_linear_predictor", "converged": bool(fit.converged),
                            "n_target": int(len(time)), "events_target": int(event.sum())})


def kendall_tau(a, b) -> float:
    """Kendall tau-b between two score vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    conc = disc = ties_a = ties_b = 0
    n = len(a)
    for lo in range(0, n, 512):
        i = np.arange(lo, min(lo + 512, n))
        upper = np.arange(n)[None, :] > i[:, None]
        da = np.sign(a[None, :] - a[i][:, None])
        db = np.sign(b[None, :] - b[i][:, None])
        prod = da * db
        conc += int(np.sum(upper & (prod > 0)))
        disc += int(np.sum(upper & (prod < 0)))
        ties_a += int(np.sum(upper & (da == 0) & (db != 0)))
        ties_b += int(np.sum(upper & (db == 0) & (da != 0)))
    denom = math.sqrt((conc + disc + ties_a) * (conc + disc + ties_b))
    return (conc - disc) / denom if denom > 0 else float("nan")


def compare_before_after(source: CoxModel, calibrated: CalibratedModel, X, time, event,
                         grid=None) -> dict[str, Any]:
    """Before/after comparison on one target cohort.

    The C-index is computed from each model's linear predictor; with no added
    covariates the two must agree exactly.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if grid is None:
        grid = evaluation_grid(time, event)
    G = censoring_km(time, event)
    eta_before = source.linear_predictor(X)
    eta_after = calibrated.linear_predictor(X)
    c_before = concordance_harrell(eta_before, time, event)
    c_after = concordance_harrell(eta_after, time, event)
    if c_before != c_after:
        warnings.warn(f"C-index changed by calibration ({c_before!r} vs {c_after!r})", stacklevel=2)
    s_before = source.survival(X, grid)
    s_after = calibrated.survival(X, grid)
    ibs_before = integrated_brier(grid, brier_curve(s_before, time, event, grid, G))
    ibs_after = integrated_brier(grid, brier_curve(s_after, time, event, grid, G))
    return {
        "beta_cal": calibrated.beta_cal,
        "ci_low": calibrated.ci_low,
        "ci_high": calibrated.ci_high,
        "coefficient": calibrated.coefficient_text(),
        "c_index": c_after,
        "c_index_before": c_before,
        "c_index_after": c_after,
        "kendall_tau": kendall_tau(eta_before, eta_after),
        "ibs_before": ibs_before,
        "ibs_after": ibs_after,
        "median_abs_curve_error_before": curve_errors(s_before, time, event, grid)["survival_median_abs_error"],
        "median_abs_curve_error_after": curve_errors(s_after, time, event, grid)["survival_median_abs_error"],
        "n": int(len(time)),
    }
