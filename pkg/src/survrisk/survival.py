"""Kaplan-Meier estimation and Cox proportional-hazards regression.

The Cox fit maximizes the ridge-penalized Breslow partial likelihood with
Newton steps (halved while the objective would decrease) and recovers the
baseline cumulative hazard with the Breslow estimator. Covariates are
centered at their training means, so ``S(t|x) = S0(t) ** exp((x - mean) . beta)``.
"""
from __future__ import annotations

import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InfeasibleFolds, NoEvents, NonConvergenceWarning, SchemaMismatch, Singular


@dataclass(frozen=True)
class KMCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t) -> np.ndarray:
        """Right-continuous step evaluation S(t); 1 before the first time."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.where(idx >= 0, self.survival[np.clip(idx, 0, None)], 1.0)

    def left(self, t) -> np.ndarray:
        """Left limit S(t-)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left") - 1
        return np.where(idx >= 0, self.survival[np.clip(idx, 0, None)], 1.0)


def kaplan_meier(time, event=None) -> KMCurve:
    """Product-limit estimate over the distinct observed times.

    ``time`` may be a sequence of survival instances, in which case their
    labels are used. Censored observations at a time stay in the risk set
    through that time.
    """
    if event is None:
        from .labeling import labels_of

        time, event = labels_of(time)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if time.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    uniq, inv = np.unique(time, return_inverse=True)
    deaths = np.bincount(inv, weights=event, minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    at_risk = counts[::-1].cumsum()[::-1]
    surv = np.cumprod(1.0 - deaths / at_risk)
    return KMCurve(uniq, surv, at_risk.astype(int), deaths.astype(int))


# ---------------------------------------------------------------------------
# partial likelihood

def _as_arrays(X, time, event):
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(time, dtype=float), np.asarray(event, dtype=int)


def _cox_terms(beta, X, time, event, ridge=0.0, order=2):
    """Penalized Breslow log partial likelihood and its derivatives.

    Returns (loglik, gradient, hessian); derivatives are omitted when
    ``order`` is lower.
    """
    X, time, event = _as_arrays(X, time, event)
    beta = np.asarray(beta, dtype=float)
    Xc = X - X.mean(axis=0)
    srt = np.argsort(time, kind="stable")
    Xs, ts, ds = Xc[srt], time[srt], event[srt].astype(bool)
    eta = Xs @ beta
    # risk set of position i is the suffix starting at the first position sharing its time;
    # suffix sums are accumulated in log space so each risk set keeps its own scale
    start = np.searchsorted(ts, ts, side="left")
    log_s0 = _suffix_logsumexp(eta)[start]
    loglik = float(np.sum(eta[ds] - log_s0[ds])) - 0.5 * ridge * float(beta @ beta)
    if order < 1:
        return loglik, None, None
    # a_j = sum over events i whose risk set holds j of w_j / S0_i
    inv = np.full(len(ts), -np.inf)
    np.logaddexp.at(inv, start[ds], -log_s0[ds])
    a = np.exp(eta + np.logaddexp.accumulate(inv))
    grad = Xs[ds].sum(axis=0) - a @ Xs - ridge * beta
    if order < 2:
        return loglik, grad, None
    with np.errstate(divide="ignore"):
        log_pos = _suffix_logsumexp(eta[:, None] + np.log(np.clip(Xs, 0.0, None)))
        log_neg = _suffix_logsumexp(eta[:, None] + np.log(np.clip(-Xs, 0.0, None)))
    idx = start[ds]
    mean_risk = np.exp(log_pos[idx] - log_s0[ds, None]) - np.exp(log_neg[idx] - log_s0[ds, None])
    hess = -((Xs * a[:, None]).T @ Xs - mean_risk.T @ mean_risk) - ridge * np.eye(len(beta))
    return loglik, grad, hess


def _suffix_logsumexp(v: np.ndarray) -> np.ndarray:
    return np.logaddexp.accumulate(v[::-1], axis=0)[::-1]


def partial_log_likelihood(beta, X, time, event, ridge: float = 0.0) -> float:
    return _cox_terms(beta, X, time, event, ridge, order=0)[0]


def partial_gradient(beta, X, time, event, ridge: float = 0.0) -> np.ndarray:
    return _cox_terms(beta, X, time, event, ridge, order=1)[1]


def partial_hessian(beta, X, time, event, ridge: float = 0.0) -> np.ndarray:
    return _cox_terms(beta, X, time, event, ridge, order=2)[2]


# ---------------------------------------------------------------------------
# model

@dataclass
class CoxModel:
    features: list[str]
    beta: np.ndarray
    means: np.ndarray
    baseline_times: np.ndarray
    baseline_survival: np.ndarray
    converged: bool = True
    n_iter: int = 0
    loglik: float = float("nan")
    ridge: float = 0.0
    covariance: np.ndarray | None = field(default=None, repr=False)
    metadata: dict[str, Any] = field(default_factory=dict)

    def _matrix(self, X) -> np.ndarray:
        names = getattr(X, "names", None)
        if names is None and hasattr(X, "columns") and not isinstance(getattr(X, "columns"), list):
            names = list(X.columns)
        if names is not None and list(names) != list(self.features):
            if set(self.features) <= set(names):
                X = X.subset(self.features) if hasattr(X, "subset") else X[self.features]
            else:
                missing = sorted(set(self.features) - set(names))
                raise SchemaMismatch(f"feature row lacks model features {missing}")
        arr = np.asarray(getattr(X, "values", X), dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.shape[1] != len(self.features):
            raise SchemaMismatch(f"expected {len(self.features)} features, got {arr.shape[1]}")
        return arr

    def linear_predictor(self, X) -> np.ndarray:
        return (self._matrix(X) - self.means) @ self.beta

    def risk_score(self, X) -> np.ndarray:
        return np.exp(self.linear_predictor(X))

    def baseline_at(self, times) -> np.ndarray:
        """Step-interpolated S0; 1 before the first event time, held after the last."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.baseline_times, t, side="right") - 1
        out = np.ones(t.shape)
        ok = idx >= 0
        out[ok] = self.baseline_survival[idx[ok]]
        return out

    def survival(self, X, times) -> np.ndarray:
        """S(t|x) for every row (rows) and time (columns)."""
        s0 = self.baseline_at(times)
        r = self.risk_score(X)
        return np.clip(s0[None, :] ** r[:, None], 0.0, 1.0)

    def predict(self, X, times) -> tuple[np.ndarray, np.ndarray]:
        return self.survival(X, times), self.risk_score(X)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "features": list(self.features),
            "beta": [float(b) for b in self.beta],
            "means": [float(m) for m in self.means],
            "baseline": {"times": [float(t) for t in self.baseline_times],
                         "survival": [float(s) for s in self.baseline_survival]},
        }
        if self.metadata:
            d["metadata"] = self.metadata
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CoxModel":
        try:
            model = cls(list(d["features"]), np.asarray(d["beta"], dtype=float), np.asarray(d["means"], dtype=float),
                        np.asarray(d["baseline"]["times"], dtype=float),
                        np.asarray(d["baseline"]["survival"], dtype=float), metadata=dict(d.get("metadata", {})))
        except (KeyError, TypeError) as exc:
            raise SchemaMismatch(f"invalid model document: {exc}") from None
        if not (len(model.features) == len(model.beta) == len(model.means)):
            raise SchemaMismatch("features, beta and means must have equal length")
        if len(model.baseline_times) != len(model.baseline_survival):
            raise SchemaMismatch("baseline times and survival must have equal length")
        return model


def breslow_baseline(eta: np.ndarray, time: np.ndarray, event: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Breslow baseline survival on the distinct event times for linear predictors ``eta``."""
    event = np.asarray(event, dtype=bool)
    times = np.unique(time[event])
    if times.size == 0:
        return times, times.astype(float)
    srt = np.argsort(time, kind="stable")
    ts = time[srt]
    log_denom = _suffix_logsumexp(eta[srt])[np.searchsorted(ts, times, side="left")]
    d = np.array([np.count_nonzero(event & (time == t)) for t in times], dtype=float)
    # increments can overflow for extreme linear predictors; S0 then correctly reaches 0
    with np.errstate(over="ignore"):
        H0 = np.cumsum(np.exp(np.log(d) - log_denom))
    return times, np.exp(-H0)


def fit_cox(X, time, event, feature_names: Sequence[str] | None = None, *, max_iter: int = 100, tol: float = 1e-7,
            ridge: float = 1e-6, beta0=None) -> CoxModel:
    """Fit a Cox model.

    Parameters
    ----------
    X : array-like or FeatureMatrix, shape (n, p)
    time, event : array-like
        Observed times and event indicators.
    ridge : float
        L2 penalty weight on the coefficients.

    Raises
    ------
    NoEvents
        When no training row has an event.
    Singular
        When the Newton system cannot be solved.

    Constant columns get a zero coefficient (with a warning). Hitting
    ``max_iter`` returns the last iterate with ``converged=False``.
    """
    if feature_names is None:
        feature_names = list(getattr(X, "names", None) or
                             (list(X.columns) if hasattr(X, "columns") and not isinstance(X.columns, list) else []))
    X, time, event = _as_arrays(X, time, event)
    n, p = X.shape
    if not feature_names:
        feature_names = [f"x{j}" for j in range(p)]
    if len(feature_names) != p:
        raise SchemaMismatch("feature_names length does not match X")
    if not event.any():
        raise NoEvents("no events in training labels")
    means = X.mean(axis=0)
    active = X.std(axis=0) > 0
    if not active.all():
        dropped = [feature_names[j] for j in np.flatnonzero(~active)]
        warnings.warn(f"constant columns fixed at zero coefficient: {dropped}", stacklevel=2)
    Xa = X[:, active]
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    beta[~active] = 0.0
    b = beta[active]
    converged = False
    n_iter = 0
    ll, g, h = _cox_terms(b, Xa, time, event, ridge)
    while True:
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            raise Singular("non-finite partial likelihood during Newton iterations")
        if g.size == 0 or np.max(np.abs(g)) / n < tol:
            converged = True
            break
        if n_iter == max_iter:
            break
        try:
            step = np.linalg.solve(-h, g)
        except np.linalg.LinAlgError as exc:
            raise Singular(f"Hessian not invertible: {exc}") from None
        if not np.all(np.isfinite(step)):
            raise Singular("Hessian not invertible")
        t = 1.0
        for _ in range(40):
            cand = b + t * step
            ll_new = _cox_terms(cand, Xa, time, event, ridge, order=0)[0]
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        b = cand
        n_iter += 1
        ll, g, h = _cox_terms(b, Xa, time, event, ridge)
    if not converged:
        warnings.warn(f"Cox fit did not converge in {max_iter} iterations", NonConvergenceWarning, stacklevel=2)
    beta[active] = b
    eta = (X - means) @ beta
    bt, bs = breslow_baseline(eta, time, event)
    cov = None
    try:
        info = -_cox_terms(b, Xa, time, event, 0.0)[2]
        cov_a = np.linalg.inv(info)
        cov = np.zeros((p, p))
        cov[np.ix_(active, active)] = cov_a
    except np.linalg.LinAlgError:
        pass
    return CoxModel(list(feature_names), beta, means, bt, bs, converged, n_iter, ll, ridge, cov)


# ---------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class CVResult:
    mean: float
    scores: list[float]
    folds: list[np.ndarray] = field(repr=False)


def make_folds(time, event, k: int, seed: int, max_retries: int = 20) -> list[np.ndarray]:
    """Random k-fold assignment where every held-out fold has a comparable pair
    and every training complement has an event.

    Raises
    ------
    InfeasibleFolds
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    n = len(time)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise InfeasibleFolds(f"cannot split {n} instances into {k} folds")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        perm = rng.permutation(n)
        folds = [np.sort(f) for f in np.array_split(perm, k)]
        ok = True
        for f in folds:
            tf, ef = time[f], event[f]
            train_events = event.sum() - ef.sum()
            comparable = any(np.any(tf > tf[i]) for i in np.flatnonzero(ef))
            if not comparable or train_events < 1:
                ok = False
                break
        if ok:
            return folds
    raise InfeasibleFolds(f"no valid {k}-fold assignment found in {max_retries} attempts")


def cross_validate(X, time, event, k: int = 5, fit_options: Mapping[str, Any] | None = None, seed: int = 0,
                   folds: list[np.ndarray] | None = None) -> CVResult:
    """Mean and per-fold Harrell C-index of Cox models over k folds."""
    from .evaluation import concordance_harrell

    fit_options = dict(fit_options or {})
    arr, time, event = _as_arrays(X, time, event)
    names = list(getattr(X, "names", None) or [f"x{j}" for j in range(arr.shape[1])])
    if folds is None:
        folds = make_folds(time, event, k, seed)
    scores = []
    n = len(time)
    for f in folds:
        train = np.setdiff1d(np.arange(n), f)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            model = fit_cox(arr[train], time[train], event[train], names, **fit_options)
        scores.append(concordance_harrell(model.linear_predictor(arr[f]), time[f], event[f]))
    return CVResult(float(np.mean(scores)), scores, folds)
