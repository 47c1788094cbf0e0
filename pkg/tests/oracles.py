"""Brute-force reference computations used by the tests.

Nothing here imports the package under test. Every function is a direct,
loop-based transcription of a metric's definition.
"""
from __future__ import annotations

import math
from fractions import Fraction


def km_curve(times, events):
    """[(t, S(t))] over distinct times."""
    out = []
    s = 1.0
    for t in sorted(set(times)):
        n = sum(1 for u in times if u >= t)
        d = sum(e for u, e in zip(times, events) if u == t)
        s *= 1.0 - d / n
        out.append((t, s))
    return out


def censoring_left(times, events, t):
    """G(t-): censoring survival using censorings strictly before t."""
    s = 1.0
    for u in sorted(set(times)):
        if u >= t:
            break
        n = sum(1 for v in times if v >= u)
        c = sum(1 for v, e in zip(times, events) if v == u and e == 0)
        s *= 1.0 - c / n
    return s


def censoring_at(times, events, t):
    """G(t): censoring survival including censorings at t."""
    s = 1.0
    for u in sorted(set(times)):
        if u > t:
            break
        n = sum(1 for v in times if v >= u)
        c = sum(1 for v, e in zip(times, events) if v == u and e == 0)
        s *= 1.0 - c / n
    return s


def harrell(scores, times, events):
    conc = ties = pairs = 0
    n = len(times)
    for i in range(n):
        for j in range(n):
            if events[i] == 1 and times[i] < times[j]:
                pairs += 1
                if scores[i] > scores[j]:
                    conc += 1
                elif scores[i] == scores[j]:
                    ties += 1
    return (conc + 0.5 * ties) / pairs


def uno(scores, times, events, floor=0.05):
    """IPCW C-index; each anchor event i weighs its pairs by 1/G(t_i-)^2."""
    num_terms, den_terms = [], []
    n = len(times)
    for i in range(n):
        if events[i] != 1:
            continue
        g = censoring_left(times, events, times[i])
        if g < floor:
            continue
        w = 1.0 / (g * g)
        c = t = m = 0
        for j in range(n):
            if times[i] < times[j]:
                m += 1
                if scores[i] > scores[j]:
                    c += 1
                elif scores[i] == scores[j]:
                    t += 1
        num_terms.append(w * (c + 0.5 * t))
        den_terms.append(w * m)
    return math.fsum(num_terms) / math.fsum(den_terms)


def brier(surv, times, events, t):
    total = 0.0
    g_t = censoring_at(times, events, t)
    for s, y, e in zip(surv, times, events):
        if y <= t and e == 1:
            total += s ** 2 / censoring_left(times, events, y)
        elif y > t:
            total += (1.0 - s) ** 2 / g_t
    return total / len(times)


def auc(probs, times, events, t):
    cases = [p for p, y, e in zip(probs, times, events) if y <= t and e == 1]
    controls = [p for p, y in zip(probs, times) if y > t]
    score = 0
    for a in cases:
        for b in controls:
            score += 2 if a > b else 1 if a == b else 0
    return score / (2 * len(cases) * len(controls))


def balanced_accuracy(probs, times, events, t, threshold):
    cases = [p for p, y, e in zip(probs, times, events) if y <= t and e == 1]
    controls = [p for p, y in zip(probs, times) if y > t]
    sens = sum(p >= threshold for p in cases) / len(cases)
    spec = sum(p < threshold for p in controls) / len(controls)
    return (sens + spec) / 2


def nearest_rank(values, pct):
    v = sorted(values)
    k = max(1, math.ceil(pct / 100 * len(v)))
    return v[k - 1]


def coverage_walk(fills, n_days, hospital=(), insulin_adjust=True):
    """fills: [(day, days_supply, is_insulin)]; returns (covered flags, countable flags)."""
    covered = [False] * n_days
    free = 0
    for day, ds, insulin in sorted(fills):
        if not 0 <= day < n_days:
            continue
        eff = int(Fraction(ds * 45, 30) + Fraction(1, 2)) if (insulin and insulin_adjust) else ds
        start = max(day, free)
        for d in range(start, start + eff):
            if d < n_days:
                covered[d] = True
        free = start + eff
    countable = [d not in set(hospital) for d in range(n_days)]
    return covered, countable


def pdc(fills, n_days, hospital=(), insulin_adjust=True):
    covered, countable = coverage_walk(fills, n_days, hospital, insulin_adjust)
    num = sum(1 for c, k in zip(covered, countable) if c and k)
    return num / sum(countable)


def cox_loglik(beta, X, times, events):
    """Breslow partial log-likelihood by explicit risk-set sums."""
    ll = 0.0
    n = len(times)
    for i in range(n):
        if events[i] != 1:
            continue
        eta_i = sum(b * x for b, x in zip(beta, X[i]))
        risk = sum(math.exp(sum(b * x for b, x in zip(beta, X[j]))) for j in range(n) if times[j] >= times[i])
        ll += eta_i - math.log(risk)
    return ll
