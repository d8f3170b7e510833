"""Goodness-of-fit tests, Monte Carlo accumulators and path distances.

Every test returns a :class:`StatReport` whose ``passed`` flag is
``test_statistic <= threshold``. Tests built from several sub-tests report
the largest ratio of statistic to its own critical value against a threshold
of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats as sps

from .errors import InvalidArgument, TooFewSamples

EULER_GAMMA = float(np.euler_gamma)


@dataclass
class StatReport:
    name: str
    estimate: float
    ci_low: float
    ci_high: float
    test_statistic: float
    threshold: float
    provenance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.test_statistic <= self.threshold)

    @property
    def decision(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "test_statistic": self.test_statistic,
            "threshold": self.threshold,
            "decision": self.decision,
            "provenance": self.provenance,
            "extra": self.extra,
        }


# ---------------------------------------------------------------------------
# Gumbel law


def gumbel_cdf(x):
    return np.exp(-np.exp(-np.asarray(x, dtype=float)))


def gumbel_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise InvalidArgument("quantile level must lie strictly between 0 and 1")
    return -np.log(-np.log(p))


def gumbel_sample(rng: np.random.Generator, size=None):
    u = rng.random(size)
    # random() can return exactly 0
    while np.any(u == 0.0):
        u = np.where(u == 0.0, rng.random(size), u)
    return gumbel_quantile(u)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_one_sample(
    samples,
    cdf: Callable,
    slack: float = 0.0,
    alpha: float = 0.01,
    name: str = "ks_one_sample",
) -> StatReport:
    """One-sample KS; ``slack`` is added to the exact critical value.

    The slack allows for the gap between a finite-size law and its limit.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 50:
        raise TooFewSamples(f"KS needs at least 50 samples, got {len(x)}")
    d = float(sps.kstest(x, cdf).statistic)
    crit = float(sps.kstwo.ppf(1 - alpha, len(x)))
    return StatReport(
        name, d, d, d, d, crit + slack,
        provenance={"samples": len(x), "alpha": alpha, "slack": slack},
        extra={"critical_value": crit},
    )


def ks_two_sample(a, b, alpha: float = 0.01, name: str = "ks_two_sample") -> StatReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if min(len(a), len(b)) < 50:
        raise TooFewSamples("two-sample KS needs at least 50 samples on each side")
    d = float(sps.ks_2samp(a, b).statistic)
    n, m = len(a), len(b)
    crit = math.sqrt(-0.5 * math.log(alpha / 2)) * math.sqrt((n + m) / (n * m))
    return StatReport(
        name, d, d, d, d, crit,
        provenance={"samples": (n, m), "alpha": alpha},
    )


# ---------------------------------------------------------------------------
# chi-square


def merge_small_cells(counts, expected, min_expected: float = 5.0):
    """Merge neighbouring cells until each expected count is at least ``min_expected``."""
    out_c, out_e = [], []
    acc_c = acc_e = 0.0
    for c, e in zip(counts, expected):
        acc_c += c
        acc_e += e
        if acc_e >= min_expected:
            out_c.append(acc_c)
            out_e.append(acc_e)
            acc_c = acc_e = 0.0
    if acc_e > 0 or acc_c > 0:
        if out_e:
            out_c[-1] += acc_c
            out_e[-1] += acc_e
        else:
            out_c.append(acc_c)
            out_e.append(acc_e)
    return np.array(out_c), np.array(out_e)


def chi_square_gof(
    counts,
    expected,
    alpha: float = 0.001,
    ddof: int = 0,
    min_expected: float = 5.0,
    name: str = "chi_square_gof",
) -> StatReport:
    """Pearson goodness of fit. ``expected`` may be probabilities or counts."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if counts.shape != expected.shape or np.any(expected < 0) or expected.sum() <= 0:
        raise InvalidArgument("expected vector is degenerate or mismatched")
    total = counts.sum()
    expected = expected * (total / expected.sum())
    c, e = merge_small_cells(counts, expected, min_expected)
    if len(c) < 2:
        raise InvalidArgument("fewer than two cells remain after merging")
    stat = float(np.sum((c - e) ** 2 / e))
    df = len(c) - 1 - ddof
    crit = float(sps.chi2.ppf(1 - alpha, df))
    return StatReport(
        name, stat, stat, stat, stat, crit,
        provenance={"total": total, "alpha": alpha, "cells": len(c)},
        extra={"p_value": float(sps.chi2.sf(stat, df)), "df": df},
    )


def binomial_interval(successes: int, trials: int, alpha: float = 0.01) -> tuple[float, float]:
    """Clopper-Pearson interval."""
    ci = sps.binomtest(int(successes), int(trials)).proportion_ci(1 - alpha, method="exact")
    return float(ci.low), float(ci.high)


def binomial_check(
    successes: int, trials: int, p: float, alpha: float = 0.01, name: str = "binomial"
) -> StatReport:
    """Pass when ``p`` lies inside the exact interval for the observed fraction."""
    lo, hi = binomial_interval(successes, trials, alpha)
    est = successes / trials
    # distance of p outside the interval; zero means inside
    outside = max(lo - p, p - hi, 0.0)
    return StatReport(
        name, est, lo, hi, outside, 0.0,
        provenance={"trials": trials, "alpha": alpha},
        extra={"target": p},
    )


# ---------------------------------------------------------------------------
# Poisson process diagnostics


def poisson_process_check(
    event_times,
    rate: float,
    t_start: float | None = None,
    t_end: float | None = None,
    alpha: float = 0.01,
    name: str = "poisson_process",
) -> StatReport:
    """Joint check that events form a homogeneous Poisson stream of ``rate``.

    Three sub-tests share ``alpha`` by Bonferroni: KS of the gaps against the
    exponential law, lag-one autocorrelation of the gaps, and the dispersion
    index of counts in equal bins.
    """
    t = np.sort(np.asarray(event_times, dtype=float))
    if len(t) < 100:
        raise TooFewSamples(f"need at least 100 events, got {len(t)}")
    lo = t[0] if t_start is None else t_start
    hi = t[-1] if t_end is None else t_end
    a = alpha / 3

    gaps = np.diff(t) if t_start is None else np.diff(np.concatenate([[lo], t]))
    m = len(gaps)
    ks = sps.kstest(gaps, sps.expon(scale=1.0 / rate).cdf).statistic
    ks_ratio = ks / sps.kstwo.ppf(1 - a, m)

    g = gaps - gaps.mean()
    r1 = float(np.dot(g[:-1], g[1:]) / np.dot(g, g))
    z = sps.norm.ppf(1 - a / 2)
    ac_ratio = abs(r1) * math.sqrt(m) / z

    bins = max(10, len(t) // 10)
    counts, _ = np.histogram(t, bins=bins, range=(lo, hi))
    disp = float(counts.var(ddof=1) / counts.mean())
    q = (bins - 1) * disp
    q_lo = sps.chi2.ppf(a / 2, bins - 1)
    q_hi = sps.chi2.ppf(1 - a / 2, bins - 1)
    # ratio above 1 means outside the two-sided band
    if q >= (q_lo + q_hi) / 2:
        disp_ratio = q / q_hi
    else:
        disp_ratio = q_lo / max(q, 1e-300)

    worst = float(max(ks_ratio, ac_ratio, disp_ratio))
    span = hi - lo
    est = len(t) / span
    half = sps.norm.ppf(1 - alpha / 2) * math.sqrt(len(t)) / span
    return StatReport(
        name, est, est - half, est + half, worst, 1.0,
        provenance={"events": len(t), "alpha": alpha, "rate": rate},
        extra={
            "ks_statistic": float(ks),
            "lag1_autocorrelation": r1,
            "dispersion_index": disp,
            "ks_ratio": float(ks_ratio),
            "autocorrelation_ratio": float(ac_ratio),
            "dispersion_ratio": float(disp_ratio),
        },
    )


# ---------------------------------------------------------------------------
# Monte Carlo accumulation


class MeanAccumulator:
    """Running count, mean and centred second moment, mergeable across workers.

    A uniform reservoir of up to ``capacity`` values is kept for bootstrap
    intervals.
    """

    def __init__(self, capacity: int = 10_000, rng: np.random.Generator | None = None):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.reservoir: list[float] = []

    def add(self, values) -> None:
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if len(v) == 0:
            return
        other = MeanAccumulator(self.capacity, self.rng)
        other.count = len(v)
        other.mean = float(v.mean())
        other.m2 = float(np.sum((v - other.mean) ** 2))
        self._reservoir_extend(v)
        self._combine_moments(other)

    def _reservoir_extend(self, v: np.ndarray) -> None:
        seen = self.count
        for x in v:
            seen += 1
            if len(self.reservoir) < self.capacity:
                self.reservoir.append(float(x))
            else:
                j = int(self.rng.integers(seen))
                if j < self.capacity:
                    self.reservoir[j] = float(x)

    def _combine_moments(self, other: "MeanAccumulator") -> None:
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n

    def merge(self, other: "MeanAccumulator") -> "MeanAccumulator":
        out = MeanAccumulator(self.capacity, self.rng)
        out.count, out.mean, out.m2 = self.count, self.mean, self.m2
        out._combine_moments(other)
        pool = self.reservoir + other.reservoir
        if len(pool) <= out.capacity:
            out.reservoir = pool
        else:
            w = np.concatenate([
                np.full(len(self.reservoir), self.count / max(len(self.reservoir), 1)),
                np.full(len(other.reservoir), other.count / max(len(other.reservoir), 1)),
            ])
            idx = out.rng.choice(len(pool), size=out.capacity, replace=False, p=w / w.sum())
            out.reservoir = [pool[i] for i in idx]
        return out

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    def report(
        self,
        alpha: float = 0.01,
        bootstrap: int = 1000,
        name: str = "mc_estimator",
    ) -> StatReport:
        if self.count < 2:
            raise TooFewSamples("estimator needs at least two values")
        se = math.sqrt(self.variance / self.count)
        z = float(sps.norm.ppf(1 - alpha / 2))
        extra = {"variance": self.variance, "standard_error": se}
        if bootstrap and len(self.reservoir) >= 2:
            res = np.asarray(self.reservoir)
            idx = self.rng.integers(len(res), size=(bootstrap, len(res)))
            means = res[idx].mean(axis=1)
            # rescale the reservoir spread to the full sample size
            scale = math.sqrt(len(res) / self.count)
            lo, hi = np.quantile(means - res.mean(), [alpha / 2, 1 - alpha / 2]) * scale
            extra["bootstrap_ci"] = (self.mean + float(lo), self.mean + float(hi))
        return StatReport(
            name, self.mean, self.mean - z * se, self.mean + z * se, 0.0, 0.0,
            provenance={"count": self.count, "alpha": alpha},
            extra=extra,
        )


def mc_estimator(values, alpha: float = 0.01, rng: np.random.Generator | None = None) -> StatReport:
    acc = MeanAccumulator(rng=rng)
    acc.add(values)
    return acc.report(alpha)


def mean_within(
    values, target: float, sigmas: float = 4.0, name: str = "mean_within"
) -> StatReport:
    """Pass when the sample mean is within ``sigmas`` standard errors of ``target``."""
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(len(v)))
    return StatReport(
        name, m, m - sigmas * se, m + sigmas * se, abs(m - target) / se, sigmas,
        provenance={"samples": len(v)},
        extra={"target": target, "standard_error": se},
    )


def variance_within(
    values, target: float, sigmas: float = 4.0, name: str = "variance_within"
) -> StatReport:
    """Sample variance against ``target`` using the fourth-moment standard error."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    c = v - v.mean()
    s2 = float(np.dot(c, c) / (n - 1))
    m4 = float(np.mean(c**4))
    se = math.sqrt(max(m4 - s2 * s2 * (n - 3) / (n - 1), 0.0) / n)
    return StatReport(
        name, s2, s2 - sigmas * se, s2 + sigmas * se, abs(s2 - target) / se, sigmas,
        provenance={"samples": n},
        extra={"target": target, "standard_error": se},
    )


def bootstrap_ratio_ci(
    values,
    statistic: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    resamples: int = 1000,
    alpha: float = 0.01,
) -> tuple[float, float]:
    """Percentile bootstrap interval of ``statistic`` over rows of ``values``."""
    v = np.asarray(values)
    stats = np.empty(resamples)
    for r in range(resamples):
        stats[r] = statistic(v[rng.integers(len(v), size=len(v))])
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Skorokhod-type distance between cadlag paths


def skorokhod_distance_approx(
    path_a,
    path_b,
    window: tuple[float, float],
    grid_resolution: float,
) -> float:
    """Discrete Frechet distance between the graphs of two paths on a grid.

    Both paths are evaluated at the same equally spaced grid of step at most
    ``grid_resolution``. A monotone coupling of grid indices plays the role of
    the time change; the cost of matching ``(s, a(s))`` with ``(t, b(t))`` is
    ``max(|s - t|, |a(s) - b(t)|)``. The result is symmetric, zero for equal
    paths, a metric on grid samples, and never larger than the plain sup
    difference over the grid. It approximates the J1 distance only up to the
    grid: a jump falling between grid points is seen one step late.

    ``path_a`` and ``path_b`` are callables mapping an array of times to values.
    """
    t0, t1 = window
    if not t1 > t0 or grid_resolution <= 0:
        raise InvalidArgument("window must be non-empty and resolution positive")
    m = int(math.ceil((t1 - t0) / grid_resolution)) + 1
    grid = np.linspace(t0, t1, m)
    a = np.asarray(path_a(grid), dtype=float)
    b = np.asarray(path_b(grid), dtype=float)
    if a.shape != grid.shape or b.shape != grid.shape:
        raise InvalidArgument("paths must return one value per grid time")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidArgument("path is undefined somewhere on the window")
    return discrete_frechet(grid, a, b)


def discrete_frechet(grid: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Bottleneck matching cost over monotone index couplings.

    Filled one anti-diagonal at a time: cell ``(i, j)`` depends on
    ``(i-1, j)`` and ``(i, j-1)`` on the previous diagonal and on
    ``(i-1, j-1)`` two diagonals back.
    """
    m = len(grid)
    if np.array_equal(a, b):
        return 0.0
    inf = np.inf
    # diag_k[i] holds D[i, k - i]; cells outside the square stay infinite
    prev2 = np.full(m, inf)
    prev1 = np.full(m, inf)
    prev1[0] = max(0.0, abs(a[0] - b[0]))
    for k in range(1, 2 * m - 1):
        i = np.arange(max(0, k - m + 1), min(k, m - 1) + 1)
        j = k - i
        cost = np.maximum(np.abs(grid[i] - grid[j]), np.abs(a[i] - b[j]))
        best = np.full(len(i), inf)
        up = i >= 1
        best[up] = prev1[i[up] - 1]  # D[i-1, j]
        left = j >= 1
        best[left] = np.minimum(best[left], prev1[i[left]])  # D[i, j-1]
        diag = up & left
        best[diag] = np.minimum(best[diag], prev2[i[diag] - 1])  # D[i-1, j-1]
        cur = np.full(m, inf)
        cur[i] = np.maximum(cost, best)
        prev2, prev1 = prev1, cur
    return float(prev1[m - 1])
