"""Lookdown particle system on a finite time window.

Levels are 1-based. An event ``(i, j)`` with ``i < j`` at time ``tau`` puts
an offspring of the level-``i`` particle at level ``j`` and pushes every
particle at level ``j`` or above up by one. Because no event moves a particle
down, levels ``1..n`` form a closed system for every ``n``: only events with
``j <= n`` matter to it, and for it such an event is a Moran event in which
the level-``n`` particle dies, the level-``i`` particle reproduces and the
newborn is inserted at level ``j``. Nested systems on shared events are
therefore exact.

At ``t_start`` the levels carry a Kingman tree with leaves assigned to
levels uniformly at random.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kingman
from .errors import CapExceeded, InvalidArgument
from .moran import LengthPath, MoranState
from .stats import StatReport, skorokhod_distance_approx


@dataclass(frozen=True)
class LookdownWindow:
    n_max: int
    t_start: float
    t_end: float
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    init_tree: kingman.CoalescentTree
    level_leaf: np.ndarray

    @property
    def events(self) -> list[tuple[float, int, int]]:
        return list(zip(self.times.tolist(), self.lower.tolist(), self.upper.tolist()))


def sample_window(
    n_max: int, t_start: float, t_end: float, rng: np.random.Generator
) -> LookdownWindow:
    if n_max < 2 or not t_end > t_start:
        raise InvalidArgument("need n_max >= 2 and a non-empty window")
    tree = kingman.sample_topology(n_max, rng)
    level_leaf = rng.permutation(n_max)
    count = rng.poisson(kingman.pairs(n_max) * (t_end - t_start))
    times = np.sort(rng.uniform(t_start, t_end, size=count))
    a = rng.integers(1, n_max + 1, size=count)
    b = rng.integers(1, n_max, size=count)
    b = b + (b >= a)
    return LookdownWindow(
        n_max, t_start, t_end, times, np.minimum(a, b), np.maximum(a, b), tree, level_leaf
    )


def _check_level(window: LookdownWindow, level: int) -> None:
    if level < 1:
        raise InvalidArgument(f"levels start at 1, got {level}")
    if level > window.n_max:
        raise CapExceeded(f"level {level} lies above the simulated cap {window.n_max}")


def ancestor_level(window: LookdownWindow, s: float, t: float, j: int) -> int:
    """Level at time ``s`` of the ancestor of the particle at level ``j`` at ``t``."""
    if not window.t_start <= s <= t <= window.t_end:
        raise InvalidArgument("need t_start <= s <= t <= t_end")
    _check_level(window, j)
    lo = bisect.bisect_right(window.times, s)
    hi = bisect.bisect_right(window.times, t)
    k = j
    lower, upper = window.lower, window.upper
    for e in range(hi - 1, lo - 1, -1):
        up = upper[e]
        if k == up:
            k = int(lower[e])
        elif k > up:
            k -= 1
    return k


def metric_r_ld(window: LookdownWindow, t: float, i: int, j: int) -> float:
    """Twice the time back from ``t`` to the common ancestor of levels i and j."""
    if i == j:
        raise InvalidArgument("metric needs two distinct levels")
    _check_level(window, i)
    _check_level(window, j)
    hi = bisect.bisect_right(window.times, t)
    a, b = i, j
    lower, upper = window.lower, window.upper
    for e in range(hi - 1, -1, -1):
        up, low = upper[e], lower[e]
        if a == up:
            a = int(low)
        elif a > up:
            a -= 1
        if b == up:
            b = int(low)
        elif b > up:
            b -= 1
        if a == b:
            return 2.0 * (t - float(window.times[e]))
    leaf_a = int(window.level_leaf[a - 1])
    leaf_b = int(window.level_leaf[b - 1])
    return 2.0 * (t - window.t_start) + kingman.metric_r(window.init_tree, leaf_a, leaf_b)


def ultrametric_tree_length(dist: np.ndarray) -> float:
    """Length of the ultrametric tree realising a leaf-distance matrix.

    Merge heights are the minimum-spanning-tree edge weights of half the
    distances; the length is their sum plus the root height.
    """
    h = np.asarray(dist, dtype=float) / 2.0
    m = len(h)
    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    best = h[0].copy()
    heights = []
    for _ in range(m - 1):
        v = int(np.argmin(np.where(in_tree, np.inf, best)))
        heights.append(float(best[v]))
        in_tree[v] = True
        best = np.minimum(best, h[v])
    return math.fsum(heights) + max(heights)


def tree_length_ld_by_metric(window: LookdownWindow, t: float, n: int) -> float:
    d = np.zeros((n, n))
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            d[a - 1, b - 1] = d[b - 1, a - 1] = metric_r_ld(window, t, a, b)
    return ultrametric_tree_length(d)


class LevelSystem:
    """Genealogy of levels ``1..n`` driven by the window's events."""

    def __init__(self, window: LookdownWindow, n: int):
        if not 2 <= n <= window.n_max:
            raise CapExceeded(f"n={n} exceeds the level cap {window.n_max}")
        self.n = n
        leaves = [int(v) for v in window.level_leaf[:n]]
        self.state = MoranState(window.init_tree.subsample(leaves), window.t_start)
        self.slot_at_level = list(range(n))

    def apply(self, time: float, i: int, j: int):
        """Apply a lookdown event; events with ``j > n`` must be filtered out."""
        slots = self.slot_at_level
        dier = slots.pop()
        jump = self.state.apply(time, dier, slots[i - 1])
        slots.insert(j - 1, dier)
        return jump

    def length_at(self, t: float) -> float:
        return self.state.cached_length + self.n * (t - self.state.clock)


def length_path_ld(
    window: LookdownWindow, n: int, grid: Sequence[float] | None = None
) -> LengthPath | tuple[LengthPath, np.ndarray]:
    """Tree length of the first ``n`` levels over the window, event by event.

    The returned path records every jump, so it can be evaluated exactly on
    any grid; when ``grid`` is given the compensated values there are also
    returned.
    """
    system = LevelSystem(window, n)
    keep = window.upper <= n
    times = window.times[keep]
    lows = window.lower[keep]
    ups = window.upper[keep]
    base = system.state.cached_length
    diers, reps, sizes, ext, roots = [], [], [], [], []
    for t, i, j in zip(times.tolist(), lows.tolist(), ups.tolist()):
        reps.append(system.slot_at_level[i - 1])
        diers.append(system.slot_at_level[-1])
        jump = system.apply(t, i, j)
        sizes.append(jump.size)
        ext.append(jump.external)
        roots.append(jump.root_change)
    sub = window.init_tree.subsample([int(v) for v in window.level_leaf[:n]])
    path = LengthPath(
        n, window.t_start, window.t_end, base, sub, times,
        np.array(diers, dtype=np.int64), np.array(reps, dtype=np.int64),
        np.array(sizes), np.array(ext), np.zeros(len(times), dtype=np.int64),
        np.array(roots, dtype=bool), system.length_at(window.t_end),
    )
    if grid is None:
        return path
    return path, path.value_at(grid, compensated=True)


def nested_distances(
    window: LookdownWindow, ns: Sequence[int], grid_resolution: float
) -> list[float]:
    """Approximate Skorokhod distance between consecutive nested paths."""
    if list(ns) != sorted(ns):
        raise InvalidArgument("n-list must be increasing")
    paths = [length_path_ld(window, n) for n in ns]
    span = (window.t_start, window.t_end)
    out = []
    for a, b in zip(paths[:-1], paths[1:]):
        out.append(skorokhod_distance_approx(
            lambda g, p=a: p.value_at(g, compensated=True),
            lambda g, p=b: p.value_at(g, compensated=True),
            span, grid_resolution,
        ))
    return out


def nested_convergence_report(
    windows: Sequence[LookdownWindow],
    ns: Sequence[int],
    grid_resolution: float,
) -> StatReport:
    """Median nested distance per consecutive pair of sizes.

    Passes when the medians strictly decrease with ``n``. The test statistic is
    the number of adjacent pairs that fail to decrease.
    """
    dist = np.array([nested_distances(w, ns, grid_resolution) for w in windows])
    medians = np.median(dist, axis=0)
    increases = int(np.sum(np.diff(medians) >= 0))
    return StatReport(
        "nested_convergence", float(medians[-1]), float(medians.min()),
        float(medians.max()), float(increases), 0.0,
        provenance={"sizes": list(ns), "replicates": len(windows),
                    "grid_resolution": grid_resolution},
        extra={"medians": medians.tolist(), "pairs": list(zip(ns[:-1], ns[1:]))},
    )


def pair_before_check(window: LookdownWindow, t: float) -> int:
    """Compare coalescence of levels (1, 2) with (1, 3) at time ``t``.

    Returns 1 when (1, 2) coalesce strictly earlier going back, 0 when they
    tie (2 and 3 merge first), -1 otherwise.
    """
    r12 = metric_r_ld(window, t, 1, 2)
    r13 = metric_r_ld(window, t, 1, 3)
    if math.isclose(r12, r13, rel_tol=0, abs_tol=1e-12):
        return 0
    return 1 if r12 < r13 else -1
