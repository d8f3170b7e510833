"""Event-driven Moran model with an incrementally maintained genealogy.

Individuals occupy slots ``0..n-1`` and slot ``s`` is always leaf node ``s``.
Internal nodes use ids ``n..2n-2``; when an individual dies its leaf id is
reused for the newborn and its parent id for the new branch point, so ids
never grow. Node times run forward (the initial tree has its leaves at 0).

Internal nodes are always created at the current time, so their creation
order is also their age order. A creation counter per node therefore gives
ranks by age without sorting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kingman
from .errors import InvalidArgument, OutOfOrderEvent
from .stats import StatReport, bootstrap_ratio_ci

BATCH = 4096


class ResamplingEvent(NamedTuple):
    time: float
    dier: int
    reproducer: int


class Jump(NamedTuple):
    """Effect of one event on the tree length.

    ``size`` is the drop of the length process. It equals ``external``, the
    dier's external branch, unless the dier hung from the root; then the
    sibling's stem to the old root is lost too. ``rank`` is the number of
    lines the tree has where the dier's branch attaches (1 for the root),
    or 0 when ranks are not tracked.
    """

    size: float
    external: float
    rank: int
    root_change: bool


class _RankIndex:
    """Fenwick tree over creation numbers of the live internal nodes."""

    def __init__(self, seq: list[int], n: int):
        self.n = n
        self.seq = seq
        self.size = max(4 * n, 1024)
        self._rebuild()

    def _rebuild(self, exclude: int = -1) -> None:
        ids = sorted((v for v in range(self.n, 2 * self.n - 1) if v != exclude),
                     key=lambda v: self.seq[v])
        for pos, v in enumerate(ids, start=1):
            self.seq[v] = pos
        self.next = len(ids) + 1
        self.tree = [0] * (self.size + 1)
        for pos in range(1, len(ids) + 1):
            self._add(pos, 1)

    def _add(self, i: int, d: int) -> None:
        tree, size = self.tree, self.size
        while i <= size:
            tree[i] += d
            i += i & (-i)

    def rank(self, v: int) -> int:
        i, s, tree = self.seq[v], 0, self.tree
        while i > 0:
            s += tree[i]
            i -= i & (-i)
        return s

    def renew(self, v: int) -> None:
        """Node ``v`` dies and is reborn as the youngest internal node."""
        self._add(self.seq[v], -1)
        if self.next > self.size:
            self._rebuild(exclude=v)
        self.seq[v] = self.next
        self.next += 1
        self._add(self.seq[v], 1)


@dataclass
class FamilyState:
    """Sizes and membership of the ``f`` oldest families."""

    f: int
    sizes: list[int]
    membership: list[int]
    extinction_log: list[float] = field(default_factory=list)
    in_top: list[bool] = field(default_factory=list)


class MoranState:
    def __init__(self, tree: kingman.CoalescentTree, clock: float = 0.0):
        n = tree.n
        self.n = n
        self.parent = [int(p) for p in tree.parent]
        self.left = [-1] * (2 * n - 1)
        self.right = [-1] * (2 * n - 1)
        for v, (a, b) in zip(range(n, 2 * n - 1), tree.children):
            self.left[v], self.right[v] = int(a), int(b)
        self.node_time = [clock - float(a) for a in tree.age]
        self.root = tree.root
        self.clock = clock
        # oldest internal node gets the smallest creation number
        self.seq = [0] * n + [2 * n - 2 - v for v in range(n, 2 * n - 1)]
        self.next_seq = n - 1
        self.cached_length = self.recompute_length()
        self.ranks: _RankIndex | None = None
        self.families: list[FamilyState] = []

    # -- bookkeeping -------------------------------------------------------

    def track_ranks(self) -> None:
        if self.ranks is None:
            self.ranks = _RankIndex(self.seq, self.n)

    def internal_by_age(self) -> list[int]:
        """Internal node ids, oldest first."""
        return sorted(range(self.n, 2 * self.n - 1), key=lambda v: self.seq[v])

    def recompute_length(self) -> float:
        n, total = self.n, 0.0
        for v in range(2 * n - 1):
            if v == self.root:
                continue
            t = self.clock if v < n else self.node_time[v]
            total += t - self.node_time[self.parent[v]]
        return total

    def internal_times(self) -> np.ndarray:
        """Creation times of internal nodes, oldest first."""
        return np.array([self.node_time[v] for v in self.internal_by_age()])

    def spans(self) -> kingman.InterCoalescenceTimes:
        """Periods of the current tree; undefined at an event instant, where the youngest is empty."""
        t = np.append(self.internal_times(), self.clock)
        return kingman.InterCoalescenceTimes(np.diff(t))

    def to_tree(self) -> kingman.CoalescentTree:
        """Snapshot with internal nodes renumbered in merge order."""
        n = self.n
        order = self.internal_by_age()[::-1]
        new_id = list(range(2 * n - 1))
        for k, v in enumerate(order):
            new_id[v] = n + k
        parent = np.full(2 * n - 1, -1, dtype=np.int64)
        age = np.zeros(2 * n - 1)
        children = np.zeros((n - 1, 2), dtype=np.int64)
        for v in order:
            a, b = new_id[self.left[v]], new_id[self.right[v]]
            w = new_id[v]
            parent[a] = parent[b] = w
            age[w] = self.clock - self.node_time[v]
            children[w - n] = (a, b)
        return kingman.CoalescentTree(n, parent, age, children)

    def leaves_below(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            u = stack.pop()
            if u < self.n:
                out.append(u)
            else:
                stack.append(self.left[u])
                stack.append(self.right[u])
        return out

    # -- events ------------------------------------------------------------

    def apply(self, time: float, dier: int, reproducer: int) -> Jump:
        if not time > self.clock:
            raise OutOfOrderEvent(f"event at {time} does not follow clock {self.clock}")
        n = self.n
        parent, left, right, node_time = self.parent, self.left, self.right, self.node_time
        self.cached_length += n * (time - self.clock)
        self.clock = time

        p = parent[dier]
        rank = self.ranks.rank(p) if self.ranks is not None else 0
        extinct = [fam.in_top[p] for fam in self.families]

        external = time - node_time[p]
        sib = right[p] if left[p] == dier else left[p]
        if p == self.root:
            stem = (time if sib < n else node_time[sib]) - node_time[p]
            self.root = sib
            parent[sib] = -1
            size = external + stem
            root_change = True
        else:
            g = parent[p]
            if left[g] == p:
                left[g] = sib
            else:
                right[g] = sib
            parent[sib] = g
            size = external
            root_change = False

        # the freed branch point becomes the birth at the reproducer's tip
        g = parent[reproducer]
        if g == -1:
            self.root = p
        elif left[g] == reproducer:
            left[g] = p
        else:
            right[g] = p
        parent[p] = g
        left[p], right[p] = reproducer, dier
        parent[reproducer] = parent[dier] = p
        node_time[p] = time
        if self.ranks is not None:
            self.ranks.renew(p)
        else:
            self.seq[p] = self.next_seq
            self.next_seq += 1

        self.cached_length -= size
        for fam, ext in zip(self.families, extinct):
            self._update_family(fam, dier, reproducer, ext, time)
        return Jump(size, external, rank, root_change)

    # -- families ----------------------------------------------------------

    def track_families(self, f: int, rng: np.random.Generator | None = None) -> FamilyState:
        """Start following the ``f`` oldest families; labels are a random permutation."""
        if not 2 <= f <= self.n:
            raise InvalidArgument(f"need 2 <= f <= n, got f={f}, n={self.n}")
        lines = self._family_lines(f)
        perm = list(rng.permutation(f)) if rng is not None else list(range(f))
        fam = FamilyState(f, [0] * f, [-1] * self.n, [], [False] * (2 * self.n - 1))
        for label, line in zip(perm, lines):
            members = self.leaves_below(line)
            for leaf in members:
                fam.membership[leaf] = int(label)
            fam.sizes[int(label)] = len(members)
        self._mark_top(fam)
        self.families.append(fam)
        return fam

    def _top_nodes(self, f: int) -> list[int]:
        return self.internal_by_age()[: f - 1]

    def _family_lines(self, f: int) -> list[int]:
        top = self._top_nodes(f)
        top_set = set(top)
        lines = []
        for t in top:
            for c in (self.left[t], self.right[t]):
                if c not in top_set:
                    lines.append(c)
        return lines

    def _mark_top(self, fam: FamilyState) -> None:
        fam.in_top = [False] * (2 * self.n - 1)
        for t in self._top_nodes(fam.f):
            fam.in_top[t] = True

    def _update_family(self, fam: FamilyState, dier: int, reproducer: int,
                       extinct: bool, time: float) -> None:
        old = fam.membership[dier]
        fam.sizes[old] -= 1
        label = fam.membership[reproducer]
        fam.membership[dier] = label
        fam.sizes[label] += 1
        if extinct:
            fam.extinction_log.append(time)
            self._recut(fam, old)

    def _recut(self, fam: FamilyState, freed: int) -> None:
        """Rebuild the partition after family ``freed`` died out.

        Surviving families keep their labels. Exactly one old family now spans
        two lines, the children of the node that moved into the top set; the
        second child's side takes the freed label.
        """
        lines = self._family_lines(fam.f)
        by_label: dict[int, list[int]] = {}
        members_of: dict[int, list[int]] = {}
        for line in lines:
            members = self.leaves_below(line)
            members_of[line] = members
            by_label.setdefault(fam.membership[members[0]], []).append(line)
        for label, group in by_label.items():
            if len(group) == 2:
                a, b = group
                split = self.parent[a]
                assert self.parent[b] == split
                second = b if self.right[split] == b else a
                for leaf in members_of[second]:
                    fam.membership[leaf] = freed
        for lab in range(fam.f):
            fam.sizes[lab] = 0
        for leaf in range(self.n):
            fam.sizes[fam.membership[leaf]] += 1
        self._mark_top(fam)

    def family_partition(self, fam: FamilyState) -> list[set[int]]:
        """Families recomputed from scratch, as sets of slots (for checks)."""
        return [set(self.leaves_below(line)) for line in self._family_lines(fam.f)]


# ---------------------------------------------------------------------------
# driving the process


def init_equilibrium(n: int, rng: np.random.Generator) -> MoranState:
    return MoranState(kingman.sample_topology(n, rng))


def next_event(state: MoranState, rng: np.random.Generator) -> ResamplingEvent:
    n = state.n
    gap = rng.exponential(1.0 / kingman.pairs(n))
    d = int(rng.integers(n))
    r = int(rng.integers(n - 1))
    return ResamplingEvent(state.clock + gap, d, r + (r >= d))


def apply_event(state: MoranState, event: ResamplingEvent) -> Jump:
    return state.apply(event.time, event.dier, event.reproducer)


def event_stream(n: int, rng: np.random.Generator, start: float = 0.0):
    """Infinite iterator of events, drawn in fixed-size batches."""
    rate = kingman.pairs(n)
    clock = start
    while True:
        gaps = rng.exponential(1.0 / rate, size=BATCH)
        d = rng.integers(n, size=BATCH)
        r = rng.integers(n - 1, size=BATCH)
        r = r + (r >= d)
        times = clock + np.cumsum(gaps)
        for t, a, b in zip(times.tolist(), d.tolist(), r.tolist()):
            yield ResamplingEvent(t, a, b)
        clock = float(times[-1])


@dataclass
class PathOptions:
    families: Sequence[int] = ()
    track_ranks: bool = False
    check_every: int = 0


@dataclass
class LengthPath:
    n: int
    t0: float
    t1: float
    base: float
    initial_tree: kingman.CoalescentTree
    event_times: np.ndarray
    diers: np.ndarray
    reproducers: np.ndarray
    jump_sizes: np.ndarray
    external: np.ndarray
    ranks: np.ndarray
    root_changes: np.ndarray
    final_length: float
    extinctions: dict[int, list[float]] = field(default_factory=dict)
    max_check_error: float = 0.0

    @property
    def slope(self) -> int:
        return self.n

    @property
    def compensation(self) -> float:
        return 2.0 * math.log(self.n)

    def value_at(self, times, compensated: bool = False) -> np.ndarray:
        """Right-continuous tree length at each requested time."""
        s = np.asarray(times, dtype=float)
        drops = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        k = np.searchsorted(self.event_times, s, side="right")
        v = self.base + self.n * (s - self.t0) - drops[k]
        return v - self.compensation if compensated else v

    def left_limit(self, times, compensated: bool = False) -> np.ndarray:
        s = np.asarray(times, dtype=float)
        drops = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        k = np.searchsorted(self.event_times, s, side="left")
        v = self.base + self.n * (s - self.t0) - drops[k]
        return v - self.compensation if compensated else v

    def events(self) -> list[ResamplingEvent]:
        return [
            ResamplingEvent(t, d, r)
            for t, d, r in zip(self.event_times.tolist(), self.diers.tolist(),
                               self.reproducers.tolist())
        ]


def simulate_path(
    n: int,
    t_end: float,
    rng: np.random.Generator,
    options: PathOptions | None = None,
    family_rng: np.random.Generator | None = None,
) -> LengthPath:
    """Stationary Moran path on ``[0, t_end]`` with every event recorded."""
    if t_end <= 0:
        raise InvalidArgument("t_end must be positive")
    opts = options or PathOptions()
    tree = kingman.sample_topology(n, rng)
    state = MoranState(tree)
    if opts.track_ranks or opts.families:
        state.track_ranks()
    fams = {f: state.track_families(f, family_rng or rng) for f in opts.families}
    base = state.cached_length
    times, diers, reps, sizes, ext, ranks, roots = [], [], [], [], [], [], []
    worst = 0.0
    for ev in event_stream(n, rng):
        if ev.time > t_end:
            break
        j = state.apply(ev.time, ev.dier, ev.reproducer)
        times.append(ev.time)
        diers.append(ev.dier)
        reps.append(ev.reproducer)
        sizes.append(j.size)
        ext.append(j.external)
        ranks.append(j.rank)
        roots.append(j.root_change)
        if opts.check_every and len(times) % opts.check_every == 0:
            worst = max(worst, relative_length_error(state))
    final = state.cached_length + n * (t_end - state.clock)
    return LengthPath(
        n, 0.0, t_end, base, tree,
        np.array(times), np.array(diers, dtype=np.int64), np.array(reps, dtype=np.int64),
        np.array(sizes), np.array(ext), np.array(ranks, dtype=np.int64),
        np.array(roots, dtype=bool), final,
        {f: fam.extinction_log for f, fam in fams.items()}, worst,
    )


def relative_length_error(state: MoranState) -> float:
    full = state.recompute_length()
    return abs(state.cached_length - full) / max(abs(full), 1e-300)


def replay_state(path: LengthPath, until: float | None = None) -> MoranState:
    """Rebuild the state at ``until`` (default: last event) from the record."""
    state = MoranState(path.initial_tree, path.t0)
    for ev in path.events():
        if until is not None and ev.time > until:
            break
        state.apply(*ev)
    return state


# ---------------------------------------------------------------------------
# exact laws for external branches


def external_branch_pmf_f(n: int, f: int) -> float:
    if not 1 <= f <= n - 1:
        raise InvalidArgument(f"need 1 <= f <= n-1, got f={f}, n={n}")
    return 2.0 * f / (n * (n - 1))


def external_branch_moments(n: int) -> tuple[float, float]:
    if n < 2:
        raise InvalidArgument("need n >= 2")
    h = kingman.harmonic(n)
    return 2.0 / n, (8.0 * h - 12.0 + 4.0 / n) / (n * (n - 1))


def scaled_external_cdf(x):
    """Limit law of n times an external branch length."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0 - 4.0 / (2.0 + np.clip(x, 0, None)) ** 2, 0.0)


# ---------------------------------------------------------------------------
# window statistic


def window_statistic_f(event_ranks: Sequence[int], n: int) -> int:
    """Oldest inter-coalescence level disturbed by the given events.

    An event whose dier attaches at rank ``r`` changes the ``max(r, 2)``-line
    period and leaves every older one alone. With no events ``n + 1`` is
    returned.
    """
    return min((max(int(r), 2) for r in event_ranks), default=n + 1)


def window_statistic_snapshots(before: np.ndarray, after: np.ndarray, n: int) -> int:
    """Same statistic from internal-node creation times at both window ends.

    Node times are distinct reals and removed nodes never return, so the
    first oldest-first position where the lists differ is the oldest
    disturbed branch point.
    """
    diff = np.nonzero(np.asarray(before) != np.asarray(after))[0]
    if len(diff) == 0:
        return n + 1
    return max(int(diff[0]) + 1, 2)


# ---------------------------------------------------------------------------
# gained and lost tree length


def decompose_ab(path: LengthPath, t: float) -> tuple[float, float]:
    """Length gained since time ``t0`` and length of the ``t0`` tree lost by ``t``."""
    if not path.t0 <= t <= path.t1:
        raise InvalidArgument(f"t={t} lies outside the path window")
    n = path.n
    state = MoranState(path.initial_tree, path.t0)
    ancestor = list(range(n))
    for ev in path.events():
        if ev.time > t:
            break
        state.apply(*ev)
        ancestor[ev.dier] = ancestor[ev.reproducer]
    state.cached_length += n * (t - state.clock)
    state.clock = t
    return gained_length(state, path.t0), lost_length(path.initial_tree, set(ancestor))


def gained_length(state: MoranState, since: float) -> float:
    t = np.append(state.internal_times(), state.clock)
    k = np.arange(2, state.n + 1)
    overlap = np.clip(np.minimum(t[1:], state.clock) - np.maximum(t[:-1], since), 0.0, None)
    return float(np.dot(k, overlap))


def subtree_length(tree: kingman.CoalescentTree, leaves: set[int]) -> float:
    """Length of the part of ``tree`` spanned by ``leaves``."""
    if len(leaves) < 2:
        return 0.0
    return tree.subsample(sorted(leaves)).length()


def lost_length(tree: kingman.CoalescentTree, survivors: set[int]) -> float:
    return tree.length() - subtree_length(tree, survivors)


def sample_length_increments(
    n: int, t: float, reps: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Exact joint draws of (gained, lost) length over a window of length ``t``.

    Looks back from time ``t`` with an n-coalescent: its part inside the
    window is the gained length and it leaves ``S`` ancestors at the window
    start. By exchangeability these are a uniform S-subset of the stationary
    tree there, whose induced subtree follows the finite subsample chain
    started at ``K_n = S``. No event-by-event simulation is involved.
    """
    gained = np.zeros(reps)
    end = np.zeros(reps)
    merged_by_t = np.zeros(reps, dtype=np.int64)
    for k in range(n, 1, -1):
        x = rng.exponential(1.0 / kingman.pairs(k), size=reps)
        start = end
        end = start + x
        gained += k * np.clip(np.minimum(end, t) - start, 0.0, None)
        merged_by_t += end <= t
    s = n - merged_by_t
    lost = np.zeros(reps)
    kk = s.copy()
    for i in range(n, 1, -1):
        x = rng.exponential(1.0 / kingman.pairs(i), size=reps)
        lost += (i - np.where(kk >= 2, kk, 0)) * x
        kk = kk - (rng.random(reps) * kingman.pairs(i) < kingman.pairs(kk))
    return gained, lost


def infinitesimal_variance_ratio(
    n: int,
    t: float,
    reps: int,
    rng: np.random.Generator,
    band: tuple[float, float] = (0.5, 1.5),
    alpha: float = 0.01,
    resamples: int = 1000,
) -> StatReport:
    """V[L(t) - L(0)] / (4 t |log t|) with a percentile bootstrap interval."""
    gained, lost = sample_length_increments(n, t, reps, rng)
    diff = gained - lost
    scale = 4.0 * t * abs(math.log(t))
    ratio = float(np.var(diff, ddof=1) / scale)
    lo, hi = bootstrap_ratio_ci(diff, lambda v: np.var(v, ddof=1) / scale, rng,
                                resamples, alpha)
    # distance outside the acceptance band; zero when inside
    outside = max(band[0] - ratio, ratio - band[1], 0.0)
    va, vb = float(np.var(gained, ddof=1)), float(np.var(lost, ddof=1))
    cov = float(np.cov(gained, lost)[0, 1])
    return StatReport(
        "infinitesimal_variance_ratio", ratio, lo, hi, outside, 0.0,
        provenance={"n": n, "t": t, "reps": reps},
        extra={"var_gained": va, "var_lost": vb, "cov": cov,
               "gained_ratio": va / (2.0 * t / 3.0)},
    )
