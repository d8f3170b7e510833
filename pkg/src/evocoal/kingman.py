"""Fixed-time Kingman coalescent: sampling, exact oracles and couplings.

Conventions used throughout the package:

* ``x[k - 2]`` is the duration of the period during which the tree has ``k``
  lines, for ``k = 2..n``. The k-line period is exponential with rate
  ``k (k - 1) / 2``.
* Ages are measured backwards from the present; all leaves have age 0.
* Leaves are numbered ``0..n-1`` and internal nodes ``n..2n-2`` in the order
  in which the mergers happen going back in time, so the root is ``2n - 2``.

The "infinite" coalescent is represented by a tree truncated at ``i_max``
lines. Quantities that reach above the truncation carry a deterministic
mean correction; see the individual functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln, polygamma

from .errors import InvalidArgument, TruncationError


def pairs(k):
    return k * (k - 1) / 2


def default_i_max(n: int) -> int:
    return max(10_000, 100 * n)


def _check_size(n: int) -> None:
    if n < 2:
        raise InvalidArgument(f"population size must be at least 2, got {n}")


# ---------------------------------------------------------------------------
# inter-coalescence times and tree length


@dataclass(frozen=True)
class InterCoalescenceTimes:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or len(x) < 1:
            raise InvalidArgument("need at least the two-line period")
        if not np.all(x > 0):
            raise InvalidArgument("all inter-coalescence times must be positive")
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.x) + 1

    def span(self, k: int) -> float:
        if not 2 <= k <= self.n:
            raise InvalidArgument(f"no {k}-line period in a tree of {self.n} leaves")
        return float(self.x[k - 2])

    def coming_down_times(self, shift: float = 0.0) -> np.ndarray:
        """``t[m - 1]`` is the age at which the tree first has ``m`` lines.

        ``t[n - 1] == shift``; pass ``shift = 2 / n`` to stand in for the
        expected time the infinite tree needs to come down to ``n`` lines.
        """
        tail = np.cumsum(self.x[::-1])[::-1]
        return np.append(tail, 0.0) + shift


def sample_intercoalescence_times(n: int, rng: np.random.Generator) -> InterCoalescenceTimes:
    _check_size(n)
    return InterCoalescenceTimes(sample_spans(n, 1, rng)[0])


def sample_spans(n: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Array of shape ``(reps, n - 1)`` of independent span vectors."""
    _check_size(n)
    k = np.arange(2, n + 1)
    x = rng.exponential(1.0 / pairs(k), size=(reps, n - 1))
    # a zero span would make two mergers simultaneous
    zero = x == 0.0
    while zero.any():
        rows, cols = np.nonzero(zero)
        x[rows, cols] = rng.exponential(1.0 / pairs(k[cols]))
        zero = x == 0.0
    return x


def tree_length(times: InterCoalescenceTimes) -> float:
    k = np.arange(2, times.n + 1)
    return float(np.dot(k, times.x))


def harmonic(m: int, power: int = 1) -> float:
    """Compensated sum of ``1 / i**power`` for ``i = 1..m``."""
    if m <= 0:
        return 0.0
    return math.fsum(1.0 / np.arange(1, m + 1, dtype=float) ** power)


def expected_length_exact(n: int) -> float:
    _check_size(n)
    return 2.0 * harmonic(n - 1)


def variance_length_exact(n: int) -> float:
    _check_size(n)
    return 4.0 * harmonic(n - 1, 2)


# ---------------------------------------------------------------------------
# explicit trees


@dataclass(frozen=True)
class CoalescentTree:
    n: int
    parent: np.ndarray
    age: np.ndarray
    children: np.ndarray

    @property
    def root(self) -> int:
        return 2 * self.n - 2

    @property
    def mergers(self) -> list[tuple[float, int, int, int]]:
        """(age, child_a, child_b, parent) per merger, most recent first."""
        return [
            (float(self.age[v]), int(a), int(b), v)
            for v, (a, b) in zip(range(self.n, 2 * self.n - 1), self.children)
        ]

    def length(self) -> float:
        below = np.arange(2 * self.n - 2)
        return float(np.sum(self.age[self.parent[below]] - self.age[below]))

    def depth(self) -> float:
        return float(self.age[self.root])

    def spans(self) -> InterCoalescenceTimes:
        return InterCoalescenceTimes(np.diff(self.age[self.n - 1 :])[::-1])

    def ancestors(self, v: int) -> list[int]:
        path = [v]
        while path[-1] != self.root:
            path.append(int(self.parent[path[-1]]))
        return path

    def mrca(self, i: int, j: int) -> int:
        seen = set(self.ancestors(i))
        v = j
        while v not in seen:
            v = int(self.parent[v])
        return v

    def subsample(self, leaves: Sequence[int]) -> "CoalescentTree":
        """Tree induced by ``leaves``; leaf ``leaves[r]`` becomes leaf ``r``."""
        m = len(leaves)
        _check_size(m)
        rep = np.full(2 * self.n - 1, -1, dtype=np.int64)
        for r, leaf in enumerate(leaves):
            _check_leaf(self, leaf)
            rep[leaf] = r
        parent = np.full(2 * m - 1, -1, dtype=np.int64)
        age = np.zeros(2 * m - 1)
        children = np.zeros((m - 1, 2), dtype=np.int64)
        nxt = m
        for v in range(self.n, 2 * self.n - 1):
            a, b = (rep[c] for c in self.children[v - self.n])
            if a >= 0 and b >= 0:
                parent[a] = parent[b] = nxt
                age[nxt] = self.age[v]
                children[nxt - m] = (a, b)
                rep[v] = nxt
                nxt += 1
            else:
                rep[v] = max(a, b)
        return CoalescentTree(m, parent, age, children)


def _check_leaf(tree: CoalescentTree, leaf: int) -> None:
    if not 0 <= leaf < tree.n:
        raise InvalidArgument(f"unknown leaf {leaf} in a tree of {tree.n} leaves")


def tree_from_times(times: InterCoalescenceTimes, rng: np.random.Generator) -> CoalescentTree:
    """Attach a uniformly random Kingman topology to given spans."""
    n = times.n
    merge_age = np.cumsum(times.x[::-1])
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    age = np.zeros(2 * n - 1)
    children = np.zeros((n - 1, 2), dtype=np.int64)
    active = list(range(n))
    for step in range(n - 1):
        k = len(active)
        i = int(rng.integers(k))
        j = int(rng.integers(k - 1))
        if j >= i:
            j += 1
        a, b = active[i], active[j]
        v = n + step
        parent[a] = parent[b] = v
        age[v] = merge_age[step]
        children[step] = (a, b)
        # swap-remove both, then append the new line
        for pos in sorted((i, j), reverse=True):
            active[pos] = active[-1]
            active.pop()
        active.append(v)
    return CoalescentTree(n, parent, age, children)


def sample_topology(n: int, rng: np.random.Generator) -> CoalescentTree:
    return tree_from_times(sample_intercoalescence_times(n, rng), rng)


def metric_r(tree: CoalescentTree, i: int, j: int) -> float:
    """Twice the age of the most recent common ancestor of leaves i and j."""
    _check_leaf(tree, i)
    _check_leaf(tree, j)
    if i == j:
        raise InvalidArgument("metric needs two distinct leaves")
    return 2.0 * float(tree.age[tree.mrca(i, j)])


# ---------------------------------------------------------------------------
# subsample chain K


@dataclass(frozen=True)
class SubsampleChain:
    """``k[i - 1]`` is the number of subsample lines while the tree has ``i``."""

    n: int
    k: np.ndarray

    @property
    def i_max(self) -> int:
        return len(self.k)

    def at(self, i: int) -> int:
        return int(self.k[i - 1])


def pmf_k(i: int, k: int, n: int) -> float:
    """Probability that an n-subsample has k lines while the full tree has i."""
    if i < 1 or n < 1 or not 1 <= k <= min(i, n):
        raise InvalidArgument(f"pmf_k out of range: i={i}, k={k}, n={n}")
    return math.comb(n - 1, n - k) * math.comb(i, k) / math.comb(n + i - 1, n)


def conditional_pmf_k(j: int, l: int, i: int, k: int, n: int) -> float:
    """P[K_j = l | K_i = k] for ``i <= j``."""
    if not (1 <= i <= j and 1 <= k <= l <= n):
        raise InvalidArgument(f"conditional pmf out of range: i={i}, j={j}, k={k}, l={l}, n={n}")
    return (
        math.comb(n - k, n - l)
        * math.comb(j + k - 1, i + l - 1)
        / math.comb(n + j - 1, n + i - 1)
    )


def joint_pmf_k(i: int, k: int, j: int, l: int, n: int) -> float:
    """P[K_i = k, K_j = l] for ``i <= j``."""
    if not (1 <= i <= j and 1 <= k <= l <= n) or k > i or l > j:
        raise InvalidArgument(f"joint pmf out of range: i={i}, k={k}, j={j}, l={l}, n={n}")
    num = math.comb(n - 1, n - k) * math.comb(i, k) * math.comb(n - k, n - l)
    num *= math.comb(j + k - 1, i + l - 1)
    den = math.comb(n + i - 1, n) * math.comb(n + j - 1, n + i - 1)
    return num / den


def pmf_k_vector(i: int, n: int) -> np.ndarray:
    """Entries ``p[k - 1] = pmf_k(i, k, n)`` for ``k = 1..min(i, n)``, via log-gamma."""
    k = np.arange(1, min(i, n) + 1)
    log_p = (
        gammaln(n) - gammaln(n - k + 1) - gammaln(k)
        + gammaln(i + 1) - gammaln(k + 1) - gammaln(i - k + 1)
        - (gammaln(n + i) - gammaln(n + 1) - gammaln(i))
    )
    p = np.exp(log_p)
    return p / p.sum()


def moments_k_exact(i: int, j: int, n: int) -> tuple[float, float]:
    """Closed forms for E[i - K_i] and E[(i - K_i)(j - K_j)], ``i <= j``."""
    if not 1 <= i <= j:
        raise InvalidArgument(f"need 1 <= i <= j, got i={i}, j={j}")
    first = i * (i - 1) / (n + i - 1)
    second = i * (i - 1) * j * (j - 1) / ((n + i - 1) * (n + j - 1))
    if i > 1:
        second += i * (i - 1) * n * (n - 1) / ((n + j - 1) * (n + i - 1) * (n + i - 2))
    return first, second


def _initial_k(n: int, i_max: int, size: int, rng: np.random.Generator) -> np.ndarray:
    p = pmf_k_vector(i_max, n)
    return rng.choice(np.arange(1, len(p) + 1), size=size, p=p)


def sample_subsample_chain(n: int, i_max: int, rng: np.random.Generator) -> SubsampleChain:
    """K started from its exact law at ``i_max`` and run down to one line.

    Going from ``i`` to ``i - 1`` tree lines, one of the ``C(i, 2)`` pairs
    merges; the subsample loses a line when that pair is one of its
    ``C(K, 2)``.
    """
    if not 2 <= n <= i_max:
        raise InvalidArgument(f"need 2 <= n <= i_max, got n={n}, i_max={i_max}")
    k = np.empty(i_max, dtype=np.int64)
    cur = int(_initial_k(n, i_max, 1, rng)[0])
    u = rng.random(i_max)
    for i in range(i_max, 1, -1):
        k[i - 1] = cur
        if u[i - 1] * pairs(i) < pairs(cur):
            cur -= 1
    k[0] = cur
    return SubsampleChain(n, k)


# ---------------------------------------------------------------------------
# couplings of the finite tree inside the infinite one


def coupling_temporal(times: InterCoalescenceTimes, n: int) -> float:
    """Compensated length of the top ``n``-line part of a truncated tree."""
    _check_size(n)
    if n > times.n:
        raise TruncationError(f"n={n} exceeds the truncation level {times.n}")
    k = np.arange(2, n + 1)
    return float(np.dot(k, times.x[: n - 1])) - 2.0 * math.log(n)


def _tail_weight(n: int, i_max: int, include_stem: bool) -> float:
    """Expected contribution of periods with more than ``i_max`` lines."""
    tail = 2.0 * math.fsum(1.0 / np.arange(i_max, i_max + n, dtype=float))
    if include_stem:
        return tail
    # remove the mean of the periods where the subsample has already merged
    # to one line; those terms fall off faster than any power we care about
    i = np.arange(i_max + 1, 2 * i_max + 1, dtype=float)
    log_q = np.log(i) - (gammaln(n + i) - gammaln(n + 1) - gammaln(i))
    return tail - math.fsum(np.exp(log_q) * 2.0 / (i * (i - 1)))


def coupling_natural(
    chain: SubsampleChain,
    times: InterCoalescenceTimes,
    n: int | None = None,
    include_stem: bool = False,
) -> float:
    """Compensated length of the subtree spanned by the subsample.

    By default only periods in which the subsample has at least two lines
    count, which is the length of the induced subtree. ``include_stem=True``
    also counts the single ancestral line above the subsample root, giving the
    plain sum of ``K_i * x_i``.
    """
    n = chain.n if n is None else n
    if n != chain.n or chain.i_max != times.n:
        raise InvalidArgument("chain and times do not come from one realization")
    k = chain.k[1:]
    w = k if include_stem else np.where(k >= 2, k, 0)
    tail = 0.0 if n == times.n else _tail_weight(n, times.n, include_stem)
    return float(np.dot(w, times.x)) + tail - 2.0 * math.log(n)


def coupling_gap_exact(n: int) -> float:
    _check_size(n)
    i = np.arange(1, n, dtype=float)
    return 8.0 * math.fsum(1.0 / (i * (n + i)))


def coupling_gap_subtree_exact(n: int) -> float:
    """Second moment of the difference between the two couplings.

    Uses that the subsample tree is itself a Kingman n-tree, so both lengths
    share their first two moments, and that only the cross moment needs the
    chain: E[K_i 1{K_i >= 2}] = i n / (n + i - 1) - P[K_i = 1].
    """
    _check_size(n)
    i = np.arange(2, n + 1, dtype=float)
    mean_x = 2.0 / (i * (i - 1))
    single = np.array([pmf_k(int(a), 1, n) for a in i])
    e_sub = i * n / (n + i - 1) - single
    return 8.0 * harmonic(n - 1, 2) - 2.0 * math.fsum(i * e_sub * mean_x**2)


def coupling_samples(
    n: int,
    reps: int,
    rng: np.random.Generator,
    i_max: int | None = None,
    include_stem: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised draws of the temporal and natural couplings on shared spans."""
    _check_size(n)
    i_max = default_i_max(n) if i_max is None else i_max
    if n > i_max:
        raise TruncationError(f"n={n} exceeds i_max={i_max}")
    k = _initial_k(n, i_max, reps, rng)
    temporal = np.zeros(reps)
    natural = np.zeros(reps)
    for i in range(i_max, 1, -1):
        x = rng.exponential(1.0 / pairs(i), size=reps)
        if i <= n:
            temporal += i * x
        natural += (k if include_stem else np.where(k >= 2, k, 0)) * x
        k = k - (rng.random(reps) * pairs(i) < pairs(k))
    tail = 0.0 if n == i_max else _tail_weight(n, i_max, include_stem)
    comp = 2.0 * math.log(n)
    return temporal - comp, natural + tail - comp


# ---------------------------------------------------------------------------
# compensated length difference B


class SeriesEstimate(NamedTuple):
    value: float
    error_bound: float


def variance_b_partial(n: int, m: int) -> float:
    """E[B^2] with every sum cut at ``m`` tree lines, no tail correction."""
    return sum(_variance_b_range(n, 2, m))


def _variance_b_tail_bound(n: int, m: int) -> tuple[float, float]:
    """Upper bounds on the two neglected tails (the 4/(n+i-1)^2 tail is exact)."""
    a, y = n - 1.0, m - 1.0
    z = a / y
    tail_double = 8.0 * (n - 1) / a**2 * (math.log1p(z) - z / (1.0 + z))
    tail_single = min(8.0 / (n * y), 2.0 * n * n / y**4)
    return tail_double, tail_single


def variance_b_exact(n: int, j_max: int | None = None, rel_tol: float = 1e-4) -> SeriesEstimate:
    """E[B_n^2] from its series, with a certified truncation error bound.

    All terms are nonnegative, so each truncated tail lies in ``[0, bound]``;
    the midpoint is returned and half the summed bounds is the error.
    """
    _check_size(n)
    if j_max is None:
        # the double tail behaves like 4 (n - 1) / j_max^2 and dominates
        target = rel_tol * 8.0 * max(math.log(n), 1.0) / n
        j_max = int(math.ceil(1 + math.sqrt(4.0 * (n - 1) / target)))
        j_max = max(j_max, 1000)
        given = False
    else:
        given = True
    double, single = 0.0, 0.0
    chunk = 4_000_000
    for lo in range(2, j_max + 1, chunk):
        hi = min(lo + chunk - 1, j_max)
        d, s = _variance_b_range(n, lo, hi)
        double += d
        single += s
    # the pure 4/(n+i-1)^2 tail in closed form
    single += 4.0 * float(polygamma(1, n + j_max))
    b_double, b_single = _variance_b_tail_bound(n, j_max)
    value = double + single + 0.5 * (b_double + b_single)
    err = 0.5 * (b_double + b_single)
    if given and err > rel_tol * value:
        raise TruncationError(
            f"truncation at j_max={j_max} leaves error {err:.3g} above tolerance"
        )
    return SeriesEstimate(value, err)


def _variance_b_range(n: int, lo: int, hi: int) -> tuple[float, float]:
    """Both series parts over indices ``lo..hi``.

    The inner sum over ``i`` of the double series telescopes:
    sum_{i=2}^{j-1} 1/((n+i-1)(n+i-2)) = (j-2) / (n (n+j-2)).
    """
    j = np.arange(max(lo, 3), hi + 1, dtype=float)
    double = 8.0 * (n - 1) * (j - 2) / (j * (j - 1) * (n + j - 1) * (n + j - 2))
    i = np.arange(lo, hi + 1, dtype=float)
    single = 8.0 * n * (n - 1) / (i * (i - 1) * (n + i - 1) ** 2 * (n + i - 2))
    single += 4.0 / (n + i - 1) ** 2
    return math.fsum(double), math.fsum(single)


def sample_b(n: int, reps: int, rng: np.random.Generator, i_max: int | None = None) -> np.ndarray:
    """Draws of the compensated length difference between full tree and n-subtree.

    Periods above ``i_max`` are dropped; they have mean zero after
    compensation and contribute O(1 / i_max) to the variance.
    """
    _check_size(n)
    i_max = default_i_max(n) if i_max is None else i_max
    k = _initial_k(n, i_max, reps, rng)
    b = np.zeros(reps)
    for i in range(i_max, 1, -1):
        x = rng.exponential(1.0 / pairs(i), size=reps)
        b += (i - k) * x - 2.0 / (n + i - 1)
        k = k - (rng.random(reps) * pairs(i) < pairs(k))
    return b


# ---------------------------------------------------------------------------
# ancestor counts near the top of the infinite tree


def sample_t_n(n: int, i_max: int, rng: np.random.Generator) -> float:
    """Time for the truncated tree to come down to ``n`` lines.

    The part above ``i_max`` is replaced by its mean ``2 / i_max``; the
    resulting variance deficit is below ``4 / (3 i_max^3)``.
    """
    if not 1 <= n < i_max:
        raise InvalidArgument(f"need 1 <= n < i_max, got n={n}, i_max={i_max}")
    k = np.arange(n + 1, i_max + 1)
    return float(rng.exponential(1.0 / pairs(k)).sum()) + 2.0 / i_max


def ancestor_count(times: InterCoalescenceTimes, u: float) -> int:
    """Number of lines ``u`` time units back, i.e. min{m : T_m <= u}."""
    t = times.coming_down_times(shift=2.0 / times.n)
    if u < t[-1]:
        raise TruncationError(f"u={u} lies inside the truncated top of the tree")
    return int(np.count_nonzero(t > u)) + 1


def ancestor_counts(
    us: Sequence[float],
    reps: int,
    rng: np.random.Generator,
    i_max: int = 10_000,
    chunk: int = 1000,
) -> np.ndarray:
    """Array ``(reps, len(us))`` of ancestor counts sharing each realization."""
    us = np.asarray(us, dtype=float)
    if np.any(us < 2.0 / i_max):
        raise TruncationError("lookback shorter than the truncated top")
    out = np.empty((reps, len(us)), dtype=np.int64)
    for lo in range(0, reps, chunk):
        m = min(chunk, reps - lo)
        x = sample_spans(i_max, m, rng)
        # t[:, m-1] is the age at which m lines remain, for m = 1..i_max-1
        t = np.cumsum(x[:, ::-1], axis=1)[:, ::-1] + 2.0 / i_max
        for c, u in enumerate(us):
            out[lo : lo + m, c] = np.count_nonzero(t > u, axis=1) + 1
    return out


def normalized_ancestor_count(s, u: float):
    return (np.asarray(s) - 2.0 / u) / math.sqrt(2.0 / (3.0 * u))


def bivariate_ancestor_correlation(
    u: float,
    v: float,
    reps: int,
    rng: np.random.Generator,
    i_max: int = 10_000,
) -> float:
    if not 0 < u <= v:
        raise InvalidArgument(f"need 0 < u <= v, got u={u}, v={v}")
    s = ancestor_counts([u, v], reps, rng, i_max)
    return float(np.corrcoef(normalized_ancestor_count(s[:, 0], u),
                             normalized_ancestor_count(s[:, 1], v))[0, 1])


def delta_integral(times: InterCoalescenceTimes, u: float) -> float:
    """Integral over lookback ``[0, u]`` of the number of lines.

    Uses the truncated tree without a top shift, so for ``u`` shorter than the
    ``i_max``-line period the result is ``i_max * u``. Above the root one
    ancestral line remains.
    """
    if u <= 0:
        raise InvalidArgument(f"u must be positive, got {u}")
    return float(_delta_rows(times.x[None, :], u)[0])


def _delta_rows(x: np.ndarray, u: float) -> np.ndarray:
    n = x.shape[1] + 1
    k = np.arange(2, n + 1)
    end = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    start = end - x
    overlap = np.clip(np.minimum(end, u) - start, 0.0, None)
    above_root = np.clip(u - end[:, 0], 0.0, None)
    return overlap @ k + above_root


def sample_delta_integrals(
    u: float,
    reps: int,
    rng: np.random.Generator,
    i_max: int = 10_000,
    chunk: int = 1000,
) -> np.ndarray:
    out = np.empty(reps)
    for lo in range(0, reps, chunk):
        m = min(chunk, reps - lo)
        out[lo : lo + m] = _delta_rows(sample_spans(i_max, m, rng), u)
    return out
