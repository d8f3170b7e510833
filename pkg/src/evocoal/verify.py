"""The acceptance battery: one function per criterion.

Each function takes a master seed, draws every random number from streams
named after the criterion, and returns a :class:`CriterionResult` holding one
:class:`StatReport` per sub-check. Nothing here adjusts a tolerance after
seeing data.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats as sps

from . import kingman, lookdown, moran, stats
from .seeding import stream
from .stats import StatReport

Z99 = float(sps.norm.ppf(0.995))


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list[StatReport]
    notes: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def line(self) -> str:
        parts = ", ".join(f"{c.name}={c.decision}" for c in self.checks)
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] criterion {self.number:2d} {self.title} ({self.seconds:.1f}s): {parts}"

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "title": self.title,
            "passed": self.passed,
            "seconds": self.seconds,
            "checks": [c.to_dict() for c in self.checks],
            "notes": self.notes,
        }


def _value_check(name: str, value: float, target: float, tol: float, **extra) -> StatReport:
    """Deterministic comparison: pass when ``|value - target| <= tol``."""
    err = abs(value - target)
    return StatReport(name, value, value, value, err, tol, extra={"target": target, **extra})


def _band_check(name: str, value: float, lo: float, hi: float, **extra) -> StatReport:
    outside = max(lo - value, value - hi, 0.0)
    return StatReport(name, value, lo, hi, outside, 0.0, extra=extra)


def _lengths(n: int, reps: int, rng: np.random.Generator, chunk: int) -> np.ndarray:
    k = np.arange(2, n + 1)
    out = np.empty(reps)
    for lo in range(0, reps, chunk):
        m = min(chunk, reps - lo)
        out[lo : lo + m] = kingman.sample_spans(n, m, rng) @ k
    return out


# ---------------------------------------------------------------------------


def criterion_1(seed: int) -> CriterionResult:
    n, reps = 100, 100_000
    length = _lengths(n, reps, stream(seed, "c1"), 20_000)
    return CriterionResult(1, "exact length moments", [
        stats.mean_within(length, kingman.expected_length_exact(n), 4.0, name="mean"),
        stats.variance_within(length, kingman.variance_length_exact(n), 4.0, name="variance"),
    ])


def criterion_2(seed: int) -> CriterionResult:
    n, reps = 10_000, 5000
    length = _lengths(n, reps, stream(seed, "c2"), 250)
    half = 0.5 * (length - 2.0 * math.log(n))
    return CriterionResult(2, "Gumbel marginal", [
        stats.ks_one_sample(half, stats.gumbel_cdf, slack=0.02, alpha=0.01, name="gumbel_ks"),
    ])


def criterion_3(seed: int, reps: int = 20_000) -> CriterionResult:
    checks = [_value_check("exact_n2", kingman.coupling_gap_exact(2), 8.0 / 3.0, 1e-12)]
    notes = {}
    for n in (2, 3, 10, 50):
        lam1, lam2 = kingman.coupling_samples(n, reps, stream(seed, "c3", n))
        sq = (lam1 - lam2) ** 2
        stated = kingman.coupling_gap_exact(n)
        checks.append(stats.mean_within(sq, stated, 4.0, name=f"gap_n{n}"))
        se = float(sq.std(ddof=1) / math.sqrt(reps))
        subtree = kingman.coupling_gap_subtree_exact(n)
        notes[f"n{n}"] = {
            "mc": float(sq.mean()), "se": se, "stated": stated,
            "subtree_exact": subtree, "z_vs_subtree": (float(sq.mean()) - subtree) / se,
        }
    return CriterionResult(3, "coupling gap", checks, notes)


def criterion_4(seed: int, reps: int = 20_000, i_top: int = 200) -> CriterionResult:
    rng = stream(seed, "c4")
    worst_p, worst_cell, fails = 1.0, None, 0
    checks = []
    for n in (2, 5, 10):
        k = kingman._initial_k(n, i_top, reps, rng)
        for i in range(i_top, 1, -1):
            if i <= 20:
                support = np.arange(1, min(i, n) + 1)
                counts = np.array([(k == v).sum() for v in support])
                probs = np.array([kingman.pmf_k(i, int(v), n) for v in support])
                if len(support) > 1:
                    rep = stats.chi_square_gof(counts, probs, alpha=0.001)
                    p = rep.extra["p_value"]
                    fails += not rep.passed
                    if p < worst_p:
                        worst_p, worst_cell = p, (n, i)
            k = k - (rng.random(reps) * kingman.pairs(i) < kingman.pairs(k))
    checks.append(StatReport("chain_marginals", worst_p, worst_p, worst_p, float(fails), 0.0,
                             extra={"min_p_value": worst_p, "at": worst_cell}))
    worst = 0.0
    for n in (2, 5, 10):
        for i in range(1, 21):
            first = math.fsum(kingman.pmf_k(i, k_, n) * (i - k_) for k_ in range(1, min(i, n) + 1))
            m1, _ = kingman.moments_k_exact(i, i, n)
            worst = max(worst, abs(first - m1) / max(1.0, abs(m1)))
            for j in range(i, 21):
                second = math.fsum(
                    kingman.joint_pmf_k(i, a, j, b, n) * (i - a) * (j - b)
                    for a in range(1, min(i, n) + 1)
                    for b in range(a, min(j, n) + 1)
                )
                _, m2 = kingman.moments_k_exact(i, j, n)
                worst = max(worst, abs(second - m2) / max(1.0, abs(m2)))
    checks.append(StatReport("moment_closed_forms", worst, worst, worst, worst, 1e-10))
    return CriterionResult(4, "subsample chain laws", checks)


def _stationary_events(n: int, count: int, rng: np.random.Generator,
                       families=()) -> tuple[moran.MoranState, list[moran.Jump], list[float]]:
    state = moran.init_equilibrium(n, rng)
    state.track_ranks()
    for f in families:
        state.track_families(f, rng)
    jumps, times = [], []
    for ev in moran.event_stream(n, rng):
        if len(jumps) >= count:
            break
        jumps.append(state.apply(*ev))
        times.append(ev.time)
    return state, jumps, times


def criterion_5(seed: int, n: int = 50, count: int = 100_000) -> CriterionResult:
    _, jumps, _ = _stationary_events(n, count, stream(seed, "c5"))
    ranks = np.array([j.rank for j in jumps])
    scaled = n * np.array([j.external for j in jumps])
    f = np.arange(1, n)
    counts = np.array([(ranks == v).sum() for v in f])
    probs = np.array([moran.external_branch_pmf_f(n, int(v)) for v in f])
    drop = n * np.array([j.size for j in jumps])
    return CriterionResult(5, "external branches", [
        stats.chi_square_gof(counts, probs, alpha=0.001, name="attach_rank_pmf"),
        stats.mean_within(scaled, 2.0, Z99, name="mean_scaled_branch"),
        stats.ks_one_sample(scaled, moran.scaled_external_cdf, slack=0.02, alpha=0.01,
                            name="scaled_branch_ks"),
    ], {"mean_scaled_drop_including_stems": float(drop.mean())})


def criterion_6(seed: int, n: int = 30, window: float = 100.0, runs: int = 4) -> CriterionResult:
    fs = (2, 3, 5)
    pooled = {f: [] for f in fs}
    events = 0
    for r in range(runs):
        rng = stream(seed, "c6", r)
        path = moran.simulate_path(n, window, rng, moran.PathOptions(families=fs))
        events += len(path.event_times)
        for f in fs:
            pooled[f].extend(t + r * window for t in path.extinctions[f])
    checks = []
    for f in fs:
        rate = kingman.pairs(f)
        checks.append(stats.poisson_process_check(
            pooled[f], rate, t_start=0.0, t_end=runs * window, alpha=0.01,
            name=f"poisson_f{f}"))
        checks.append(stats.binomial_check(
            len(pooled[f]), events, rate / kingman.pairs(n), alpha=0.01,
            name=f"per_event_f{f}"))
    checks.append(occupancy_check(stream(seed, "c6", 99)))
    return CriterionResult(6, "oldest families", checks,
                           {f"extinctions_f{f}": len(pooled[f]) for f in fs})


def compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    if parts == 1:
        return [(total,)]
    return [(a,) + rest for a in range(1, total - parts + 2)
            for rest in compositions(total - a, parts - 1)]


def occupancy_check(rng: np.random.Generator, n: int = 6, f: int = 3,
                    samples: int = 2000, thin: float = 5.0) -> StatReport:
    """Family sizes read every ``thin`` time units along one long run."""
    state = moran.init_equilibrium(n, rng)
    fam = state.track_families(f, rng)
    cells = compositions(n, f)
    index = {c: k for k, c in enumerate(cells)}
    counts = np.zeros(len(cells))
    next_read = thin
    for ev in moran.event_stream(n, rng):
        while ev.time > next_read:
            counts[index[tuple(fam.sizes)]] += 1
            next_read += thin
        if next_read > thin * samples:
            break
        state.apply(*ev)
    return stats.chi_square_gof(counts, np.ones(len(cells)), alpha=0.001,
                                name=f"occupancy_n{n}_f{f}")


def window_ranks(times: np.ndarray, ranks: np.ndarray, h: float, windows: int, n: int):
    """Window statistic for consecutive windows ``[k h, (k + 1) h)``."""
    out = np.full(windows, n + 1)
    idx = np.minimum((times // h).astype(np.int64), windows)
    for w, r in zip(idx.tolist(), ranks.tolist()):
        if w < windows:
            out[w] = min(out[w], max(r, 2))
    return out


def criterion_7(seed: int, n: int = 30, f: int = 3, h: float = 0.05,
                pairs_wanted: int = 20_000) -> CriterionResult:
    rng = stream(seed, "c7")
    windows = 2 * pairs_wanted
    state = moran.init_equilibrium(n, rng)
    state.track_ranks()
    times, ranks = [], []
    for ev in moran.event_stream(n, rng):
        if ev.time >= windows * h:
            break
        times.append(ev.time)
        ranks.append(state.apply(*ev).rank)
    fw = window_ranks(np.array(times), np.array(ranks), h, windows, n)
    hit = fw < f
    first, second = hit[0::2], hit[1::2]
    both = int(np.sum(first & second))
    target = (1.0 - math.exp(-kingman.pairs(f) * h)) ** 2
    independent = float(first.mean() * second.mean())
    return CriterionResult(7, "window statistic", [
        stats.binomial_check(both, pairs_wanted, target, alpha=0.01, name="both_disturbed"),
        stats.binomial_check(both, pairs_wanted, independent, alpha=0.01, name="factorizes"),
    ], {"target": target, "single_window_rate": float(hit.mean())})


def criterion_8(seed: int, paths: int = 10_000, n: int = 20, t: float = 0.25) -> CriterionResult:
    worst = 0.0
    for r in range(paths):
        path = moran.simulate_path(n, t, stream(seed, "c8", r))
        a, b = moran.decompose_ab(path, t)
        err = abs((path.final_length - path.base) - (a - b)) / max(1.0, path.final_length)
        worst = max(worst, err)
    return CriterionResult(8, "gained/lost identity", [
        StatReport("identity", worst, worst, worst, worst, 1e-9, provenance={"paths": paths}),
    ])


def criterion_9(seed: int, delta_reps: int = 100_000, b_reps: int = 20_000) -> CriterionResult:
    u = 0.01
    d = kingman.sample_delta_integrals(u, delta_reps, stream(seed, "c9", 0))
    ratio = float(np.var(d, ddof=1) / (2.0 * u / 3.0))
    b = kingman.sample_b(50, b_reps, stream(seed, "c9", 1))
    series50 = kingman.variance_b_exact(50)
    big = 10**6
    series_big = kingman.variance_b_exact(big)
    return CriterionResult(9, "near-top variance", [
        _band_check("delta_variance_ratio", ratio, 0.85, 1.25),
        stats.mean_within(b**2, series50.value, Z99, name="b_second_moment_n50"),
        _band_check("series_ratio_1e6", series_big.value / (8.0 * math.log(big) / big), 0.9, 1.1,
                    error_bound=series_big.error_bound),
    ], {"series_n50": series50.value, "series_n50_error_bound": series50.error_bound})


def criterion_10(seed: int, n: int = 2000, reps: int = 20_000) -> CriterionResult:
    checks, trend = [], []
    for k, t in enumerate((0.004, 0.008, 0.016)):
        rep = moran.infinitesimal_variance_ratio(n, t, reps, stream(seed, "c10", k))
        rep.name = f"ratio_t{t}"
        checks.append(rep)
        trend.append({"t": t, "ratio": rep.estimate, "ci": [rep.ci_low, rep.ci_high],
                      "lost_over_gained": rep.extra["var_lost"] / rep.extra["var_gained"]})
    return CriterionResult(10, "infinitesimal variance", checks, {"trend": trend})


def criterion_11(seed: int, ks_reps: int = 20_000, corr_reps: int = 100_000) -> CriterionResult:
    u = 0.005
    s = kingman.ancestor_counts([u], ks_reps, stream(seed, "c11", 0))[:, 0]
    z = kingman.normalized_ancestor_count(s, u)
    rho = kingman.bivariate_ancestor_correlation(0.0025, 0.01, corr_reps, stream(seed, "c11", 1))
    return CriterionResult(11, "ancestor CLT", [
        stats.ks_one_sample(z, sps.norm.cdf, slack=0.05, alpha=0.01, name="normal_ks"),
        _value_check("correlation", rho, 0.125, 0.03),
    ])


def criterion_12(seed: int, reps: int = 300, t_end: float = 0.5,
                 nested_reps: int = 40) -> CriterionResult:
    n = 100
    ld, mo = [], []
    for r in range(reps):
        w = lookdown.sample_window(n, 0.0, t_end, stream(seed, "c12-ld", r))
        ld.append(lookdown.length_path_ld(w, n).final_length - 2.0 * math.log(n))
        p = moran.simulate_path(n, t_end, stream(seed, "c12-moran", r))
        mo.append(p.final_length - 2.0 * math.log(n))
    windows = [lookdown.sample_window(400, 0.0, 1.0, stream(seed, "c12-nested", r))
               for r in range(nested_reps)]
    nested = lookdown.nested_convergence_report(windows, [25, 50, 100, 200, 400], 0.002)
    return CriterionResult(12, "lookdown consistency", [
        stats.ks_two_sample(ld, mo, alpha=0.01, name="lookdown_vs_moran"),
        nested,
    ], {"nested_medians": nested.extra["medians"]})


def fuzz_differential(seed: int, total: int = 1_000_000, check_every: int = 1000) -> StatReport:
    worst, applied = 0.0, 0
    sizes = (2, 3, 7, 50)
    for k, n in enumerate(sizes):
        rng = stream(seed, "c13-fuzz", k)
        state = moran.init_equilibrium(n, rng)
        quota = total // len(sizes)
        for m, ev in enumerate(moran.event_stream(n, rng), start=1):
            if m > quota:
                break
            state.apply(*ev)
            if m % check_every == 0:
                worst = max(worst, moran.relative_length_error(state))
                check_genealogy(state)
        applied += quota
    return StatReport("differential", worst, worst, worst, worst, 1e-9,
                      provenance={"events": applied})


def check_genealogy(state: moran.MoranState) -> None:
    """Raise if the genealogy is not a binary tree with times decreasing rootward."""
    n = state.n
    seen = 0
    for v in range(n, 2 * n - 1):
        for c in (state.left[v], state.right[v]):
            if state.parent[c] != v:
                raise AssertionError(f"child {c} does not point back to {v}")
            t = state.clock if c < n else state.node_time[c]
            if not t >= state.node_time[v]:
                raise AssertionError(f"node {c} is older than its parent {v}")
            seen += 1
    if seen != 2 * n - 2 or state.parent[state.root] != -1:
        raise AssertionError("genealogy is not a single binary tree")


def criterion_13(seed: int) -> CriterionResult:
    from . import cli
    from .eventlog import replay

    checks = [fuzz_differential(seed)]
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            code = cli.main(["moran", "--n", "100", "--t-end", "10", "--seed", "7",
                             "--families", "2", "--out", str(out), "--quiet"])
            if code != 0:
                raise RuntimeError(f"moran run exited with {code}")
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in names)
        checks.append(StatReport("byte_identical", float(same), 0, 1, float(not same), 0.0,
                                 extra={"files": names}))
        summary = replay(outs[0] / "events.jsonl")
        err = abs(summary.final_length - summary.logged_length)
        checks.append(StatReport("replay_moran", err, err, err,
                                 max(err, summary.max_jump_error), 0.0,
                                 extra={"events": summary.events}))
        ld_out = Path(tmp) / "ld"
        cli.main(["lookdown", "--n-max", "60", "--n", "10", "30", "60", "--t-end", "1",
                  "--seed", "7", "--out", str(ld_out), "--quiet"])
        ld = replay(ld_out / "events.jsonl")
        err = abs(ld.final_length - ld.logged_length)
        checks.append(StatReport("replay_lookdown", err, err, err, max(err, ld.max_jump_error),
                                 0.0, extra={"events": ld.events}))
    return CriterionResult(13, "engineering", checks)


CRITERIA: dict[int, Callable[[int], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
    11: criterion_11, 12: criterion_12, 13: criterion_13,
}


def run_criterion(number: int, seed: int) -> CriterionResult:
    start = time.perf_counter()
    result = CRITERIA[number](seed)
    result.seconds = time.perf_counter() - start
    return result
