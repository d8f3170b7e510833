import math

import numpy as np
import pytest
from scipy import stats as sps

from evocoal import stats
from evocoal.errors import InvalidArgument, TooFewSamples
from evocoal.seeding import stream


def test_gumbel_cdf_and_quantile():
    assert stats.gumbel_cdf(0.0) == pytest.approx(math.exp(-1))
    assert stats.gumbel_quantile(0.5) == pytest.approx(0.3665129, abs=1e-7)
    for p in (0.01, 0.3, 0.99):
        assert stats.gumbel_cdf(stats.gumbel_quantile(p)) == pytest.approx(p)
    with pytest.raises(InvalidArgument):
        stats.gumbel_quantile(1.0)


def test_gumbel_sample_passes_its_own_ks():
    x = stats.gumbel_sample(stream(1, "g"), 20_000)
    rep = stats.ks_one_sample(x, stats.gumbel_cdf)
    assert rep.passed
    assert x.mean() == pytest.approx(np.euler_gamma, abs=0.05)


def test_ks_detects_shift_and_requires_samples():
    x = stats.gumbel_sample(stream(2, "g"), 5000) + 0.3
    assert not stats.ks_one_sample(x, stats.gumbel_cdf).passed
    with pytest.raises(TooFewSamples):
        stats.ks_one_sample(np.zeros(10), stats.gumbel_cdf)


def test_ks_slack_is_added_to_threshold():
    x = stats.gumbel_sample(stream(3, "g"), 1000)
    a = stats.ks_one_sample(x, stats.gumbel_cdf, slack=0.0)
    b = stats.ks_one_sample(x, stats.gumbel_cdf, slack=0.02)
    assert b.threshold == pytest.approx(a.threshold + 0.02)
    assert b.provenance["slack"] == 0.02


def test_ks_two_sample():
    rng = stream(4, "ks2")
    assert stats.ks_two_sample(rng.normal(size=2000), rng.normal(size=1500)).passed
    assert not stats.ks_two_sample(rng.normal(size=2000), rng.normal(0.3, size=2000)).passed


def test_chi_square_matches_scipy_without_merging():
    counts = np.array([18, 22, 30, 30])
    probs = np.array([0.2, 0.2, 0.3, 0.3])
    rep = stats.chi_square_gof(counts, probs)
    ref = sps.chisquare(counts, probs * counts.sum())
    assert rep.test_statistic == pytest.approx(ref.statistic)
    assert rep.extra["p_value"] == pytest.approx(ref.pvalue)


def test_merge_small_cells_keeps_totals():
    c, e = stats.merge_small_cells([1, 2, 10, 0, 1], [1.0, 2.0, 9.0, 0.5, 1.5])
    assert c.sum() == 14 and e.sum() == pytest.approx(14.0)
    assert np.all(e >= 5.0)


def test_binomial_check():
    assert stats.binomial_check(500, 1000, 0.5).passed
    assert not stats.binomial_check(600, 1000, 0.5).passed
    lo, hi = stats.binomial_interval(0, 50)
    assert lo == 0.0 and 0 < hi < 0.11


def test_poisson_process_check_accepts_poisson_rejects_regular():
    rng = stream(5, "pp")
    t = np.sort(rng.uniform(0, 1000, size=rng.poisson(3000)))
    assert stats.poisson_process_check(t, 3.0, 0.0, 1000.0).passed
    regular = np.arange(1, 3001) / 3.0
    assert not stats.poisson_process_check(regular, 3.0, 0.0, 1000.0).passed
    with pytest.raises(TooFewSamples):
        stats.poisson_process_check([1.0, 2.0], 1.0)


def test_mean_and_variance_within():
    rng = stream(6, "mv")
    x = rng.normal(1.0, 2.0, size=50_000)
    assert stats.mean_within(x, 1.0).passed
    assert not stats.mean_within(x, 1.2).passed
    assert stats.variance_within(x, 4.0).passed
    assert not stats.variance_within(x, 4.4).passed


def test_accumulator_merge_matches_pooled():
    rng = stream(7, "acc")
    a, b = rng.normal(size=3000), rng.exponential(size=5000)
    left = stats.MeanAccumulator()
    left.add(a[:1000])
    left.add(a[1000:])
    right = stats.MeanAccumulator()
    right.add(b)
    both = left.merge(right)
    pooled = np.concatenate([a, b])
    assert both.count == 8000
    assert both.mean == pytest.approx(pooled.mean(), rel=1e-12)
    assert both.variance == pytest.approx(pooled.var(ddof=1), rel=1e-12)
    assert len(both.reservoir) <= both.capacity


def test_mc_estimator_interval_covers():
    rep = stats.mc_estimator(stream(8, "mc").normal(5.0, 1.0, size=20_000))
    assert rep.ci_low < 5.0 < rep.ci_high
    lo, hi = rep.extra["bootstrap_ci"]
    assert lo < rep.estimate < hi


def test_bootstrap_ratio_ci_contains_statistic():
    rng = stream(9, "boot")
    x = rng.normal(size=2000)
    lo, hi = stats.bootstrap_ratio_ci(x, np.var, rng, 300, 0.05)
    assert lo < np.var(x) < hi


def _step(at, height=1.0):
    return lambda g: np.where(g >= at, height, 0.0)


def test_skorokhod_shifted_jump_costs_the_shift():
    d = stats.skorokhod_distance_approx(_step(0.5), _step(0.53), (0.0, 1.0), 0.001)
    assert d == pytest.approx(0.03, abs=2e-3)


def test_skorokhod_against_zero_path_is_jump_height():
    d = stats.skorokhod_distance_approx(_step(0.5), lambda g: np.zeros_like(g), (0.0, 1.0), 0.01)
    assert d == pytest.approx(1.0)


def test_skorokhod_identical_paths_and_bad_window():
    assert stats.skorokhod_distance_approx(_step(0.2), _step(0.2), (0, 1), 0.01) == 0.0
    with pytest.raises(InvalidArgument):
        stats.skorokhod_distance_approx(_step(0.2), _step(0.2), (1, 0), 0.01)


def test_discrete_frechet_matches_brute_force():
    rng = stream(10, "fr")
    grid = np.linspace(0, 1, 9)
    a, b = rng.normal(size=9), rng.normal(size=9)
    cost = np.maximum(np.abs(grid[:, None] - grid[None, :]), np.abs(a[:, None] - b[None, :]))
    d = np.full((9, 9), np.inf)
    for i in range(9):
        for j in range(9):
            if i == j == 0:
                best = 0.0
            else:
                best = min(d[i - 1, j] if i else np.inf, d[i, j - 1] if j else np.inf,
                           d[i - 1, j - 1] if i and j else np.inf)
            d[i, j] = max(cost[i, j], best)
    assert stats.discrete_frechet(grid, a, b) == pytest.approx(d[-1, -1])
