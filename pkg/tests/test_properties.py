"""Property-based checks of structural invariants."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from evocoal import kingman, lookdown, moran, stats
from evocoal.seeding import stream
from evocoal.verify import check_genealogy, compositions

seeds = st.integers(min_value=0, max_value=2**32 - 1)
sizes = st.integers(min_value=2, max_value=30)


@given(seeds, sizes)
def test_tree_metric_is_ultrametric(seed, n):
    tree = kingman.sample_topology(n, stream(seed, "prop"))
    m = min(n, 8)
    d = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            d[a, b] = d[b, a] = kingman.metric_r(tree, a, b)
    for a in range(m):
        for b in range(m):
            for c in range(m):
                assert d[a, c] <= max(d[a, b], d[b, c]) + 1e-12


@given(seeds, sizes)
def test_tree_length_is_weighted_span_sum(seed, n):
    rng = stream(seed, "prop")
    times = kingman.sample_intercoalescence_times(n, rng)
    tree = kingman.tree_from_times(times, rng)
    assert math.isclose(tree.length(), kingman.tree_length(times), rel_tol=1e-12)


@given(seeds, st.integers(min_value=3, max_value=25), st.data())
def test_subsample_of_subsample(seed, n, data):
    tree = kingman.sample_topology(n, stream(seed, "prop"))
    leaves = data.draw(st.lists(st.integers(0, n - 1), min_size=3, max_size=n, unique=True))
    sub = tree.subsample(leaves)
    inner = sub.subsample([0, 2, 1])
    direct = tree.subsample([leaves[0], leaves[2], leaves[1]])
    np.testing.assert_allclose(inner.age, direct.age)
    assert sub.length() <= tree.length() + 1e-12


@given(st.integers(1, 60), st.integers(1, 40))
def test_pmf_normalizes(i, n):
    total = math.fsum(kingman.pmf_k(i, k, n) for k in range(1, min(i, n) + 1))
    assert math.isclose(total, 1.0, abs_tol=1e-12)


@given(st.integers(1, 30), st.integers(0, 20), st.integers(1, 12), st.integers(0, 5))
def test_conditional_pmf_normalizes(i, extra, n, k_off):
    j = i + extra
    k = 1 + k_off % min(i, n)
    total = math.fsum(kingman.conditional_pmf_k(j, l, i, k, n)
                      for l in range(k, min(j, n) + 1))
    assert math.isclose(total, 1.0, abs_tol=1e-12)


@given(seeds, st.integers(2, 20), st.integers(20, 200))
def test_chain_invariants(seed, n, i_max):
    if n > i_max:
        return
    chain = kingman.sample_subsample_chain(n, i_max, stream(seed, "chain"))
    steps = np.diff(chain.k)
    assert chain.at(1) == 1
    assert set(np.unique(steps)) <= {0, 1}
    assert np.all(chain.k <= np.arange(1, i_max + 1))
    assert chain.k.max() <= n


frechet_inputs = st.integers(3, 25).flatmap(
    lambda m: st.tuples(*[st.lists(st.floats(-5, 5), min_size=m, max_size=m)] * 3)
)


@given(frechet_inputs)
def test_frechet_is_a_metric_bounded_by_sup(paths):
    a, b, c = (np.array(p) for p in paths)
    grid = np.linspace(0.0, 1.0, len(a))
    dab = stats.discrete_frechet(grid, a, b)
    assert dab == stats.discrete_frechet(grid, b, a)
    assert dab <= np.max(np.abs(a - b)) + 1e-12
    assert dab <= stats.discrete_frechet(grid, a, c) + stats.discrete_frechet(grid, c, b) + 1e-12
    assert stats.discrete_frechet(grid, a, a) == 0.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60),
       st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60))
def test_accumulator_merge_is_order_free(xs, ys):
    def acc(values):
        a = stats.MeanAccumulator()
        a.add(values)
        return a

    ab = acc(xs).merge(acc(ys))
    ba = acc(ys).merge(acc(xs))
    pooled = np.array(xs + ys)
    scale = 1.0 + float(np.abs(pooled).max())
    assert math.isclose(ab.mean, ba.mean, abs_tol=1e-9 * scale)
    assert math.isclose(ab.mean, pooled.mean(), abs_tol=1e-9 * scale)
    assert math.isclose(ab.variance, pooled.var(ddof=1), rel_tol=1e-7, abs_tol=1e-7 * scale**2)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 25), st.integers(1, 400))
def test_cached_length_matches_recompute(seed, n, events):
    rng = stream(seed, "diff")
    state = moran.init_equilibrium(n, rng)
    for ev, _ in zip(moran.event_stream(n, rng), range(events)):
        state.apply(*ev)
    assert moran.relative_length_error(state) < 1e-9
    check_genealogy(state)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(3, 15), st.integers(2, 5), st.integers(1, 300))
def test_family_sizes_conserved(seed, n, f, events):
    f = min(f, n)
    rng = stream(seed, "fam")
    state = moran.init_equilibrium(n, rng)
    fam = state.track_families(f, rng)
    for ev, _ in zip(moran.event_stream(n, rng), range(events)):
        state.apply(*ev)
        assert sum(fam.sizes) == n
        assert min(fam.sizes) >= 1
    assert sorted(map(sorted, state.family_partition(fam))) == sorted(
        sorted(v for v in range(n) if fam.membership[v] == lab) for lab in range(f))


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(3, 20))
def test_lookdown_nested_systems_share_prefix(seed, n_max):
    w = lookdown.sample_window(n_max, 0.0, 0.3, stream(seed, "ld"))
    n = max(2, n_max // 2)
    small = lookdown.tree_length_ld_by_metric(w, 0.3, n)
    assert math.isclose(small, lookdown.length_path_ld(w, n).final_length, rel_tol=1e-10)


@given(st.integers(1, 9), st.integers(1, 5))
def test_compositions_count(total, parts):
    got = compositions(total, parts) if parts <= total else []
    expect = math.comb(total - 1, parts - 1) if parts <= total else 0
    assert len(got) == expect
    assert all(sum(c) == total and min(c) >= 1 for c in got)
