import math

import numpy as np
import pytest

from evocoal import kingman, moran
from evocoal.errors import InvalidArgument, OutOfOrderEvent
from evocoal.seeding import stream
from evocoal.verify import check_genealogy


def _cherry_tree():
    # leaves 0,1 merge at age 0.5, then with 2 at age 1.5
    parent = np.array([3, 3, 4, 4, -1])
    age = np.array([0.0, 0.0, 0.0, 0.5, 1.5])
    children = np.array([[0, 1], [3, 2]])
    return kingman.CoalescentTree(3, parent, age, children)


def test_initial_state_length_matches_tree():
    state = moran.MoranState(_cherry_tree())
    assert state.cached_length == pytest.approx(0.5 + 0.5 + 1.5 + 1.0)
    assert state.root == 4
    np.testing.assert_allclose(state.internal_times(), [-1.5, -0.5])


def test_event_under_root_drops_external_branch():
    state = moran.MoranState(_cherry_tree())
    # leaf 0 dies, leaf 2 reproduces at time 0.25
    jump = state.apply(0.25, 0, 2)
    assert jump.external == pytest.approx(0.75)
    assert jump.size == pytest.approx(0.75)
    assert not jump.root_change
    assert state.cached_length == pytest.approx(3.5 + 3 * 0.25 - 0.75)
    assert state.recompute_length() == pytest.approx(state.cached_length)
    check_genealogy(state)


def test_event_at_root_drops_stem_too():
    state = moran.MoranState(_cherry_tree())
    jump = state.apply(0.25, 2, 0)
    # leaf 2 hangs from the root: its branch is 1.75 and the stem of (0,1) is 1.0
    assert jump.external == pytest.approx(1.75)
    assert jump.size == pytest.approx(2.75)
    assert jump.root_change
    assert state.recompute_length() == pytest.approx(state.cached_length)
    check_genealogy(state)


def test_out_of_order_event_raises():
    state = moran.MoranState(_cherry_tree())
    state.apply(0.3, 0, 1)
    with pytest.raises(OutOfOrderEvent):
        state.apply(0.3, 1, 2)


def test_to_tree_round_trip():
    rng = stream(1, "m")
    state = moran.init_equilibrium(20, rng)
    for ev, _ in zip(moran.event_stream(20, rng), range(500)):
        state.apply(*ev)
    tree = state.to_tree()
    assert tree.length() == pytest.approx(state.cached_length, rel=1e-12)
    # right after an event the youngest period is empty, so compare node ages
    ages = np.sort(tree.age[20:])[::-1]
    np.testing.assert_allclose(ages, state.clock - state.internal_times(), rtol=1e-12)


def test_path_value_and_left_limit():
    path = moran.simulate_path(10, 1.0, stream(2, "m"))
    t = path.event_times
    gap = path.left_limit(t) - path.value_at(t)
    np.testing.assert_allclose(gap, path.jump_sizes, rtol=1e-9)
    assert path.value_at([1.0])[0] == pytest.approx(path.final_length)
    assert path.value_at([0.0], compensated=True)[0] == pytest.approx(path.base - 2 * math.log(10))


def test_replay_state_reproduces_final_length():
    path = moran.simulate_path(15, 2.0, stream(3, "m"))
    state = moran.replay_state(path)
    final = state.cached_length + 15 * (2.0 - state.clock)
    assert final == pytest.approx(path.final_length, rel=1e-12)


def test_differential_check_inside_simulation():
    opts = moran.PathOptions(check_every=50)
    path = moran.simulate_path(25, 3.0, stream(4, "m"), opts)
    assert path.max_check_error < 1e-9


def test_rank_matches_snapshot_count():
    rng = stream(5, "rank")
    state = moran.init_equilibrium(12, rng)
    state.track_ranks()
    for ev, _ in zip(moran.event_stream(12, rng), range(300)):
        p = state.parent[ev.dier]
        older = sum(1 for v in range(12, 23) if state.seq[v] < state.seq[p])
        jump = state.apply(*ev)
        # rank = number of lines present just below the attachment point
        assert jump.rank == older + 1


def test_external_branch_pmf_and_moments():
    n = 7
    assert sum(moran.external_branch_pmf_f(n, f) for f in range(1, n)) == pytest.approx(1.0)
    mean, var = moran.external_branch_moments(3)
    assert mean == pytest.approx(2 / 3)
    assert var == pytest.approx(2 / 3)
    with pytest.raises(InvalidArgument):
        moran.external_branch_pmf_f(5, 5)


def test_external_branch_variance_at_three_by_simulation():
    _, var = moran.external_branch_moments(3)
    # the stationary dier's branch is a uniformly chosen external branch
    x = []
    rng = stream(6, "ext")
    for _ in range(40_000):
        tree = kingman.sample_topology(3, rng)
        leaf = int(rng.integers(3))
        x.append(tree.age[tree.parent[leaf]])
    x = np.array(x)
    assert x.mean() == pytest.approx(2 / 3, abs=0.02)
    assert x.var() == pytest.approx(var, rel=0.05)


def test_scaled_external_cdf_limits():
    assert moran.scaled_external_cdf(0.0) == 0.0
    assert moran.scaled_external_cdf(1e9) == pytest.approx(1.0)
    assert moran.scaled_external_cdf(2.0) == pytest.approx(0.75)


def test_window_statistic_simple_cases():
    n = 4
    assert moran.window_statistic_f([], n) == n + 1
    assert moran.window_statistic_f([1, 3], n) == 2
    before = np.array([-3.0, -2.0, -1.0])
    after = np.array([-3.0, -2.0, 0.5])
    assert moran.window_statistic_snapshots(before, after, 4) == 3
    assert moran.window_statistic_snapshots(before, before, 4) == 5


def test_window_statistic_snapshot_route_matches_ranks():
    rng = stream(8, "win2")
    n = 8
    state = moran.init_equilibrium(n, rng)
    state.track_ranks()
    for ev, _ in zip(moran.event_stream(n, rng), range(2000)):
        before = state.internal_times()
        jump = state.apply(*ev)
        after = state.internal_times()
        assert moran.window_statistic_snapshots(before, after, n) == \
            moran.window_statistic_f([jump.rank], n)


def test_decompose_identity_and_trivial_window():
    path = moran.simulate_path(12, 0.4, stream(9, "ab"))
    a, b = moran.decompose_ab(path, 0.4)
    assert path.final_length - path.base == pytest.approx(a - b, abs=1e-9)
    a0, b0 = moran.decompose_ab(path, 0.0)
    assert a0 == 0.0 and b0 == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidArgument):
        moran.decompose_ab(path, 0.5)


def test_increment_sampler_agrees_with_event_engine():
    from scipy import stats as sps

    n, t = 15, 0.05
    gained, lost = moran.sample_length_increments(n, t, 3000, stream(10, "inc"))
    ev_a, ev_b = [], []
    for r in range(1500):
        path = moran.simulate_path(n, t, stream(10, "inc-ev", r))
        a, b = moran.decompose_ab(path, t)
        ev_a.append(a)
        ev_b.append(b)
    assert sps.ks_2samp(gained, ev_a).pvalue > 1e-3
    assert sps.ks_2samp(lost, ev_b).pvalue > 1e-3
    assert sps.ks_2samp(gained - lost, np.array(ev_a) - np.array(ev_b)).pvalue > 1e-3


def test_increment_variances_and_ratio_report():
    rep = moran.infinitesimal_variance_ratio(300, 0.01, 4000, stream(11, "iv"), resamples=200)
    assert rep.extra["var_lost"] > 2 * rep.extra["var_gained"]
    # Cauchy-Schwarz on the joint draws
    assert rep.extra["cov"] ** 2 <= rep.extra["var_gained"] * rep.extra["var_lost"] * (1 + 1e-9)
    assert rep.ci_low <= rep.estimate <= rep.ci_high


def test_family_sizes_follow_partition():
    rng = stream(12, "fam")
    n = 20
    state = moran.init_equilibrium(n, rng)
    fams = [state.track_families(f, rng) for f in (2, 3, 5)]
    extinct = {2: 0, 3: 0, 5: 0}
    for ev, _ in zip(moran.event_stream(n, rng), range(5000)):
        state.apply(*ev)
        for fam in fams:
            parts = state.family_partition(fam)
            by_label = {}
            for leaf in range(n):
                by_label.setdefault(fam.membership[leaf], set()).add(leaf)
            assert sorted(map(sorted, parts)) == sorted(map(sorted, by_label.values()))
            assert sum(fam.sizes) == n and min(fam.sizes) >= 1
    for fam in fams:
        extinct[fam.f] = len(fam.extinction_log)
    assert extinct[2] <= extinct[3] <= extinct[5]


def test_mrca_changes_are_f2_extinctions():
    path = moran.simulate_path(10, 20.0, stream(13, "mrca"), moran.PathOptions(families=(2,)))
    assert path.event_times[path.root_changes].tolist() == path.extinctions[2]


def test_family_tracking_rejects_bad_f():
    state = moran.init_equilibrium(5, stream(14, "f"))
    with pytest.raises(InvalidArgument):
        state.track_families(6)
