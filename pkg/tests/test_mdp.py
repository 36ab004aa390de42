import sys

import numpy as np
import pytest

from callsched import tables
from callsched.mdp import (AuxiliaryMdpPolicy, MdpRankingPolicy, SECONDS,
                           Truncation, ValueTable, aggregate_low_groups,
                           auxiliary_mdp_policy, bellman_sweep,
                           low_priority_capacity, mdp_policy)
from callsched.model import PrelimitInstance, TimeGrid, build_class
from callsched.scaling import make_test_problem
from callsched.sim import simulate_day


def _single(lam, mu, theta, h, p, servers, horizon=0.5, intervals=1,
            cbar=0.0):
    classes = (build_class(mu, theta, h, p, "only"),)
    grid = TimeGrid(horizon=horizon, interval_count=intervals)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64),
                          (intervals,)).reshape(1, intervals)
    return PrelimitInstance(classes=classes, grid=grid, arrival_rate=lam,
                            staffing=np.full(intervals, servers),
                            overtime_rate=cbar)


def test_truncation_validation_and_clamp():
    t = Truncation((5, 3))
    assert t.shape == (6, 4)
    assert t.clamp(np.array([9, -2])) == (5, 0)
    assert t.clamp(np.array([2, 3])) == (2, 3)
    with pytest.raises(ValueError):
        Truncation((0, 3))
    with pytest.raises(ValueError):
        Truncation(())


def test_empty_system_never_costs():
    inst = _single(0.0, 2.0, 1.0, 3.0, 0.5, servers=2)
    table = bellman_sweep(inst, Truncation((8,)), dt=0.01,
                          save_every=0.1)
    assert table.v0[0] == 0.0
    assert table.monotone_violations == 0


def test_terminal_slice_is_exact():
    inst = _single(5.0, 2.0, 1.0, 3.0, 0.5, servers=2, cbar=2.12)
    table = bellman_sweep(inst, Truncation((10,)), dt=0.01, save_every=0.1)
    assert table.save_times[-1] == pytest.approx(0.5)
    states = np.arange(11, dtype=np.float64)
    g = 2.12 * np.maximum(states - 2, 0.0)
    expected = np.zeros(11)
    expected[1:] = g[1:] - g[:-1]
    np.testing.assert_allclose(table.diffs[-1, 0], expected)


def test_k1_matches_forward_propagation_oracle():
    sys.path.insert(0, "tests")
    from oracles import mm_n_m_transient_cost
    lam, mu, theta, servers, c = 20.0, 2.0, 1.0, 3, 3.5
    cbar = 2.12
    dt = 0.005
    inst = _single(lam, mu, theta, 3.0, theta and (c - 3.0) / theta,
                   servers, horizon=0.5, cbar=cbar)
    assert inst.classes[0].total_cost == pytest.approx(c)
    table = bellman_sweep(inst, Truncation((30,)), dt=dt, save_every=0.5)
    ref = mm_n_m_transient_cost(lam, mu, theta, servers, c, 0.5, dt,
                                cbar=cbar, x_max=30)
    assert abs(table.v0[0] - ref) < 1e-9


def test_dt_refinement_first_order():
    inst = _single(10.0, 2.0, 1.0, 3.0, 0.5, servers=2, horizon=0.4,
                   cbar=1.0)
    trunc = Truncation((20,))
    vals = [bellman_sweep(inst, trunc, dt=0.4 / n, save_every=0.4).v0
            for n in (40, 80, 160)]
    probe = slice(0, 10)
    e1 = np.abs(vals[0][probe] - vals[1][probe]).max()
    e2 = np.abs(vals[1][probe] - vals[2][probe]).max()
    assert 1.7 <= e1 / e2 <= 2.3


def test_rejects_unstable_dt():
    inst = _single(50.0, 10.0, 5.0, 3.0, 0.5, servers=2)
    with pytest.raises(ValueError):
        bellman_sweep(inst, Truncation((100,)), dt=0.01, save_every=0.1)
    with pytest.raises(ValueError):  # dt not dividing horizon
        bellman_sweep(inst, Truncation((5,)), dt=0.3, save_every=0.3)


def test_policy_zero_diffs_is_c_order():
    classes = (build_class(2.0, 1.0, 3.0, 0.0, "a"),
               build_class(1.0, 0.5, 5.0, 0.0, "b"))
    table = ValueTable(bounds=(4, 4), horizon=1.0, dt=0.01,
                       save_times=np.array([0.0, 1.0]),
                       diffs=np.zeros((2, 2, 5, 5)), v0=np.zeros((5, 5)))
    grid = TimeGrid(horizon=1.0, interval_count=2)
    inst = PrelimitInstance(classes=classes, grid=grid,
                            arrival_rate=np.ones((2, 2)),
                            staffing=np.array([2, 2]), overtime_rate=0.0)
    pol = mdp_policy(table, inst)
    np.testing.assert_array_equal(pol.rank(0.5, np.array([3, 3])), [1, 0])
    # out-of-truncation states clamp and are counted
    pol.rank(0.5, np.array([40, 2]))
    assert pol.clamped_states == 1


def test_symmetric_classes_tie_to_stable_order():
    classes = tuple(build_class(2.0, 1.0, 3.0, 0.5, n) for n in ("a", "b"))
    grid = TimeGrid(horizon=0.3, interval_count=1)
    inst = PrelimitInstance(classes=classes, grid=grid,
                            arrival_rate=np.full((2, 1), 4.0),
                            staffing=np.array([2]), overtime_rate=1.0)
    table = bellman_sweep(inst, Truncation((6, 6)), dt=0.005,
                          save_every=0.1)
    pol = mdp_policy(table, inst)
    for t in (0.0, 0.15):
        for x in ((2, 2), (5, 5), (0, 0)):
            np.testing.assert_array_equal(pol.rank(t, np.array(x)), [0, 1])
    # value function symmetric under coordinate swap
    np.testing.assert_allclose(table.v0, table.v0.T, atol=1e-10)


def test_value_table_round_trip(tmp_path):
    inst = _single(5.0, 2.0, 1.0, 3.0, 0.5, servers=2, cbar=2.12)
    table = bellman_sweep(inst, Truncation((8,)), dt=0.01, save_every=0.25)
    table.save(tmp_path / "table")
    loaded = ValueTable.load(tmp_path / "table")
    np.testing.assert_array_equal(loaded.diffs, table.diffs)
    np.testing.assert_array_equal(loaded.v0, table.v0)
    assert loaded.bounds == table.bounds
    assert loaded.slice_index(0.26) == table.slice_index(0.26)


def test_mdp_policy_runs_in_simulator():
    classes = (build_class(3.0, 1.0, 4.0, 0.5, "a"),
               build_class(2.0, 2.0, 3.0, 1.0, "b"))
    grid = TimeGrid(horizon=0.5, interval_count=2)
    inst = PrelimitInstance(classes=classes, grid=grid,
                            arrival_rate=np.full((2, 2), 6.0),
                            staffing=np.array([3, 3]), overtime_rate=2.12)
    table = bellman_sweep(inst, Truncation((25, 25)), dt=0.002,
                          save_every=0.1)
    pol = mdp_policy(table, inst)
    day = simulate_day(inst, pol, seed=4, decision_freq=0.1)
    assert day.total_cost >= 0.0


# ---------------------------------------------------------- auxiliary MDP

def _aux_indices():
    high = [tables.class_index(n) for n in tables.AUX_HIGH_PRIORITY]
    lows = [[tables.class_index(n) for n in grp]
            for grp in tables.AUX_LOW_GROUPS]
    return high, lows


def test_aggregated_group_statistics():
    pre, _ = make_test_problem("main17")
    _, lows = _aux_indices()
    classes, lam = aggregate_low_groups(pre, lows)
    expected = [(12.48, 8.14, 41.68), (11.69, 6.64, 33.94),
                (9.68, 8.95, 37.73)]
    for cls, (mu, theta, c) in zip(classes, expected):
        assert abs(cls.service_rate - mu) <= 0.011
        assert abs(cls.abandon_rate - theta) <= 0.011
        # printed reference values were rounded from rounded arrival
        # fractions, so allow a slightly wider band on the cost
        assert abs(cls.total_cost - c) <= 0.02
    # group arrival fractions of the total
    frac = 100.0 * lam.sum(axis=1) / pre.arrival_rate.sum()
    np.testing.assert_allclose(frac, [10.71, 6.57, 7.81], atol=0.011)


def test_low_priority_capacity_formula():
    pre, _ = make_test_problem("main17")
    high, _ = _aux_indices()
    cap = low_priority_capacity(pre, high)
    mu = np.array([c.service_rate for c in pre.classes])
    n = 100
    offered = sum(pre.arrival_rate[k, n] / mu[k] for k in high)
    assert cap[n] == max(int(pre.staffing[n]) - int(np.ceil(offered)), 0)
    assert np.all(cap >= 0)


def test_auxiliary_policy_structure():
    pre, _ = make_test_problem("main17", r=4.0)
    high, lows = _aux_indices()
    pol = auxiliary_mdp_policy(pre, high, lows, Truncation((5, 5, 5)),
                               dt=10.0 * SECONDS, save_every=0.5)
    order = pol.rank(8.0, np.zeros(17, dtype=np.int64))
    assert sorted(order.tolist()) == list(range(17))
    # high-priority block leads, internally by c*mu/theta
    mu = np.array([c.service_rate for c in pre.classes])
    theta = np.array([c.abandon_rate for c in pre.classes])
    c = np.array([cl.total_cost for cl in pre.classes])
    idx = c * mu / theta
    head = order[:len(high)].tolist()
    assert sorted(head) == sorted(high)
    assert head == sorted(high, key=lambda k: (-idx[k], k))
    # each low group appears contiguously, internally by c*mu/theta
    tail = order[len(high):].tolist()
    pos = 0
    seen_groups = []
    while pos < len(tail):
        for gi, grp in enumerate(lows):
            if tail[pos] in grp:
                block = tail[pos:pos + len(grp)]
                assert block == sorted(grp, key=lambda k: (-idx[k], k))
                seen_groups.append(gi)
                pos += len(grp)
                break
        else:
            pytest.fail("ranking interleaves the groups")
    assert sorted(seen_groups) == [0, 1, 2]


def test_auxiliary_policy_rejects_non_partition():
    pre, _ = make_test_problem("main17", r=4.0)
    high, lows = _aux_indices()
    with pytest.raises(ValueError):
        auxiliary_mdp_policy(pre, high[:-1], lows, Truncation((4, 4, 4)),
                             dt=10.0 * SECONDS)


def test_auxiliary_single_group_is_static():
    pre, _ = make_test_problem("main17", r=4.0)
    high, lows = _aux_indices()
    merged = [k for g in lows for k in g]
    pol = auxiliary_mdp_policy(pre, high, [merged], Truncation((8,)),
                               dt=10.0 * SECONDS, save_every=1.0)
    a = pol.rank(2.0, np.zeros(17, dtype=np.int64))
    b = pol.rank(9.0, np.arange(17))
    np.testing.assert_array_equal(a, b)
