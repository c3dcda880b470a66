import numpy as np
import pytest
from scipy import stats

from prodinv import _kernels
from prodinv.average import gain, policy_iteration_average
from prodinv.errors import SimulationError
from prodinv.model import ModelParams, constant_policy, stage_cost
from prodinv.pac_sim import (RNG_ALGORITHM, ChainTables, TrajectorySample, batch_means_halfwidth,
                             expected_event_rate, pac_certify, pathwise_average_cost,
                             simulate_trajectory)
from prodinv.steady_state import invariant_measure_numeric, total_variation


@pytest.fixture(scope="module")
def long_run(base):
    pol = constant_policy(base, 1.5)
    return pol, simulate_trajectory(pol, (0, 0), 1e5, 42, base)


def manual_sample(rates, lengths):
    jt = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    return TrajectorySample(jump_times=jt, state_index=np.zeros(len(lengths), dtype=np.int64),
                            actions=np.zeros(len(lengths)),
                            accumulated_cost=float(np.dot(rates, lengths)),
                            horizon=float(np.sum(lengths)), n_events=len(lengths) - 1,
                            occupancy=np.zeros(1), batch_costs=np.zeros(0), width=1)


def test_first_jump_from_empty_system(base):
    pol = constant_policy(base, 1.0)
    holds = []
    for seed in range(2000):
        tr = simulate_trajectory(pol, (0, 0), 1e9, seed, base, max_events=2)
        assert tuple(tr.states[1]) == (0, 1)
        holds.append(tr.jump_times[1])
    assert stats.kstest(holds, "expon").pvalue > 1e-3


def test_same_seed_same_path(base):
    pol = constant_policy(base, 0.8)
    a = simulate_trajectory(pol, (1, 1), 500.0, 7, base)
    b = simulate_trajectory(pol, (1, 1), 500.0, 7, base)
    assert np.array_equal(a.jump_times, b.jump_times)
    assert np.array_equal(a.state_index, b.state_index)
    assert a.accumulated_cost == b.accumulated_cost
    assert a.rng_algorithm == RNG_ALGORITHM
    c = simulate_trajectory(pol, (1, 1), 500.0, 8, base)
    assert not np.array_equal(a.state_index[:50], c.state_index[:50])


def test_occupancy_matches_invariant_measure(base, long_run):
    pol, tr = long_run
    emp = tr.occupancy / tr.horizon
    assert total_variation(emp, invariant_measure_numeric(base, pol).probs) <= 0.01


def test_holding_times_and_jumps(base, long_run):
    pol, tr = long_run
    tables = ChainTables.build(pol, base)
    rates = tables.exit_rate
    s, d = tr.state_index[:-1], tr.durations[:-1]
    nxt = tr.state_index[1:]
    checked = 0
    for k in range(base.n_states):
        mask = s == k
        if mask.sum() >= 1000:
            assert d[mask].mean() == pytest.approx(1 / rates[k], rel=0.05)
            checked += 1
        if mask.sum() >= 10_000:
            live = tables.tgt[k] >= 0
            targets = tables.tgt[k][live]
            probs = np.diff(np.concatenate([[0.0], tables.cum[k][live]]))
            freq = np.array([(nxt[mask] == t).mean() for t in targets])
            assert total_variation(freq, probs) <= 0.02
    assert checked >= 5


def test_cost_integral_exact(base, long_run):
    pol, tr = long_run
    recomputed = float(np.sum(ChainTables.build(pol, base).cost_rate[tr.state_index]
                              * tr.durations))
    assert recomputed == pytest.approx(tr.accumulated_cost, rel=1e-9)
    assert tr.actions.tolist() == pol[tr.state_index].tolist()


def test_long_run_average_within_ci(base, long_run):
    pol, tr = long_run
    hw = batch_means_halfwidth(tr)
    assert abs(pathwise_average_cost(tr) - gain(pol, base)) <= hw


def test_pathwise_average_examples():
    assert pathwise_average_cost(manual_sample([5.0], [3.0])) == 5.0
    assert pathwise_average_cost(manual_sample([2.0, 6.0], [1.5, 1.5])) == 4.0


def test_single_interval_reproduces_stage_cost(base):
    pol = constant_policy(base, 1.3)
    tr = simulate_trajectory(pol, (2, 3), 1e-9, 0, base)
    assert tr.n_events == 0
    assert pathwise_average_cost(tr) == pytest.approx(stage_cost((2, 3), 1.3, base), rel=1e-9)


def test_bad_policy_never_beats_optimum(base):
    opt = policy_iteration_average(base)
    g = opt.gain_bias.gain
    bad = constant_policy(base, base.gamma_lo)
    assert not np.array_equal(bad, opt.policy)
    horizon = 2e5 / expected_event_rate(bad, base)
    rep = pac_certify(bad, g, 0.02 * g, 10, horizon, base)
    assert all(j >= g - 0.02 * g for j in rep.per_seed_averages)


def test_certify_short_run(base):
    pol = constant_policy(base, 1.5)
    g = gain(pol, base)
    rep = pac_certify(pol, g, 0.05 * g, 4, 2e4, base)
    assert rep.passed and rep.fraction_within == 1.0
    assert rep.seeds == [0, 1, 2, 3]


def test_bad_inputs(base):
    pol = constant_policy(base, 1.0)
    with pytest.raises(SimulationError):
        simulate_trajectory(pol, (0, 0), 0.0, 1, base)
    with pytest.raises(SimulationError):
        simulate_trajectory(pol, (9, 0), 1.0, 1, base)
    with pytest.raises(SimulationError):
        simulate_trajectory(pol, (0, 0), 1.0, -1, base)
    with pytest.raises(SimulationError):
        pac_certify(pol, 1.0, 0.0, 3, 1.0, base)


@pytest.mark.skipif(_kernels.BACKEND != "numba", reason="numba unavailable")
def test_backends_bit_identical(base, monkeypatch):
    pol = constant_policy(base, 1.1)
    fast = simulate_trajectory(pol, (0, 2), 2000.0, 3, base)
    monkeypatch.setattr(_kernels, "BACKEND", "numpy")
    slow = simulate_trajectory(pol, (0, 2), 2000.0, 3, base)
    assert np.array_equal(fast.jump_times, slow.jump_times)
    assert np.array_equal(fast.state_index, slow.state_index)
    assert fast.accumulated_cost == slow.accumulated_cost
    assert np.array_equal(fast.batch_costs, slow.batch_costs)
