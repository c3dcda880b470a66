import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from prodinv.errors import BadActionBounds, BadTruncation, NegativeCost, OutOfRange, Unstable
from prodinv.model import (ModelParams, State, build_action_grid, check_irreducibility,
                           closed_classes, constant_policy, generator_matrix, is_unichain,
                           policy_costs, stage_cost, transition_rates, uniformized_row,
                           validate_params, validate_policy)
from prodinv.steady_state import qbd_blocks

BIG = ModelParams(n_max=6, i_max=6)


def test_default_parameters_accepted(base):
    assert validate_params(base) is base


@pytest.mark.parametrize("changes, err", [
    (dict(lam=5.0), Unstable),
    (dict(lam=6.0), Unstable),
    (dict(lam=0.0), Unstable),
    (dict(gamma_lo=0.0), BadActionBounds),
    (dict(gamma_lo=3.0), BadActionBounds),
    (dict(grid_step=0.0), BadActionBounds),
    (dict(rate_hi=float("inf")), BadActionBounds),
    (dict(h=-1.0), NegativeCost),
    (dict(c3=-0.5), NegativeCost),
    (dict(n_max=0), BadTruncation),
    (dict(i_max=0), BadTruncation),
])
def test_invalid_parameters(base, changes, err):
    with pytest.raises(err):
        validate_params(base.replace(**changes))


def test_discounted_needs_alpha(base):
    validate_params(base.replace(alpha=None))
    with pytest.raises(ValueError):
        validate_params(base.replace(alpha=None), discounted=True)


def test_default_grid(base):
    g = build_action_grid(base)
    assert len(g) == 2000
    assert g.rates[0] == 0.001 and g.rates[-1] == 2.0
    assert np.allclose(np.diff(g.rates), 0.001)


def test_degenerate_and_small_grids(base):
    assert list(build_action_grid(base.replace(gamma_lo=1.0, rate_hi=1.0, grid_step=0.3))) == [1.0]
    g = build_action_grid(base.replace(gamma_lo=0.5, rate_hi=1.0, grid_step=0.25))
    assert np.allclose(g.rates, [0.5, 0.75, 1.0])


def test_grid_rates_read_only(base):
    with pytest.raises(ValueError):
        build_action_grid(base).rates[0] = 1.0


def test_policy_off_grid_rejected(base):
    with pytest.raises(BadActionBounds):
        validate_policy(np.full(base.n_states, 0.0015), base)
    pol = validate_policy(np.full(base.n_states, 0.0010000000001), base)
    assert np.all(pol == 0.001)


def test_interior_rates():
    row = transition_rates((2, 3), 1.5, BIG)
    assert row.entries == {(3, 3): 3.0, (1, 2): 5.0, (2, 4): 1.5}
    assert row.diagonal == -9.5


def test_empty_stock_only_produces(base):
    row = transition_rates((4, 0), 1.0, base)
    assert row.entries == {(4, 1): 1.0}
    assert row.diagonal == -1.0


def test_production_paused_at_cap(base):
    row = transition_rates((0, base.i_max), 2.0, base)
    assert row.entries == {(1, base.i_max): 3.0}
    assert row.diagonal == -3.0


def test_rates_reject_bad_inputs(base):
    with pytest.raises(OutOfRange):
        transition_rates((5, 0), 1.0, base)
    with pytest.raises(BadActionBounds):
        transition_rates((1, 1), 2.5, base)


def test_stage_cost_examples(base):
    assert stage_cost((0, 0), 1.7, base) == 0
    assert stage_cost((2, 3), 0.5, base) == 355
    assert stage_cost((3, 0), 1.0, base) == 180
    # terms recomputed separately
    assert stage_cost((2, 3), 0.5, base) == 100 * 3 + 20 * 2 + 0.5 * 30


def test_uniformized_examples():
    row = uniformized_row((2, 3), 1.5, BIG)
    expect = {(3, 3): 0.30, (1, 2): 0.50, (2, 4): 0.15, (2, 3): 0.05}
    assert row.probs.keys() == expect.keys()
    for k, v in expect.items():
        assert row.probs[k] == pytest.approx(v, abs=1e-15)
    row = uniformized_row((4, 0), 2.0, ModelParams())
    assert row.probs[(4, 0)] == pytest.approx(0.8)
    assert row.probs[(4, 1)] == pytest.approx(0.2)


def test_generator_matches_oracle(base):
    rng = np.random.default_rng(3)
    for _ in range(5):
        pol = validate_policy(rng.choice(build_action_grid(base).rates, base.n_states), base)
        want = oracles.generator(base.lam, base.mu, base.n_max, base.i_max, pol)
        assert np.allclose(generator_matrix(base, pol), want, rtol=0, atol=1e-14)
        assert np.allclose(policy_costs(base, pol), oracles.costs(base, pol))


def test_interior_blocks_match_qbd(base):
    p = BIG
    q = generator_matrix(p, constant_policy(p, 1.5))
    m = p.i_max + 1
    B, A0, A1, A2 = qbd_blocks(p, 1.5)
    blk = lambda a, b: q[a * m:(a + 1) * m, b * m:(b + 1) * m]
    assert np.allclose(blk(0, 1), A0)
    assert np.allclose(blk(2, 3), A0)
    assert np.allclose(blk(3, 2), A2)
    # diagonal blocks agree away from the production cap
    assert np.allclose(blk(0, 0)[:-1], B[:-1])
    assert np.allclose(blk(3, 3)[:-1], A1[:-1])


def test_state_indexing(base):
    assert base.index((2, 3)) == 13
    assert base.state(13) == State(2, 3)
    assert [base.index(s) for s in base.states()] == list(range(base.n_states))


def test_irreducible_for_any_policy(base):
    rng = np.random.default_rng(0)
    grid = build_action_grid(base)
    for _ in range(10):
        assert check_irreducibility(base, rng.choice(grid.rates, base.n_states))


def test_smallest_grid_irreducible():
    p = ModelParams(n_max=1, i_max=1)
    assert check_irreducibility(p, constant_policy(p, 1.0))


def test_unreachable_corner_is_only_transient_state(base):
    classes = closed_classes(generator_matrix(base, constant_policy(base, 1.0)))
    assert len(classes) == 1
    missing = set(range(base.n_states)) - set(classes[0].tolist())
    assert missing == {base.index((base.n_max, 0))}


def test_disconnected_table_detected():
    # two absorbing halves with no crossing rates
    q = np.array([[-1.0, 1.0, 0, 0], [1.0, -1.0, 0, 0],
                  [0, 0, -2.0, 2.0], [0, 0, 2.0, -2.0]])
    assert not is_unichain(q)
    assert not is_unichain(sp.csr_matrix(q))
    q[1, 2], q[1, 1] = 1.0, -2.0
    assert is_unichain(q)


rate_st = st.floats(0.001, 2.0)
state_st = st.tuples(st.integers(0, 4), st.integers(0, 4))


@settings(max_examples=200, deadline=None)
@given(state_st, rate_st)
def test_row_sums_vanish_and_exit_bounded(s, beta):
    p = ModelParams()
    row = transition_rates(s, beta, p)
    assert sum(row.entries.values()) + row.diagonal == 0
    assert row.exit_rate <= p.unif_rate


@settings(max_examples=200, deadline=None)
@given(state_st, rate_st)
def test_uniformized_row_is_distribution(s, beta):
    probs = np.array(list(uniformized_row(s, beta, ModelParams()).probs.values()))
    assert np.all((probs >= 0) & (probs <= 1))
    assert abs(probs.sum() - 1) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(state_st, rate_st, rate_st)
def test_stage_cost_affine_nondecreasing(s, b1, b2):
    p = ModelParams()
    lo, hi = sorted((b1, b2))
    c_lo, c_hi = stage_cost(s, lo, p), stage_cost(s, hi, p)
    assert c_lo <= c_hi
    mid = stage_cost(s, 0.5 * (lo + hi), p)
    assert mid == pytest.approx(0.5 * (c_lo + c_hi), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), rate_st)
def test_row_structure(n_max, i_max, beta):
    p = ModelParams(n_max=n_max, i_max=i_max)
    for s in p.states():
        k = len(transition_rates(s, beta, p).entries)
        if s.i == 0:
            assert k == 1
        elif 0 < s.n < n_max and s.i < i_max:
            assert k == 3
