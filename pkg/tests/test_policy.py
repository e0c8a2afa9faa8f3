import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfsteer import DisturbancePolicy, assemble_gain_matrix, control_law, stacked_control
from dfsteer.errors import CausalityError, DimensionError, MissingHistoryError
from dfsteer.policy import band_keys, effective_eta, free_gain_count, free_stages, gain_mask

from oracles import causal_mask


def random_gains(rng, horizon, m, n, eta=None):
    return {key: rng.normal(size=(m, n)) for key in band_keys(horizon, eta)}


def test_zero_gains_assemble_to_zero():
    policy = DisturbancePolicy.open_loop(np.arange(6.0), 3, 2, 2)
    np.testing.assert_array_equal(assemble_gain_matrix(policy), 0)
    np.testing.assert_array_equal(stacked_control(policy, np.ones(6)), np.arange(6.0))


def test_assembled_pattern(rng):
    horizon, m, n = 5, 2, 3
    policy = DisturbancePolicy(rng.normal(size=horizon * m), random_gains(rng, horizon, m, n), None, horizon, m, n)
    k_big = assemble_gain_matrix(policy)
    assert k_big.shape == (horizon * m, horizon * n)
    np.testing.assert_array_equal(k_big[:m], 0)
    np.testing.assert_array_equal(k_big[:, -n:], 0)
    for (s, tau), gain in policy.gains.items():
        np.testing.assert_array_equal(k_big[(s + 1) * m:(s + 2) * m, tau * n:(tau + 1) * n], gain)
    np.testing.assert_array_equal(k_big[~causal_mask(horizon, m, n)], 0)


def test_truncation_zeroes_old_gains(rng):
    # T=3, eta=1: u(2) may see w(1) but not w(0)
    gains = {(0, 0): [[1.0]], (1, 0): [[2.0]], (1, 1): [[3.0]]}
    policy = DisturbancePolicy(np.zeros(3), gains, 1, 3, 1, 1)
    k_big = assemble_gain_matrix(policy)
    assert k_big[2, 0] == 0.0
    assert k_big[2, 1] == 3.0
    assert (1, 0) not in policy.gains


def test_eta_at_least_t_minus_1_is_full(rng):
    horizon, m, n = 5, 1, 2
    gains = random_gains(rng, horizon, m, n)
    full = assemble_gain_matrix(DisturbancePolicy(np.zeros(5), gains, None, horizon, m, n))
    for eta in (4, 7):
        trunc = assemble_gain_matrix(DisturbancePolicy(np.zeros(5), gains, eta, horizon, m, n))
        np.testing.assert_array_equal(trunc, full)
    assert effective_eta(None, horizon) == effective_eta(4, horizon) == effective_eta(99, horizon) == 4


def test_noncausal_gain_rejected():
    with pytest.raises(CausalityError):
        DisturbancePolicy(np.zeros(3), {(0, 1): [[1.0]]}, None, 3, 1, 1)
    with pytest.raises(CausalityError):
        DisturbancePolicy(np.zeros(3), {(2, 0): [[1.0]]}, None, 3, 1, 1)
    k_big = np.zeros((3, 3))
    k_big[0, 0] = 1.0
    with pytest.raises(CausalityError):
        DisturbancePolicy.from_gain_matrix(np.zeros(3), k_big, 1, 1)


def test_bad_dimensions_rejected():
    with pytest.raises(DimensionError):
        DisturbancePolicy(np.zeros(4), {}, None, 3, 1, 1)
    with pytest.raises(DimensionError):
        DisturbancePolicy(np.zeros(3), {(0, 0): np.ones((2, 2))}, None, 3, 1, 1)
    with pytest.raises(ValueError):
        DisturbancePolicy(np.zeros(3), {}, 0, 3, 1, 1)


def test_control_law_examples():
    gains = {(0, 0): [[2.0]], (1, 0): [[3.0]], (1, 1): [[5.0]]}
    policy = DisturbancePolicy([1.0, 10.0, 100.0], gains, None, 3, 1, 1)
    assert control_law(policy, 0, [])[0] == 1.0
    assert control_law(policy, 0, [7.0, 8.0])[0] == 1.0
    assert control_law(policy, 1, [7.0])[0] == 10.0 + 2.0 * 7.0
    assert control_law(policy, 2, [7.0, 8.0])[0] == 100.0 + 3.0 * 7.0 + 5.0 * 8.0
    with pytest.raises(MissingHistoryError):
        control_law(policy, 2, [7.0])
    with pytest.raises(IndexError):
        control_law(policy, 3, [1.0, 2.0, 3.0])


def test_truncated_control_law_uses_recent_window(rng):
    horizon, m, n, eta = 7, 2, 2, 2
    gains = random_gains(rng, horizon, m, n)
    trunc = DisturbancePolicy(np.zeros(horizon * m), gains, eta, horizon, m, n)
    w_hist = rng.normal(size=(5, n))
    expected = gains[(4, 3)] @ w_hist[3] + gains[(4, 4)] @ w_hist[4]
    np.testing.assert_allclose(control_law(trunc, 5, w_hist), expected, rtol=1e-14)
    # perturbing w(0..2) has no effect
    moved = w_hist.copy()
    moved[:3] += 10.0
    np.testing.assert_array_equal(control_law(trunc, 5, moved), control_law(trunc, 5, w_hist))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), horizon=st.integers(1, 7), m=st.integers(1, 2), n=st.integers(1, 3),
       eta=st.one_of(st.none(), st.integers(1, 6)))
def test_path_equivalence(seed, horizon, m, n, eta):
    rng = np.random.default_rng(seed)
    policy = DisturbancePolicy(rng.normal(size=horizon * m), random_gains(rng, horizon, m, n), eta, horizon, m, n)
    w = rng.normal(size=(horizon, n))
    staged = np.concatenate([control_law(policy, t, w[:t]) for t in range(horizon)])
    np.testing.assert_allclose(stacked_control(policy, w.reshape(-1)), staged, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), horizon=st.integers(2, 7), eta=st.one_of(st.none(), st.integers(1, 6)))
def test_causality_probe(seed, horizon, eta):
    rng = np.random.default_rng(seed)
    m, n = 2, 2
    policy = DisturbancePolicy(rng.normal(size=horizon * m), random_gains(rng, horizon, m, n), eta, horizon, m, n)
    w = rng.normal(size=horizon * n)
    tau = int(rng.integers(horizon))
    moved = w.copy()
    moved[tau * n:(tau + 1) * n] += rng.normal(size=n)
    u, v = stacked_control(policy, w), stacked_control(policy, moved)
    np.testing.assert_array_equal(u[:(tau + 1) * m], v[:(tau + 1) * m])


def test_truncation_nesting():
    horizon, m, n = 6, 2, 1
    for eta1 in range(1, horizon):
        for eta2 in range(eta1, horizon):
            small, large = gain_mask(horizon, m, n, eta1), gain_mask(horizon, m, n, eta2)
            assert not np.any(small & ~large)
        np.testing.assert_array_equal(gain_mask(horizon, m, n, eta1), causal_mask(horizon, m, n, eta1))


@pytest.mark.parametrize("horizon, m, n", [(2, 1, 1), (5, 2, 3), (8, 1, 2)])
def test_free_gain_count_formula(horizon, m, n):
    for eta in range(1, horizon):
        expected = m * n * sum(min(t, eta) for t in range(1, horizon))
        assert free_gain_count(horizon, m, n, eta) == expected
        assert int(gain_mask(horizon, m, n, eta).sum()) == expected


def test_free_stages():
    assert free_stages(0, 5) == [1, 2, 3, 4]
    assert free_stages(0, 5, 2) == [1, 2]
    assert free_stages(3, 5, 2) == [4]
    assert free_stages(4, 5) == []


def test_from_gain_matrix_round_trip(rng):
    horizon, m, n, eta = 5, 2, 2, 3
    policy = DisturbancePolicy(rng.normal(size=horizon * m), random_gains(rng, horizon, m, n), eta, horizon, m, n)
    again = DisturbancePolicy.from_gain_matrix(policy.u_bar, assemble_gain_matrix(policy), m, n, eta)
    assert again.gains.keys() == policy.gains.keys()
    np.testing.assert_array_equal(assemble_gain_matrix(again), assemble_gain_matrix(policy))


def test_policy_is_immutable(rng):
    policy = DisturbancePolicy(np.zeros(3), {(0, 0): [[1.0]]}, None, 3, 1, 1)
    with pytest.raises(ValueError):
        policy.u_bar[0] = 1.0
    with pytest.raises(ValueError):
        policy.gains[(0, 0)][0, 0] = 2.0
