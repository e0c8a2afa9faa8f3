import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfsteer import (
    CsSpec,
    LinearSystem,
    MvsSpec,
    Precheck,
    Status,
    assemble_gain_matrix,
    build_stacked,
    effort,
    feasibility_precheck,
    lmi_block,
    project_spectral_ball,
    solve_cs,
    solve_mvs,
    terminal_cov_terms,
    terminal_covariance,
)
from dfsteer.linalg import min_eig

from oracles import cs_conic_oracle, random_system

cvxpy = pytest.importorskip("cvxpy")


def scalar_chain(a, w):
    return LinearSystem(np.full((2, 1, 1), a), np.ones((2, 1, 1)), [[w]], [0.0], [[0.0]])


def clamp_gain(a, w, sigma_f):
    r = np.sqrt((sigma_f - w) / w)
    return 0.0 if abs(a) <= r else -a + r * np.sign(a)


def active_instance(rng, n=2, m=1, horizon=4, slack=0.02):
    """Random system with a covariance target that is reachable by the
    one-step-memory minimum variance gains but tighter than open loop."""
    sys = random_system(rng, n, m, horizon)
    mv = solve_mvs(MvsSpec(sys, np.zeros(n), 1e6, 1))
    sigma_f = terminal_covariance(build_stacked(sys), assemble_gain_matrix(mv.policy)) + slack * np.eye(n)
    return sys, rng.normal(size=n), sigma_f


def check_certified(r, sys, sigma_f):
    sd = build_stacked(sys)
    k_big = assemble_gain_matrix(r.policy)
    st_, zeta = terminal_cov_terms(sd, None, sigma_f)
    assert min_eig(lmi_block(st_, zeta(k_big))) >= -1e-6
    assert min_eig(sigma_f - terminal_covariance(sd, k_big)) >= -1e-6
    assert r.mean_residual_norm <= 1e-8


def test_projection_inside_ball_is_identity(rng):
    z = rng.normal(size=(2, 6))
    z /= 2 * np.linalg.norm(z, 2)
    np.testing.assert_array_equal(project_spectral_ball(z), z)


def test_projection_clips_singular_values(rng):
    z = rng.normal(size=(3, 7)) * 3
    p = project_spectral_ball(z)
    u, sv, vt = np.linalg.svd(z, full_matrices=False)
    np.testing.assert_allclose(p, (u * np.minimum(sv, 1)) @ vt, atol=1e-13)
    assert np.linalg.norm(p, 2) <= 1 + 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 10))
def test_projection_is_nearest_point(seed, scale):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(2, 5)) * scale
    p = project_spectral_ball(z)
    np.testing.assert_allclose(project_spectral_ball(p), p, atol=1e-12)
    d = np.linalg.norm(z - p)
    for _ in range(20):
        q = rng.normal(size=(2, 5))
        q = project_spectral_ball(q * rng.uniform(0.1, 3))
        assert np.linalg.norm(z - q) >= d - 1e-10


def test_huge_target_gives_zero_gains(rng):
    sys = random_system(rng, 2, 1, 4)
    mu_f = rng.normal(size=2)
    r = solve_cs(CsSpec(sys, mu_f, 1e6 * np.eye(2)))
    assert r.optimal
    np.testing.assert_allclose(assemble_gain_matrix(r.policy), 0, atol=1e-12)
    assert r.objective == pytest.approx(float(r.policy.u_bar @ r.policy.u_bar), rel=1e-12)


@pytest.mark.parametrize("a, w, sigma_f", [(1.5, 0.3, 0.5), (-2.0, 1.0, 2.0), (0.2, 0.3, 0.5), (3.0, 0.5, 0.55)])
def test_scalar_clamp(a, w, sigma_f):
    r = solve_cs(CsSpec(scalar_chain(a, w), [0.0], [[sigma_f]]))
    k = clamp_gain(a, w, sigma_f)
    assert r.optimal
    assert r.objective == pytest.approx(k * k * w, abs=1e-6)
    assert r.policy.gains[(0, 0)][0, 0] == pytest.approx(k, abs=1e-5)
    check_certified(r, scalar_chain(a, w), np.array([[sigma_f]]))


def test_noise_floor_infeasible():
    sys = LinearSystem(np.tile(np.eye(2), (3, 1, 1)), np.tile([[1.0], [0.0]], (3, 1, 1)), np.eye(2),
                       [0, 0], np.zeros((2, 2)))
    spec = CsSpec(sys, [0, 0], 0.5 * np.eye(2))
    assert feasibility_precheck(spec) is Precheck.FAIL_NOISE_FLOOR
    r = solve_cs(spec)
    assert r.status is Status.INFEASIBLE_COVARIANCE
    assert r.policy is None and np.isnan(r.objective)
    assert r.diagnostics["precheck"] == "fail_noise_floor"


def test_initial_uncertainty_exceeds_target():
    sys = LinearSystem(np.tile(np.eye(1), (2, 1, 1)), np.ones((2, 1, 1)), [[0.1]], [0.0], [[4.0]])
    spec = CsSpec(sys, [0.0], [[1.0]])
    assert feasibility_precheck(spec) is Precheck.FAIL_SIGMA_TILDE
    assert solve_cs(spec).status is Status.INFEASIBLE_COVARIANCE


def test_singular_sigma_tilde_is_reported():
    sys = LinearSystem(np.tile(np.eye(1), (2, 1, 1)), np.ones((2, 1, 1)), [[0.1]], [0.0], [[1.0]])
    r = solve_cs(CsSpec(sys, [0.0], [[1.0]]))
    assert r.status is Status.INFEASIBLE_COVARIANCE and r.iterations == 0


def test_infeasible_mean():
    sys = LinearSystem([np.eye(2)], [[[1.0], [0.0]]], np.eye(2), [0, 0], np.zeros((2, 2)))
    r = solve_cs(CsSpec(sys, [0.0, 1.0], 10 * np.eye(2)))
    assert r.status is Status.INFEASIBLE_MEAN


def test_spec_validation(rng):
    sys = random_system(rng)
    with pytest.raises(ValueError, match="symmetric"):
        CsSpec(sys, [0, 0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError, match="positive definite"):
        CsSpec(sys, [0, 0], np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        CsSpec(sys, [0, 0], np.eye(3))


@pytest.mark.parametrize("eta", [None, 1, 2])
def test_matches_conic_oracle(rng, eta):
    for _ in range(3):
        sys, mu_f, sigma_f = active_instance(rng)
        r = solve_cs(CsSpec(sys, mu_f, sigma_f, eta))
        assert r.optimal
        value, status = cs_conic_oracle(sys, sigma_f, eta)
        assert status == "optimal"
        oracle = value + float(r.policy.u_bar @ r.policy.u_bar)
        assert r.objective == pytest.approx(oracle, rel=1e-5)
        check_certified(r, sys, sigma_f)


def test_larger_instance_matches_oracle(rng):
    sys, mu_f, sigma_f = active_instance(rng, 3, 2, 6)
    r = solve_cs(CsSpec(sys, mu_f, sigma_f, 2))
    assert r.optimal
    value, _ = cs_conic_oracle(sys, sigma_f, 2)
    assert r.objective == pytest.approx(value + float(r.policy.u_bar @ r.policy.u_bar), rel=1e-5)


def test_singular_noise(rng):
    sys = random_system(rng, 2, 1, 4)
    sys = LinearSystem(sys.a_seq, sys.b_seq, np.diag([0.3, 0.0]), sys.init_mean, sys.init_cov)
    sd = build_stacked(sys)
    mv = solve_mvs(MvsSpec(sys, np.zeros(2), 1e6))
    sigma_f = terminal_covariance(sd, assemble_gain_matrix(mv.policy)) + 0.01 * np.eye(2)
    r = solve_cs(CsSpec(sys, np.zeros(2), sigma_f))
    assert r.optimal
    check_certified(r, sys, sigma_f)
    k_big = assemble_gain_matrix(r.policy)
    # gains never act on the direction the noise does not excite
    np.testing.assert_allclose(k_big[:, 1::2], 0, atol=1e-12)
    value, _ = cs_conic_oracle(sys, sigma_f)
    assert effort(np.zeros(4), k_big, sd.w_blk) == pytest.approx(value, rel=1e-4, abs=1e-8)


def test_tightening_monotonicity(rng):
    sys, mu_f, sigma_f = active_instance(rng)
    values = []
    for t in np.linspace(0, 0.5, 8):
        r = solve_cs(CsSpec(sys, mu_f, sigma_f + t * np.eye(2)))
        assert r.optimal
        values.append(r.objective)
    assert all(b <= a + 1e-6 for a, b in zip(values, values[1:]))


def test_truncation_monotonicity(rng):
    sys, mu_f, sigma_f = active_instance(rng, 2, 1, 5)
    values = [solve_cs(CsSpec(sys, mu_f, sigma_f, eta)).objective for eta in range(1, 5)]
    assert all(b <= a + 1e-6 for a, b in zip(values, values[1:]))
    assert values[-1] == solve_cs(CsSpec(sys, mu_f, sigma_f)).objective


def test_objective_is_effort(rng):
    sys, mu_f, sigma_f = active_instance(rng)
    r = solve_cs(CsSpec(sys, mu_f, sigma_f))
    sd = build_stacked(sys)
    assert r.objective == effort(r.policy.u_bar, assemble_gain_matrix(r.policy), sd.w_blk)
    assert r.multiplier is None
    assert r.diagnostics["lmi_min_eig"] >= -1e-6
