"""Monte Carlo closed-loop simulation and validation of predicted moments.

Every sample draws its randomness from its own Philox stream keyed by the
seed with the sample index in the counter, so results do not depend on how
samples are batched.  Statistics are merged chunk by chunk in a fixed order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateSampleError, DimensionError
from .linalg import psd_sqrt, sym
from .moments import effort, predict, stage_moments
from .policy import DisturbancePolicy, assemble_gain_matrix
from .systemmodel import LinearSystem, build_stacked

CHUNK = 4096


class SimMode(str, Enum):
    DIRECT = "direct_noise_feed"
    ONLINE = "online_reconstruction"


@dataclass(frozen=True)
class SimConfig:
    num_samples: int
    seed: int = 0
    mode: SimMode = SimMode.DIRECT

    def __post_init__(self):
        if int(self.num_samples) < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        object.__setattr__(self, "mode", SimMode(self.mode))


@dataclass(frozen=True, eq=False)
class EmpiricalMoments:
    mean_hat: np.ndarray
    cov_hat: np.ndarray
    effort_hat: float
    stderr_mean: np.ndarray
    effort_stderr: float
    num_samples: int


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**64, counter=[0, 0, 0, int(index)]))


def _check_dims(sys: LinearSystem, policy: DisturbancePolicy):
    if (policy.horizon, policy.m, policy.n) != (sys.horizon, sys.m, sys.n):
        raise DimensionError(
            f"policy (T={policy.horizon}, m={policy.m}, n={policy.n}) does not match "
            f"system (T={sys.horizon}, m={sys.m}, n={sys.n})"
        )


def _draw(sys: LinearSystem, seed: int, start: int, stop: int):
    """Standard normals for samples ``start..stop-1``, one stream each."""
    width = sys.n * (sys.horizon + 1)
    z = np.empty((stop - start, width))
    for row, index in enumerate(range(start, stop)):
        z[row] = sample_stream(seed, index).standard_normal(width)
    return z


def _shape_draws(sys: LinearSystem, z):
    n, horizon = sys.n, sys.horizon
    x0 = sys.init_mean + z[:, :n] @ psd_sqrt(sys.init_cov)
    w = (z[:, n:].reshape(-1, horizon, n)) @ psd_sqrt(sys.noise_cov)
    return x0, w


def rollout(sys: LinearSystem, policy: DisturbancePolicy, x0, w, mode=SimMode.DIRECT):
    """Closed-loop trajectories for a batch of initial states and disturbances.

    Args:
        x0: (N, n) initial states.
        w: (N, T, n) disturbances acting on the plant.
        mode: in ``online_reconstruction`` the controller never sees ``w``; it
            recovers ``w(t-1) = x(t) - A(t-1) x(t-1) - B(t-1) u(t-1)`` from the
            observed states and its own inputs.

    Returns:
        ``(states (N, T+1, n), inputs (N, T, m), seen (N, T, n))`` where
        ``seen`` holds the disturbances the controller used.
    """
    mode = SimMode(mode)
    horizon, n, m = sys.horizon, sys.n, sys.m
    count = x0.shape[0]
    states = np.empty((count, horizon + 1, n))
    inputs = np.empty((count, horizon, m))
    seen = np.empty((count, horizon, n))
    states[:, 0] = x0
    eta = policy.effective_eta
    for t in range(horizon):
        u = np.broadcast_to(policy.stage_u_bar(t), (count, m)).copy()
        for tau in range(max(0, t - eta), t):
            u += seen[:, tau] @ policy.gains[(t - 1, tau)].T
        inputs[:, t] = u
        x = states[:, t]
        states[:, t + 1] = x @ sys.a_seq[t].T + u @ sys.b_seq[t].T + w[:, t]
        if mode is SimMode.ONLINE:
            predicted = x @ sys.a_seq[t].T + u @ sys.b_seq[t].T
            seen[:, t] = states[:, t + 1] - predicted
        else:
            seen[:, t] = w[:, t]
    return states, inputs, seen


def sample_trajectory(sys: LinearSystem, policy: DisturbancePolicy, rng: np.random.Generator, mode=SimMode.DIRECT):
    """One closed-loop sample: ``(states (T+1, n), inputs (T, m), disturbances (T, n))``."""
    _check_dims(sys, policy)
    z = rng.standard_normal((1, sys.n * (sys.horizon + 1)))
    x0, w = _shape_draws(sys, z)
    states, inputs, _ = rollout(sys, policy, x0, w, mode)
    return states[0], inputs[0], w[0]


def simulate_batch(sys: LinearSystem, policy: DisturbancePolicy, cfg: SimConfig, start=0, stop=None):
    """Trajectories for samples ``start..stop-1`` of a configured run."""
    _check_dims(sys, policy)
    stop = cfg.num_samples if stop is None else stop
    x0, w = _shape_draws(sys, _draw(sys, cfg.seed, start, stop))
    states, inputs, _ = rollout(sys, policy, x0, w, cfg.mode)
    return states, inputs, w


def _merge(acc, count, mean, m2):
    """Chan et al. pairwise update of (count, mean, centered second moment)."""
    if acc is None:
        return count, mean, m2
    n_a, mean_a, m2_a = acc
    total = n_a + count
    delta = mean - mean_a
    new_mean = mean_a + delta * (count / total)
    new_m2 = m2_a + m2 + np.outer(delta, delta) * (n_a * count / total)
    return total, new_mean, new_m2


def estimate_moments(sys: LinearSystem, policy: DisturbancePolicy, cfg: SimConfig, covariance=True) -> EmpiricalMoments:
    """Sample mean and covariance of x(T) and the mean total control energy.

    Raises:
        DegenerateSampleError: for a single sample when ``covariance`` is set,
            since the 1/(N-1) estimator is undefined.
    """
    _check_dims(sys, policy)
    total = int(cfg.num_samples)
    if total < 2 and covariance:
        raise DegenerateSampleError("sample covariance needs at least 2 samples")
    state_acc = effort_acc = None
    for start in range(0, total, CHUNK):
        stop = min(start + CHUNK, total)
        states, inputs, _ = simulate_batch(sys, policy, cfg, start, stop)
        xt = states[:, -1]
        energy = np.sum(inputs * inputs, axis=(1, 2))[:, None]
        for values, name in ((xt, "state"), (energy, "effort")):
            mean = values.mean(axis=0)
            centered = values - mean
            m2 = centered.T @ centered
            if name == "state":
                state_acc = _merge(state_acc, values.shape[0], mean, m2)
            else:
                effort_acc = _merge(effort_acc, values.shape[0], mean, m2)
    _, mean_hat, m2 = state_acc
    _, effort_mean, effort_m2 = effort_acc
    denom = max(total - 1, 1)
    cov_hat = sym(m2 / denom)
    effort_var = float(effort_m2[0, 0]) / denom
    return EmpiricalMoments(
        mean_hat=mean_hat,
        cov_hat=cov_hat,
        effort_hat=float(effort_mean[0]),
        stderr_mean=np.sqrt(np.clip(np.diag(cov_hat), 0.0, None) / total),
        effort_stderr=float(np.sqrt(max(effort_var, 0.0) / total)),
        num_samples=total,
    )


@dataclass
class StatCheck:
    name: str
    predicted: float
    empirical: float
    stderr: float
    passed: bool

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.passed else float("inf")
        return abs(self.empirical - self.predicted) / self.stderr


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    moments: EmpiricalMoments | None = None
    tol_sigma: float = 4.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def _within(pred, emp, se, tol_sigma):
    # rounding floor so that noise-free statistics with tiny spurious
    # standard errors are not judged at machine precision
    return abs(emp - pred) <= tol_sigma * se + 1e-9 * (1.0 + abs(pred))


def validate(sys: LinearSystem, policy: DisturbancePolicy, cfg: SimConfig, tol_sigma: float = 4.0) -> ValidationReport:
    """Compare Monte Carlo statistics of x(T) and effort with exact predictions.

    Mean components use the empirical standard error.  Covariance entries use
    the Gaussian standard error of a sample covariance computed from the
    predicted covariance, ``sqrt((S_ii S_jj + S_ij^2) / N)``.  Effort uses its
    empirical standard error.
    """
    sd = build_stacked(sys)
    mean_t, cov_t = stage_moments(predict(sd, policy), sys.horizon)
    effort_pred = effort(policy.u_bar, assemble_gain_matrix(policy), sd.w_blk)
    emp = estimate_moments(sys, policy, cfg)
    total = emp.num_samples
    checks = []
    for i in range(sys.n):
        se = float(emp.stderr_mean[i])
        checks.append(StatCheck(f"terminal_mean[{i}]", float(mean_t[i]), float(emp.mean_hat[i]), se,
                                _within(mean_t[i], emp.mean_hat[i], se, tol_sigma)))
    for i in range(sys.n):
        for j in range(i, sys.n):
            var = cov_t[i, i] * cov_t[j, j] + cov_t[i, j] ** 2
            se = float(np.sqrt(max(var, 0.0) / total))
            checks.append(StatCheck(f"terminal_cov[{i},{j}]", float(cov_t[i, j]), float(emp.cov_hat[i, j]), se,
                                    _within(cov_t[i, j], emp.cov_hat[i, j], se, tol_sigma)))
    checks.append(StatCheck("effort", effort_pred, emp.effort_hat, emp.effort_stderr,
                            _within(effort_pred, emp.effort_hat, emp.effort_stderr, tol_sigma)))
    return ValidationReport(checks=checks, moments=emp, tol_sigma=tol_sigma)


def write_trajectories_csv(path, states, inputs):
    """Rows ``(sample, t, x_1..x_n, u_1..u_m)``; inputs are blank at t = T."""
    count, stages, n = states.shape
    m = inputs.shape[2]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)])
        for k in range(count):
            for t in range(stages):
                u = [repr(float(v)) for v in inputs[k, t]] if t < stages - 1 else [""] * m
                writer.writerow([k, t] + [repr(float(v)) for v in states[k, t]] + u)
