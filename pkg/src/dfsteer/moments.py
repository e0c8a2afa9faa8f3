"""Exact first and second moments of the closed loop under disturbance feedback.

With ``u = u_bar + Kbig w`` the stacked state is
``x = G_u u_bar + (G_w + G_u Kbig) w + G_0 x(0)``, hence

    mean(x) = G_u u_bar + G_0 mu0
    var(x)  = G_0 Sigma0 G_0^T + (G_w + G_u Kbig) Wblk (G_w + G_u Kbig)^T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CausalityError, DimensionError
from .linalg import sym
from .policy import DisturbancePolicy, assemble_gain_matrix, gain_mask
from .systemmodel import StackedDynamics


@dataclass(frozen=True, eq=False)
class MomentPrediction:
    """Stacked mean ``((T+1)n,)`` and covariance ``((T+1)n, (T+1)n)`` of x."""

    stacked_mean: np.ndarray
    stacked_cov: np.ndarray
    n: int

    @property
    def horizon(self) -> int:
        return self.stacked_mean.size // self.n - 1


def _check_gain_matrix(sd: StackedDynamics, k_big):
    k_big = np.asarray(k_big, dtype=float)
    shape = (sd.horizon * sd.m, sd.horizon * sd.n)
    if k_big.shape != shape:
        raise DimensionError(f"Kbig must have shape {shape}, got {k_big.shape}")
    if np.any(k_big[~gain_mask(sd.horizon, sd.m, sd.n)] != 0):
        raise CausalityError("Kbig has nonzero entries outside the causal pattern")
    return k_big


def mean_trajectory(sd: StackedDynamics, u_bar) -> np.ndarray:
    """Stacked state mean ``G_u u_bar + G_0 mu0``."""
    u_bar = np.asarray(u_bar, dtype=float).reshape(-1)
    if u_bar.shape != (sd.horizon * sd.m,):
        raise DimensionError(f"u_bar must have {sd.horizon * sd.m} entries")
    return sd.g_u @ u_bar + sd.g_0 @ sd.system.init_mean


def closed_loop_noise_map(sd: StackedDynamics, k_big) -> np.ndarray:
    """``G_w + G_u Kbig``: how the stacked disturbance reaches the stacked state."""
    return sd.g_w + sd.g_u @ _check_gain_matrix(sd, k_big)


def covariance_trajectory(sd: StackedDynamics, k_big, init_cov=None) -> np.ndarray:
    """Full stacked state covariance, explicitly symmetrized."""
    s0 = sd.system.init_cov if init_cov is None else np.asarray(init_cov, dtype=float)
    f = closed_loop_noise_map(sd, k_big)
    return sym(sd.g_0 @ s0 @ sd.g_0.T + f @ sd.w_blk @ f.T)


def terminal_covariance(sd: StackedDynamics, k_big, init_cov=None) -> np.ndarray:
    """var x(T) without materializing the full stacked covariance."""
    s0 = sd.system.init_cov if init_cov is None else np.asarray(init_cov, dtype=float)
    k_big = _check_gain_matrix(sd, k_big)
    zeta = (sd.terminal_gu @ k_big + sd.terminal_gw) @ sd.w_blk_sqrt
    phi = sd.terminal_g0
    return sym(phi @ s0 @ phi.T + zeta @ zeta.T)


def predict(sd: StackedDynamics, policy: DisturbancePolicy) -> MomentPrediction:
    k_big = assemble_gain_matrix(policy)
    return MomentPrediction(
        stacked_mean=mean_trajectory(sd, policy.u_bar),
        stacked_cov=covariance_trajectory(sd, k_big),
        n=sd.n,
    )


def stage_moments(pred: MomentPrediction, t: int):
    """``(mean x(t), var x(t))`` read off the stacked prediction."""
    if not (0 <= t <= pred.horizon):
        raise IndexError(f"stage {t} outside [0, {pred.horizon}]")
    n = pred.n
    rows = slice(t * n, (t + 1) * n)
    return pred.stacked_mean[rows].copy(), pred.stacked_cov[rows, rows].copy()


def cost_j1(sd: StackedDynamics, k_big, init_cov=None) -> float:
    """Trace of the terminal state covariance."""
    return float(np.trace(terminal_covariance(sd, k_big, init_cov)))


def effort(u_bar, k_big, w_blk) -> float:
    """Expected total control energy ``u_bar^T u_bar + tr(Kbig Wblk Kbig^T)``."""
    u_bar = np.asarray(u_bar, dtype=float).reshape(-1)
    k_big = np.asarray(k_big, dtype=float)
    return float(u_bar @ u_bar + np.sum((k_big @ w_blk) * k_big))


def mean_residual(sd: StackedDynamics, u_bar, mu_f) -> np.ndarray:
    """Terminal mean defect ``mean x(T) - mu_f``."""
    return mean_trajectory(sd, u_bar)[-sd.n:] - np.asarray(mu_f, dtype=float).reshape(-1)


def terminal_cov_terms(sd: StackedDynamics, init_cov, sigma_f):
    """Split the terminal covariance constraint ``var x(T) <= sigma_f``.

    Returns ``(sigma_tilde, zeta)`` where
    ``sigma_tilde = sigma_f - Phi(T,0) Sigma0 Phi(T,0)^T`` and ``zeta`` maps
    Kbig to the ``(n, Tn)`` matrix ``(P G_u Kbig + P G_w) Wblk^{1/2}``, so that
    ``var x(T) <= sigma_f`` iff ``zeta zeta^T <= sigma_tilde``.
    """
    s0 = sd.system.init_cov if init_cov is None else np.asarray(init_cov, dtype=float)
    phi = sd.terminal_g0
    sigma_tilde = sym(np.asarray(sigma_f, dtype=float) - phi @ s0 @ phi.T)
    gu, gw, wsq = sd.terminal_gu, sd.terminal_gw, sd.w_blk_sqrt

    def zeta(k_big):
        return (gu @ np.asarray(k_big, dtype=float) + gw) @ wsq

    return sigma_tilde, zeta


def lmi_block(sigma_tilde, zeta) -> np.ndarray:
    """Bordered matrix ``[[sigma_tilde, zeta], [zeta^T, I]]``.

    The identity block matches the column count of ``zeta`` (Tn), which is
    what makes the Schur complement equal ``sigma_tilde - zeta zeta^T``.
    """
    sigma_tilde = np.asarray(sigma_tilde, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    cols = zeta.shape[1]
    return sym(np.block([[sigma_tilde, zeta], [zeta.T, np.eye(cols)]]))
