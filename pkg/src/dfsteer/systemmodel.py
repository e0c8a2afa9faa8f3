"""Discrete-time stochastic linear systems and their horizon-stacked form.

The system is

    x(t+1) = A(t) x(t) + B(t) u(t) + w(t),   t = 0, ..., T-1,

with ``x(0) ~ N(mu0, Sigma0)`` and i.i.d. ``w(t) ~ N(0, W)`` independent of
``x(0)``.  Stacking ``x = vertcat(x(0..T))``, ``u = vertcat(u(0..T-1))`` and
``w = vertcat(w(0..T-1))`` gives ``x = G_u u + G_w w + G_0 x(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError
from .linalg import block_diag_repeat, min_eig, psd_sqrt, sym

EPS_PSD = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def shaped_noise_cov(d, v):
    """Disturbance covariance ``W = D V D^T`` for shaped noise ``w = D v``."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape != (d.shape[1], d.shape[1]):
        raise DimensionError(f"V must be {d.shape[1]}x{d.shape[1]}, got {v.shape}")
    return sym(d @ v @ d.T)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Time-varying linear system with Gaussian initial state and noise.

    Attributes:
        a_seq: array of shape (T, n, n), the matrices A(0), ..., A(T-1).
        b_seq: array of shape (T, n, m), the matrices B(0), ..., B(T-1).
        noise_cov: (n, n) per-stage disturbance covariance W, PSD.
        init_mean: (n,) initial mean mu0.
        init_cov: (n, n) initial covariance Sigma0, PSD.
    """

    a_seq: np.ndarray
    b_seq: np.ndarray
    noise_cov: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a_seq, dtype=float)
        b = np.asarray(self.b_seq, dtype=float)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise DimensionError(f"a_seq must have shape (T, n, n), got {a.shape}")
        if a.shape[0] < 1:
            raise DimensionError("horizon must be at least 1")
        horizon, n, _ = a.shape
        if b.ndim != 3 or b.shape[0] != horizon or b.shape[1] != n:
            raise DimensionError(f"b_seq must have shape ({horizon}, {n}, m), got {b.shape}")
        w = np.asarray(self.noise_cov, dtype=float)
        mu0 = np.asarray(self.init_mean, dtype=float).reshape(-1)
        s0 = np.asarray(self.init_cov, dtype=float)
        if w.shape != (n, n):
            raise DimensionError(f"noise_cov must be {n}x{n}, got {w.shape}")
        if mu0.shape != (n,):
            raise DimensionError(f"init_mean must have length {n}, got {mu0.shape}")
        if s0.shape != (n, n):
            raise DimensionError(f"init_cov must be {n}x{n}, got {s0.shape}")
        for name, mat in (("noise_cov", w), ("init_cov", s0)):
            if not np.allclose(mat, mat.T, rtol=0, atol=1e-12 * max(1.0, np.abs(mat).max())):
                raise ValueError(f"{name} must be symmetric")
            if min_eig(mat) < -EPS_PSD:
                raise ValueError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "a_seq", _frozen(a))
        object.__setattr__(self, "b_seq", _frozen(b))
        object.__setattr__(self, "noise_cov", _frozen(sym(w)))
        object.__setattr__(self, "init_mean", _frozen(mu0))
        object.__setattr__(self, "init_cov", _frozen(sym(s0)))

    @classmethod
    def time_invariant(cls, a, b, noise_cov, init_mean, init_cov, horizon):
        """Build a system that reuses one (A, B) pair for every stage."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        if int(horizon) < 1:
            raise DimensionError("horizon must be at least 1")
        return cls(
            np.repeat(a[None], horizon, axis=0),
            np.repeat(b[None], horizon, axis=0),
            noise_cov,
            init_mean,
            init_cov,
        )

    @property
    def horizon(self) -> int:
        return self.a_seq.shape[0]

    @property
    def n(self) -> int:
        return self.a_seq.shape[1]

    @property
    def m(self) -> int:
        return self.b_seq.shape[2]


def state_transition(sys: LinearSystem, t: int, tau: int) -> np.ndarray:
    """Transition matrix ``Phi(t, tau) = A(t-1) ... A(tau)``, identity when t == tau."""
    if not (0 <= tau <= t <= sys.horizon):
        raise IndexError(f"need 0 <= tau <= t <= {sys.horizon}, got t={t}, tau={tau}")
    phi = np.eye(sys.n)
    for s in range(tau, t):
        phi = sys.a_seq[s] @ phi
    return phi


def selector(t: int, n: int, horizon: int) -> np.ndarray:
    """Block row selector extracting x(t) from the stacked state vector."""
    if not (0 <= t <= horizon):
        raise IndexError(f"stage {t} outside [0, {horizon}]")
    p = np.zeros((n, (horizon + 1) * n))
    p[:, t * n:(t + 1) * n] = np.eye(n)
    return p


@dataclass(frozen=True, eq=False)
class StackedDynamics:
    """Horizon-lifted operators ``x = G_u u + G_w w + G_0 x(0)``.

    ``w_blk`` is ``bdiag(W, ..., W)``; ``w_sqrt`` is the PSD square root of W,
    cached since both solvers and the LMI check use it.
    """

    system: LinearSystem
    g_u: np.ndarray
    g_w: np.ndarray
    g_0: np.ndarray
    w_blk: np.ndarray
    w_sqrt: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def horizon(self) -> int:
        return self.system.horizon

    @cached_property
    def terminal_gu(self) -> np.ndarray:
        """``P_{T+1} G_u``: the (n, Tm) map from inputs to x(T)."""
        return self.g_u[-self.n:, :]

    @cached_property
    def terminal_gw(self) -> np.ndarray:
        """``P_{T+1} G_w``: the (n, Tn) map from disturbances to x(T)."""
        return self.g_w[-self.n:, :]

    @cached_property
    def terminal_g0(self) -> np.ndarray:
        """``Phi(T, 0)``."""
        return self.g_0[-self.n:, :]

    @cached_property
    def w_blk_sqrt(self) -> np.ndarray:
        return block_diag_repeat(self.w_sqrt, self.horizon)


def build_stacked(sys: LinearSystem) -> StackedDynamics:
    """Assemble G_u, G_w, G_0 and the block-diagonal noise covariance."""
    n, m, horizon = sys.n, sys.m, sys.horizon
    # phis[i][j] = Phi(i, j) for j <= i
    phis = [[None] * (horizon + 1) for _ in range(horizon + 1)]
    for j in range(horizon + 1):
        phis[j][j] = np.eye(n)
        for i in range(j + 1, horizon + 1):
            phis[i][j] = sys.a_seq[i - 1] @ phis[i - 1][j]

    g_u = np.zeros(((horizon + 1) * n, horizon * m))
    g_w = np.zeros(((horizon + 1) * n, horizon * n))
    g_0 = np.zeros(((horizon + 1) * n, n))
    for i in range(horizon + 1):
        g_0[i * n:(i + 1) * n] = phis[i][0]
        for j in range(i):
            g_u[i * n:(i + 1) * n, j * m:(j + 1) * m] = phis[i][j + 1] @ sys.b_seq[j]
            g_w[i * n:(i + 1) * n, j * n:(j + 1) * n] = phis[i][j + 1]
    w_blk = block_diag_repeat(sys.noise_cov, horizon)
    return StackedDynamics(
        system=sys,
        g_u=_frozen(g_u),
        g_w=_frozen(g_w),
        g_0=_frozen(g_0),
        w_blk=_frozen(w_blk),
        w_sqrt=_frozen(psd_sqrt(sys.noise_cov)),
    )
