"""Causal affine disturbance-feedback policies.

The input at stage ``t`` is

    u(t) = u_bar(t) + sum_{tau = sigma}^{t-1} K[(t-1, tau)] w(tau),

with ``sigma = max(0, t - eta)`` (``sigma = 0`` for the full-history policy)
and ``u(0) = u_bar(0)``.  Gains are keyed by ``(t-1, tau)``, so key ``(s, tau)``
feeds ``w(tau)`` into ``u(s+1)`` and exists for ``0 <= tau <= s <= T-2``.

Stacked over the horizon, ``u = u_bar + Kbig w`` where ``Kbig`` is ``Tm x Tn``
with a zero first block row, a zero last block column and the gains in the
block lower triangle in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CausalityError, DimensionError, MissingHistoryError


def effective_eta(eta, horizon):
    """Truncation length actually in force; ``None`` or ``eta >= T-1`` is full."""
    full = max(horizon - 1, 1)
    if eta is None:
        return full
    eta = int(eta)
    if eta < 1:
        raise ValueError(f"truncation length must be >= 1, got {eta}")
    return min(eta, full)


def in_band(s, tau, eta, horizon):
    """Whether gain ``(s, tau)`` survives truncation (``tau >= max(0, s+1-eta)``)."""
    return tau >= max(0, s + 1 - effective_eta(eta, horizon))


def band_keys(horizon, eta=None):
    """All free gain keys ``(s, tau)`` in lexicographic order."""
    return [
        (s, tau)
        for s in range(horizon - 1)
        for tau in range(s + 1)
        if in_band(s, tau, eta, horizon)
    ]


def free_stages(tau, horizon, eta=None):
    """Input stages ``t`` allowed to react to ``w(tau)``."""
    last = min(horizon - 1, tau + effective_eta(eta, horizon))
    return list(range(tau + 1, last + 1))


def free_gain_count(horizon, m, n, eta=None):
    """Number of free scalar gain entries, ``m n sum_{t=1}^{T-1} min(t, eta)``."""
    return m * n * len(band_keys(horizon, eta))


def gain_mask(horizon, m, n, eta=None):
    """Boolean ``(Tm, Tn)`` mask of entries of Kbig that may be nonzero."""
    mask = np.zeros((horizon * m, horizon * n), dtype=bool)
    for s, tau in band_keys(horizon, eta):
        t = s + 1
        mask[t * m:(t + 1) * m, tau * n:(tau + 1) * n] = True
    return mask


@dataclass(frozen=True, eq=False)
class DisturbancePolicy:
    """Open-loop inputs plus a causal, possibly truncated, gain family.

    Gains absent from ``gains`` but inside the truncation band are stored as
    explicit zeros; gains outside the band are forced to zero and dropped.

    Attributes:
        u_bar: (T*m,) stacked open-loop inputs.
        gains: mapping ``(s, tau) -> (m, n)`` array.
        eta: truncation length, ``None`` for the full history.
    """

    u_bar: np.ndarray
    gains: dict
    eta: int | None
    horizon: int
    m: int
    n: int

    def __post_init__(self):
        horizon, m, n = int(self.horizon), int(self.m), int(self.n)
        u_bar = np.array(self.u_bar, dtype=float).reshape(-1)
        if u_bar.shape != (horizon * m,):
            raise DimensionError(f"u_bar must have {horizon * m} entries, got {u_bar.size}")
        eta = None if self.eta is None else int(self.eta)
        effective_eta(eta, horizon)
        gains = {}
        for key, mat in self.gains.items():
            s, tau = (int(k) for k in key)
            if tau > s or tau < 0:
                raise CausalityError(f"gain ({s}, {tau}) is not causal")
            if s > horizon - 2:
                raise CausalityError(f"gain ({s}, {tau}) feeds input u({s + 1}) beyond the horizon")
            mat = np.array(mat, dtype=float)
            if mat.size != m * n:
                raise DimensionError(f"gain ({s}, {tau}) must be {m}x{n}")
            mat = mat.reshape(m, n)
            if in_band(s, tau, eta, horizon):
                gains[(s, tau)] = mat
        for key in band_keys(horizon, eta):
            gains.setdefault(key, np.zeros((m, n)))
        for mat in gains.values():
            mat.setflags(write=False)
        u_bar.setflags(write=False)
        object.__setattr__(self, "u_bar", u_bar)
        object.__setattr__(self, "gains", dict(sorted(gains.items())))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)

    @classmethod
    def open_loop(cls, u_bar, horizon, m, n, eta=None):
        return cls(u_bar, {}, eta, horizon, m, n)

    @classmethod
    def from_gain_matrix(cls, u_bar, k_big, m, n, eta=None):
        """Read the band blocks of a dense ``Kbig``.

        Raises:
            CausalityError: if an entry outside the causal pattern is nonzero.
        """
        k_big = np.asarray(k_big, dtype=float)
        horizon = k_big.shape[0] // m
        if k_big.shape != (horizon * m, horizon * n):
            raise DimensionError(f"Kbig has shape {k_big.shape}, not a multiple of ({m}, {n})")
        causal = gain_mask(horizon, m, n, None)
        if np.any(k_big[~causal] != 0):
            raise CausalityError("Kbig has nonzero entries outside the causal pattern")
        gains = {
            (s, tau): k_big[(s + 1) * m:(s + 2) * m, tau * n:(tau + 1) * n]
            for s, tau in band_keys(horizon, eta)
        }
        return cls(u_bar, gains, eta, horizon, m, n)

    @property
    def effective_eta(self) -> int:
        return effective_eta(self.eta, self.horizon)

    def stage_u_bar(self, t):
        return self.u_bar[t * self.m:(t + 1) * self.m]


def assemble_gain_matrix(policy: DisturbancePolicy) -> np.ndarray:
    """Dense ``(Tm, Tn)`` matrix Kbig with truncation zeros applied."""
    m, n = policy.m, policy.n
    k_big = np.zeros((policy.horizon * m, policy.horizon * n))
    for (s, tau), mat in policy.gains.items():
        k_big[(s + 1) * m:(s + 2) * m, tau * n:(tau + 1) * n] = mat
    return k_big


def stacked_control(policy: DisturbancePolicy, w) -> np.ndarray:
    """``u_bar + Kbig w`` for a stacked disturbance vector ``w`` of length Tn."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (policy.horizon * policy.n,):
        raise DimensionError(f"w must have {policy.horizon * policy.n} entries, got {w.size}")
    return policy.u_bar + assemble_gain_matrix(policy) @ w


def control_law(policy: DisturbancePolicy, t: int, w_hist) -> np.ndarray:
    """Input u(t) given the realized disturbances ``w(0), ..., w(t-1)``."""
    if not (0 <= t < policy.horizon):
        raise IndexError(f"stage {t} outside [0, {policy.horizon - 1}]")
    u = policy.stage_u_bar(t).copy()
    if t == 0:
        return u
    w_hist = np.asarray(w_hist, dtype=float).reshape(-1, policy.n)
    if w_hist.shape[0] < t:
        raise MissingHistoryError(f"u({t}) needs {t} past disturbances, got {w_hist.shape[0]}")
    sigma = max(0, t - policy.effective_eta)
    for tau in range(sigma, t):
        u += policy.gains[(t - 1, tau)] @ w_hist[tau]
    return u
