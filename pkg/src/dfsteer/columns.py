"""Block-column decomposition of the terminal-state map used by both solvers.

Because Wblk is block diagonal, the terminal noise map
``(P G_u Kbig + P G_w) Wblk^{1/2}`` splits into T independent n-column blocks.
Block ``tau`` only involves the gains that react to ``w(tau)``; writing
``Y_tau = K_tau W^{1/2}`` for the stacked free gains of that column,

    block_tau = S_tau Y_tau + Phi(T, tau+1) W^{1/2},

where ``S_tau`` collects the columns of ``P G_u`` for the free input stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import DisturbancePolicy, free_stages
from .systemmodel import StackedDynamics


@dataclass(frozen=True, eq=False)
class ColumnBlock:
    tau: int
    stages: tuple
    s_mat: np.ndarray   # (n, len(stages) * m)
    offset: np.ndarray  # (n, n): Phi(T, tau+1) W^{1/2}


def column_blocks(sd: StackedDynamics, eta=None):
    n, m, horizon = sd.n, sd.m, sd.horizon
    blocks = []
    for tau in range(horizon):
        stages = tuple(free_stages(tau, horizon, eta))
        if stages:
            s_mat = np.hstack([sd.terminal_gu[:, t * m:(t + 1) * m] for t in stages])
        else:
            s_mat = np.zeros((n, 0))
        offset = sd.terminal_gw[:, tau * n:(tau + 1) * n] @ sd.w_sqrt
        blocks.append(ColumnBlock(tau, stages, s_mat, offset))
    return blocks


def policy_from_columns(sd: StackedDynamics, blocks, ys, u_bar, eta=None) -> DisturbancePolicy:
    """Map whitened column variables ``Y_tau`` back to gains ``K = Y W^{1/2,+}``.

    Gain directions in the null space of W have no effect on any moment and are
    set to zero.
    """
    m = sd.m
    w_sqrt_pinv = np.linalg.pinv(sd.w_sqrt, rcond=1e-12, hermitian=True)
    gains = {}
    for block, y in zip(blocks, ys):
        k_col = y @ w_sqrt_pinv
        for i, t in enumerate(block.stages):
            gains[(t - 1, block.tau)] = k_col[i * m:(i + 1) * m]
    return DisturbancePolicy(u_bar, gains, eta, sd.horizon, sd.m, sd.n)
