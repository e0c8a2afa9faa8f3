"""Minimum variance steering.

Minimize ``tr var x(T)`` subject to ``mean x(T) = mu_f`` and the expected
effort budget ``E sum_t u(t)^T u(t) <= rho^2``.

The trace depends only on the gains, while the open-loop part enters only the
mean equality and the budget.  The minimum-norm ``u_bar`` meeting the mean
equality therefore leaves the largest budget ``beta^2 = rho^2 - |u_bar|^2`` for
the gains, which then solve a trust-region-type problem: for a multiplier
``lam >= 0`` the minimizer of ``J1 + lam * effort`` is a ridge regression per
disturbance column, and ``lam`` is found by bisection on the effort.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .columns import column_blocks, policy_from_columns
from .moments import cost_j1, effort, mean_residual
from .policy import assemble_gain_matrix, gain_mask
from .report import SolveReport, Status, ToleranceSet
from .systemmodel import LinearSystem, StackedDynamics, build_stacked


@dataclass(frozen=True, eq=False)
class MvsSpec:
    system: LinearSystem
    mu_f: np.ndarray
    rho: float
    eta: int | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        mu_f = np.asarray(self.mu_f, dtype=float).reshape(-1)
        if mu_f.shape != (self.system.n,):
            raise ValueError(f"mu_f must have length {self.system.n}")
        object.__setattr__(self, "mu_f", mu_f)


def min_norm_mean_input(sd: StackedDynamics, mu_f, mu_0=None, tol: ToleranceSet | None = None):
    """Minimum-norm ``u_bar`` with ``mean x(T) = mu_f``.

    Returns ``(u_bar, residual_norm, feasible)``; ``feasible`` is False when
    the target lies outside the reachable set of terminal means, in which case
    ``u_bar`` is the least-squares compromise.
    """
    tol = tol or ToleranceSet()
    mu_0 = sd.system.init_mean if mu_0 is None else np.asarray(mu_0, dtype=float)
    target = np.asarray(mu_f, dtype=float).reshape(-1) - sd.terminal_g0 @ mu_0
    s = sd.terminal_gu
    if s.size == 0 or not np.any(s):
        u_bar = np.zeros(s.shape[1])
    else:
        u_bar = np.linalg.lstsq(s, target, rcond=tol.rank_tol)[0]
    residual = float(np.linalg.norm(s @ u_bar - target))
    return u_bar, residual, residual <= tol.tol_eq


class _RidgePath:
    """Gains minimizing ``J1 + lam * effort`` as a function of ``lam``.

    Each column block is diagonalized once by a thin SVD of ``S_tau``; the
    whole path then costs a rescaling of singular values per evaluation.
    """

    def __init__(self, blocks, rank_tol):
        self.blocks = blocks
        self.svd = []
        for block in blocks:
            if block.s_mat.shape[1] == 0:
                self.svd.append(None)
                continue
            u, sv, vt = np.linalg.svd(block.s_mat, full_matrices=False)
            keep = sv > rank_tol * sv[0] if sv.size and sv[0] > 0 else np.zeros(sv.shape, bool)
            u, sv, vt = u[:, keep], sv[keep], vt[keep]
            # projection of the uncontrolled column onto the reachable directions
            h = u.T @ block.offset
            self.svd.append((sv, vt, h, np.sum(h * h, axis=1)))

    def effort(self, lam):
        total = 0.0
        for entry in self.svd:
            if entry is None:
                continue
            sv, _, _, hnorm = entry
            total += float(np.sum((sv / (sv * sv + lam)) ** 2 * hnorm))
        return total

    def effort_slope(self, lam):
        total = 0.0
        for entry in self.svd:
            if entry is None:
                continue
            sv, _, _, hnorm = entry
            s2 = sv * sv
            total -= float(np.sum(2.0 * s2 / (s2 + lam) ** 3 * hnorm))
        return total

    def columns(self, lam):
        ys = []
        for block, entry in zip(self.blocks, self.svd):
            if entry is None:
                ys.append(np.zeros((0, block.offset.shape[1])))
                continue
            sv, vt, h, _ = entry
            ys.append(-vt.T @ ((sv / (sv * sv + lam))[:, None] * h))
        return ys


def kkt_residual(sd: StackedDynamics, k_big, lam, eta=None) -> float:
    """Norm of the gradient of ``J1 + lam * effort`` restricted to the free gains."""
    terminal = sd.terminal_gu @ k_big + sd.terminal_gw
    grad = 2.0 * (sd.terminal_gu.T @ terminal + lam * k_big) @ sd.w_blk
    grad[~gain_mask(sd.horizon, sd.m, sd.n, eta)] = 0.0
    return float(np.linalg.norm(grad))


def _polish_multiplier(path: _RidgePath, budget, lam, lo, hi, steps=8):
    """Safeguarded Newton steps on ``1/sqrt(effort(lam)) - 1/sqrt(budget)``.

    That function is nearly linear in ``lam``, so a couple of steps drive the
    budget gap to rounding level; steps leaving ``[lo, hi]`` or not reducing the
    gap are rejected.
    """
    gap = path.effort(lam) - budget
    for _ in range(steps):
        e = path.effort(lam)
        if e <= 0:
            break
        phi = 1.0 / np.sqrt(e) - 1.0 / np.sqrt(budget)
        dphi = -0.5 * e ** -1.5 * path.effort_slope(lam)
        if dphi == 0:
            break
        trial = lam - phi / dphi
        if not (lo <= trial <= hi):
            break
        trial_gap = path.effort(trial) - budget
        if abs(trial_gap) >= abs(gap):
            break
        lam, gap = trial, trial_gap
    return lam


def _bisect_multiplier(path: _RidgePath, budget, tol: ToleranceSet):
    """Find ``lam`` with ``effort(lam) ~= budget``; returns ``(lam, iterations, converged)``."""
    target_tol = tol.tol_budget * max(1.0, budget)
    lo, hi = 0.0, 1.0
    iterations = 0
    while path.effort(hi) > budget:
        lo, hi = hi, 2.0 * hi
        iterations += 1
        if iterations > tol.iter_max or not np.isfinite(hi):
            return hi, iterations, False
    lam = hi
    converged = abs(path.effort(hi) - budget) <= target_tol
    bisections = 0
    while not converged and bisections < tol.iter_max:
        bisections += 1
        lam = 0.5 * (lo + hi)
        gap = path.effort(lam) - budget
        if abs(gap) <= target_tol:
            converged = True
        elif gap > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= np.finfo(float).eps * hi:
            # bracket exhausted at machine precision; take the feasible end
            lam = hi
            converged = abs(path.effort(hi) - budget) <= target_tol
            break
    iterations += bisections
    if converged:
        lam = _polish_multiplier(path, budget, lam, lo, hi)
    return lam, iterations, converged


def solve_mvs(spec: MvsSpec, tol: ToleranceSet | None = None, sd: StackedDynamics | None = None) -> SolveReport:
    """Solve the minimum variance steering problem over causal (truncated) policies."""
    tol = tol or ToleranceSet()
    sd = sd or build_stacked(spec.system)
    u_bar, residual, feasible = min_norm_mean_input(sd, spec.mu_f, tol=tol)
    if not feasible:
        return SolveReport(Status.INFEASIBLE_MEAN, None, mean_residual_norm=residual)
    rho2 = float(spec.rho) ** 2
    budget = rho2 - float(u_bar @ u_bar)
    if budget < -tol.tol_ineq:
        return SolveReport(
            Status.INFEASIBLE_BUDGET, None, mean_residual_norm=residual,
            diagnostics={"gain_budget": budget},
        )

    blocks = column_blocks(sd, spec.eta)
    path = _RidgePath(blocks, tol.rank_tol)
    status = Status.OPTIMAL
    iterations = 0
    if budget <= tol.tol_budget * max(1.0, rho2):
        # no room for feedback (up to rounding): the only feasible gains are zero
        lam = None
        ys = [np.zeros((len(b.stages) * sd.m, sd.n)) for b in blocks]
    elif path.effort(0.0) <= budget:
        lam = 0.0
        ys = path.columns(0.0)
    else:
        lam, iterations, converged = _bisect_multiplier(path, budget, tol)
        ys = path.columns(lam)
        if not converged:
            status = Status.MAX_ITER

    policy = policy_from_columns(sd, blocks, ys, u_bar, spec.eta)
    k_big = assemble_gain_matrix(policy)
    used = effort(policy.u_bar, k_big, sd.w_blk)
    diagnostics = {
        "gain_budget": budget,
        "kkt_residual": kkt_residual(sd, k_big, lam or 0.0, spec.eta) if lam is not None else None,
        "complementary_slackness": abs(lam * (used - rho2)) if lam is not None else None,
    }
    return SolveReport(
        status=status,
        policy=policy,
        objective=cost_j1(sd, k_big),
        effort_used=used,
        mean_residual_norm=float(np.linalg.norm(mean_residual(sd, policy.u_bar, spec.mu_f))),
        multiplier=lam,
        iterations=iterations,
        diagnostics=diagnostics,
    )
