"""Covariance steering.

Minimize the expected control effort subject to ``mean x(T) = mu_f`` and
``var x(T) <= sigma_f`` in the Loewner order.

Writing ``var x(T) = Phi Sigma0 Phi^T + zeta zeta^T`` with ``zeta`` affine in
the gains, the covariance constraint is ``zeta zeta^T <= sigma_tilde`` with
``sigma_tilde = sigma_f - Phi Sigma0 Phi^T``.  After whitening by
``sigma_tilde^{-1/2}`` this is a spectral-norm ball, ``|L zeta|_2 <= 1``, which
ADMM handles with one singular value clipping per iteration.  The bordered LMI
``[[sigma_tilde, zeta], [zeta^T, I]] >= 0`` is used to certify the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .columns import column_blocks, policy_from_columns
from .linalg import inv_sqrt, min_eig, range_projector, sym
from .moments import effort, lmi_block, mean_residual, terminal_cov_terms, terminal_covariance
from .mvs import min_norm_mean_input
from .policy import assemble_gain_matrix
from .report import SolveReport, Status, ToleranceSet
from .systemmodel import LinearSystem, StackedDynamics, build_stacked


POLISH_EVERY = 200


class Precheck(str, Enum):
    PASS = "pass"
    FAIL_SIGMA_TILDE = "fail_sigma_tilde"
    FAIL_NOISE_FLOOR = "fail_noise_floor"


@dataclass(frozen=True, eq=False)
class CsSpec:
    system: LinearSystem
    mu_f: np.ndarray
    sigma_f: np.ndarray
    eta: int | None = None

    def __post_init__(self):
        n = self.system.n
        mu_f = np.asarray(self.mu_f, dtype=float).reshape(-1)
        sigma_f = np.asarray(self.sigma_f, dtype=float)
        if mu_f.shape != (n,):
            raise ValueError(f"mu_f must have length {n}")
        if sigma_f.shape != (n, n):
            raise ValueError(f"sigma_f must be {n}x{n}")
        if not np.allclose(sigma_f, sigma_f.T, rtol=0, atol=1e-12 * max(1.0, np.abs(sigma_f).max())):
            raise ValueError("sigma_f must be symmetric")
        if not min_eig(sigma_f) > 0:
            raise ValueError("sigma_f must be positive definite")
        object.__setattr__(self, "mu_f", mu_f)
        object.__setattr__(self, "sigma_f", sym(sigma_f))


def feasibility_precheck(spec: CsSpec, tol: ToleranceSet | None = None, sd: StackedDynamics | None = None) -> Precheck:
    """Necessary (not sufficient) conditions for a nonempty feasible set.

    The initial-state term of the terminal covariance cannot be influenced by
    disturbance feedback, and the last disturbance ``w(T-1)`` reaches x(T)
    before any input can react, so ``var x(T) >= Phi Sigma0 Phi^T + W``.
    """
    tol = tol or ToleranceSet()
    sd = sd or build_stacked(spec.system)
    sigma_tilde, _ = terminal_cov_terms(sd, None, spec.sigma_f)
    if min_eig(sigma_tilde) < -tol.tol_psd:
        return Precheck.FAIL_SIGMA_TILDE
    if min_eig(sigma_tilde - spec.system.noise_cov) < -tol.tol_psd:
        return Precheck.FAIL_NOISE_FLOOR
    return Precheck.PASS


def project_spectral_ball(z) -> np.ndarray:
    """Euclidean projection onto ``{Z : |Z|_2 <= 1}`` by clipping singular values."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return z.copy()
    u, sv, vt = np.linalg.svd(z, full_matrices=False)
    if sv[0] <= 1.0:
        return z.copy()
    return (u * np.minimum(sv, 1.0)) @ vt


@dataclass(eq=False)
class _AdmmState:
    ys: list
    z: np.ndarray
    scaled_dual: np.ndarray
    penalty: float
    iterations: int = 0
    best_primal: float = np.inf
    since_best: int = 0
    residuals: tuple = (np.inf, np.inf)


class _SpectralAdmm:
    """ADMM for ``min sum |Y_tau|^2  s.t.  |[M_tau Y_tau + C_tau]_tau|_2 <= 1``.

    Scaled form with ``Z = A(Y) + C`` and indicator of the unit spectral ball on
    Z.  The Y-update is a ridge solve per column block, diagonalized once by a
    thin SVD of ``M_tau``.
    """

    def __init__(self, whitener, blocks, noise_proj, tol: ToleranceSet):
        self.tol = tol
        self.blocks = blocks
        self.proj = noise_proj
        self.n = whitener.shape[0]
        self.mats = []
        self.svd = []
        for block in blocks:
            mat = whitener @ block.s_mat
            self.mats.append(mat)
            if mat.shape[1]:
                u, sv, vt = np.linalg.svd(mat, full_matrices=False)
                keep = sv > tol.rank_tol * sv[0] if sv[0] > 0 else np.zeros(sv.shape, bool)
                self.svd.append((u[:, keep], sv[keep], vt[keep]))
            else:
                self.svd.append(None)
        self.offset = np.hstack([whitener @ b.offset for b in blocks])

    def _cols(self, mat, tau):
        return mat[:, tau * self.n:(tau + 1) * self.n]

    def apply(self, ys):
        """A(Y) + C."""
        out = self.offset.copy()
        for tau, (mat, y) in enumerate(zip(self.mats, ys)):
            if y.shape[0]:
                out[:, tau * self.n:(tau + 1) * self.n] += mat @ y
        return out

    def adjoint_norm(self, v):
        """Frobenius norm of A^T(V) restricted to admissible gain directions."""
        total = 0.0
        for tau, mat in enumerate(self.mats):
            if mat.shape[1]:
                total += float(np.sum((mat.T @ self._cols(v, tau) @ self.proj) ** 2))
        return np.sqrt(total)

    def y_update(self, target, penalty):
        ys = []
        for tau, entry in enumerate(self.svd):
            if entry is None:
                ys.append(np.zeros((0, self.n)))
                continue
            u, sv, vt = entry
            d = self._cols(target, tau) @ self.proj
            coef = penalty * sv / (2.0 + penalty * sv * sv)
            ys.append(vt.T @ (coef[:, None] * (u.T @ d)))
        return ys

    def start(self):
        return _AdmmState(
            ys=self.y_update(np.zeros_like(self.offset), 1.0),
            z=project_spectral_ball(self.offset),
            scaled_dual=np.zeros_like(self.offset),
            penalty=1.0,
        )

    def run(self, rel_tol, state: _AdmmState, budget=None):
        """Iterate until converged, stalled, out of iterations or ``budget`` steps.

        Returns ``(outcome, info)`` with outcome one of ``converged``,
        ``stalled``, ``max_iter`` or ``paused``; ``state`` is updated in place.
        """
        tol = self.tol
        st = state
        floor = np.sqrt(rel_tol)
        stop = tol.admm_max_iter if budget is None else min(tol.admm_max_iter, st.iterations + budget)
        outcome = "max_iter"
        while True:
            if st.iterations >= stop:
                outcome = "max_iter" if st.iterations >= tol.admm_max_iter else "paused"
                break
            st.iterations += 1
            st.ys = self.y_update(st.z - st.scaled_dual - self.offset, st.penalty)
            image = self.apply(st.ys)
            z_old = st.z
            st.z = project_spectral_ball(image + st.scaled_dual)
            primal = image - st.z
            st.scaled_dual = st.scaled_dual + primal

            r_norm = float(np.linalg.norm(primal))
            s_norm = st.penalty * self.adjoint_norm(st.z - z_old)
            st.residuals = (r_norm, s_norm)
            eps_pri = rel_tol * max(1.0, float(np.linalg.norm(image)), float(np.linalg.norm(st.z)))
            eps_dual = rel_tol * max(1.0, st.penalty * self.adjoint_norm(st.scaled_dual))
            if r_norm <= eps_pri and s_norm <= eps_dual:
                outcome = "converged"
                break

            rel_primal = r_norm / max(1.0, float(np.linalg.norm(st.z)))
            if rel_primal < st.best_primal * (1.0 - 1e-3):
                st.best_primal = rel_primal
                st.since_best = 0
            else:
                st.since_best += 1
            if st.since_best >= tol.stall_window and rel_primal > floor:
                outcome = "stalled"
                break

            # residual balancing
            if r_norm > 10.0 * s_norm and st.penalty * 2.0 <= tol.penalty_max:
                st.penalty *= 2.0
                st.scaled_dual = st.scaled_dual / 2.0
            elif s_norm > 10.0 * r_norm and st.penalty / 2.0 >= tol.penalty_min:
                st.penalty /= 2.0
                st.scaled_dual = st.scaled_dual * 2.0
        r_norm, s_norm = st.residuals
        return outcome, {"primal_residual": r_norm, "dual_residual": s_norm, "penalty": st.penalty}


def _sym_basis(r):
    basis = []
    for i in range(r):
        for j in range(i, r):
            b = np.zeros((r, r))
            b[i, j] = b[j, i] = 1.0
            basis.append(b)
    return basis


class _ActiveSetPolish:
    """Exact KKT solve of the whitened problem on a guessed active subspace.

    For a dual ``Lam >= 0`` the blockwise minimizer of
    ``sum |Y|^2 + tr(Lam (sum E E^T - I))`` has ``E_tau = (I + P_tau Lam)^{-1} C_tau``
    with ``P_tau = M_tau M_tau^T`` and ``Y_tau = -M_tau^T Lam E_tau``.  With
    ``Lam = Q G Q^T`` for an orthonormal basis ``Q`` of the active directions,
    Newton's method on ``Q^T (sum E E^T - I) Q = 0`` gives a point satisfying
    stationarity and complementarity to rounding; it is accepted only when
    ``G`` is positive definite and the constraint holds.
    """

    def __init__(self, admm: _SpectralAdmm):
        self.mats = admm.mats
        self.cols = [admm._cols(admm.offset, tau) for tau in range(len(admm.mats))]
        self.grams = [mat @ mat.T for mat in admm.mats]
        self.n = admm.n

    def moments(self, lam):
        eye = np.eye(self.n)
        es, solves = [], []
        total = np.zeros((self.n, self.n))
        for gram, c in zip(self.grams, self.cols):
            fac = eye + gram @ lam
            e = np.linalg.solve(fac, c)
            es.append(e)
            solves.append(fac)
            total += e @ e.T
        return es, solves, total

    def ys(self, lam, es):
        return [mat.T @ (-lam @ e) for mat, e in zip(self.mats, es)]

    def solve(self, q, g0, max_steps=50):
        r = q.shape[1]
        basis = _sym_basis(r)
        g = g0
        lam = q @ g @ q.T
        es, solves, total = self.moments(lam)
        resid = q.T @ (total - np.eye(self.n)) @ q
        for _ in range(max_steps):
            if np.linalg.norm(resid) <= 1e-14:
                break
            jac = np.empty((r * r, len(basis)))
            for k, b in enumerate(basis):
                dlam = q @ b @ q.T
                dtotal = np.zeros((self.n, self.n))
                for gram, fac, e in zip(self.grams, solves, es):
                    de = -np.linalg.solve(fac, gram @ dlam @ e)
                    dtotal += de @ e.T + e @ de.T
                jac[:, k] = (q.T @ dtotal @ q).ravel()
            coef = np.linalg.lstsq(jac, -resid.ravel(), rcond=None)[0]
            step = sum(c * b for c, b in zip(coef, basis))
            scale, improved = 1.0, False
            while scale > 1e-8:
                trial = sym(g + scale * step)
                if min_eig(trial) > 0:
                    t_lam = q @ trial @ q.T
                    t_es, t_solves, t_total = self.moments(t_lam)
                    t_resid = q.T @ (t_total - np.eye(self.n)) @ q
                    if np.linalg.norm(t_resid) < np.linalg.norm(resid):
                        g, lam, es, solves, total, resid = trial, t_lam, t_es, t_solves, t_total, t_resid
                        improved = True
                        break
                scale *= 0.5
            if not improved:
                break
        return g, lam, es, total, float(np.linalg.norm(resid))


def _polish(admm: _SpectralAdmm, state: _AdmmState, tol: ToleranceSet):
    """Try increasingly large active subspaces read off the ADMM iterate.

    Returns the polished column blocks or None.
    """
    polisher = _ActiveSetPolish(admm)
    u, sv, _ = np.linalg.svd(admm.apply(state.ys), full_matrices=False)
    # the scaled dual times the penalty is 2 Lam Z at a solution
    lam_est = sym(state.penalty * state.scaled_dual @ state.z.T) / 2.0
    tried = set()
    for gap in (1e-6, 1e-4, 1e-3, 1e-2, 5e-2):
        r = int(np.sum(sv >= 1.0 - gap))
        if r in tried:
            continue
        tried.add(r)
        q = u[:, :r]
        if r == 0:
            es, _, total = polisher.moments(np.zeros((admm.n, admm.n)))
            if np.linalg.eigvalsh(total)[-1] <= 1.0 + tol.tol_psd:
                return polisher.ys(np.zeros((admm.n, admm.n)), es)
            continue
        g0 = sym(q.T @ lam_est @ q)
        floor = 1e-8 * max(1.0, float(np.abs(g0).max()))
        w, v = np.linalg.eigh(g0)
        g0 = (v * np.maximum(w, floor)) @ v.T
        g, lam, es, total, resid = polisher.solve(q, g0)
        if resid > 1e-10 or min_eig(g) <= 0:
            continue
        if np.linalg.eigvalsh(total)[-1] > 1.0 + 1e-10:
            continue
        return polisher.ys(lam, es)
    return None


def _certify(sd, spec, policy, sigma_tilde, zeta_map, tol):
    k_big = assemble_gain_matrix(policy)
    cov_margin = min_eig(spec.sigma_f - terminal_covariance(sd, k_big))
    lmi_min = min_eig(lmi_block(sigma_tilde, zeta_map(k_big)))
    ok = cov_margin >= -tol.tol_psd and lmi_min >= -tol.tol_psd
    return ok, {"cov_margin": cov_margin, "lmi_min_eig": lmi_min}


def solve_cs(spec: CsSpec, tol: ToleranceSet | None = None, sd: StackedDynamics | None = None) -> SolveReport:
    """Solve the covariance steering problem over causal (truncated) policies."""
    tol = tol or ToleranceSet()
    sd = sd or build_stacked(spec.system)
    precheck = feasibility_precheck(spec, tol, sd)
    diagnostics = {"precheck": precheck.value}

    u_bar, residual, feasible = min_norm_mean_input(sd, spec.mu_f, tol=tol)
    if not feasible:
        return SolveReport(Status.INFEASIBLE_MEAN, None, mean_residual_norm=residual, diagnostics=diagnostics)

    sigma_tilde, zeta_map = terminal_cov_terms(sd, None, spec.sigma_f)
    whitener = inv_sqrt(sigma_tilde, rtol=1e-12)
    if whitener is None:
        return SolveReport(Status.INFEASIBLE_COVARIANCE, None, mean_residual_norm=residual, diagnostics=diagnostics)

    blocks = column_blocks(sd, spec.eta)
    admm = _SpectralAdmm(whitener, blocks, range_projector(sd.system.noise_cov), tol)
    state = admm.start()
    status = Status.MAX_ITER
    final_ys = None
    rel_tol = tol.tol_admm
    tightenings = 0
    while True:
        outcome, info = admm.run(rel_tol, state, budget=POLISH_EVERY)
        diagnostics.update(info)
        if outcome == "stalled":
            status = Status.INFEASIBLE_COVARIANCE
            break
        candidates = [("polish", _polish(admm, state, tol))]
        if outcome == "converged":
            candidates.append(("admm", state.ys))
        for source, ys in candidates:
            if ys is None:
                continue
            policy = policy_from_columns(sd, blocks, ys, u_bar, spec.eta)
            ok, cert = _certify(sd, spec, policy, sigma_tilde, zeta_map, tol)
            if ok:
                status, final_ys = Status.OPTIMAL, ys
                diagnostics.update(cert)
                diagnostics["refinement"] = source
                break
        if status is Status.OPTIMAL or outcome == "max_iter":
            break
        if outcome == "converged":
            if tightenings == 3:
                break
            # converged but not certifiable: tighten and continue from the same iterate
            rel_tol *= 0.1
            tightenings += 1

    ys = final_ys if final_ys is not None else state.ys
    iterations = state.iterations
    policy = policy_from_columns(sd, blocks, ys, u_bar, spec.eta)
    k_big = assemble_gain_matrix(policy)
    if status is not Status.OPTIMAL:
        diagnostics.update(_certify(sd, spec, policy, sigma_tilde, zeta_map, tol)[1])
    diagnostics["admm_tolerance"] = rel_tol
    used = effort(policy.u_bar, k_big, sd.w_blk) if status is not Status.INFEASIBLE_COVARIANCE else float("nan")
    return SolveReport(
        status=status,
        policy=policy if status is not Status.INFEASIBLE_COVARIANCE else None,
        objective=used,
        effort_used=used,
        mean_residual_norm=float(np.linalg.norm(mean_residual(sd, policy.u_bar, spec.mu_f))),
        multiplier=None,
        iterations=iterations,
        diagnostics=diagnostics,
    )
