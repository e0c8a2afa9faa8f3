"""Solver tolerances, statuses and result records."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum

from .policy import DisturbancePolicy


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE_MEAN = "infeasible_mean"
    INFEASIBLE_BUDGET = "infeasible_budget"
    INFEASIBLE_COVARIANCE = "infeasible_covariance"
    MAX_ITER = "max_iter"

    @property
    def infeasible(self) -> bool:
        return self.value.startswith("infeasible")


@dataclass(frozen=True)
class ToleranceSet:
    """Numerical tolerances for both solvers.

    ``penalty_min``/``penalty_max`` bound the ADMM penalty parameter; the
    remaining names follow their use in the solvers.
    """

    eps_psd: float = 1e-10
    tol_eq: float = 1e-8
    tol_ineq: float = 1e-8
    tol_budget: float = 1e-8
    tol_kkt: float = 1e-6
    tol_cs: float = 1e-6
    tol_psd: float = 1e-6
    rank_tol: float = 1e-10
    iter_max: int = 200
    tol_admm: float = 1e-7
    admm_max_iter: int = 50_000
    stall_window: int = 500
    penalty_min: float = 1e-4
    penalty_max: float = 1e4

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Defaults overridden by ``data``; unknown keys raise ``KeyError``."""
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(names)
        if unknown:
            raise KeyError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
        base = cls()
        updates = {}
        for key, value in data.items():
            current = getattr(base, key)
            updates[key] = int(value) if isinstance(current, int) else float(value)
        return replace(base, **updates)


@dataclass
class SolveReport:
    """Outcome of a steering solve.

    ``multiplier`` is the Lagrange multiplier of the effort budget (minimum
    variance problem only); it is ``None`` when no multiplier exists, e.g. when
    the budget leaves no room for feedback at all.  ``diagnostics`` carries
    solver-specific certificates such as KKT residuals or LMI eigenvalues.
    """

    status: Status
    policy: DisturbancePolicy | None
    objective: float = float("nan")
    effort_used: float = float("nan")
    mean_residual_norm: float = float("nan")
    multiplier: float | None = None
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL
