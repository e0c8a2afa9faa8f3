"""Minimum-variance and covariance steering of discrete-time stochastic linear
systems with affine disturbance-feedback policies."""

from .cs import CsSpec, Precheck, feasibility_precheck, project_spectral_ball, solve_cs
from .moments import (
    MomentPrediction,
    cost_j1,
    covariance_trajectory,
    effort,
    lmi_block,
    mean_residual,
    mean_trajectory,
    predict,
    stage_moments,
    terminal_cov_terms,
    terminal_covariance,
)
from .mvs import MvsSpec, min_norm_mean_input, solve_mvs
from .policy import DisturbancePolicy, assemble_gain_matrix, control_law, stacked_control
from .report import SolveReport, Status, ToleranceSet
from .simulate import SimConfig, SimMode, estimate_moments, sample_trajectory, validate
from .systemmodel import LinearSystem, StackedDynamics, build_stacked, selector, state_transition

__version__ = "0.1.0"
