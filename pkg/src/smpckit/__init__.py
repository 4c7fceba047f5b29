"""smpckit: stochastic MPC synthesis and convergence certification toolkit."""

__version__ = "0.1.0"

from .certify import (GridSpec, QuadraticValue, certify_drift,
                      certify_small_set, check_iss_decrease,
                      detect_terminal_entry)
from .dafmpc import DAConfig, DAController, solve_da, synthesize_da
from .disturbance import (make_stream, mixture_with_core, tail_quantile,
                          truncated_gaussian, uniform_box)
from .linalg import (solve_dare, solve_dlyap, spectral_radius,
                     stationary_covariance, terminal_stage_cost)
from .model import LinearFeedback, LinearSystem
from .polytope import (HPolytope, TruncatedReachSet, max_rpi,
                       member_truncated_sum, mrpi_outer, pontryagin_diff,
                       support)
from .qp import QProblem, QPSolution, backend_name, solve_lp_feasibility, solve_qp
from .simulate import Ensemble, Trajectory, lln_report, run_ensemble, run_trajectory
from .stripedmpc import StripedConfig, StripedController, solve_striped, synthesize_striped

__all__ = [
    "__version__", "backend_name",
    "spectral_radius", "solve_dlyap", "solve_dare", "stationary_covariance",
    "terminal_stage_cost",
    "HPolytope", "TruncatedReachSet", "support", "pontryagin_diff",
    "member_truncated_sum", "mrpi_outer", "max_rpi",
    "QProblem", "QPSolution", "solve_qp", "solve_lp_feasibility",
    "uniform_box", "truncated_gaussian", "mixture_with_core", "tail_quantile",
    "make_stream",
    "LinearSystem", "LinearFeedback",
    "DAConfig", "DAController", "synthesize_da", "solve_da",
    "StripedConfig", "StripedController", "synthesize_striped", "solve_striped",
    "GridSpec", "QuadraticValue", "certify_drift", "certify_small_set",
    "check_iss_decrease", "detect_terminal_entry",
    "Trajectory", "Ensemble", "run_trajectory", "run_ensemble", "lln_report",
]
