"""Scaling limits of exit times and exit points for small random
perturbations of dynamical systems, with simulation and statistical checks."""

from .conditioned1d import (
    OneDProblem,
    action_integral,
    conditioned_drift,
    deterministic_time,
    laplace_defect,
    limit_variance,
    simulate_conditioned,
)
from .flow import first_hit, integrate_flow, linearize, transversality_margin
from .limitlaw import analyze, compute_limit_law, make_projections, sample_limit
from .mc import rescale, run_ensemble, simulate_path
from .model import ProblemSpec, load_problem, parse_expression
from .stats import ks_one_sample, ks_two_sample, summarize

__version__ = "0.1.0"
