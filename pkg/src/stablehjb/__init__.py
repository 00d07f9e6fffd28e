"""Numerical toolkit for stochastic control driven by cylindrical alpha-stable noise.

Spectrally truncated models, exact stable / Ornstein-Uhlenbeck sampling,
Monte Carlo semigroup and gradient estimators, a pathwise state-equation
solver, a grid fixed-point solver for the mild HJB equation, and Monte Carlo
verification of the resulting value function.
"""

from .spectrum import (SpectralModel, HypothesisReport, make_heat_dirichlet_model,
                       validate_hypothesis, semigroup_factor)
from .stable import (StableLaw, RngStream, EcfReport, sample_standard, levy_constant,
                     kernel_scale, ecf_check, empirical_cf, jump_measure_normalization)
from .ou import (ConvolutionState, TestFunction, QuadSpec, sample_marginal,
                 advance_convolution, semigroup_apply, semigroup_gradient,
                 gradient_decay_check, second_derivative_estimate, generator_apply)
from .state import DriftFunction, ProblemSpec, StatePath, OpenLoopControl, solve_state_path
from .hjb import (GridSpec, MCSpec, GridValueFunction, HJBSolution, hamiltonian_inf,
                  argmin_control, hamiltonian_full, picard_solve, holder_seminorm)
from .estimator import MildHJBSolver
from .control import (FeedbackPolicy, CostEstimate, FundamentalResidual, cost_of_policy,
                      extract_feedback, fundamental_residual, brute_force_value,
                      constant_policy_family)
from .serialize import save_solution, load_solution, export_level_csv
from . import presets

__version__ = "0.1.0"

__all__ = [
    "SpectralModel", "HypothesisReport", "make_heat_dirichlet_model",
    "validate_hypothesis", "semigroup_factor",
    "StableLaw", "RngStream", "EcfReport", "sample_standard", "levy_constant",
    "kernel_scale", "ecf_check", "empirical_cf", "jump_measure_normalization",
    "ConvolutionState", "TestFunction", "QuadSpec", "sample_marginal",
    "advance_convolution", "semigroup_apply", "semigroup_gradient",
    "gradient_decay_check", "second_derivative_estimate", "generator_apply",
    "DriftFunction", "ProblemSpec", "StatePath", "OpenLoopControl", "solve_state_path",
    "GridSpec", "MCSpec", "GridValueFunction", "HJBSolution", "hamiltonian_inf",
    "argmin_control", "hamiltonian_full", "picard_solve", "holder_seminorm",
    "MildHJBSolver",
    "FeedbackPolicy", "CostEstimate", "FundamentalResidual", "cost_of_policy",
    "extract_feedback", "fundamental_residual", "brute_force_value",
    "constant_policy_family",
    "save_solution", "load_solution", "export_level_csv",
    "presets",
]
