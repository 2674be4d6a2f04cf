"""Tikhonov-penalised regression for elliptic PDE coefficients.

The package simulates white-noise observations of PDE solutions, computes
penalised least-squares estimators by adjoint-state optimisation and checks
convergence rates, stability and concentration empirically.
"""

from .errors import (CapacityError, DegeneracyError, DomainError, NumericalError,
                     OptimizationError, PderegError, SolverError)
from .estimator import (EstimateResult, EstimatorConfig, estimate, lambda_schedule, mu_metric,
                        objective, objective_gradient, residual_objective, tau_metric)
from .experiments import (ConcentrationReport, Problem, RateReport, StabilityReport,
                          concentration_probe, preset_problem, rate_sweep, stability_audit)
from .forward import (ForwardModel, adjoint_gradient, apply_Vf, frechet_derivative, make_model,
                      recover_potential, solve_divergence, solve_schrodinger)
from .grid import (Domain, GridFunction, c1_norm, inner_product, laplacian_apply, make_domain,
                   norm)
from .linkfn import (LinkFunction, link_eval, make_exp_link, make_link, make_regular_link,
                     regularity_probe)
from .noise import Observation, pairing, synthesize
from .radon import RadonGeometry, RadonModel, Sinogram, radon_adjoint, radon_forward, ridge_solve
from .sobolev import SobolevMetric, build_metric, interpolation_check, penalty_gradient, sobolev_norm
from .theory import (RegularityProfile, critical_delta, delta_slope, dudley_majorant,
                     entropy_bound, make_profile, rate_exponent)

__version__ = "0.1.0"
