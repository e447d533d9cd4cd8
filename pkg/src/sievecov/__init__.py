"""Nonparametric estimation of isotropic covariance functions with a sieve.

The sieve is spanned by the basis ``A_{k,m}(h) = prod_{j=k}^m (1 + h^2/j)^(-1)``;
convex combinations of its elements are valid correlation functions in every
dimension.
"""

from .approx import ApproxResult, QuadratureConfig, approximate, build_gram_matrix, rae, select_min_m, solve_simplex_qp
from .basis import (
    SieveCovariance,
    basis_eval,
    basis_eval_beta,
    basis_matrix,
    cov_eval,
    g_density,
    lift_bernstein_coefficients,
    lift_weights,
    spectral_density_f,
)
from .empirical import (
    EmpiricalSummary,
    WlsResult,
    WlsSpec,
    detrend_two_way_anova,
    empirical_summary,
    nugget_adapted_cov_fit,
    wls_fit,
)
from .evaluation import MetricReport, compute_metrics, mc_study, scaled_l2_error, setting_truth, sup_error
from .exceptions import (
    ConditioningError,
    ConvergenceError,
    DegenerateTargetError,
    DomainError,
    EvaluationError,
    ValidationError,
)
from .gp import (
    SpatialDataset,
    build_cov_matrix,
    fit_parametric_mle,
    log_likelihood,
    profile_loglik,
    profile_sigma2,
    simulate_gp,
)
from .parametric import FAMILIES, ParametricCovariance, bessel_k, matern_correlation
from .sieve_mle import FitConfig, FitResult, fit_auto_m, fit_given_m, m_schedule

__version__ = "0.1.0"
