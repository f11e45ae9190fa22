"""Estimation and testing for high-dimensional partially linear single-index models."""
from .errors import NumericalError, PLSIMError, ValidationError
from .inference import (BetaTestResult, EtaTestResult, NullLinkSpec, SigmaStarEstimate,
                        chisq_sf, estimate_sigma_star, fit_null_link, noncentral_chisq_sf,
                        test_beta, test_eta, theoretical_power)
from .model import ActiveSet, Dataset, IndexParam, Theta, jacobian, jacobian_restricted, reconstruct_alpha
from .optimizer import (FitResult, OptimConfig, fit_constrained, fit_plsim, hbic, linearize,
                        select_lambda, solve_weighted_lasso)
from .penalty import PenaltySpec, lla_weights, penalty_deriv, penalty_value
from .smoother import (KernelSpec, ProfileFit, local_linear_at, profile_eta, profile_eta_gradient,
                       select_bandwidth_cv)

__version__ = "0.1.0"
