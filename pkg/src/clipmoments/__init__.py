"""Exact and Monte Carlo evaluation of clipped likelihood-ratio moments.

The moments E[min(L^s1, 1) * min(L^s2, 1)] arise in Weiss-Weinstein type
estimation bounds. Here L is a likelihood ratio for y = g(x) + v with a
scalar Gaussian prior on x and circular complex Gaussian noise v.
"""

from .analytic import (
    FAMILIES,
    MuResult,
    QuadratureRule,
    gaussian_expectation,
    mu_dispatch,
    mu_x_general,
    mu_x_special,
    mu_y_given_x_general,
    mu_y_given_x_special,
    mu_yx_general,
    mu_yx_special,
)
from .mc import McConfig, McEstimate, estimate_mu, estimate_quadrants
from .model import (
    ComplexExponential,
    Linear,
    ModelDomainError,
    Polynomial,
    ProblemSpec,
    TestPoint,
    evaluate_model,
)
from .special import GaussianPairSpec, phi1, phi2

__all__ = [
    "FAMILIES",
    "ComplexExponential",
    "GaussianPairSpec",
    "Linear",
    "McConfig",
    "McEstimate",
    "ModelDomainError",
    "MuResult",
    "Polynomial",
    "ProblemSpec",
    "QuadratureRule",
    "TestPoint",
    "estimate_mu",
    "estimate_quadrants",
    "evaluate_model",
    "gaussian_expectation",
    "mu_dispatch",
    "mu_x_general",
    "mu_x_special",
    "mu_y_given_x_general",
    "mu_y_given_x_special",
    "mu_yx_general",
    "mu_yx_special",
    "phi1",
    "phi2",
]
