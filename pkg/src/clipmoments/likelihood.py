"""Likelihood-ratio building blocks and the quadrant decomposition.

For a state offset h the ratio of joint densities at (y, x + h) and (y, x),
with y = g(x) + v, is

    L = exp((2 / sigma_v^2) Re{v^H d} - b),   d = g(x + h) - g(x),
    b = ||d||^2 / sigma_v^2 + x h / sigma_x^2 + h^2 / (2 sigma_x^2),

and it splits into a conditional part L1 (the ||d||^2 term of b) and a prior
part L2 = exp(-b2) (the remaining two terms).

Clipping min(L^s, 1) switches on the sign of s * log L, so each clipped factor
is governed by one scalar statistic a_i crossing a threshold t_i. A product of
two clipped factors therefore splits over the four sign regions of
(a_1 - t_1, a_2 - t_2). On each region the integrand is an exponential tilt of
a Gaussian, which turns the region's contribution into an amplitude times a
bivariate normal CDF. ``QuadrantTerm`` carries that amplitude (as a log) and
the CDF arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .model import ProblemSpec, TestPoint, evaluate_model
from .special import GaussianPairSpec

__all__ = [
    "PairGeometry",
    "QuadrantTerm",
    "QUADRANTS",
    "diff",
    "b_joint",
    "b_cond",
    "b_prior",
    "log_ratio_joint",
    "log_ratio_cond",
    "log_ratio_prior",
    "ratio_joint",
    "ratio_cond",
    "ratio_prior",
    "pair_geometry",
    "orientation",
    "quadrant_terms_joint",
    "quadrant_terms_cond",
    "quadrant_terms_prior",
]

# (name, factor 1 active, factor 2 active). A factor is "active" on the side
# where s * log L < 0, i.e. where min(L^s, 1) = L^s rather than 1.
QUADRANTS = (
    ("V1", False, False),
    ("V2", False, True),
    ("V3", True, False),
    ("V4", True, True),
)


def diff(spec: ProblemSpec, x, h):
    """d(x, h) = g(x + h) - g(x); broadcasts over array-valued x."""
    x = np.asarray(x, dtype=float)
    return evaluate_model(spec, x + h) - evaluate_model(spec, x)


def _sq_norm(d) -> np.ndarray:
    # written as Re{conj(d) d} so that it is bitwise equal to the cross term
    # when both offsets coincide
    return (np.conj(d) * d).real.sum(axis=-1)


def _cross(d1, d2) -> np.ndarray:
    return (np.conj(d1) * d2).real.sum(axis=-1)


def b_cond(spec: ProblemSpec, x, h):
    """b1 = ||d(x, h)||^2 / sigma_v^2."""
    out = _sq_norm(diff(spec, x, h)) / spec.sigma_v**2
    return float(out) if np.ndim(out) == 0 else out


def b_prior(spec: ProblemSpec, x, h):
    """b2 = x h / sigma_x^2 + h^2 / (2 sigma_x^2)."""
    x = np.asarray(x, dtype=float)
    out = (x * h + 0.5 * h * h) / spec.sigma_x**2
    return float(out) if np.ndim(out) == 0 else out


def b_joint(spec: ProblemSpec, x, h):
    return b_cond(spec, x, h) + b_prior(spec, x, h)


def _noise_term(spec: ProblemSpec, v, d):
    v = np.asarray(v, dtype=complex)
    if v.shape[-1] != spec.n_y:
        raise ValueError(f"noise has {v.shape[-1]} components, expected n_y={spec.n_y}")
    return 2.0 * _cross(v, d) / spec.sigma_v**2


def log_ratio_cond(spec: ProblemSpec, v, x, h):
    """log L1 = (2 / sigma_v^2) Re{v^H d} - b1."""
    d = diff(spec, x, h)
    out = _noise_term(spec, v, d) - _sq_norm(d) / spec.sigma_v**2
    return float(out) if np.ndim(out) == 0 else out


def log_ratio_prior(spec: ProblemSpec, x, h):
    """log L2 = -b2."""
    return -b_prior(spec, x, h)


def log_ratio_joint(spec: ProblemSpec, v, x, h):
    """log L = log L1 + log L2."""
    return log_ratio_cond(spec, v, x, h) + log_ratio_prior(spec, x, h)


def _exp_flagged(t):
    # +inf is the overflow sentinel; clipped consumers never need the raw value
    with np.errstate(over="ignore"):
        out = np.exp(t)
    return float(out) if np.ndim(out) == 0 else out


def ratio_joint(spec: ProblemSpec, v, x, h):
    return _exp_flagged(log_ratio_joint(spec, v, x, h))


def ratio_cond(spec: ProblemSpec, v, x, h):
    return _exp_flagged(log_ratio_cond(spec, v, x, h))


def ratio_prior(spec: ProblemSpec, x, h):
    return _exp_flagged(log_ratio_prior(spec, x, h))


@dataclass(frozen=True, eq=False)
class PairGeometry:
    """Difference vectors for two offsets at one state and their Gram entries."""

    d1: np.ndarray
    d2: np.ndarray
    nd1sq: float
    nd2sq: float
    cross: float

    @property
    def gram(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return ((self.nd1sq, self.cross), (self.cross, self.nd2sq))


def pair_geometry(spec: ProblemSpec, x: float, h1: float, h2: float) -> PairGeometry:
    x = float(x)
    g0 = evaluate_model(spec, x)
    d1 = evaluate_model(spec, x + h1) - g0
    d2 = d1 if h2 == h1 else evaluate_model(spec, x + h2) - g0
    return PairGeometry(
        d1=d1,
        d2=d2,
        nd1sq=float(_sq_norm(d1)),
        nd2sq=float(_sq_norm(d2)),
        cross=float(_cross(d1, d2)),
    )


@dataclass(frozen=True)
class QuadrantTerm:
    """One region's contribution exp(log_amp) * P(e*a <= limits) under the tilted law.

    ``mean`` and ``cov`` are already expressed in the sign-flipped coordinates
    e*a, so the CDF request is simply ``(limits, mean, cov)``. ``x_shift`` is
    the prior mean of the outer expectation over x (joint family only; zero
    otherwise). ``base_mean`` is the untilted mean in the same coordinates;
    with it the four CDFs give the partition probabilities of the regions.
    """

    which: str
    log_amp: float
    limits: Tuple[float, float]
    mean: Tuple[float, float]
    cov: Tuple[Tuple[float, float], Tuple[float, float]]
    x_shift: float = 0.0
    base_mean: Tuple[float, float] = (0.0, 0.0)

    def pair_spec(self) -> GaussianPairSpec:
        return GaussianPairSpec(self.limits, self.mean, self.cov)

    def partition_spec(self) -> GaussianPairSpec:
        """CDF request for the region's probability under the untilted law."""
        return GaussianPairSpec(self.limits, self.base_mean, self.cov)


def orientation(s: int, prior: bool = False) -> int:
    """Sign kappa with: factor clipped <=> kappa * (a - t) >= 0.

    For the joint and conditional families log L grows with a, for the prior
    family log L2 = -a. Negative s reverses the direction; s = 0 leaves the
    factor identically 1, and the split is then just a convention.
    """
    k = -1 if s < 0 else 1
    return -k if prior else k


def _build_terms(kappa, thresholds, cov, base_mean, tilt_mean, log_amp, x_shift):
    terms = []
    for which, act1, act2 in QUADRANTS:
        active = (act1, act2)
        e = tuple(kappa[i] if active[i] else -kappa[i] for i in range(2))
        # active regions are strict inequalities; nudging the limit one ulp
        # keeps the four closed/open pieces an exact partition on ties
        limits = tuple(
            math.nextafter(e[i] * thresholds[i], -math.inf) if active[i] else e[i] * thresholds[i]
            for i in range(2)
        )
        m = tilt_mean(active)
        c01 = e[0] * e[1] * cov[0][1]
        terms.append(
            QuadrantTerm(
                which=which,
                log_amp=log_amp(active),
                limits=limits,
                mean=(e[0] * m[0], e[1] * m[1]),
                cov=((cov[0][0], c01), (c01, cov[1][1])),
                x_shift=x_shift(active),
                base_mean=(e[0] * base_mean[0], e[1] * base_mean[1]),
            )
        )
    return tuple(terms)


def _noise_terms(spec: ProblemSpec, x: float, tp: TestPoint, with_prior: bool):
    geo = pair_geometry(spec, x, tp.h1, tp.h2)
    s, h = (tp.s1, tp.s2), (tp.h1, tp.h2)
    gram = geo.gram
    var_v, var_x = spec.sigma_v**2, spec.sigma_x**2
    if with_prior:
        b = [gram[i][i] / var_v + (x * h[i] + 0.5 * h[i] * h[i]) / var_x for i in range(2)]
    else:
        b = [gram[i][i] / var_v for i in range(2)]
    thresholds = tuple(0.5 * var_v * bi for bi in b)
    cov = tuple(tuple(0.5 * var_v * g for g in row) for row in gram)

    def tilt_mean(active):
        return tuple(sum((s[i] * gram[i][j] for i in range(2) if active[i]), 0.0) for j in range(2))

    def log_amp(active):
        out = 0.0
        for i in range(2):
            if active[i]:
                q = gram[i][i] / var_v
                if with_prior:
                    q += 0.5 * h[i] * h[i] / var_x
                out += (s[i] * s[i] - s[i]) * q
        if active[0] and active[1]:
            out += 2.0 * s[0] * s[1] * gram[0][1] / var_v
            if with_prior:
                out += s[0] * s[1] * h[0] * h[1] / var_x
        return out

    def x_shift(active):
        if not with_prior:
            return 0.0
        return -sum((s[i] * h[i] for i in range(2) if active[i]), 0.0)

    kappa = (orientation(s[0]), orientation(s[1]))
    return _build_terms(kappa, thresholds, cov, (0.0, 0.0), tilt_mean, log_amp, x_shift)


def quadrant_terms_joint(spec: ProblemSpec, x: float, tp: TestPoint):
    """Four terms of the inner (noise) integral at state x for the joint moment.

    The tilted regions also carry a Gaussian reweighting of x; its mean is
    returned in ``x_shift`` and the amplitude already includes its constant.
    """
    return _noise_terms(spec, float(x), tp, with_prior=True)


def quadrant_terms_cond(spec: ProblemSpec, x: float, tp: TestPoint):
    """Four terms for the conditional moment at state x (no prior factors)."""
    return _noise_terms(spec, float(x), tp, with_prior=False)


def quadrant_terms_prior(spec: ProblemSpec, tp: TestPoint):
    """Four terms for the prior moment, in the statistic a_i = b2(x, h_i).

    a = (x h_1, x h_2) / sigma_x^2 + (h_1^2, h_2^2) / (2 sigma_x^2) is Gaussian
    with covariance Lambda / sigma_x^2, Lambda = h h^T; tilting by the active
    factors shifts the mean of x to -sum_active s_i h_i.
    """
    s, h = (tp.s1, tp.s2), (tp.h1, tp.h2)
    var_x = spec.sigma_x**2
    lam = ((h[0] * h[0], h[0] * h[1]), (h[1] * h[0], h[1] * h[1]))
    cov = tuple(tuple(v / var_x for v in row) for row in lam)
    base = tuple(0.5 * h[j] * h[j] / var_x for j in range(2))

    def x_mean(active):
        return -sum((s[i] * h[i] for i in range(2) if active[i]), 0.0)

    def tilt_mean(active):
        mu = x_mean(active)
        return tuple((mu * h[j] + 0.5 * h[j] * h[j]) / var_x for j in range(2))

    def log_amp(active):
        out = sum(((s[i] * s[i] - s[i]) * 0.5 * h[i] * h[i] / var_x for i in range(2) if active[i]), 0.0)
        if active[0] and active[1]:
            out += s[0] * s[1] * h[0] * h[1] / var_x
        return out

    kappa = (orientation(s[0], prior=True), orientation(s[1], prior=True))
    return _build_terms(kappa, (0.0, 0.0), cov, base, tilt_mean, log_amp, lambda active: 0.0)
