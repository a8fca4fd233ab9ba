"""Gaussian special functions: erf family, univariate and bivariate normal CDFs.

The bivariate CDF follows Genz's fixed-node Gauss-Legendre evaluation of the
Drezner-Wesolowsky correlation integral (BVND), which is accurate to about
1e-16 absolute for every |rho| < 1. Singular covariances (|rho| = 1 or a zero
variance) are reduced exactly to univariate expressions, because the special
cases of the moment formulas live on that manifold.

Large amplitudes multiply tiny probabilities in the moment formulas, so
``log_phi2`` and ``stable_exp_phi2`` work in log space and fall back to a
peak-centred quadrature of the log-concave correlation integrand when the
direct value would lose relative accuracy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "CovarianceError",
    "ErfValues",
    "GaussianPairSpec",
    "erf_family",
    "phi1",
    "log_phi1",
    "phi2",
    "log_phi2",
    "stable_exp_phi1",
    "stable_exp_phi2",
    "bvn_lower",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi

# Standardized limits beyond this are 0/1 to double precision in the direct path.
_Z_CLIP = 40.0
# Guards against inf/nan when a variance is subnormal.
_Z_HUGE = 1e150
# Genz's result has ~1e-16 absolute error; below this value switch to quadrature
# when relative accuracy is needed.
_DIRECT_LOG_MIN_P = 1e-3
# exp(log_amp) * (1e-16 absolute error) stays below ~1e-14 up to this amplitude.
_DIRECT_MAX_LOG_AMP = math.log(100.0)
# Window half-depth (in log units) for the tail quadrature.
_LOG_WINDOW = 40.0


class CovarianceError(ValueError):
    """Covariance is not symmetric positive semidefinite within tolerance."""


class ErfValues(NamedTuple):
    erf: float
    erfc: float
    scaled_erfc: float


def erf_family(z: float) -> ErfValues:
    """erf(z), erfc(z) and the scaled complement exp(z^2) * erfc(z)."""
    z = float(z)
    return ErfValues(float(special.erf(z)), float(special.erfc(z)), float(special.erfcx(z)))


def phi1(xi: float, mean: float, var: float) -> float:
    """Univariate normal CDF P(a <= xi) for a ~ N(mean, var).

    ``var == 0`` gives the right-continuous step 1[xi >= mean].
    """
    if var < 0:
        raise ValueError(f"variance must be nonnegative, got {var!r}")
    if var == 0:
        return 1.0 if xi >= mean else 0.0
    return float(special.ndtr((xi - mean) / math.sqrt(var)))


def log_phi1(xi: float, mean: float, var: float) -> float:
    if var < 0:
        raise ValueError(f"variance must be nonnegative, got {var!r}")
    if var == 0:
        return 0.0 if xi >= mean else -math.inf
    return float(special.log_ndtr((xi - mean) / math.sqrt(var)))


def stable_exp_phi1(log_amp: float, xi: float, mean: float, var: float) -> float:
    """exp(log_amp) * phi1(xi, mean, var) without intermediate overflow."""
    if not var > 0:
        raise ValueError(f"variance must be positive, got {var!r}")
    z = (xi - mean) / math.sqrt(var)
    if z >= -8.0 and log_amp < 700.0:
        return math.exp(log_amp) * float(special.ndtr(z))
    return _exp_or_inf(log_amp + float(special.log_ndtr(z)))


def _exp_or_inf(t: float) -> float:
    if t == -math.inf:
        return 0.0
    return math.exp(t) if t < 709.78 else math.inf


# ---------------------------------------------------------------------------
# bivariate normal


@dataclass(frozen=True)
class GaussianPairSpec:
    """One request P(a1 <= upper[0], a2 <= upper[1]) for a ~ N(mean, cov)."""

    upper: tuple
    mean: tuple
    cov: tuple

    def __post_init__(self):
        try:
            upper = tuple(float(u) for u in self.upper)
            mean = tuple(float(m) for m in self.mean)
            rows = [tuple(float(c) for c in row) for row in self.cov]
        except TypeError:
            raise ValueError("GaussianPairSpec needs 2-vectors and a 2x2 covariance") from None
        if len(upper) != 2 or len(mean) != 2 or len(rows) != 2 or any(len(r) != 2 for r in rows):
            raise ValueError("GaussianPairSpec needs 2-vectors and a 2x2 covariance")
        (c00, c01), (c10, c11) = rows
        if not all(map(math.isfinite, (c00, c01, c10, c11) + mean)):
            raise CovarianceError("mean and covariance must be finite")
        if any(math.isnan(u) for u in upper):
            raise ValueError("upper limits must not be NaN")
        if c01 != c10:
            scale = max(abs(c01), abs(c10), 1e-300)
            if abs(c01 - c10) > 1e-12 * scale:
                raise CovarianceError("covariance is not symmetric")
            c01 = c10 = 0.5 * (c01 + c10)
        if c00 < 0 or c11 < 0:
            raise CovarianceError("covariance has a negative variance")
        bound = math.sqrt(c00) * math.sqrt(c11)
        if abs(c01) > bound + 1e-9 * max(1.0, bound):
            raise CovarianceError(
                f"covariance is not PSD: |{c01!r}| > sqrt({c00!r} * {c11!r})"
            )
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", ((c00, c01), (c01, c11)))

    def flipped(self, signs: Sequence[int], upper=None) -> "GaussianPairSpec":
        """The same law under a -> diag(signs) a."""
        e0, e1 = signs
        (c00, c01), (_, c11) = self.cov
        up = self.upper if upper is None else upper
        return GaussianPairSpec(
            (e0 * up[0], e1 * up[1]),
            (e0 * self.mean[0], e1 * self.mean[1]),
            ((c00, e0 * e1 * c01), (e0 * e1 * c01, c11)),
        )


class _Reduced(NamedTuple):
    kind: str  # "regular", "plus", "minus", "row", "point"
    z1: float
    z2: float
    rho: float


def _standardize(spec: GaussianPairSpec) -> _Reduced:
    (c00, c01), (_, c11) = spec.cov
    (u1, u2), (m1, m2) = spec.upper, spec.mean
    if c00 == 0 and c11 == 0:
        return _Reduced("point", float(u1 >= m1), float(u2 >= m2), 0.0)
    if c00 == 0:
        return _Reduced("row", float(u1 >= m1), _z(u2 - m2, c11), 0.0)
    if c11 == 0:
        return _Reduced("row", float(u2 >= m2), _z(u1 - m1, c00), 0.0)
    z1, z2 = _z(u1 - m1, c00), _z(u2 - m2, c11)
    prod = c00 * c11
    den = math.sqrt(prod) if 0 < prod < math.inf else math.sqrt(c00) * math.sqrt(c11)
    rho = min(1.0, max(-1.0, c01 / den))
    if rho == 1.0:
        return _Reduced("plus", z1, z2, rho)
    if rho == -1.0:
        return _Reduced("minus", z1, z2, rho)
    return _Reduced("regular", z1, z2, rho)


def _z(diff: float, var: float) -> float:
    z = diff / math.sqrt(var)
    if math.isnan(z):
        return 0.0
    return min(_Z_HUGE, max(-_Z_HUGE, z))


def _ndtr(z: float) -> float:
    return float(special.ndtr(z))


def _interval(lo: float, hi: float) -> float:
    """P(lo <= Z <= hi) for standard normal Z, accurate in both tails."""
    if hi <= lo:
        return 0.0
    if lo >= 0:
        return _ndtr(-lo) - _ndtr(-hi)
    if hi <= 0:
        return _ndtr(hi) - _ndtr(lo)
    return 0.5 * (float(special.erf(hi / math.sqrt(2.0))) - float(special.erf(lo / math.sqrt(2.0))))


def _log_interval(lo: float, hi: float) -> float:
    if hi <= lo:
        return -math.inf
    if lo < 0 < hi:
        return math.log(_interval(lo, hi))
    if lo >= 0:
        lo, hi = -hi, -lo
    # both limits <= 0: log(Phi(hi) - Phi(lo))
    a, b = float(special.log_ndtr(hi)), float(special.log_ndtr(lo))
    if b == -math.inf:
        return a
    return a + math.log1p(-math.exp(b - a))


# Genz's Gauss-Legendre half-rules (weights, abscissae) for |rho| bands.
_GL = {
    3: (
        (0.1713244923791705, 0.3607615730481384, 0.4679139345726904),
        (0.9324695142031522, 0.6612093864662647, 0.2386191860831970),
    ),
    6: (
        (0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
         0.2031674267230659, 0.2334925365383547, 0.2491470458134029),
        (0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
         0.5873179542866171, 0.3678314989981802, 0.1252334085114692),
    ),
    10: (
        (0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
         0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
         0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
         0.1527533871307259),
        (0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
         0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
         0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
         0.07652652113349733),
    ),
}
_RULES = {}
for _n, (_w, _x) in _GL.items():
    _RULES[_n] = tuple(zip(_w + _w, tuple(1.0 - v for v in _x) + tuple(1.0 + v for v in _x)))


def _bvn_upper(h: float, k: float, r: float) -> float:
    """P(X > h, Y > k) for standard bivariate normal with correlation |r| < 1."""
    if abs(r) < 0.3:
        rule = _RULES[3]
    elif abs(r) < 0.75:
        rule = _RULES[6]
    else:
        rule = _RULES[10]
    hk = h * k
    if abs(r) < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        tot = 0.0
        for w, x in rule:
            sn = math.sin(asr * x)
            tot += w * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = tot * asr / _TWO_PI + _ndtr(-h) * _ndtr(-k)
    else:
        if r < 0:
            k = -k
            hk = -hk
        one_minus_r2 = (1.0 - r) * (1.0 + r)
        a = math.sqrt(one_minus_r2)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        bvn = 0.0
        asr = -0.5 * (bs / one_minus_r2 + hk)
        if asr > -100.0:
            bvn = a * math.exp(asr) * (
                1.0 - c * (bs - one_minus_r2) * (1.0 - d * bs) / 3.0 + c * d * one_minus_r2**2
            )
        if hk > -100.0:
            b = math.sqrt(bs)
            sp = math.sqrt(_TWO_PI) * _ndtr(-b / a)
            bvn -= math.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        a *= 0.5
        tot = 0.0
        for w, x in rule:
            xs = (a * x) ** 2
            asr = -0.5 * (bs / xs + hk)
            if asr > -100.0:
                sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
                rs = math.sqrt(1.0 - xs)
                ep = math.exp(-0.5 * hk * xs / (1.0 + rs) ** 2) / rs
                tot += w * math.exp(asr) * (sp - ep)
        bvn = (a * tot - bvn) / _TWO_PI
        if r > 0:
            bvn += _ndtr(-max(h, k))
        elif h >= k:
            bvn = -bvn
        else:
            span = _ndtr(k) - _ndtr(h) if h < 0 else _ndtr(-h) - _ndtr(-k)
            bvn = span - bvn
    return min(1.0, max(0.0, bvn))


def bvn_lower(z1: float, z2: float, rho: float) -> float:
    """Standard bivariate normal CDF P(Z1 <= z1, Z2 <= z2) for |rho| < 1."""
    z1 = min(_Z_CLIP, max(-_Z_CLIP, z1))
    z2 = min(_Z_CLIP, max(-_Z_CLIP, z2))
    return _bvn_upper(-z1, -z2, rho)


def phi2(spec: GaussianPairSpec) -> float:
    """Bivariate normal CDF with exact singular-covariance branches."""
    red = _standardize(spec)
    if red.kind == "point":
        return red.z1 * red.z2
    if red.kind == "row":
        return red.z1 * _ndtr(red.z2) if red.z1 else 0.0
    if red.kind == "plus":
        return _ndtr(min(red.z1, red.z2))
    if red.kind == "minus":
        return _interval(-red.z2, red.z1)
    return bvn_lower(red.z1, red.z2, red.rho)


def log_phi2(spec: GaussianPairSpec) -> float:
    """log of phi2 with relative accuracy in the far lower tail."""
    red = _standardize(spec)
    if red.kind == "point":
        return 0.0 if red.z1 and red.z2 else -math.inf
    if red.kind == "row":
        return float(special.log_ndtr(red.z2)) if red.z1 else -math.inf
    if red.kind == "plus":
        return float(special.log_ndtr(min(red.z1, red.z2)))
    if red.kind == "minus":
        return _log_interval(-red.z2, red.z1)
    p = bvn_lower(red.z1, red.z2, red.rho)
    if p >= _DIRECT_LOG_MIN_P:
        return math.log(p)
    return _log_bvn_quad(red.z1, red.z2, red.rho)


def stable_exp_phi2(log_amp: float, spec: GaussianPairSpec, negligible: float = 0.0) -> float:
    """exp(log_amp) * phi2(spec) without overflow or tail cancellation.

    Products provably below ``negligible`` (via the bound
    phi2 <= min of the two marginal CDFs) are returned from the direct
    estimate, clipped to that bound, without the tail quadrature.
    """
    if log_amp <= _DIRECT_MAX_LOG_AMP:
        p = phi2(spec)
        return math.exp(log_amp) * p if p > 0 else 0.0
    if negligible > 0:
        red = _standardize(spec)
        if red.kind == "regular":
            log_bound = log_amp + float(special.log_ndtr(min(red.z1, red.z2)))
            if log_bound < math.log(negligible):
                p = bvn_lower(red.z1, red.z2, red.rho)
                return math.exp(min(log_bound, log_amp + math.log(p))) if p > 0 else 0.0
    return _exp_or_inf(log_amp + log_phi2(spec))


_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _inv_mills(c: float) -> float:
    # phi(c) / Phi(c); the erfcx form has no cancellation for c << 0
    return _SQRT_2_OVER_PI / float(special.erfcx(-c / math.sqrt(2.0)))


def _log_bvn_quad(z1: float, z2: float, rho: float) -> float:
    """log P(Z1 <= z1, Z2 <= z2) by integrating phi(t) Phi((z2 - rho t)/s) over t <= z1.

    The log integrand is concave; it is integrated over the window where it is
    within _LOG_WINDOW of its maximum, after rescaling by that maximum.
    """
    s = math.sqrt((1.0 - rho) * (1.0 + rho))

    def f(t):
        return -0.5 * t * t - _LOG_SQRT_2PI + float(special.log_ndtr((z2 - rho * t) / s))

    def fprime(t):
        return -t - (rho / s) * _inv_mills((z2 - rho * t) / s)

    # mode of f on (-inf, z1]
    if fprime(z1) >= 0:
        t_star = z1
    else:
        step = 1.0
        left = z1 - step
        while fprime(left) <= 0:
            step *= 2.0
            left = z1 - step
        t_star = optimize.brentq(fprime, left, z1, xtol=1e-14, rtol=1e-15, maxiter=200)
    f_star = f(t_star)
    if f_star == -math.inf:
        return -math.inf
    level = f_star - _LOG_WINDOW

    def excess(t):
        return f(t) - level

    step = 1.0
    while excess(t_star - step) > 0:
        step *= 2.0
    t_lo = optimize.brentq(excess, t_star - step, t_star - step / 2 if step > 1 else t_star, xtol=1e-12)
    t_hi = z1
    if t_star < z1:
        step = 1.0
        while t_star + step < z1 and excess(t_star + step) > 0:
            step *= 2.0
        if t_star + step < z1:
            t_hi = optimize.brentq(excess, t_star + (step / 2 if step > 1 else 0.0), t_star + step, xtol=1e-12)
    # the Phi factor switches on a scale s/|rho| around z2/rho; quad must see it
    candidates = [t_star]
    if rho:
        t0, width = z2 / rho, s / abs(rho)
        candidates += [t0 + k * width for k in (-30, -10, -3, -1, 0, 1, 3, 10, 30)]
    points = sorted(p for p in candidates if t_lo < p < t_hi)
    with warnings.catch_warnings():
        # roundoff warnings near the 1e-12 target are expected and harmless
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(
            lambda t: math.exp(f(t) - f_star),
            t_lo,
            t_hi,
            points=points or None,
            epsabs=0.0,
            epsrel=1e-12,
            limit=500,
        )
    if val <= 0:
        return -math.inf
    return f_star + math.log(val)
