"""Closed-form evaluation of the clipped likelihood-ratio moments.

Three families are supported, all of the form E[min(L^s1, 1) * min(L^s2, 1)]
with L evaluated at offsets h1 and h2:

* ``joint``: L is the (y, x) density ratio, expectation over (y, x);
* ``conditional``: L1 = p(y | x + h) / p(y | x) at a fixed state x, over y;
* ``prior``: L2 = p(x + h) / p(x), over x.

The general route sums the four quadrant terms of ``likelihood`` through the
bivariate normal CDF; the joint family adds an outer Gaussian expectation over
x per term, evaluated by Gauss-Hermite quadrature. For s in {(1, 1), (1, 0)}
with equal offsets the Gram matrices are singular and the moments reduce to
univariate expressions; those are implemented separately as the special route
so that the two can be cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy import special as sp

from .likelihood import (
    QUADRANTS,
    diff,
    quadrant_terms_cond,
    quadrant_terms_joint,
    quadrant_terms_prior,
)
from .model import ProblemSpec, TestPoint
from .special import phi1, stable_exp_phi1, stable_exp_phi2

__all__ = [
    "FAMILIES",
    "MuResult",
    "QuadratureRule",
    "Expectation",
    "gaussian_expectation",
    "mu_x_general",
    "mu_y_given_x_general",
    "mu_yx_general",
    "mu_x_special",
    "mu_y_given_x_special",
    "mu_yx_special",
    "mu_dispatch",
]

FAMILIES = ("joint", "conditional", "prior")
QUADRATURE_KINDS = ("gauss_hermite", "gauss_kronrod")
SPECIAL_PAIRS = ((1, 1), (1, 0))

ANALYTIC_GENERAL = "analytic_general"
ANALYTIC_SPECIAL = "analytic_special"

# Gauss-Hermite nodes whose normalized weight is below this are skipped; every
# integrand here is bounded by a ratio of Gaussian densities, so they add
# nothing at double precision.
_MIN_WEIGHT = 1e-250
# Quadrature integrands only need term values to this absolute accuracy.
_NEGLIGIBLE = 1e-20
# Half-width, in prior standard deviations, of the Gauss-Kronrod window.
_WINDOW_SIGMAS = 13.0


@dataclass(frozen=True)
class MuResult:
    """A moment value in [0, 1] and how it was obtained.

    ``diagnostics`` holds the additive contributions that were summed (before
    clamping). If the sum left [0, 1] the unclamped value is recorded under
    ``pre_clamp``.
    """

    value: float
    method: str
    err: float = 0.0
    diagnostics: Dict[str, float] = field(default_factory=dict)
    converged: bool = True


@dataclass(frozen=True)
class QuadratureRule:
    """Outer-expectation rule.

    The default is adaptive Gauss-Hermite (order doubling from ``order`` to
    ``max_order``). At high SNR the integrands become nearly discontinuous in
    x and Hermite sums converge very slowly; with ``fallback`` a rule that
    misses ``target_abs_tol`` at ``max_order`` is replaced by adaptive
    Gauss-Kronrod on a finite window. ``kind="gauss_kronrod"`` uses that
    directly.
    """

    kind: str = "gauss_hermite"
    order: int = 32
    adaptive: bool = True
    max_order: int = 256
    target_abs_tol: float = 1e-10
    fallback: bool = True

    def __post_init__(self):
        if self.kind not in QUADRATURE_KINDS:
            raise ValueError(f"quadrature kind must be one of {QUADRATURE_KINDS}, got {self.kind!r}")
        if isinstance(self.order, bool) or not (1 <= int(self.order) <= 512):
            raise ValueError(f"order must be in [1, 512], got {self.order!r}")
        if not (int(self.order) <= int(self.max_order) <= 512):
            raise ValueError(f"max_order must be in [order, 512], got {self.max_order!r}")
        if not self.target_abs_tol > 0:
            raise ValueError("target_abs_tol must be positive")


class Expectation(NamedTuple):
    value: object  # float, or ndarray for vector-valued integrands
    order: int  # last Hermite order; 0 for Gauss-Kronrod
    converged: bool
    delta: float  # last doubling change (Hermite) or error estimate (Kronrod)
    kind: str = "gauss_hermite"


@lru_cache(maxsize=None)
def _hermite(order: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = sp.roots_hermite(order)
    w = w / math.sqrt(math.pi)
    keep = w >= _MIN_WEIGHT
    return t[keep], w[keep]


def _gh_sum(f, mean: float, sigma: float, order: int):
    t, w = _hermite(order)
    xs = mean + math.sqrt(2.0) * sigma * t
    vals = np.array([f(float(x)) for x in xs], dtype=float)
    # fixed summation order over nodes; dividing by the same rule applied to 1
    # makes constants (the h = 0 case in particular) come out exact
    return np.tensordot(w, vals, axes=(0, 0)) / np.tensordot(w, np.ones_like(w), axes=(0, 0))


def gaussian_expectation(
    f: Callable[[float], object],
    mean: float,
    sigma: float,
    rule: Optional[QuadratureRule] = None,
) -> Expectation:
    """E[f(X)] for X ~ N(mean, sigma^2).

    ``f`` may return a scalar or a fixed-length vector; convergence is judged
    on the sum of the components.
    """
    rule = rule or QuadratureRule()
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    if rule.kind == "gauss_kronrod":
        return _gk_expectation(f, mean, sigma, rule.target_abs_tol)
    order = int(rule.order)
    est = _gh_sum(f, mean, sigma, order)
    if not rule.adaptive:
        return Expectation(_unwrap(est), order, True, math.nan)
    delta, converged = math.inf, False
    while order * 2 <= rule.max_order:
        order *= 2
        new = _gh_sum(f, mean, sigma, order)
        delta = abs(float(np.sum(new)) - float(np.sum(est)))
        est = new
        if delta <= rule.target_abs_tol:
            converged = True
            break
    if not converged and rule.fallback:
        return _gk_expectation(f, mean, sigma, rule.target_abs_tol)
    return Expectation(_unwrap(est), order, converged, delta)


def _gk_expectation(f, mean: float, sigma: float, tol: float) -> Expectation:
    lo = mean - _WINDOW_SIGMAS * sigma
    hi = mean + _WINDOW_SIGMAS * sigma
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

    def g(x):
        z = (x - mean) / sigma
        return np.asarray(f(float(x)), dtype=float) * (norm * math.exp(-0.5 * z * z))

    # seeding the subdivision every 2 sigma keeps narrow features in the
    # tails from slipping between the first Kronrod nodes
    grid = lo + 2.0 * sigma * np.arange(1, int(round((hi - lo) / (2.0 * sigma))))
    points = [float(p) for p in grid]
    val, err, info = integrate.quad_vec(
        g, lo, hi, epsabs=0.1 * tol, epsrel=0.0, norm="max", limit=4000, points=points, full_output=True
    )
    return Expectation(_unwrap(val), 0, bool(info.success) and err <= tol, float(err), "gauss_kronrod")


def _unwrap(est):
    return float(est) if np.ndim(est) == 0 else est


def _finish(parts: Dict[str, float], method: str, converged: bool = True) -> MuResult:
    raw = 0.0
    for v in parts.values():
        raw += v
    value = min(1.0, max(0.0, raw))
    diagnostics = dict(parts)
    if value != raw:
        diagnostics["pre_clamp"] = raw
    return MuResult(value=value, method=method, err=0.0, diagnostics=diagnostics, converged=converged)


def _term_value(term) -> float:
    return stable_exp_phi2(term.log_amp, term.pair_spec())


# ---------------------------------------------------------------------------
# general route


def mu_x_general(spec: ProblemSpec, tp: TestPoint) -> MuResult:
    """Prior moment as a four-term sum of amplitude times bivariate CDF."""
    terms = quadrant_terms_prior(spec, tp)
    return _finish({t.which: _term_value(t) for t in terms}, ANALYTIC_GENERAL)


def mu_y_given_x_general(spec: ProblemSpec, tp: TestPoint) -> MuResult:
    """Conditional moment at the state ``tp.x_cond``."""
    if tp.x_cond is None:
        raise ValueError("the conditional moment needs tp.x_cond")
    terms = quadrant_terms_cond(spec, tp.x_cond, tp)
    return _finish({t.which: _term_value(t) for t in terms}, ANALYTIC_GENERAL)


def _log_shift_ratio(x: float, shift: float, var_x: float) -> float:
    """log N(x; shift, var_x) - log N(x; 0, var_x)."""
    return (2.0 * x - shift) * shift / (2.0 * var_x)


def mu_yx_general(spec: ProblemSpec, tp: TestPoint, rule: Optional[QuadratureRule] = None) -> MuResult:
    """Joint moment: the four quadrant terms averaged over the state.

    Each tilted term is an expectation over a shifted prior N(x_shift,
    sigma_x^2). All four are evaluated under N(0, sigma_x^2) with the density
    ratio folded into the log amplitude: the shifted means can sit many
    standard deviations away from where the integrand has its mass, and the
    per-node sum of the reweighted terms is the conditional moment at x,
    which stays in [0, 1].
    """
    var_x = spec.sigma_x**2

    def f(x):
        return np.array(
            [
                stable_exp_phi2(t.log_amp + _log_shift_ratio(x, t.x_shift, var_x), t.pair_spec(), _NEGLIGIBLE)
                for t in quadrant_terms_joint(spec, x, tp)
            ]
        )

    res = gaussian_expectation(f, 0.0, spec.sigma_x, rule)
    parts = {name: float(v) for (name, _, _), v in zip(QUADRANTS, res.value)}
    return _finish(parts, ANALYTIC_GENERAL, res.converged)


# ---------------------------------------------------------------------------
# special route: s in {(1, 1), (1, 0)}, h1 = h2


def _check_pair(s_pair) -> Tuple[int, int]:
    s_pair = tuple(int(s) for s in s_pair)
    if s_pair not in SPECIAL_PAIRS:
        raise ValueError(f"special route supports s in {SPECIAL_PAIRS}, got {s_pair}")
    return s_pair


def _below(t: float) -> float:
    # strict inequality a < t expressed as a <= largest float below t
    return math.nextafter(t, -math.inf)


def _amp_phi1(log_amp: float, xi: float, mean: float, var: float) -> float:
    if var == 0:
        return math.exp(log_amp) if xi >= mean else 0.0
    return stable_exp_phi1(log_amp, xi, mean, var)


def _noise_pieces(spec: ProblemSpec, x: float, h: float, s_pair, with_prior: bool):
    """(clipped, active) contributions of the inner integral over v at x.

    With the prior terms included, the active piece is reweighted from its
    shifted prior (mean -2h or -h) to N(0, sigma_x^2).
    """
    d = diff(spec, x, h)
    nd = float((np.conj(d) * d).real.sum())
    var_v = spec.sigma_v**2
    b = nd / var_v
    if with_prior:
        b += (x * h + 0.5 * h * h) / spec.sigma_x**2
    t = 0.5 * var_v * b
    var = 0.5 * var_v * nd
    clipped = phi1(-t, 0.0, var)
    if s_pair == (1, 1):
        log_amp = 2.0 * nd / var_v
        if with_prior:
            log_amp += h * h / spec.sigma_x**2 + _log_shift_ratio(x, -2.0 * h, spec.sigma_x**2)
        active = _amp_phi1(log_amp, _below(t), 2.0 * nd, var)
    else:
        log_amp = _log_shift_ratio(x, -h, spec.sigma_x**2) if with_prior else 0.0
        active = _amp_phi1(log_amp, _below(t), nd, var)
    return clipped, active


def mu_x_special(spec: ProblemSpec, s_pair, h: float) -> MuResult:
    s_pair = _check_pair(s_pair)
    h = float(h)
    var_x = spec.sigma_x**2
    if s_pair == (1, 0):
        value = float(sp.erfc(abs(h) / (2.0 * math.sqrt(2.0) * spec.sigma_x)))
        return _finish({"closed_form": value}, ANALYTIC_SPECIAL)
    q = h * h / var_x
    clipped = phi1(0.0, 0.5 * q, q)
    active = _amp_phi1(q, _below(0.0), 1.5 * q, q)
    return _finish({"clipped": clipped, "active": active}, ANALYTIC_SPECIAL)


def mu_y_given_x_special(spec: ProblemSpec, s_pair, h: float, x: float) -> MuResult:
    s_pair = _check_pair(s_pair)
    h, x = float(h), float(x)
    if s_pair == (1, 0):
        d = diff(spec, x, h)
        nd = float((np.conj(d) * d).real.sum())
        value = float(sp.erfc(math.sqrt(nd) / (2.0 * spec.sigma_v)))
        return _finish({"closed_form": value}, ANALYTIC_SPECIAL)
    clipped, active = _noise_pieces(spec, x, h, s_pair, with_prior=False)
    return _finish({"clipped": clipped, "active": active}, ANALYTIC_SPECIAL)


def mu_yx_special(spec: ProblemSpec, s_pair, h: float, rule: Optional[QuadratureRule] = None) -> MuResult:
    """Joint moment with coinciding offsets: two univariate terms averaged over x."""
    s_pair = _check_pair(s_pair)
    h = float(h)
    res = gaussian_expectation(
        lambda x: np.array(_noise_pieces(spec, x, h, s_pair, True)), 0.0, spec.sigma_x, rule
    )
    clipped, active = (float(v) for v in res.value)
    return _finish({"clipped": clipped, "active": active}, ANALYTIC_SPECIAL, res.converged)


# ---------------------------------------------------------------------------


def mu_dispatch(
    spec: ProblemSpec,
    which: str,
    tp: TestPoint,
    rule: Optional[QuadratureRule] = None,
    route: str = "auto",
) -> MuResult:
    """Evaluate one moment, preferring the reduced formulas when they apply.

    ``route`` is "auto", "general" or "special"; (0, 1) is evaluated as the
    swapped (1, 0) moment.
    """
    if which not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {which!r}")
    if route not in ("auto", "general", "special"):
        raise ValueError(f"unknown route {route!r}")
    if which == "conditional" and tp.x_cond is None:
        raise ValueError("the conditional moment needs tp.x_cond")
    pair = (tp.s1, tp.s2)
    if pair == (0, 1):
        pair = (1, 0)
    special_ok = pair in SPECIAL_PAIRS and tp.h1 == tp.h2
    if route == "special" and not special_ok:
        raise ValueError(f"no reduced formula for s={pair} with h1={tp.h1}, h2={tp.h2}")
    if special_ok and route != "general":
        if which == "prior":
            return mu_x_special(spec, pair, tp.h1)
        if which == "conditional":
            return mu_y_given_x_special(spec, pair, tp.h1, tp.x_cond)
        return mu_yx_special(spec, pair, tp.h1, rule)
    if which == "prior":
        return mu_x_general(spec, tp)
    if which == "conditional":
        return mu_y_given_x_general(spec, tp)
    return mu_yx_general(spec, tp, rule)
