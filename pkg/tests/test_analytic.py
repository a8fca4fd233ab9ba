import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from clipmoments import (
    ComplexExponential,
    Linear,
    Polynomial,
    ProblemSpec,
    QuadratureRule,
    TestPoint,
    gaussian_expectation,
    mu_dispatch,
    mu_x_general,
    mu_x_special,
    mu_y_given_x_general,
    mu_y_given_x_special,
    mu_yx_general,
    mu_yx_special,
)
from clipmoments.analytic import ANALYTIC_GENERAL, ANALYTIC_SPECIAL, _finish

from _strategies import FAST_RULE, moment_cases, offsets, problem_specs, reals, states

UNIT = ProblemSpec(1.0, 1.0, Linear([1.0]))
EXP_1D = lambda sv: ProblemSpec(1.0, sv, ComplexExponential([1.7], [0.8 + 0.3j]))


def ndtr(z):
    return float(special.ndtr(z))


def single_factor_cond(b_total, b1, s):
    """E[min(L^s, 1)] for log L ~ N(-b_total, 2 b1), from the normal MGF."""
    m, tau = -b_total, math.sqrt(2.0 * b1)
    if tau == 0.0:
        return math.exp(min(s * m, 0.0))
    z = s * m / (abs(s) * tau)
    tail = s * m + 0.5 * s * s * tau * tau + float(special.log_ndtr(-z - abs(s) * tau))
    return ndtr(z) + math.exp(tail)


def single_factor_joint(spec, s, h):
    """Outer scipy quadrature of the single-factor conditional moment."""

    def cond(x):
        b1 = float(np.sum(np.abs(spec.model(np.array(x + h)) - spec.model(np.array(x))) ** 2)) / spec.sigma_v**2
        return single_factor_cond(b1 + (x * h + 0.5 * h * h) / spec.sigma_x**2, b1, s)

    sx = spec.sigma_x
    lim = 13 * sx
    pts = np.linspace(-lim, lim, 201)[1:-1]
    f = lambda x: cond(x) * math.exp(-0.5 * (x / sx) ** 2) / (math.sqrt(2 * math.pi) * sx)
    return integrate.quad(f, -lim, lim, points=pts, epsabs=1e-14, epsrel=1e-13, limit=4000)[0]


# Brute-force integrals of the moment definitions (mpmath for the prior family,
# scipy dblquad over the noise or (state, noise) otherwise).
PRIOR_REFERENCE = [
    ((1.3, 2, -1, 0.7, -1.1), 0.6492496743664746),
    ((1.3, 1, 1, 0.5, 1.5), 0.534763023248962),
    ((0.6, -1, 2, 0.3, 0.9), 0.239590717370242),
    ((2.0, 2, 2, -0.4, 0.8), 0.600957071478953),
]
# (sigma_v, frequency, amplitude, x, s1, s2, h1, h2) for g(x) = amplitude * exp(i frequency x)
COND_REFERENCE = [
    ((0.9, 1.7, 0.8 + 0.3j, 0.4, 2, -1, 0.5, -0.9), 0.43294918896714796),
    ((0.9, 1.7, 0.8 + 0.3j, 0.4, 1, 1, 0.6, 1.2), 0.2196696026394193),
    ((0.9, 1.7, 0.8 + 0.3j, 0.4, -1, 1, 0.3, 0.3), 0.6123794934716573),
    ((1.5, 0.5, 1.0, -1.0, 2, 2, 1.0, -2.0), 0.29336356448375217),
]
# (sigma_x, sigma_v, c, s1, s2, h1, h2) for g(x) = c x
JOINT_REFERENCE = [
    ((0.8, 1.1, 1.2, 2, -1, 0.5, -0.7), 0.4896027544476962),
    ((0.8, 1.1, 1.2, 1, 1, 0.4, 1.0), 0.3063089215164738),
    ((0.8, 1.1, 1.2, -1, 2, 0.3, 0.6), 0.31235047618107037),
    ((1.5, 0.2, 1.0, 2, -1, 0.8, -0.5), 0.0030652526472245726),
]
# High-SNR polynomial model where a 256-node Hermite rule is off by ~1e-4
HARD = ProblemSpec(
    0.9910675724718152,
    1.846930234825905,
    Polynomial([[-0.14438325, 0.04173768, -0.42480298], [-0.25531123, -0.00576653, -0.74268759]]),
)
HARD_REFERENCE = [
    (TestPoint(0, -1, -0.47691796675644227, -0.28090375528569345), 0.9187709004093895),
    (TestPoint(2, 0, 0.7, 0.0), 0.5491345863351305),
    (TestPoint(-1, 0, 1.3, 0.0), 0.9262174750603114),
]


class TestGaussianExpectation:
    def test_constant(self):
        assert gaussian_expectation(lambda x: 1.0, 0.3, 2.0).value == 1.0

    def test_mean(self):
        assert gaussian_expectation(lambda x: x, 3.0, 1.0).value == pytest.approx(3.0, abs=1e-13)

    def test_second_moment(self):
        assert gaussian_expectation(lambda x: x * x, 1.0, 2.0).value == pytest.approx(5.0, abs=1e-12)

    def test_vector_integrand(self):
        res = gaussian_expectation(lambda x: np.array([1.0, x, x**3]), -0.5, 0.7)
        np.testing.assert_allclose(res.value, [1.0, -0.5, -0.125 - 3 * 0.5 * 0.49], atol=1e-13)

    def test_not_converged_flag(self):
        # a step away from the innermost nodes keeps moving the doubled estimates
        rule = QuadratureRule(order=8, max_order=64, fallback=False)
        res = gaussian_expectation(lambda x: float(x > 0.8), 0.0, 1.0, rule)
        assert not res.converged and res.order == 64

    def test_fallback_on_step(self):
        res = gaussian_expectation(lambda x: float(x > 0.8), 0.0, 1.0, QuadratureRule())
        assert res.converged and res.kind == "gauss_kronrod"
        assert res.value == pytest.approx(ndtr(-0.8), abs=1e-10)

    def test_kronrod_kind(self):
        rule = QuadratureRule(kind="gauss_kronrod")
        assert gaussian_expectation(lambda x: x * x, 1.0, 2.0, rule).value == pytest.approx(5.0, abs=1e-10)

    def test_fixed_order(self):
        rule = QuadratureRule(order=3, adaptive=False, max_order=3)
        res = gaussian_expectation(lambda x: x**4, 0.0, 1.0, rule)
        assert res.order == 3 and res.value == pytest.approx(3.0, abs=1e-13)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(order=0), dict(order=513, max_order=513), dict(order=64, max_order=32), dict(kind="simpson"),
         dict(target_abs_tol=0.0)],
    )
    def test_rule_validation(self, kwargs):
        with pytest.raises(ValueError):
            QuadratureRule(**kwargs)

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            gaussian_expectation(lambda x: 1.0, 0.0, 0.0)


class TestPriorMoment:
    def test_no_clipping(self):
        assert mu_x_general(UNIT, TestPoint(0, 0, 0.7, -2.0)).value == pytest.approx(1.0, abs=1e-15)

    def test_single_factor(self):
        ref = 1.0 - math.erf(1.0 / (2.0 * math.sqrt(2.0)))
        assert ref == pytest.approx(0.617075077451974, abs=1e-15)
        for sx in (1.0, 2.5):
            spec = ProblemSpec(sx, 1.0, Linear([1.0]))
            assert mu_x_general(spec, TestPoint(1, 0, sx, sx)).value == pytest.approx(ref, abs=1e-12)
            assert mu_x_special(spec, (1, 0), sx).value == pytest.approx(ref, abs=1e-12)

    def test_double_factor(self):
        # Phi(-1/2) + e Phi(-3/2)
        ref = ndtr(-0.5) + math.e * ndtr(-1.5)
        assert ref == pytest.approx(0.490138339945330, abs=1e-14)
        assert mu_x_general(UNIT, TestPoint(1, 1, 1.0, 1.0)).value == pytest.approx(ref, abs=1e-12)
        assert mu_x_special(UNIT, (1, 1), 1.0).value == pytest.approx(ref, abs=1e-12)

    def test_unit_offset(self):
        assert mu_x_special(UNIT, (1, 1), 0.0).value == 1.0
        assert mu_x_special(UNIT, (1, 0), 0.0).value == 1.0

    @pytest.mark.parametrize("args, ref", PRIOR_REFERENCE)
    def test_reference(self, args, ref):
        sx, s1, s2, h1, h2 = args
        spec = ProblemSpec(sx, 1.0, Linear([1.0]))
        assert mu_x_general(spec, TestPoint(s1, s2, h1, h2)).value == pytest.approx(ref, abs=1e-12)

    def test_diagnostics(self):
        res = mu_x_general(UNIT, TestPoint(2, -1, 0.7, -0.3))
        assert set(res.diagnostics) == {"V1", "V2", "V3", "V4"}
        assert sum(res.diagnostics.values()) == pytest.approx(res.value, abs=1e-15)
        assert res.method == ANALYTIC_GENERAL and res.err == 0.0


class TestConditionalMoment:
    def test_unit_offset(self):
        spec = EXP_1D(0.9)
        assert mu_y_given_x_general(spec, TestPoint(2, -1, 0.0, 0.0, 0.4)).value == 1.0
        assert mu_y_given_x_special(spec, (1, 1), 0.0, 0.4).value == 1.0

    def test_single_factor(self):
        ref = 1.0 - math.erf(0.5)
        assert ref == pytest.approx(0.4795001221869535, abs=1e-15)
        tp = TestPoint(1, 0, 1.0, 1.0, 0.3)
        assert mu_y_given_x_general(UNIT, tp).value == pytest.approx(ref, abs=1e-12)
        assert mu_y_given_x_special(UNIT, (1, 0), 1.0, 0.3).value == pytest.approx(ref, abs=1e-12)

    def test_double_factor(self):
        # Phi(-1/sqrt 2) + e^2 Phi(-3/sqrt 2)
        ref = ndtr(-1 / math.sqrt(2)) + math.e**2 * ndtr(-3 / math.sqrt(2))
        assert ref == pytest.approx(0.364975548172960, abs=1e-14)
        tp = TestPoint(1, 1, 1.0, 1.0, 0.3)
        assert mu_y_given_x_general(UNIT, tp).value == pytest.approx(ref, abs=1e-12)
        assert mu_y_given_x_special(UNIT, (1, 1), 1.0, 0.3).value == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize("args, ref", COND_REFERENCE)
    def test_reference(self, args, ref):
        sv, w, a, x, s1, s2, h1, h2 = args
        spec = ProblemSpec(1.0, sv, ComplexExponential([w], [a]))
        assert mu_y_given_x_general(spec, TestPoint(s1, s2, h1, h2, x)).value == pytest.approx(ref, abs=1e-9)

    def test_requires_state(self):
        with pytest.raises(ValueError, match="x_cond"):
            mu_y_given_x_general(UNIT, TestPoint(1, 0, 1.0, 1.0))

    @given(reals(0.0, 5.0), reals(0.0, 5.0), reals(0.3, 3.0))
    @settings(max_examples=300)
    def test_monotone_decay(self, h_a, h_b, sv):
        spec = ProblemSpec(1.0, sv, Linear([1.0]))
        lo, hi = sorted((h_a, h_b))
        near = mu_y_given_x_special(spec, (1, 0), lo, 0.0).value
        far = mu_y_given_x_special(spec, (1, 0), hi, 0.0).value
        assert far <= near


class TestJointMoment:
    def test_no_clipping(self):
        res = mu_yx_general(EXP_1D(0.7), TestPoint(0, 0, 0.9, -0.4))
        assert res.value == pytest.approx(1.0, abs=1e-9)

    def test_linear_total_variation(self):
        ref = 1.0 - math.erf(math.sqrt(3.0) / (2.0 * math.sqrt(2.0)))
        assert ref == pytest.approx(0.3864762307712327, abs=1e-15)
        assert mu_yx_general(UNIT, TestPoint(1, 0, 1.0, 1.0)).value == pytest.approx(ref, abs=1e-8)
        assert mu_yx_special(UNIT, (1, 0), 1.0).value == pytest.approx(ref, abs=1e-8)

    def test_double_factor_below_single(self):
        v = mu_yx_special(UNIT, (1, 1), 1.0).value
        assert 0.0 < v < 0.3864762307712327
        assert mu_yx_general(UNIT, TestPoint(1, 1, 1.0, 1.0)).value == pytest.approx(v, abs=1e-8)

    def test_unit_offset(self):
        assert mu_yx_special(EXP_1D(0.5), (1, 1), 0.0).value == 1.0
        assert mu_yx_general(EXP_1D(0.5), TestPoint(2, -1, 0.0, 0.0)).value == 1.0

    @pytest.mark.parametrize("args, ref", JOINT_REFERENCE)
    def test_reference(self, args, ref):
        sx, sv, c, s1, s2, h1, h2 = args
        spec = ProblemSpec(sx, sv, Linear([c]))
        assert mu_yx_general(spec, TestPoint(s1, s2, h1, h2)).value == pytest.approx(ref, abs=1e-10)

    @pytest.mark.parametrize("tp, ref", HARD_REFERENCE)
    def test_high_snr_reference(self, tp, ref):
        res = mu_yx_general(HARD, tp)
        assert res.converged
        assert res.value == pytest.approx(ref, abs=1e-10)

    def test_hermite_alone_flags_high_snr(self):
        tp, ref = HARD_REFERENCE[1]
        res = mu_yx_general(HARD, tp, QuadratureRule(fallback=False))
        assert not res.converged

    @given(problem_specs(), st.sampled_from([-1, 1, 2]), offsets)
    @settings(max_examples=40)
    def test_single_factor_oracle(self, spec, s, h):
        ref = single_factor_joint(spec, s, h)
        assert mu_yx_general(spec, TestPoint(s, 0, h, 0.0)).value == pytest.approx(ref, abs=1e-9)


class TestSingleFactorFamilies:
    @given(problem_specs(), st.sampled_from([-1, 1, 2, 3]), offsets, states)
    @settings(max_examples=300)
    def test_conditional_mgf_oracle(self, spec, s, h, x):
        d = spec.model(np.array(x + h)) - spec.model(np.array(x))
        b1 = float(np.sum(np.abs(d) ** 2)) / spec.sigma_v**2
        res = mu_y_given_x_general(spec, TestPoint(s, 0, h, -1.0, x))
        assert res.value == pytest.approx(single_factor_cond(b1, b1, s), abs=1e-12)

    @given(reals(0.3, 3.0), st.sampled_from([-1, 1, 2, 3]), offsets)
    @settings(max_examples=300)
    def test_prior_mgf_oracle(self, sx, s, h):
        # log L2 = -b2 ~ N(-h^2 / (2 sx^2), h^2 / sx^2): same form with b1 = h^2 / (2 sx^2)
        q = h * h / (2 * sx * sx)
        res = mu_x_general(ProblemSpec(sx, 1.0, Linear([1.0])), TestPoint(s, 0, h, 0.4))
        assert res.value == pytest.approx(single_factor_cond(q, q, s), abs=1e-12)


class TestDispatch:
    def test_special_route(self):
        assert mu_dispatch(UNIT, "prior", TestPoint(1, 0, 0.7, 0.7)).method == ANALYTIC_SPECIAL

    def test_swapped_pair(self):
        a = mu_dispatch(UNIT, "joint", TestPoint(0, 1, 0.7, 0.7))
        b = mu_dispatch(UNIT, "joint", TestPoint(1, 0, 0.7, 0.7))
        assert a == b

    def test_general_route(self):
        assert mu_dispatch(UNIT, "prior", TestPoint(2, 1, 0.7, 0.7)).method == ANALYTIC_GENERAL
        assert mu_dispatch(UNIT, "prior", TestPoint(1, 1, 0.7, 0.8)).method == ANALYTIC_GENERAL

    def test_forced_routes(self):
        tp = TestPoint(1, 1, 0.7, 0.7, 0.2)
        g = mu_dispatch(UNIT, "conditional", tp, route="general")
        s = mu_dispatch(UNIT, "conditional", tp, route="special")
        assert g.method == ANALYTIC_GENERAL and s.method == ANALYTIC_SPECIAL
        assert g.value == pytest.approx(s.value, abs=1e-12)
        with pytest.raises(ValueError):
            mu_dispatch(UNIT, "prior", TestPoint(2, 1, 0.7, 0.7), route="special")

    @pytest.mark.parametrize("which", ["posterior", "Joint"])
    def test_unknown_family(self, which):
        with pytest.raises(ValueError):
            mu_dispatch(UNIT, which, TestPoint(1, 0, 1.0, 1.0))

    def test_special_pairs_only(self):
        with pytest.raises(ValueError):
            mu_x_special(UNIT, (2, 1), 1.0)


class TestResultContract:
    def test_clamp_is_recorded(self):
        res = _finish({"V1": 0.7, "V2": 0.3 + 1e-12}, ANALYTIC_GENERAL)
        assert res.value == 1.0 and res.diagnostics["pre_clamp"] > 1.0

    def test_no_clamp_no_record(self):
        assert "pre_clamp" not in _finish({"V1": 0.25, "V2": 0.5}, ANALYTIC_GENERAL).diagnostics

    @given(moment_cases())
    @settings(max_examples=200)
    def test_range_and_terms(self, case):
        family, spec, tp = case
        res = mu_dispatch(spec, family, tp, FAST_RULE, route="general")
        assert 0.0 <= res.value <= 1.0
        assert res.diagnostics.get("pre_clamp", res.value) <= 1.0 + 1e-9
        assert all(v >= -1e-12 for k, v in res.diagnostics.items() if k != "pre_clamp")

    def test_large_exponents_stay_finite(self):
        spec = ProblemSpec(0.5, 0.05, ComplexExponential([2.0, 0.7], [1.0, 0.5j]))
        for s in [(3, -2), (-2, 3), (4, 4)]:
            for family, tp in [("prior", TestPoint(*s, 1.4, -0.9)), ("conditional", TestPoint(*s, 1.4, -0.9, 0.3)),
                               ("joint", TestPoint(*s, 1.4, -0.9))]:
                v = mu_dispatch(spec, family, tp).value
                assert 0.0 <= v <= 1.0 and math.isfinite(v)
