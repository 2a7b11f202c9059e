"""Tests for the pair-moment oracle and its Taylor approximations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heritcc.grm import SigmaPair
from heritcc.moments import (
    ascertained_pair_ratio,
    evaluate_pair_moment,
    exact_pair_expectation,
    first_order_pair_expectation,
    pair_moment_slope,
    pair_probabilities,
    second_order_pair_expectation,
)
from heritcc.numerics import BivariateCovariance, bvn_rect
from heritcc.simulate import design_from_prevalences

INF = math.inf

DESIGN = design_from_prevalences(0.1, 0.5)


def _sp(a_i=0.0, a_j=0.0, b_ij=0.0):
    return SigmaPair(a_i=a_i, a_j=a_j, b_ij=b_ij)


class TestSlopeConstant:
    def test_balanced_design_closed_form(self):
        d = design_from_prevalences(0.5, 0.5)
        assert pair_moment_slope(d) == pytest.approx(2.0 / math.pi, abs=1e-12)

    def test_reference_design(self):
        assert pair_moment_slope(DESIGN) == pytest.approx(0.9505, abs=1e-3)

    def test_invariant_under_study_prevalence_complement(self):
        a = pair_moment_slope(design_from_prevalences(0.1, 0.6))
        b = pair_moment_slope(design_from_prevalences(0.1, 0.4))
        assert a == pytest.approx(b, rel=1e-12)


class TestExactOracle:
    def test_identity_covariance_gives_zero(self):
        # independence: numerator weights cancel exactly
        assert exact_pair_expectation(_sp(), DESIGN, eta=0.7, n_loci=100) == pytest.approx(
            0.0, abs=1e-9
        )

    def test_zero_heritability_gives_zero(self):
        value = exact_pair_expectation(_sp(1.3, -0.8, 2.0), DESIGN, eta=0.0, n_loci=100)
        assert value == pytest.approx(0.0, abs=1e-9)

    def test_cross_check_against_first_order(self):
        # small relatedness: oracle within 1e-3 of slope * eta * g
        value = exact_pair_expectation(_sp(0.0, 0.0, 2.0), DESIGN, eta=0.5, n_loci=10_000)
        assert value == pytest.approx(0.5 * pair_moment_slope(DESIGN) * 0.02, abs=1e-3)
        assert value == pytest.approx(0.009505, abs=1e-3)

    def test_partition_consistency_with_direct_quadrature(self):
        # complement-based discordant probability equals two extra rectangles
        sp = _sp(0.9, -0.4, 1.1)
        eta, n_loci = 0.6, 400
        p11, p00, pneq = pair_probabilities(sp, DESIGN, eta, n_loci)
        root = math.sqrt(n_loci)
        cov = BivariateCovariance(
            1.0 + eta * sp.a_i / root, 1.0 + eta * sp.a_j / root, eta * sp.b_ij / root
        )
        t = DESIGN.threshold
        direct = bvn_rect(-INF, t, t, INF, cov) + bvn_rect(t, INF, -INF, t, cov)
        assert pneq == pytest.approx(direct, abs=1e-8)

    def test_rejects_non_positive_definite_reconstruction(self):
        with pytest.raises(ValueError):
            exact_pair_expectation(_sp(0.0, 0.0, 3.0), DESIGN, eta=1.0, n_loci=4)

    def test_symmetric_in_diagonal_deviations(self):
        a = exact_pair_expectation(_sp(0.8, -0.3, 1.0), DESIGN, eta=0.5, n_loci=200)
        b = exact_pair_expectation(_sp(-0.3, 0.8, 1.0), DESIGN, eta=0.5, n_loci=200)
        assert a == pytest.approx(b, abs=1e-12)


class TestAscertainedRatio:
    @given(
        st.floats(min_value=0.01, max_value=1.0),
        st.floats(min_value=0.01, max_value=1.0),
        st.floats(min_value=0.01, max_value=1.0),
        st.floats(min_value=0.02, max_value=0.5),
        st.floats(min_value=0.0, max_value=1.0),
    )
    @settings(max_examples=80)
    def test_value_stays_in_product_range(self, w1, w2, w3, k, frac):
        # any valid probability triple must land between the smallest and
        # largest values the centered product can take
        total = w1 + w2 + w3
        p11, p00, pneq = w1 / total, w2 / total, w3 / total
        p_study = k + frac * (0.5 - k) if k < 0.5 else k
        design = design_from_prevalences(k, max(p_study, k))
        value = ascertained_pair_ratio(p11, p00, pneq, design)
        p = design.study_prevalence
        low, high = -1.0, max((1 - p) / p, p / (1 - p))
        assert low - 1e-12 <= value <= high + 1e-12


class TestFirstOrder:
    def test_zero_relatedness(self):
        assert first_order_pair_expectation(0.0, DESIGN, 0.9) == 0.0

    def test_reference_value(self):
        assert first_order_pair_expectation(0.02, DESIGN, 0.5) == pytest.approx(
            0.009505, abs=1e-5
        )

    @given(st.floats(min_value=-0.05, max_value=0.05), st.floats(min_value=0.0, max_value=1.0))
    def test_bilinear(self, g, eta):
        one = first_order_pair_expectation(g, DESIGN, eta)
        assert first_order_pair_expectation(2 * g, DESIGN, eta) == pytest.approx(2 * one, rel=1e-12, abs=1e-300)
        assert first_order_pair_expectation(g, DESIGN, 2 * eta) == pytest.approx(2 * one, rel=1e-12, abs=1e-300)


class TestSecondOrder:
    def test_zero_deviations_give_zero(self):
        assert second_order_pair_expectation(_sp(), DESIGN, 0.5, 100) == 0.0

    def test_leading_order_matches_first_order(self):
        # small eta: value / eta converges to the linear slope in b
        sp = _sp(0.7, -0.2, 1.4)
        n_loci = 10_000
        g = sp.b_ij / math.sqrt(n_loci)
        slope_limit = first_order_pair_expectation(g, DESIGN, 1.0)
        eta = 1e-7
        ratio = second_order_pair_expectation(sp, DESIGN, eta, n_loci) / eta
        assert ratio == pytest.approx(slope_limit, rel=1e-5)

    def test_symmetric_under_diagonal_swap(self):
        a = second_order_pair_expectation(_sp(0.8, -0.3, 1.0), DESIGN, 0.5, 100)
        b = second_order_pair_expectation(_sp(-0.3, 0.8, 1.0), DESIGN, 0.5, 100)
        assert a == pytest.approx(b, abs=1e-15)

    def test_rejects_bad_loci_count(self):
        with pytest.raises(ValueError):
            second_order_pair_expectation(_sp(), DESIGN, 0.5, 0)


def _order_errors(approx_fn, svals, eta=0.5, n_loci=1):
    errs = []
    for s in svals:
        sp = _sp(s, s, s)
        exact = exact_pair_expectation(sp, DESIGN, eta, n_loci)
        errs.append(abs(exact - approx_fn(sp, s)))
    return errs


def _fit_exponent(svals, errs):
    slope, _ = np.polyfit(np.log(svals), np.log(errs), 1)
    return slope


class TestTaylorOrders:
    """Error decay of the approximations against the exact oracle.

    All deviations are set equal to a scale s (locus count folded into s).
    """

    def test_first_order_error_is_quadratic_asymptotically(self):
        # the quadratic error coefficient nearly cancels at this design, so
        # clean quartering only emerges once s is small; halving then
        # quarters the error within factor 1.5
        svals = [0.05, 0.025, 0.0125]
        errs = _order_errors(
            lambda sp, s: first_order_pair_expectation(s, DESIGN, 0.5), svals
        )
        for a, b in zip(errs, errs[1:]):
            assert 4.0 / 1.5 <= a / b <= 4.0 * 1.5

    def test_second_order_error_is_cubic_at_spec_scales(self):
        svals = [0.4, 0.2, 0.1]
        errs = _order_errors(
            lambda sp, s: second_order_pair_expectation(sp, DESIGN, 0.5, 1), svals
        )
        exponent = _fit_exponent(svals, errs)
        assert 2.6 <= exponent <= 3.4

    def test_default_variant_is_the_unique_cubic_one(self):
        # the order check selects the default: only the variant with both
        # density-squared factors reaches cubic decay; each alternative is
        # stuck at quadratic
        svals = [0.4, 0.2, 0.1, 0.05]
        results = {}
        for diag_flag in (True, False):
            for mix_flag in (True, False):
                errs = _order_errors(
                    lambda sp, s: second_order_pair_expectation(
                        sp, DESIGN, 0.5, 1,
                        diag_product_density_sq=diag_flag,
                        mixing_density_sq=mix_flag,
                    ),
                    svals,
                )
                results[(diag_flag, mix_flag)] = _fit_exponent(svals, errs)
        assert results[(True, True)] > 2.6
        for key, exponent in results.items():
            if key != (True, True):
                assert exponent < 2.3

    def test_remainder_scaling_in_loci_count(self):
        # fixed unit deviations, growing locus count: error of the quadratic
        # approximation falls by ~10^-3 per 100x loci (three-halves power)
        eta = 0.5
        errors = []
        for n_loci in (100, 10_000, 1_000_000):
            sp = _sp(1.0, 1.0, 1.0)
            exact = exact_pair_expectation(sp, DESIGN, eta, n_loci)
            approx = second_order_pair_expectation(sp, DESIGN, eta, n_loci)
            errors.append(abs(exact - approx))
        for a, b in zip(errors, errors[1:]):
            ratio = b / a
            assert 1e-3 * 0.5 <= ratio <= 1e-3 * 2.0


class TestEvaluatePairMoment:
    def test_bundles_all_three(self):
        pm = evaluate_pair_moment(_sp(0.5, 0.5, 1.0), DESIGN, 0.5, 10_000)
        assert pm.exact == pytest.approx(pm.first_order, abs=5e-4)
        assert abs(pm.second_order - pm.exact) <= abs(pm.first_order - pm.exact) + 1e-12
