import math

import numpy as np
import pytest

from models import (ALTERNATIVE, NULL, SHIFTED_MEAN, SPIKED_COVARIANCE, ProblemInstance,
                    expected_query_value, h_value, likelihood_ratio_point,
                    log_likelihood_ratio, query_moments, sample, std_normal_cdf)
from oracle import (constant_query, coordinate_square_threshold, coordinate_threshold,
                    custom_query, subset_sum_threshold)
from structure_classes import IndexSet, StructureClass, enumerate_class, overlap
from utils import DimensionMismatchError


def _instance(model, d, s, beta, alpha=1.0, planted=None):
    return ProblemInstance(model, StructureClass.sparse(d, s), beta, alpha, planted)


class TestProblemInstance:
    def test_spiked_needs_beta_below_one(self):
        with pytest.raises(ValueError):
            _instance(SPIKED_COVARIANCE, 6, 2, 1.0)

    def test_spiked_pins_alpha(self):
        assert _instance(SPIKED_COVARIANCE, 6, 2, 0.5, alpha=0.3).alpha == 1.0

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            _instance(SHIFTED_MEAN, 6, 2, 0.5, alpha=1.5)

    def test_planted_must_be_member(self):
        with pytest.raises(DimensionMismatchError):
            _instance(SHIFTED_MEAN, 6, 2, 0.5, planted=IndexSet((1, 2), 7))


class TestSample:
    def test_null_is_standard_normal(self, rng):
        instance = _instance(SHIFTED_MEAN, 5, 2, 1.0)
        data = sample(instance, NULL, 40_000, rng)
        assert data.shape == (40_000, 5)
        assert np.all(np.abs(data.mean(axis=0)) < 4 / math.sqrt(40_000))

    def test_shifted_mean_column(self, rng):
        instance = _instance(SHIFTED_MEAN, 4, 1, 0.5, planted=IndexSet((1,), 4))
        data = sample(instance, ALTERNATIVE, 100_000, rng)
        assert abs(data[:, 0].mean() - 0.5) < 4 / math.sqrt(100_000)
        assert abs(data[:, 1].mean()) < 4 / math.sqrt(100_000)

    def test_mixture_weight(self, rng):
        instance = _instance(SHIFTED_MEAN, 4, 1, 2.0, alpha=0.25)
        data = sample(instance, IndexSet((3,), 4), 100_000, rng)
        # mean of the planted coordinate is alpha * beta*
        assert abs(data[:, 2].mean() - 0.5) < 4 * math.sqrt(1.75 / 100_000)

    def test_spiked_variance(self, rng):
        instance = _instance(SPIKED_COVARIANCE, 4, 2, 0.5)
        data = sample(instance, IndexSet((1, 2), 4), 100_000, rng)
        assert abs(data[:, 0].var() - 1.25) < 4 * math.sqrt(2 * 1.25 ** 2 / 100_000)
        covariance = np.mean(data[:, 0] * data[:, 1])
        assert abs(covariance - 0.25) < 0.02

    def test_alternative_needs_planted(self, rng):
        with pytest.raises(ValueError):
            sample(_instance(SHIFTED_MEAN, 4, 1, 0.5), ALTERNATIVE, 10, rng)

    def test_positive_n(self, rng):
        with pytest.raises(ValueError):
            sample(_instance(SHIFTED_MEAN, 4, 1, 0.5), NULL, 0, rng)


class TestLikelihoodRatio:
    def test_exponent_cancels(self):
        instance = _instance(SHIFTED_MEAN, 4, 2, 0.6)
        x = np.array([0.3, 0.3, 5.0, -2.0])
        assert likelihood_ratio_point(instance, IndexSet((1, 2), 4), x) == pytest.approx(1.0)

    def test_mixture_value(self):
        instance = _instance(SHIFTED_MEAN, 3, 1, 1.0, alpha=0.5)
        x = np.array([2.0, 0.0, 0.0])
        assert likelihood_ratio_point(instance, IndexSet((1,), 3), x) == pytest.approx(2.740845, abs=1e-6)

    def test_spiked_orthogonal_point(self):
        instance = _instance(SPIKED_COVARIANCE, 4, 2, 0.5)
        x = np.array([1.0, -1.0, 3.0, 0.0])
        expected = (1.0 + 0.5) ** -0.5
        assert likelihood_ratio_point(instance, IndexSet((1, 2), 4), x) == pytest.approx(expected)

    def test_rows(self):
        instance = _instance(SHIFTED_MEAN, 3, 1, 1.0)
        values = log_likelihood_ratio(instance, IndexSet((2,), 3), np.zeros((5, 3)))
        np.testing.assert_allclose(values, -0.5)

    def test_dimension_mismatch(self):
        instance = _instance(SHIFTED_MEAN, 3, 1, 1.0)
        with pytest.raises(DimensionMismatchError):
            log_likelihood_ratio(instance, IndexSet((1,), 3), np.zeros(4))


class TestHValue:
    def test_zero_overlap(self):
        assert h_value(_instance(SHIFTED_MEAN, 6, 2, 0.8, 0.4), 0) == pytest.approx(1.0)
        assert h_value(_instance(SPIKED_COVARIANCE, 6, 2, 0.8), 0) == pytest.approx(1.0)

    def test_shifted_mean(self):
        instance = _instance(SHIFTED_MEAN, 6, 2, 1.0, alpha=0.5)
        assert h_value(instance, 2) == pytest.approx(2.597264, abs=1e-6)

    def test_spiked(self):
        assert h_value(_instance(SPIKED_COVARIANCE, 6, 2, 0.5), 2) == pytest.approx(1.154701, abs=1e-6)

    def test_overlap_range(self):
        with pytest.raises(ValueError):
            h_value(_instance(SHIFTED_MEAN, 6, 2, 1.0), 3)


def _partner(structure, anchor, z):
    return next(S for S in enumerate_class(structure) if overlap(anchor, S) == z)


@pytest.mark.slow
class TestHValueMonteCarlo:
    """E_0[(dP_S1/dP_0)(dP_S2/dP_0)] against the closed form, within 4 standard errors."""

    samples = 1_000_000

    @pytest.mark.parametrize("model, s, beta, alpha", [
        (SHIFTED_MEAN, 2, 0.3, 1.0), (SHIFTED_MEAN, 2, 0.3, 0.5),
        (SHIFTED_MEAN, 2, 0.6, 1.0), (SHIFTED_MEAN, 2, 0.6, 0.5),
        (SHIFTED_MEAN, 3, 0.3, 1.0), (SHIFTED_MEAN, 3, 0.3, 0.5),
        (SPIKED_COVARIANCE, 2, 0.3, 1.0),
    ])
    def test_matches_closed_form(self, model, s, beta, alpha):
        instance = _instance(model, 6, s, beta, alpha)
        data = sample(instance, NULL, self.samples, np.random.default_rng(7))
        anchor = IndexSet(tuple(range(1, s + 1)), 6)
        base = log_likelihood_ratio(instance, anchor, data)
        for z in range(s + 1):
            other = _partner(instance.structure, anchor, z)
            product = np.exp(base + log_likelihood_ratio(instance, other, data))
            se = product.std(ddof=1) / math.sqrt(self.samples)
            assert abs(product.mean() - h_value(instance, z)) < 4 * se


class TestQueryMoments:
    def test_null_coordinate_threshold(self):
        instance = _instance(SHIFTED_MEAN, 4, 1, 0.8)
        assert expected_query_value(instance, NULL, coordinate_threshold(1, 0.4)) == pytest.approx(0.344578, abs=1e-6)
        assert 1 - std_normal_cdf(0.4) == pytest.approx(0.344578, abs=1e-6)

    def test_indicator_variance(self):
        instance = _instance(SHIFTED_MEAN, 4, 1, 0.8)
        moments = query_moments(instance, NULL, coordinate_threshold(2, 0.4))
        assert moments.variance == pytest.approx(moments.mean * (1 - moments.mean))
        assert moments.exact

    def test_spiked_square_threshold(self):
        instance = _instance(SPIKED_COVARIANCE, 6, 2, 0.4)
        query = coordinate_square_threshold(1, 1 + 0.4 / 2)
        assert expected_query_value(instance, IndexSet((1, 4), 6), query) == pytest.approx(0.317311, abs=1e-6)

    def test_mixture_alternative(self):
        instance = _instance(SHIFTED_MEAN, 4, 2, 0.8, alpha=0.5)
        value = expected_query_value(instance, IndexSet((1, 2), 4), coordinate_threshold(1, 0.4))
        expected = 0.5 * std_normal_cdf(0.4) + 0.5 * (1 - std_normal_cdf(0.4))
        assert value == pytest.approx(expected)
        # coordinate outside the support keeps its null value
        outside = expected_query_value(instance, IndexSet((1, 2), 4), coordinate_threshold(3, 0.4))
        assert outside == pytest.approx(1 - std_normal_cdf(0.4))

    def test_constant_query(self):
        instance = _instance(SHIFTED_MEAN, 4, 2, 0.8)
        moments = query_moments(instance, IndexSet((1, 2), 4), constant_query(0.3))
        assert moments.mean == 0.3
        assert moments.variance == 0.0

    def test_coordinate_outside_dimension(self):
        instance = _instance(SHIFTED_MEAN, 4, 2, 0.8)
        with pytest.raises(DimensionMismatchError):
            query_moments(instance, NULL, coordinate_threshold(5, 0.4))

    def test_monte_carlo_fallback_matches_closed_form(self):
        instance = _instance(SHIFTED_MEAN, 5, 2, 0.9, alpha=0.7)
        canonical = subset_sum_threshold((1, 2, 3), 0.5)
        opaque = custom_query(canonical.evaluator, 1.0, "opaque subset sum")
        S = IndexSet((2, 3), 5)
        exact = query_moments(instance, S, canonical)
        mc = query_moments(instance, S, opaque, rng=np.random.default_rng(3), samples=200_000)
        assert not mc.exact
        assert abs(mc.mean - exact.mean) < 4 * mc.std_error
