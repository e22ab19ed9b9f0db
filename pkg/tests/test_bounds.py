import math

import numpy as np
import pytest

from bounds import (MATCHING_SM, SPARSE_SM, SPCA, BoundParams, PhasePoint, Regime,
                    chi2_mixture_exact, chi2_pairwise, closed_form_bound_matching,
                    closed_form_bound_sparse, closed_form_bound_spca,
                    combinatorial_quantity, lecam_report, lecam_risk_lower_bound,
                    distinguishable_chi2_margin, matching_hypothesis, normalize_problem,
                    phase_classify, risk_lower_bound, sup_distinguishable_numeric,
                    weighted_monotone_average)
from models import SHIFTED_MEAN, SPIKED_COVARIANCE, ProblemInstance, h_value
from oracle import (OracleConfig, coordinate_threshold, scaled_sum_threshold,
                    subset_sum_threshold)
from structure_classes import StructureClass, enumerate_class, hamming_ball, overlap
from utils import HypothesisViolatedError


def _shifted(structure, beta, alpha=1.0):
    return ProblemInstance(SHIFTED_MEAN, structure, beta, alpha)


class TestRiskLowerBound:
    def test_worked_value(self):
        assert risk_lower_bound(2, 1, 20, 0.05) == pytest.approx(0.95)

    def test_no_queries_no_tail(self):
        assert risk_lower_bound(0, 0, 20, 0.0) == 1.0

    def test_no_queries_keeps_tail(self):
        assert risk_lower_bound(0, 3, 20, 0.05) == pytest.approx(0.9)

    def test_nonincreasing_in_sup(self):
        for T in (1, 5, 40):
            values = [risk_lower_bound(T, sup, 50, 0.05) for sup in range(0, 51)]
            assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))

    def test_many_queries_leave_only_the_tail_terms(self):
        for T, sup in [(10, 5), (25, 2), (50, 3)]:
            assert risk_lower_bound(T, sup, 50, 0.05) <= min(0.1, T / 50, sup / 50) + 1e-15

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            risk_lower_bound(-1, 1, 20, 0.05)
        with pytest.raises(ValueError):
            risk_lower_bound(1, 1, 0, 0.05)
        with pytest.raises(ValueError):
            risk_lower_bound(1, 1, 20, 0.25)


class TestCombinatorialQuantity:
    def test_full_class(self, sparse_instance):
        value = combinatorial_quantity(sparse_instance.structure, sparse_instance, 6)
        assert value == pytest.approx(1.107014, abs=1e-6)

    def test_singleton_ball(self, matching_instance):
        value = combinatorial_quantity(matching_instance.structure, matching_instance, 1)
        assert value == pytest.approx(h_value(matching_instance, 3))

    def test_range(self, sparse_instance):
        with pytest.raises(ValueError):
            combinatorial_quantity(sparse_instance.structure, sparse_instance, 7)
        with pytest.raises(ValueError):
            combinatorial_quantity(sparse_instance.structure, sparse_instance, 0)

    def test_class_mismatch(self, sparse_instance):
        with pytest.raises(ValueError):
            combinatorial_quantity(StructureClass.sparse(5, 2), sparse_instance, 1)

    @pytest.mark.parametrize("structure", [StructureClass.sparse(7, 3), StructureClass.matching(16)])
    def test_nonincreasing(self, structure):
        instance = _shifted(structure, 0.6, alpha=0.7)
        values = [combinatorial_quantity(structure, instance, m) for m in range(1, structure.cardinality + 1)]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("structure", [StructureClass.sparse(5, 2), StructureClass.matching(9)])
    def test_same_for_every_anchor(self, structure):
        instance = _shifted(structure, 0.8)
        for anchor in enumerate_class(structure):
            for m in range(1, structure.cardinality + 1):
                ball = hamming_ball(structure, anchor, m)
                direct = np.mean([h_value(instance, overlap(anchor, S)) for S in ball])
                assert combinatorial_quantity(structure, instance, m) == pytest.approx(direct, rel=1e-12)


class TestSupDistinguishable:
    def test_threshold_above_every_overlap(self, sparse_instance):
        assert sup_distinguishable_numeric(sparse_instance.structure, sparse_instance, 1, 0.05) == 0

    def test_large_sample_saturates(self, sparse_instance):
        assert sup_distinguishable_numeric(sparse_instance.structure, sparse_instance, 1000, 0.05) == 6

    def test_bisect_matches_linear(self):
        structure = StructureClass.sparse(6, 2)
        instance = _shifted(structure, math.sqrt(0.5))
        # n chosen so that the threshold is 1.2
        n = math.log(20) / 0.2
        linear = sup_distinguishable_numeric(structure, instance, n, 0.05, method="linear")
        assert sup_distinguishable_numeric(structure, instance, n, 0.05) == linear
        assert linear == structure.cardinality
        n = math.log(20) / 0.5
        assert sup_distinguishable_numeric(structure, instance, n, 0.05) == 13
        assert sup_distinguishable_numeric(structure, instance, n, 0.05, method="linear") == 13

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 13, 21, 34])
    def test_bisect_matches_linear_across_n(self, n):
        for structure in (StructureClass.sparse(8, 3), StructureClass.matching(16)):
            instance = _shifted(structure, 0.7)
            assert (sup_distinguishable_numeric(structure, instance, n, 0.05)
                    == sup_distinguishable_numeric(structure, instance, n, 0.05, method="linear"))

    def test_unknown_method(self, sparse_instance):
        with pytest.raises(ValueError):
            sup_distinguishable_numeric(sparse_instance.structure, sparse_instance, 10, 0.05, method="golden")


class TestClosedForms:
    def test_sparse_first_setting(self):
        params = BoundParams(20, 1, math.log(20), math.sqrt(0.1), xi=0.05)
        assert params.zeta == pytest.approx(10.0)
        assert params.tau ** 2 == pytest.approx(1.0)
        assert closed_form_bound_sparse(params, "i") == pytest.approx(2.34e-5, rel=2e-3)

    def test_sparse_vacuous_clamps(self):
        params = BoundParams(20, 1, math.log(20), math.sqrt(math.log(2) / 2), xi=0.05)
        assert closed_form_bound_sparse(params, "i") == 1.0

    def test_sparse_second_setting_in_unit_interval(self):
        params = BoundParams(400, 10, 50, 0.2, xi=0.05)
        assert 0.0 <= closed_form_bound_sparse(params, "ii") <= 1.0

    def test_sparse_unknown_setting(self):
        with pytest.raises(ValueError):
            closed_form_bound_sparse(BoundParams(20, 1, 3, 0.3), "iii")

    def test_sparse_dominates_numeric_ratio(self):
        params = BoundParams(20, 1, math.log(20), math.sqrt(0.1), xi=0.05)
        structure = StructureClass.sparse(20, 1)
        instance = _shifted(structure, params.beta_star)
        ratio = sup_distinguishable_numeric(structure, instance, params.n, params.xi) / structure.cardinality
        assert ratio <= closed_form_bound_sparse(params, "i")

    def test_matching(self):
        params = BoundParams(16, 4, math.log(20), 0.1, xi=0.05, delta=0.5)
        lhs, rhs = matching_hypothesis(params)
        assert lhs == pytest.approx(math.log(2) / 0.01)
        assert rhs == pytest.approx(7.0)
        assert closed_form_bound_matching(params) == pytest.approx(0.25, abs=1e-6)
        structure = StructureClass.matching(16)
        instance = _shifted(structure, 0.1)
        numeric = sup_distinguishable_numeric(structure, instance, params.n, params.xi)
        assert numeric / structure.cardinality <= 0.25

    def test_matching_hypothesis_violated(self):
        with pytest.raises(HypothesisViolatedError):
            closed_form_bound_matching(BoundParams(16, 4, math.log(20), 0.5, xi=0.05, delta=0.5))

    def test_matching_small_delta_is_vacuous(self):
        params = BoundParams(16, 4, math.log(20), 0.01, xi=0.05, delta=1e-6)
        assert closed_form_bound_matching(params) == 1.0

    def test_gamma_bar(self):
        assert BoundParams(256, 2, 100, 0.5).gamma_bar == pytest.approx(1.309307, abs=1e-6)

    def test_gamma_bar_undefined(self):
        with pytest.raises(HypothesisViolatedError):
            BoundParams(256, 1, 100, 0.9).gamma_bar
        assert BoundParams(256, 1, 100, 0.9).to_dict()["gamma_bar"] is None

    def test_spca_delta(self):
        assert BoundParams(256, 2, 100, 0.05).spca_delta == pytest.approx(0.375)

    def test_spca_bound(self):
        # tau^2 = 0.04
        params = BoundParams(256, 2, math.log(20) / 0.04, 0.05, xi=0.05)
        value = closed_form_bound_spca(params)
        assert 0.0 <= value <= 1.0
        structure = StructureClass.sparse(256, 2)
        instance = ProblemInstance(SPIKED_COVARIANCE, structure, 0.05)
        numeric = sup_distinguishable_numeric(structure, instance, params.n, params.xi)
        assert numeric / structure.cardinality <= value

    def test_spca_needs_d_above_s_squared(self):
        with pytest.raises(HypothesisViolatedError):
            closed_form_bound_spca(BoundParams(16, 4, 100, 0.05))


class TestChiSquare:
    def test_worked_value(self, sparse_instance):
        chi2 = chi2_mixture_exact(sparse_instance.structure, sparse_instance)
        assert chi2 == pytest.approx(0.107014, abs=1e-6)
        assert chi2_pairwise(sparse_instance.structure, sparse_instance) == pytest.approx(chi2, rel=1e-12)

    def test_singleton_class(self):
        structure = StructureClass.sparse(3, 3)
        instance = _shifted(structure, 0.4)
        for n in (1, 3):
            assert chi2_mixture_exact(structure, instance, n=n) == pytest.approx(h_value(instance, 3) ** n - 1)

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_paths_agree(self, n):
        structures = [StructureClass.sparse(d, s) for d in range(2, 9) for s in range(1, min(3, d) + 1)]
        structures += [StructureClass.matching(4)]
        for structure in structures:
            for instance in (_shifted(structure, 0.5), _shifted(structure, 0.5, alpha=0.6)):
                assert chi2_mixture_exact(structure, instance, n=n) == pytest.approx(
                    chi2_pairwise(structure, instance, n=n), rel=1e-12)

    def test_spiked_paths_agree(self, spiked_instance):
        structure = spiked_instance.structure
        assert chi2_mixture_exact(structure, spiked_instance, n=2) == pytest.approx(
            chi2_pairwise(structure, spiked_instance, n=2), rel=1e-12)

    def test_empty_subset(self, sparse_instance):
        with pytest.raises(ValueError):
            chi2_mixture_exact(sparse_instance.structure, sparse_instance, subset=[])

    def test_lecam(self, sparse_instance):
        assert lecam_risk_lower_bound(0.0) == 1.0
        assert lecam_risk_lower_bound(0.107014) == pytest.approx(0.672866, abs=1e-5)
        assert lecam_risk_lower_bound(1.5) == 0.0
        with pytest.raises(ValueError):
            lecam_risk_lower_bound(-0.1)
        report = lecam_report(sparse_instance.structure, sparse_instance, 1)
        assert report["risk_lower_bound"] == pytest.approx(0.672866, abs=1e-5)


class TestDistinguishableSetsCarryDivergence:
    """Every nonempty C(q) must have chi^2 at least log(1/xi)/n against the null."""

    @pytest.mark.parametrize("d, s, beta, alpha", [
        (6, 1, 1.0, 1.0), (6, 2, 0.8, 1.0), (6, 2, 0.8, 0.5), (8, 2, 0.6, 1.0), (8, 3, 0.9, 0.7),
    ])
    @pytest.mark.parametrize("n", [50, 200])
    @pytest.mark.parametrize("xi", [0.05, 0.1])
    def test_margin_nonnegative(self, d, s, beta, alpha, n, xi):
        instance = _shifted(StructureClass.sparse(d, s), beta, alpha)
        config = OracleConfig(n, xi)
        queries = [coordinate_threshold(1, c) for c in (0.0, beta / 2, beta)]
        queries += [subset_sum_threshold(range(1, s + 1), c) for c in (0.0, beta * s / 2)]
        queries += [subset_sum_threshold((1, d), beta / 2), scaled_sum_threshold(d, 0.5)]
        margins = [distinguishable_chi2_margin(q, instance, config) for q in queries]
        assert all(m >= 0 for m in margins if m is not None)

    def test_shifted_coordinate_query_is_distinguishable(self):
        instance = _shifted(StructureClass.sparse(6, 2), 0.8, 0.5)
        query = coordinate_threshold(1, 0.4)
        # gap 0.155 against a reduced tolerance of 0.082
        margin = distinguishable_chi2_margin(query, instance, OracleConfig(200, 0.05))
        assert margin is not None
        assert margin >= 0
        assert distinguishable_chi2_margin(query, instance, OracleConfig(50, 0.05)) is None


class TestPhaseClassify:
    def test_tractable(self):
        assert phase_classify(PhasePoint(0.25, 0.05, 0.3, 0.0), SPARSE_SM) == Regime.TRACTABLE

    def test_impossible(self):
        assert phase_classify(PhasePoint(0.25, 0.2, 0.3, 0.0), SPARSE_SM) == Regime.IMPOSSIBLE

    def test_intractable_possible(self):
        assert phase_classify(PhasePoint(0.5, 0.15, 0.7, 0.3), SPARSE_SM) == Regime.INTRACTABLE_POSSIBLE

    def test_boundary(self):
        assert phase_classify(PhasePoint(0.25, 0.15, 0.3, 0.0), SPARSE_SM) == Regime.BOUNDARY

    def test_dense_sparsity_adds_term(self):
        # 2 p_s - 1 > 0 lifts A only for sparse sets
        point = PhasePoint(0.9, 0.3, 0.5, 0.0)
        assert phase_classify(point, SPARSE_SM) == Regime.TRACTABLE
        assert phase_classify(point, MATCHING_SM) == Regime.IMPOSSIBLE

    def test_matching_ignores_p_s(self):
        for p_beta, p_n, p_alpha in [(0.05, 0.3, 0.0), (0.2, 0.3, 0.0), (0.15, 0.7, 0.3)]:
            regimes = {phase_classify(PhasePoint(p_s, p_beta, p_n, p_alpha), MATCHING_SM)
                       for p_s in (0.0, 0.3, 0.5, 1.0)}
            assert len(regimes) == 1

    def test_spca(self):
        assert phase_classify(PhasePoint(0.2, 0.0, 0.6), SPCA) == Regime.TRACTABLE
        assert phase_classify(PhasePoint(0.4, 0.0, 0.6), SPCA) == Regime.INTRACTABLE_POSSIBLE
        assert phase_classify(PhasePoint(0.4, 0.2, 0.6), SPCA) == Regime.IMPOSSIBLE
        assert phase_classify(PhasePoint(0.3, 0.0, 0.6), SPCA) == Regime.BOUNDARY

    def test_tie_wins_over_strict_rules(self):
        # B2 = 0 while B1 < 0
        assert phase_classify(PhasePoint(0.1, 0.2, 0.6, 0.2), SPARSE_SM) == Regime.BOUNDARY
        # A = 0 while B1 > 0 and B2 > 0
        assert phase_classify(PhasePoint(0.5, 0.1, 0.4, 0.1), SPARSE_SM) == Regime.BOUNDARY
        # possible = 0 while tractable < 0
        assert phase_classify(PhasePoint(0.2, 0.1, 0.4), SPCA) == Regime.BOUNDARY

    def test_problem_tags(self):
        assert normalize_problem("sparse-sm") == SPARSE_SM
        with pytest.raises(ValueError):
            phase_classify(PhasePoint(0.5, 0.1, 0.5), "dense_sm")

    def test_from_parameters(self):
        point = PhasePoint.from_parameters(100, 10, 0.1, 100)
        assert (point.p_s, point.p_beta, point.p_n, point.p_alpha) == pytest.approx((0.5, 0.5, 1.0, 0.0))

    def test_point_validation(self):
        with pytest.raises(ValueError):
            PhasePoint(1.5, 0.1, 0.5)
        with pytest.raises(ValueError):
            PhasePoint(0.5, -0.1, 0.5)


class TestWeightedMonotoneAverage:
    def test_equal_weights(self):
        left, right = weighted_monotone_average([1, 2, 4], [1, 2, 4], [3, 2, 1])
        assert left == pytest.approx(right)

    def test_constant_h(self):
        assert weighted_monotone_average([1, 3, 9], [1, 2, 4], [0.7] * 3) == pytest.approx((0.7, 0.7))

    def test_random_sequences(self):
        rng = np.random.default_rng(11)
        for _ in range(10_000):
            size = int(rng.integers(2, 9))
            kappa = rng.uniform(1.01, 3.0)
            b = rng.uniform(0.1, 2.0) * kappa ** np.arange(size)
            a = rng.uniform(0.1, 2.0) * np.cumprod(np.r_[1.0, kappa * rng.uniform(1.0, 2.0, size - 1)])
            h = np.sort(rng.uniform(-1.0, 1.0, size))[::-1]
            left, right = weighted_monotone_average(a, b, h)
            assert left <= right + 1e-12

    def test_hypotheses(self):
        with pytest.raises(HypothesisViolatedError):
            weighted_monotone_average([1, 2], [1, 2], [0, 1])
        with pytest.raises(HypothesisViolatedError):
            weighted_monotone_average([1, 2, 4], [1, 2, 3], [2, 1, 0])
        with pytest.raises(HypothesisViolatedError):
            weighted_monotone_average([1, 1.5, 3], [1, 2, 4], [2, 1, 0])
        with pytest.raises(HypothesisViolatedError):
            weighted_monotone_average([1, 2], [1, 0.5], [2, 1])
        with pytest.raises(ValueError):
            weighted_monotone_average([1, 2], [1, 2, 4], [2, 1])
