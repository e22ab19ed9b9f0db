import itertools
import math
import os

import numpy as np
import pytest

from structure_classes import (PERFECT_MATCHING, IndexSet, StructureClass,
                               derangement_number, enumerate_class, hamming_ball,
                               overlap, overlap_distribution, overlap_histogram,
                               sample_uniform, shell_counts)
from utils import CapExceededError, DimensionMismatchError, settings


def _sets(lists, d):
    return [IndexSet(tuple(x), d) for x in lists]


class TestIndexSet:
    def test_rejects_unsorted_indices(self):
        with pytest.raises(ValueError):
            IndexSet((2, 1), 4)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            IndexSet((0, 2), 4)
        with pytest.raises(ValueError):
            IndexSet((1, 5), 4)

    def test_positions_and_mask(self):
        S = IndexSet((1, 3), 4)
        np.testing.assert_array_equal(S.positions, [0, 2])
        np.testing.assert_array_equal(S.mask(), [True, False, True, False])
        assert str(S) == "{1,3}"


class TestStructureClass:
    def test_matching_needs_perfect_square(self):
        with pytest.raises(ValueError):
            StructureClass.matching(8)

    def test_sparse_needs_valid_sparsity(self):
        with pytest.raises(ValueError):
            StructureClass.sparse(3, 4)

    def test_matching_membership(self):
        C = StructureClass.matching(4)
        assert C.contains(IndexSet((1, 4), 4))
        assert not C.contains(IndexSet((1, 2), 4))
        with pytest.raises(ValueError):
            C.check_member(IndexSet((1, 2), 4))

    def test_member_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            StructureClass.sparse(4, 2).check_member(IndexSet((1, 2), 5))

    def test_from_permutation(self):
        C = StructureClass.matching(9)
        assert C.from_permutation([1, 2, 3]).indices == (1, 5, 9)
        assert C.from_permutation([2, 1, 3]).indices == (2, 4, 9)


class TestEnumerateClass:
    def test_sparse_small(self):
        assert enumerate_class(StructureClass.sparse(3, 2)) == _sets([[1, 2], [1, 3], [2, 3]], 3)

    def test_matching_small(self):
        # identity, then the swap
        assert enumerate_class(StructureClass.matching(4)) == _sets([[1, 4], [2, 3]], 4)

    def test_count_matches_binomial(self):
        elements = enumerate_class(StructureClass.sparse(6, 3))
        assert len(elements) == 20 == math.comb(6, 3)
        assert len(set(elements)) == 20
        assert [S.indices for S in elements] == list(itertools.combinations(range(1, 7), 3))

    def test_matching_elements_are_members(self):
        C = StructureClass.matching(16)
        elements = enumerate_class(C)
        assert len(elements) == 24
        assert all(C.contains(S) for S in elements)

    def test_cap_exceeded(self):
        with pytest.raises(CapExceededError):
            enumerate_class(StructureClass.sparse(20, 10), cap=100)

    def test_cache_round_trip(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "cache_dir", str(tmp_path))
        C = StructureClass.sparse(6, 2)
        first = enumerate_class(C)
        assert os.path.exists(tmp_path / "sparse_set_d6_s2.npy")
        assert enumerate_class(C) == first


class TestOverlap:
    def test_examples(self):
        assert overlap(IndexSet((1, 2, 3), 6), IndexSet((1, 2, 3), 6)) == 3
        assert overlap(IndexSet((1, 2), 6), IndexSet((3, 4), 6)) == 0
        assert overlap(IndexSet((1, 2, 3), 6), IndexSet((2, 3, 5), 6)) == 2

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            overlap(IndexSet((1,), 3), IndexSet((1,), 4))


class TestShellCounts:
    def test_examples(self):
        assert shell_counts(StructureClass.sparse(6, 3)).counts == (1, 9, 9, 1)
        assert shell_counts(StructureClass.matching(9)).counts == (1, 0, 3, 2)
        assert shell_counts(StructureClass.sparse(2, 2)).counts == (1,)

    def test_sparse_shells_sum_to_class_size(self):
        for d in range(1, 21):
            for s in range(1, min(6, d) + 1):
                table = shell_counts(StructureClass.sparse(d, s))
                assert sum(table.counts) == math.comb(d, s) == table.total

    def test_matching_shells_match_brute_force(self):
        for r in range(1, 6):
            C = StructureClass.matching(r * r)
            table = shell_counts(C)
            assert sum(table.counts) == math.factorial(r)
            anchor = enumerate_class(C)[0]
            assert list(table.counts) == overlap_histogram(C, anchor)

    def test_sparse_shells_match_brute_force(self):
        C = StructureClass.sparse(7, 3)
        anchor = IndexSet((2, 4, 7), 7)
        assert list(shell_counts(C).counts) == overlap_histogram(C, anchor)

    def test_overlaps_property(self):
        assert shell_counts(StructureClass.sparse(6, 3)).overlaps == (3, 2, 1, 0)

    def test_derangement_numbers(self):
        assert [derangement_number(j) for j in range(7)] == [1, 0, 1, 2, 9, 44, 265]


class TestOverlapDistribution:
    def test_sparse(self):
        np.testing.assert_allclose(overlap_distribution(StructureClass.sparse(4, 2)), [1 / 6, 4 / 6, 1 / 6])

    def test_matching(self):
        probs = overlap_distribution(StructureClass.matching(9))
        np.testing.assert_allclose(probs, [2 / 6, 3 / 6, 0.0, 1 / 6])

    def test_full_overlap_is_one_over_class_size(self):
        for C in (StructureClass.sparse(8, 3), StructureClass.matching(16)):
            assert overlap_distribution(C)[-1] == pytest.approx(1.0 / C.cardinality)


class TestHammingBall:
    def test_singleton(self):
        C = StructureClass.sparse(5, 2)
        anchor = IndexSet((2, 4), 5)
        assert hamming_ball(C, anchor, 1) == [anchor]

    def test_shell_order_then_lexicographic(self):
        C = StructureClass.sparse(4, 2)
        ball = hamming_ball(C, IndexSet((1, 2), 4), 3)
        assert ball == _sets([[1, 2], [1, 3], [1, 4]], 4)

    def test_saturates(self):
        C = StructureClass.matching(9)
        anchor = enumerate_class(C)[3]
        assert sorted(hamming_ball(C, anchor, C.cardinality), key=lambda S: S.indices) == enumerate_class(C)

    def test_rejects_bad_m(self):
        C = StructureClass.sparse(4, 2)
        with pytest.raises(ValueError):
            hamming_ball(C, IndexSet((1, 2), 4), 0)


class TestSampleUniform:
    def test_singleton_class(self, rng):
        C = StructureClass.sparse(3, 3)
        assert sample_uniform(C, rng) == IndexSet((1, 2, 3), 3)

    def test_sparse_frequencies(self, rng):
        C = StructureClass.sparse(4, 2)
        draws = 60_000
        counts = {}
        for _ in range(draws):
            S = sample_uniform(C, rng)
            counts[S] = counts.get(S, 0) + 1
        assert set(counts) == set(enumerate_class(C))
        sigma = math.sqrt(draws * (1 / 6) * (5 / 6))
        for value in counts.values():
            assert abs(value - 10_000) < 4 * sigma

    def test_matching_frequencies(self, rng):
        C = StructureClass.matching(4)
        draws = 20_000
        hits = sum(sample_uniform(C, rng) == IndexSet((1, 4), 4) for _ in range(draws))
        assert abs(hits - 10_000) < 4 * math.sqrt(draws * 0.25)

    def test_matching_draws_are_members(self, rng):
        C = StructureClass.matching(16)
        assert C.kind == PERFECT_MATCHING
        for _ in range(50):
            assert C.contains(sample_uniform(C, rng))
