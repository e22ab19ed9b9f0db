"""
Combinatorial structure classes: sparse sets and perfect matchings
"""
import itertools
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from utils import (CapExceededError, DimensionMismatchError, log_debug,
                   resolve_cap, settings)

SPARSE_SET = "sparse_set"
PERFECT_MATCHING = "perfect_matching"
CLASS_KINDS = (SPARSE_SET, PERFECT_MATCHING)


@dataclass(frozen=True)
class IndexSet:
    """
    A support S of the signal, stored as 1-based coordinate indices.

    Parameters
    ----------
    indices : tuple of int
        Strictly increasing indices in [1, d]
    d : int
        Ambient dimension
    """
    indices: tuple
    d: int

    def __post_init__(self):
        indices = tuple(int(j) for j in self.indices)
        object.__setattr__(self, "indices", indices)
        if self.d < 1:
            raise ValueError(f"Dimension must be positive, got d={self.d}")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"Indices must be strictly increasing: {indices}")
        if indices and (indices[0] < 1 or indices[-1] > self.d):
            raise ValueError(f"Indices must lie in [1, {self.d}]: {indices}")

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def positions(self):
        """Zero-based column positions, for indexing data matrices."""
        return np.asarray(self.indices, dtype=np.intp) - 1

    def mask(self):
        out = np.zeros(self.d, dtype=bool)
        out[self.positions] = True
        return out

    def to_list(self):
        return list(self.indices)

    def __str__(self):
        return "{" + ",".join(str(j) for j in self.indices) + "}"


@dataclass(frozen=True)
class StructureClass:
    """
    The family C of admissible supports.

    For perfect matchings, coordinate (k - 1) * r + k' is the edge between
    left node k and right node k', with r = sqrt(d) = s_star.
    """
    kind: str
    d: int
    s_star: int

    def __post_init__(self):
        if self.kind not in CLASS_KINDS:
            raise ValueError(f"Unknown class kind '{self.kind}', expected one of {CLASS_KINDS}")
        if self.kind == SPARSE_SET:
            if not 1 <= self.s_star <= self.d:
                raise ValueError(f"Sparse class needs 1 <= s* <= d, got s*={self.s_star}, d={self.d}")
        elif self.s_star < 1 or self.s_star * self.s_star != self.d:
            raise ValueError(f"Matching class needs d to be a perfect square with s* = sqrt(d), "
                             f"got d={self.d}, s*={self.s_star}")

    @classmethod
    def sparse(cls, d, s_star):
        return cls(SPARSE_SET, int(d), int(s_star))

    @classmethod
    def matching(cls, d):
        d = int(d)
        r = math.isqrt(d)
        if r * r != d:
            raise ValueError(f"Matching class needs d to be a perfect square, got d={d}")
        return cls(PERFECT_MATCHING, d, r)

    @property
    def cardinality(self):
        if self.kind == SPARSE_SET:
            return math.comb(self.d, self.s_star)
        return math.factorial(self.s_star)

    def contains(self, S):
        if S.d != self.d or len(S) != self.s_star:
            return False
        if self.kind == SPARSE_SET:
            return True
        r = self.s_star
        rows = [(j - 1) // r for j in S.indices]
        cols = sorted((j - 1) % r for j in S.indices)
        return rows == list(range(r)) and cols == list(range(r))

    def check_member(self, S):
        if S.d != self.d:
            raise DimensionMismatchError(f"Index set lives in d={S.d}, class in d={self.d}")
        if not self.contains(S):
            raise ValueError(f"{S} is not an element of the {self.kind} class (d={self.d}, s*={self.s_star})")

    def from_permutation(self, sigma):
        """Edge set of the matching k -> sigma[k-1] (values 1-based)."""
        if self.kind != PERFECT_MATCHING:
            raise ValueError("from_permutation only applies to perfect matchings")
        r = self.s_star
        return IndexSet(tuple(k * r + int(c) for k, c in enumerate(sigma)), self.d)

    def describe(self):
        return {"kind": self.kind, "d": self.d, "s_star": self.s_star,
                "cardinality": self.cardinality}


@dataclass(frozen=True)
class ShellTable:
    """Counts |C_j(S)| of class elements at overlap s* - j from an anchor."""
    counts: tuple
    total: int
    s_star: int

    @property
    def overlaps(self):
        return tuple(self.s_star - j for j in range(len(self.counts)))


def _check_cap(structure, cap):
    cap = resolve_cap(cap, settings.enum_cap)
    size = structure.cardinality
    if size > cap:
        raise CapExceededError(
            f"|C| = {size} for {structure.kind} (d={structure.d}, s*={structure.s_star}) "
            f"exceeds the enumeration cap {cap}; raise SQPHASE_ENUM_CAP or use a smaller instance")
    return size


def _cache_path(structure):
    if not settings.cache_dir:
        return None
    return os.path.join(settings.cache_dir,
                        f"{structure.kind}_d{structure.d}_s{structure.s_star}.npy")


def _enumerate_rows(structure):
    if structure.kind == SPARSE_SET:
        return itertools.combinations(range(1, structure.d + 1), structure.s_star)
    r = structure.s_star
    return (tuple(k * r + c for k, c in enumerate(sigma))
            for sigma in itertools.permutations(range(1, r + 1)))


def enumerate_class(structure, cap=None):
    """
    List every element of C once, in lexicographic order of index lists.

    Parameters
    ----------
    structure : StructureClass
        Class to enumerate
    cap : int, optional
        Enumeration cap; defaults to the configured cap

    Returns
    -------
    list of IndexSet
    """
    size = _check_cap(structure, cap)
    path = _cache_path(structure)
    if path and os.path.exists(path):
        table = np.load(path)
        log_debug(f"enumeration cache hit: {path}")
        return [IndexSet(tuple(row), structure.d) for row in table.tolist()]

    rows = list(_enumerate_rows(structure))
    log_debug(f"enumerated {size} elements of {structure.kind} (d={structure.d}, s*={structure.s_star})")
    if path:
        os.makedirs(settings.cache_dir, exist_ok=True)
        np.save(path, np.asarray(rows, dtype=np.int64).reshape(len(rows), structure.s_star))
        log_debug(f"enumeration cached to {path}")
    return [IndexSet(row, structure.d) for row in rows]


def overlap(S1, S2):
    if S1.d != S2.d:
        raise DimensionMismatchError(f"Cannot overlap sets in d={S1.d} and d={S2.d}")
    return len(set(S1.indices) & set(S2.indices))


def derangement_number(j):
    """D_j by the alternating sum, in exact integers."""
    if j < 0:
        raise ValueError(f"Derangement index must be nonnegative, got {j}")
    fact = math.factorial(j)
    return sum((-1) ** l * (fact // math.factorial(l)) for l in range(j + 1))


def shell_counts(structure):
    s = structure.s_star
    if structure.kind == SPARSE_SET:
        # shells beyond d - s* are empty
        counts = [math.comb(s, s - j) * math.comb(structure.d - s, j)
                  for j in range(min(s, structure.d - s) + 1)]
    else:
        counts = [math.comb(s, s - j) * derangement_number(j) for j in range(s + 1)]
    return ShellTable(tuple(counts), structure.cardinality, s)


def overlap_distribution(structure):
    """
    Distribution of Z = |S ∩ S'| for S' uniform over C and any fixed anchor S.

    Returns
    -------
    numpy.ndarray
        Array of length s* + 1; entry z is P(Z = z)
    """
    table = shell_counts(structure)
    s = structure.s_star
    probs = np.zeros(s + 1)
    for j, count in enumerate(table.counts):
        probs[s - j] = float(Fraction(count, table.total))
    return probs


def overlap_histogram(structure, anchor, cap=None):
    """Brute-force counts of elements by overlap with ``anchor``, indexed by j."""
    structure.check_member(anchor)
    s = structure.s_star
    hist = [0] * (s + 1)
    for S in enumerate_class(structure, cap):
        hist[s - overlap(anchor, S)] += 1
    return hist


def hamming_ball(structure, anchor, m, cap=None):
    """
    The m elements closest to ``anchor``: whole shells first, the last
    shell filled in lexicographic order.
    """
    structure.check_member(anchor)
    if not 1 <= m <= structure.cardinality:
        raise ValueError(f"m must lie in [1, {structure.cardinality}], got {m}")
    elements = enumerate_class(structure, cap)
    # sort is stable, so lexicographic order survives inside each shell
    elements.sort(key=lambda S: -overlap(anchor, S))
    return elements[:m]


def sample_uniform(structure, rng):
    """Draw S uniformly from C using a numpy Generator."""
    if structure.kind == SPARSE_SET:
        picks = rng.choice(structure.d, size=structure.s_star, replace=False)
        return IndexSet(tuple(sorted(int(j) + 1 for j in picks)), structure.d)
    sigma = rng.permutation(structure.s_star) + 1
    return structure.from_permutation(sigma)
