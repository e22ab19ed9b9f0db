"""
Explicit tests: query schedules with threshold rules, and the exhaustive
likelihood-ratio test with exact matrix permanents
"""
import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from models import (SHIFTED_MEAN, SPIKED_COVARIANCE, as_data_matrix,
                    log_lr_from_block_sums, std_normal_cdf)
from oracle import (DataOracle, OracleConfig, coordinate_square_threshold,
                    coordinate_threshold, scaled_sum_threshold,
                    subset_square_threshold, subset_sum_threshold)
from structure_classes import (PERFECT_MATCHING, SPARSE_SET, StructureClass,
                               enumerate_class)
from utils import CapExceededError, log_debug, resolve_cap, settings

SM1, SM2, SM3, SM4A, SM4B = "SM1", "SM2", "SM3", "SM4a", "SM4b"
PM_SM1, PM_SM3, PM_SM4A = "PM_SM1", "PM_SM3", "PM_SM4a"
SPCA1, SPCA2 = "SPCA1", "SPCA2"
LR = "LR"

SETTINGS = (SM1, SM2, SM3, SM4A, SM4B, PM_SM1, PM_SM3, PM_SM4A, SPCA1, SPCA2, LR)
SPARSE_MEAN_SETTINGS = (SM1, SM2, SM3, SM4A, SM4B)
MATCHING_MEAN_SETTINGS = (PM_SM1, PM_SM3, PM_SM4A)
SPCA_SETTINGS = (SPCA1, SPCA2)
SINGLE_QUERY_SETTINGS = (SM1, SM3, PM_SM1, PM_SM3)

ACCEPT_NULL = "accept_null"
REJECT_NULL = "reject_null"


@dataclass(frozen=True)
class Detector:
    """
    One of the explicit tests: a query schedule plus a sup-threshold rule.

    ``budget`` truncates a scan schedule to its first T queries; T = 0
    gives the zero-query detector, which always accepts.
    """
    setting: str
    instance: object
    n: int
    constant: float = None
    budget: int = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"Unknown detector setting '{self.setting}', expected one of {SETTINGS}")
        if self.n < 1:
            raise ValueError(f"Sample size must be at least 1, got n={self.n}")
        if self.constant is None:
            object.__setattr__(self, "constant", settings.detector_constant)
        if self.budget is not None and self.budget < 0:
            raise ValueError(f"Budget must be nonnegative, got {self.budget}")
        model, kind = self.instance.model, self.instance.structure.kind
        if self.setting in SPARSE_MEAN_SETTINGS and (model, kind) != (SHIFTED_MEAN, SPARSE_SET):
            raise ValueError(f"{self.setting} needs a shifted-mean instance over sparse sets")
        if self.setting in MATCHING_MEAN_SETTINGS and (model, kind) != (SHIFTED_MEAN, PERFECT_MATCHING):
            raise ValueError(f"{self.setting} needs a shifted-mean instance over perfect matchings")
        if self.setting in SPCA_SETTINGS and (model, kind) != (SPIKED_COVARIANCE, SPARSE_SET):
            raise ValueError(f"{self.setting} needs a spiked covariance instance over sparse sets")

    @property
    def d(self):
        return self.instance.d

    @property
    def s_star(self):
        return self.instance.s_star

    @property
    def beta_star(self):
        return self.instance.beta_star

    @property
    def alpha(self):
        return self.instance.alpha

    def with_budget(self, budget):
        return replace(self, budget=budget)

    def to_dict(self):
        return {"setting": self.setting, "d": self.d, "s_star": self.s_star,
                "beta_star": self.beta_star, "alpha": self.alpha, "n": self.n,
                "constant": self.constant, "budget": self.budget,
                "threshold": threshold(self), "query_count": query_count(self),
                "eta": declared_eta(self)}


@dataclass(frozen=True)
class Verdict:
    decision: str
    statistic: float
    threshold: float

    @classmethod
    def from_statistic(cls, statistic, threshold_value):
        # ties reject
        decision = REJECT_NULL if statistic >= threshold_value else ACCEPT_NULL
        return cls(decision, float(statistic), float(threshold_value))

    @property
    def rejects(self):
        return self.decision == REJECT_NULL

    def to_dict(self):
        return {"decision": self.decision, "statistic": self.statistic, "threshold": self.threshold}


def reduced_sparsity(detector):
    """s-bar = ceil(2 n alpha / (C log d)), clamped to [1, s*]."""
    log_d = math.log(detector.d)
    if log_d <= 0:
        # a single coordinate leaves nothing to reduce
        return detector.s_star
    raw = 2.0 * detector.n * detector.alpha / (detector.constant * log_d)
    return int(min(max(math.ceil(raw), 1), detector.s_star))


def _full_query_count(detector):
    setting = detector.setting
    if setting in SINGLE_QUERY_SETTINGS:
        return 1
    if setting in (SM2, SPCA1):
        return detector.d
    if setting in (SM4A, SPCA2):
        return math.comb(detector.d, detector.s_star)
    if setting == SM4B:
        return math.comb(detector.d, reduced_sparsity(detector))
    if setting == PM_SM4A:
        return math.factorial(detector.s_star)
    return 0


def query_count(detector):
    full = _full_query_count(detector)
    return full if detector.budget is None else min(full, detector.budget)


def declared_eta(detector):
    """log of the schedule's query count; 0 for one-query (or no-query) detectors."""
    count = query_count(detector)
    return math.log(count) if count > 1 else 0.0


def oracle_config(detector, xi):
    return OracleConfig.for_query_count(detector.n, xi, query_count(detector))


def _subset_scan(detector, size, cap):
    return enumerate_class(StructureClass.sparse(detector.d, size), cap)


def build_schedule(detector, cap=None):
    """
    The detector's deterministic, duplicate-free query schedule.

    Parameters
    ----------
    detector : Detector
        Test to build queries for
    cap : int, optional
        Enumeration cap for exhaustive scans

    Returns
    -------
    list of Query
    """
    setting = detector.setting
    d, s, beta = detector.d, detector.s_star, detector.beta_star
    cap = resolve_cap(cap, settings.enum_cap)
    if _full_query_count(detector) > cap:
        raise CapExceededError(f"{setting} scans {_full_query_count(detector)} queries, above the cap {cap}")

    if setting in (SM1, PM_SM1):
        schedule = [scaled_sum_threshold(d, math.sqrt(2.0 * math.log(detector.n)))]
    elif setting in (SM3, PM_SM3):
        schedule = [subset_sum_threshold(range(1, d + 1), beta * s / 2.0)]
    elif setting == SM2:
        schedule = [coordinate_threshold(t, beta / 2.0) for t in range(1, d + 1)]
    elif setting == SPCA1:
        schedule = [coordinate_square_threshold(t, 1.0 + beta / s) for t in range(1, d + 1)]
    elif setting == SM4A:
        schedule = [subset_sum_threshold(S.indices, beta * s / 2.0) for S in _subset_scan(detector, s, cap)]
    elif setting == SM4B:
        s_bar = reduced_sparsity(detector)
        schedule = [subset_sum_threshold(S.indices, beta * s_bar / 2.0)
                    for S in _subset_scan(detector, s_bar, cap)]
    elif setting == SPCA2:
        schedule = [subset_square_threshold(S.indices, 1.0 + beta) for S in _subset_scan(detector, s, cap)]
    elif setting == PM_SM4A:
        schedule = [subset_sum_threshold(S.indices, beta * s / 2.0)
                    for S in enumerate_class(detector.instance.structure, cap)]
    else:
        schedule = []

    if detector.budget is not None:
        schedule = schedule[:detector.budget]
    log_debug(f"{setting} schedule: {len(schedule)} queries")
    return schedule


def threshold(detector):
    """Closed-form rejection threshold of the detector's test."""
    setting = detector.setting
    d, s, beta, alpha, n = detector.d, detector.s_star, detector.beta_star, detector.alpha, detector.n
    if setting in (SM1, PM_SM1):
        return 1.0 - std_normal_cdf(math.sqrt(2.0 * math.log(n))) + alpha / 8.0
    if setting == SM2:
        return 1.0 - std_normal_cdf(beta / 2.0) + alpha * beta / (4.0 * math.pi)
    if setting in (SM3, PM_SM3):
        root_d = math.sqrt(d)
        return (1.0 - std_normal_cdf(beta * s / (2.0 * root_d))
                + alpha * beta * s / (4.0 * math.pi * root_d))
    if setting in (SM4A, PM_SM4A):
        return 1.0 - std_normal_cdf(beta * math.sqrt(s) / 2.0) + alpha / 4.0
    if setting == SM4B:
        s_bar = reduced_sparsity(detector)
        return 1.0 - std_normal_cdf(beta * math.sqrt(s_bar) / 2.0) + alpha / 4.0
    if setting == SPCA1:
        return 2.0 * (1.0 - std_normal_cdf(math.sqrt(1.0 + beta / s))) + beta / (8.0 * math.pi * s)
    if setting == SPCA2:
        return 2.0 * (1.0 - std_normal_cdf(math.sqrt(1.0 + beta))) + beta / (8.0 * math.pi)
    # likelihood ratio test rejects when log L >= 0
    return 0.0


def signal_ratio(detector, xi):
    """
    The quantity whose divergence makes the detector's test powerful.

    Large values mean the parameter point sits deep inside the regime in
    which the test has risk at most 2 xi.
    """
    setting = detector.setting
    d, s, beta, alpha, n = detector.d, detector.s_star, detector.beta_star, detector.alpha, detector.n
    log_n = math.log(n) if n > 1 else float("nan")
    if setting in (SM1, PM_SM1):
        return beta ** 2 * s ** 2 / (d * log_n)
    if setting == SM2:
        return beta ** 2 * n * alpha ** 2 / (math.log(d) + math.log(1.0 / xi))
    if setting in (SM3, PM_SM3):
        return beta ** 2 * s ** 2 * n * alpha ** 2 / (d * math.log(1.0 / xi))
    if setting in (SM4A, SM4B, PM_SM4A):
        if d == 1:
            return beta ** 2 * s / log_n
        return min(beta ** 2 * s / log_n, beta ** 2 * n * alpha / (math.log(d) * log_n))
    if setting == SPCA1:
        return beta ** 2 * n / (s ** 2 * math.log(d / xi))
    if setting == SPCA2:
        return beta ** 2 * n / (s * math.log(d) + math.log(1.0 / xi))
    return float("inf")


def run(detector, session, schedule=None, threshold_override=None):
    """
    Play the detector's schedule against an oracle session.

    The statistic is the sup of the responses; the likelihood-ratio
    detector reads the data of a data-backed session instead.
    ``threshold_override`` replaces the closed-form threshold, e.g. with
    an empirically calibrated one.
    """
    cutoff = threshold(detector) if threshold_override is None else float(threshold_override)
    if detector.setting == LR:
        if not isinstance(session, DataOracle):
            raise ValueError("The likelihood-ratio detector needs a data-backed oracle session")
        return Verdict.from_statistic(log_lr_statistic(session.data, detector.instance), cutoff)
    schedule = build_schedule(detector) if schedule is None else schedule
    statistic = -math.inf
    for query in schedule:
        statistic = max(statistic, session.respond(query))
    return Verdict.from_statistic(statistic, cutoff)


def _element_positions(elements):
    return np.asarray([S.positions for S in elements], dtype=np.intp)


def log_lr_statistic(data, instance, cap=None):
    """
    log L(X) = log( 1/|C| sum_S prod_i dP_S/dP_0(x_i) ), evaluated with
    logsumexp so that large exponents never overflow.
    """
    rows = as_data_matrix(data, instance)
    elements = enumerate_class(instance.structure, cap)
    positions = _element_positions(elements)
    n = rows.shape[0]
    if instance.model == SHIFTED_MEAN and instance.alpha == 1.0:
        colsum = rows.sum(axis=0)
        beta, s = instance.beta_star, instance.s_star
        terms = beta * colsum[positions].sum(axis=1) - s * beta ** 2 * n / 2.0
    else:
        blocks = rows[:, positions].sum(axis=2)
        terms = log_lr_from_block_sums(instance, blocks).sum(axis=0)
    return float(logsumexp(terms) - math.log(len(elements)))


def _exp_or_inf(value):
    try:
        return math.exp(value)
    except OverflowError:
        return math.inf


def lr_statistic(data, instance, cap=None):
    """Likelihood ratio L(X) in linear space; inf when not representable."""
    return _exp_or_inf(log_lr_statistic(data, instance, cap))


def _check_square(matrix, cap, label):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Permanent needs a square matrix, got shape {matrix.shape}")
    if matrix.shape[0] > cap:
        raise CapExceededError(f"{label} permanent capped at {cap}x{cap}, got {matrix.shape[0]}x{matrix.shape[0]}")
    return matrix


def _permanent_brute(matrix):
    size = matrix.shape[0]
    rows = np.arange(size)
    return float(sum(np.prod(matrix[rows, list(sigma)]) for sigma in itertools.permutations(range(size))))


def _permanent_ryser(matrix):
    # perm(A) = (-1)^n sum_{S} (-1)^{|S|} prod_i sum_{j in S} a_ij, S walked in Gray-code order
    size = matrix.shape[0]
    if size == 0:
        return 1.0
    rowsums = np.zeros(size)
    gray = 0
    total = 0.0
    for k in range(1, 2 ** size):
        j = (k & -k).bit_length() - 1
        gray ^= 1 << j
        if gray >> j & 1:
            rowsums += matrix[:, j]
        else:
            rowsums -= matrix[:, j]
        sign = -1.0 if bin(gray).count("1") % 2 else 1.0
        total += sign * np.prod(rowsums)
    return float(total if size % 2 == 0 else -total)


def permanent(matrix, method="ryser", cap=None):
    """
    Exact permanent of a square matrix.

    Parameters
    ----------
    matrix : array_like
        Square real matrix
    method : str
        'ryser' (Gray-code inclusion-exclusion) or 'brute' (sum over all
        permutations, used as a cross-check)
    cap : int, optional
        Size cap; defaults to the configured cap for the method

    Returns
    -------
    float
    """
    if method == "ryser":
        return _permanent_ryser(_check_square(matrix, resolve_cap(cap, settings.permanent_cap), "Ryser"))
    if method == "brute":
        return _permanent_brute(_check_square(matrix, resolve_cap(cap, settings.brute_permanent_cap), "Brute-force"))
    raise ValueError(f"Unknown permanent method '{method}'")


def log_permanent_nonnegative(log_entries, cap=None):
    """
    log perm(exp(L)) for a matrix of log-entries, using the row scaling
    perm(D A) = det(D) perm(A) to keep every entry in (0, 1].
    """
    log_entries = np.asarray(log_entries, dtype=float)
    shifts = log_entries.max(axis=1)
    value = permanent(np.exp(log_entries - shifts[:, None]), cap=cap)
    return float(shifts.sum() + math.log(value)) if value > 0 else -math.inf


def _check_matching(instance, max_side):
    if instance.structure.kind != PERFECT_MATCHING:
        raise ValueError("Permanent evaluation needs a perfect-matching instance")
    if instance.model != SHIFTED_MEAN:
        raise ValueError("Permanent evaluation needs the shifted-mean model")
    if max_side is not None and instance.s_star > max_side:
        raise CapExceededError(f"sqrt(d) = {instance.s_star} exceeds the permanent cap {max_side}")


def _edge_sums(rows, r):
    """M[k, k'] = sum over the given rows of the (k, k') edge coordinate."""
    return rows.sum(axis=0).reshape(r, r)


def matching_lr_via_permanent(data, instance, max_side=5):
    """L(X) = exp(-s* beta*^2 n / 2) perm(exp(beta* M)) / s*!"""
    _check_matching(instance, max_side)
    if instance.alpha != 1.0:
        raise ValueError("The permanent form of the likelihood ratio needs alpha = 1")
    rows = as_data_matrix(data, instance)
    r, beta, n = instance.s_star, instance.beta_star, rows.shape[0]
    log_perm = log_permanent_nonnegative(beta * _edge_sums(rows, r))
    return _exp_or_inf(log_perm - math.lgamma(r + 1) - r * beta ** 2 * n / 2.0)


def generalized_permanent_paths(data, instance, row_cap=None):
    """
    Term sum_S prod_i [alpha exp(beta* sum_{j in S} x_ij - s* beta*^2/2) + 1 - alpha]
    evaluated directly and through its expansion over row subsets I,
    each contributing alpha^|I| (1-alpha)^(n-|I|) exp(-s* beta*^2 |I|/2) perm(exp(beta* M_I)).

    Returns
    -------
    tuple of float
        (direct, expansion)
    """
    _check_matching(instance, None)
    rows = as_data_matrix(data, instance)
    n = rows.shape[0]
    row_cap = resolve_cap(row_cap, settings.row_subset_cap)
    if n > row_cap:
        raise CapExceededError(f"Row-subset expansion needs n <= {row_cap}, got n={n}")
    r, beta, alpha = instance.s_star, instance.beta_star, instance.alpha

    elements = enumerate_class(instance.structure)
    blocks = rows[:, _element_positions(elements)].sum(axis=2)
    direct = float(logsumexp(log_lr_from_block_sums(instance, blocks).sum(axis=0)))

    log_terms = []
    for size in range(n + 1):
        weight = alpha ** size * (1.0 - alpha) ** (n - size)
        if weight == 0.0:
            continue
        for subset in itertools.combinations(range(n), size):
            M = _edge_sums(rows[list(subset)], r) if subset else np.zeros((r, r))
            log_terms.append(math.log(weight) - r * beta ** 2 * size / 2.0
                             + log_permanent_nonnegative(beta * M))
    expansion = float(logsumexp(log_terms))
    if abs(direct - expansion) > 1e-8 * max(1.0, abs(direct)):
        log_debug(f"generalized permanent paths disagree: log {direct} vs log {expansion}")
    return _exp_or_inf(direct), _exp_or_inf(expansion)


def generalized_permanent_sum(data, instance, row_cap=None):
    return generalized_permanent_paths(data, instance, row_cap)[0]
