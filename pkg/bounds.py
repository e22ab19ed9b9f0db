"""
Lower-bound machinery: oracle risk bound, the combinatorial quantity and
numeric sup|C(q)|, closed-form bounds, exact chi-square divergences and
phase-regime classification
"""
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from models import h_value
from oracle import distinguishable_set
from structure_classes import enumerate_class, shell_counts
from utils import HypothesisViolatedError, log_debug, settings

SPARSE_SM = "sparse_sm"
MATCHING_SM = "matching_sm"
SPCA = "spca"
PROBLEMS = (SPARSE_SM, MATCHING_SM, SPCA)


class Regime(Enum):
    IMPOSSIBLE = "impossible"
    INTRACTABLE_POSSIBLE = "intractable_possible"
    TRACTABLE = "tractable"
    BOUNDARY = "boundary"


def _clamp_unit(value):
    return min(1.0, max(0.0, value))


def _two_exp(exponent):
    """2 exp(exponent), saturating instead of overflowing."""
    try:
        return 2.0 * math.exp(exponent)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class BoundParams:
    """
    Parameters of the closed-form bounds plus their derived quantities.

    ``delta`` defaults to the configured constant; the sPCA bound derives
    its own delta from d / s*^2 = d^(2 delta).
    """
    d: int
    s_star: int
    n: int
    beta_star: float
    alpha: float = 1.0
    xi: float = 0.05
    delta: float = None

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", settings.delta)
        if self.d < 2 or self.s_star < 1 or self.n < 1:
            raise ValueError(f"Need d >= 2, s* >= 1 and n >= 1, got d={self.d}, s*={self.s_star}, n={self.n}")
        if self.beta_star <= 0 or not 0 < self.alpha <= 1 or not 0 < self.xi < 0.25:
            raise ValueError("Need beta* > 0, alpha in (0, 1] and xi in (0, 1/4)")

    @classmethod
    def from_instance(cls, instance, n, xi, delta=None):
        return cls(instance.d, instance.s_star, int(n), instance.beta_star, instance.alpha, float(xi), delta)

    @property
    def zeta(self):
        return self.d / (2.0 * self.s_star ** 2)

    @property
    def tau(self):
        return math.sqrt(math.log(1.0 / self.xi) / self.n)

    @property
    def gamma(self):
        return self.zeta * math.log1p(self.tau ** 2 / self.alpha ** 2) / (2.0 * self.beta_star ** 2)

    @property
    def gamma_bar(self):
        s, b2 = self.s_star, self.beta_star ** 2
        if b2 >= 1.0:
            raise HypothesisViolatedError(f"gamma-bar needs beta* < 1, got {self.beta_star}")
        inner = 1.0 - (1.0 + 2.0 * s) * b2 / (s ** 2 - s ** 2 * b2)
        if inner <= 0:
            raise HypothesisViolatedError(f"gamma-bar undefined: 1 - (1+2s*) beta*^2/(s*^2 (1-beta*^2)) = {inner:.6g} <= 0")
        return inner ** -0.5

    @property
    def spca_delta(self):
        """delta solving d / s*^2 = d^(2 delta)."""
        return math.log(self.d / self.s_star ** 2) / (2.0 * math.log(self.d))

    def to_dict(self):
        out = {"d": self.d, "s_star": self.s_star, "n": self.n, "beta_star": self.beta_star,
               "alpha": self.alpha, "xi": self.xi, "delta": self.delta,
               "zeta": self.zeta, "tau": self.tau, "gamma": self.gamma}
        try:
            out["gamma_bar"] = self.gamma_bar
        except HypothesisViolatedError:
            out["gamma_bar"] = None
        return out


@dataclass(frozen=True)
class PhasePoint:
    """Exponents of (s*, beta*, n, alpha) in units of log d."""
    p_s: float
    p_beta: float
    p_n: float
    p_alpha: float = 0.0

    def __post_init__(self):
        if self.p_alpha < 0 or self.p_beta < 0:
            raise ValueError(f"p_alpha and p_beta must be nonnegative, got {self.p_alpha}, {self.p_beta}")
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError(f"p_s must lie in [0, 1], got {self.p_s}")

    @classmethod
    def from_parameters(cls, d, s_star, beta_star, n, alpha=1.0):
        log_d = math.log(d)
        return cls(math.log(s_star) / log_d, -math.log(beta_star) / log_d,
                   math.log(n) / log_d, -math.log(alpha) / log_d)


def risk_lower_bound(T, sup_cq, class_size, xi):
    """
    Oracle-complexity risk bound:
    min{1 - T sup/|C| + min{2 xi, T/|C|, sup/|C|}, T/|C| + 1 - 2 xi, 1}.
    """
    if T < 0 or sup_cq < 0 or class_size < 1 or not 0 <= xi < 0.25:
        raise ValueError(f"Invalid bound inputs: T={T}, sup={sup_cq}, |C|={class_size}, xi={xi}")
    size = float(class_size)
    first = 1.0 - T * sup_cq / size + min(2.0 * xi, T / size, sup_cq / size)
    return min(first, T / size + 1.0 - 2.0 * xi, 1.0)


def _check_pair(structure, instance):
    if structure != instance.structure:
        raise ValueError("The structure class does not match the instance's class")


def combinatorial_quantity(structure, instance, m):
    """
    Average of h(|S ∩ S'|) over S' uniform on the Hamming ball of size m.

    Computed from shell counts: whole shells weighted by their counts and
    the last, partial shell by the remainder.
    """
    _check_pair(structure, instance)
    if not 1 <= m <= structure.cardinality:
        raise ValueError(f"m must lie in [1, {structure.cardinality}], got {m}")
    s = structure.s_star
    remaining = m
    parts = []
    for j, count in enumerate(shell_counts(structure).counts):
        take = min(count, remaining)
        if take:
            parts.append(take * h_value(instance, s - j))
        remaining -= take
        if remaining == 0:
            break
    return math.fsum(parts) / m


def sup_distinguishable_numeric(structure, instance, n, xi, method="bisect"):
    """
    Largest m for which the combinatorial quantity still reaches
    1 + log(1/xi)/n; 0 when even m = 1 falls short.
    """
    threshold = 1.0 + math.log(1.0 / xi) / n
    size = structure.cardinality

    def holds(m):
        return combinatorial_quantity(structure, instance, m) >= threshold

    if method == "linear":
        best = 0
        for m in range(1, size + 1):
            if not holds(m):
                break
            best = m
        return best
    if method != "bisect":
        raise ValueError(f"Unknown search method '{method}'")
    if not holds(1):
        return 0
    lo, hi = 1, size
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if holds(mid):
            lo = mid
        else:
            hi = mid - 1
    log_debug(f"sup |C(q)| <= {lo} of {size} (threshold {threshold:.6g})")
    return lo


def closed_form_bound_sparse(params, setting="i"):
    """
    Closed-form bound on sup|C(q)|/|C| for sparse sets.

    Parameters
    ----------
    params : BoundParams
        Problem parameters
    setting : str
        'i' for the regime governed by zeta, 'ii' for the regime governed
        by gamma

    Returns
    -------
    float
        Bound clamped to [0, 1]
    """
    if setting == "i":
        log_ratio = math.log1p(params.tau ** 2 / params.alpha ** 2) / params.beta_star ** 2
        value = _two_exp(-math.log(params.zeta) * (log_ratio - 2.0))
    elif setting == "ii":
        gamma = params.gamma
        value = _two_exp(-math.log(gamma) * (2.0 * gamma * params.s_star ** 2 / params.d - 1.0))
    else:
        raise ValueError(f"Unknown sparse-bound setting '{setting}', expected 'i' or 'ii'")
    return _clamp_unit(value)


def matching_hypothesis(params):
    """(lhs, rhs) of log(1 + tau^2/alpha^2)/beta*^2 >= 3 d^delta / 2 + 1."""
    lhs = math.log1p(params.tau ** 2 / params.alpha ** 2) / params.beta_star ** 2
    return lhs, 1.5 * params.d ** params.delta + 1.0


def closed_form_bound_matching(params):
    lhs, rhs = matching_hypothesis(params)
    if lhs < rhs:
        raise HypothesisViolatedError(
            f"Matching bound needs log(1+tau^2/alpha^2)/beta*^2 >= 3 d^delta/2 + 1, got {lhs:.6g} < {rhs:.6g}")
    delta = params.delta
    return _clamp_unit(_two_exp(-delta * math.log(params.d) * 3.0 * params.d ** delta / 8.0))


def spca_precondition(params):
    """(lhs, rhs) of 2 d^(-delta) (gamma_bar - 1) <= tau^2 with the derived delta."""
    delta = params.spca_delta
    return 2.0 * params.d ** -delta * (params.gamma_bar - 1.0), params.tau ** 2


def closed_form_bound_spca(params):
    delta = params.spca_delta
    if delta <= 0:
        raise HypothesisViolatedError(f"sPCA bound needs d > s*^2, got d={params.d}, s*={params.s_star}")
    lhs, rhs = spca_precondition(params)
    if lhs > rhs:
        raise HypothesisViolatedError(
            f"sPCA bound needs 2 d^-delta (gamma_bar - 1) <= tau^2, got {lhs:.6g} > {rhs:.6g}")
    ratio = (1.0 + params.tau ** 2) / (1.0 + lhs)
    brace = max(0.0, 1.0 - ratio ** -2)
    inner = params.s_star / params.beta_star * math.sqrt(brace) - 1.0
    return _clamp_unit(_two_exp(-delta * math.log(params.d) * inner))


def _h_table(instance, n):
    return np.array([h_value(instance, z) ** n for z in range(instance.s_star + 1)])


def chi2_mixture_exact(structure, instance, subset=None, n=1, cap=None):
    """
    chi^2 between the uniform mixture of P_S^n and P_0^n.

    The full class uses the overlap distribution, E_Z[h(Z)^n] - 1; an
    explicit subset uses the pairwise sum over ordered pairs.
    """
    _check_pair(structure, instance)
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    table = _h_table(instance, n)
    s = structure.s_star
    if subset is None:
        shells = shell_counts(structure)
        total = math.fsum(count * table[s - j] for j, count in enumerate(shells.counts))
        return total / shells.total - 1.0
    subset = list(subset)
    if not subset:
        raise ValueError("chi-square of an empty mixture is undefined")
    masks = np.array([S.mask() for S in subset], dtype=np.int64)
    overlaps = masks @ masks.T
    return math.fsum(table[overlaps].ravel()) / len(subset) ** 2 - 1.0


def chi2_pairwise(structure, instance, n=1, cap=None):
    """Full-class chi^2 by explicit pairwise enumeration."""
    return chi2_mixture_exact(structure, instance, enumerate_class(structure, cap), n)


def lecam_risk_lower_bound(chi2):
    if chi2 < 0:
        raise ValueError(f"chi-square must be nonnegative, got {chi2}")
    return max(0.0, 1.0 - math.sqrt(chi2))


def lecam_report(structure, instance, n):
    chi2 = chi2_mixture_exact(structure, instance, n=n)
    return {"chi2": chi2, "tv_upper": min(1.0, math.sqrt(chi2)),
            "risk_lower_bound": lecam_risk_lower_bound(chi2), "n": n}


def distinguishable_chi2_margin(query, instance, config, cap=None):
    """
    chi^2(uniform over C(q), P_0) - log(1/xi)/n, or None when C(q) is empty.
    A nonnegative margin is what every distinguishable set must satisfy.
    """
    members = distinguishable_set(query, instance, config, cap)
    if not members:
        return None
    chi2 = chi2_mixture_exact(instance.structure, instance, members, n=1)
    return chi2 - math.log(1.0 / config.xi) / config.n


def _positive_part(a):
    return a if a > 0 else 0.0


def _sign(value, tol):
    if abs(value) <= tol:
        return 0
    return 1 if value > 0 else -1


def normalize_problem(problem):
    tag = str(problem).strip().lower().replace("-", "_")
    if tag not in PROBLEMS:
        raise ValueError(f"Unknown problem '{problem}', expected one of {PROBLEMS}")
    return tag


def phase_classify(point, problem, tol=None):
    """
    Regime of an exponent tuple for one of the three problems.

    Any defining comparison within ``tol`` of zero gives ``boundary``.
    """
    problem = normalize_problem(problem)
    tol = settings.boundary_tol if tol is None else tol

    if problem == SPCA:
        tractable = -point.p_beta - (point.p_s - point.p_n / 2.0)
        possible = -point.p_beta - (point.p_s - point.p_n) / 2.0
        sign_t, sign_p = _sign(tractable, tol), _sign(possible, tol)
        if sign_t == 0 or sign_p == 0:
            return Regime.BOUNDARY
        if sign_t > 0:
            return Regime.TRACTABLE
        return Regime.IMPOSSIBLE if sign_p < 0 else Regime.INTRACTABLE_POSSIBLE

    p_s = 0.5 if problem == MATCHING_SM else point.p_s
    a = _positive_part(point.p_n - 2.0 * point.p_alpha) - 2.0 * point.p_beta
    if problem == SPARSE_SM:
        a += _positive_part(2.0 * p_s - 1.0)
    signs = (_sign(a, tol), _sign(p_s - 2.0 * point.p_beta, tol),
             _sign(point.p_n - point.p_alpha - 2.0 * point.p_beta, tol))
    if 0 in signs:
        return Regime.BOUNDARY
    sign_a, sign_b1, sign_b2 = signs
    if sign_a > 0:
        return Regime.TRACTABLE
    if sign_b1 < 0 or sign_b2 < 0:
        return Regime.IMPOSSIBLE
    return Regime.INTRACTABLE_POSSIBLE


def weighted_monotone_average(a, b, h, rtol=1e-9):
    """
    Weighted averages (sum h a / sum a, sum h b / sum b) for positive
    weights where b grows geometrically with ratio kappa > 1, a grows with
    ratios at least kappa, and h is nonincreasing; the first never
    exceeds the second.
    """
    a, b, h = (np.asarray(v, dtype=float) for v in (a, b, h))
    if not (a.shape == b.shape == h.shape) or a.ndim != 1 or a.size == 0:
        raise ValueError("a, b and h must be nonempty sequences of equal length")
    if np.any(a <= 0) or np.any(b <= 0):
        raise HypothesisViolatedError("Weights a and b must be positive")
    if np.any(np.diff(h) > 0):
        raise HypothesisViolatedError("h must be nonincreasing")
    if a.size > 1:
        b_ratios = b[1:] / b[:-1]
        kappa = b_ratios[0]
        if kappa <= 1 or np.any(np.abs(b_ratios - kappa) > rtol * kappa):
            raise HypothesisViolatedError("b must grow geometrically with a ratio kappa > 1")
        if np.any(a[1:] / a[:-1] < kappa * (1.0 - rtol)):
            raise HypothesisViolatedError("a must grow with ratios at least kappa")
    return float(np.dot(h, a) / a.sum()), float(np.dot(h, b) / b.sum())