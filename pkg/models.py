"""
Detection models: shifted-mean Gaussian mixture and spiked covariance
"""
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from structure_classes import IndexSet, StructureClass
from utils import DimensionMismatchError, log_debug, settings

SHIFTED_MEAN = "shifted_mean"
SPIKED_COVARIANCE = "spiked_covariance"
MODEL_KINDS = (SHIFTED_MEAN, SPIKED_COVARIANCE)

NULL = "null"
ALTERNATIVE = "alternative"

# Canonical query families with closed-form expectations
COORDINATE_THRESHOLD = "coordinate_threshold"
SCALED_SUM_THRESHOLD = "scaled_sum_threshold"
SUBSET_SUM_THRESHOLD = "subset_sum_threshold"
COORDINATE_SQUARE_THRESHOLD = "coordinate_square_threshold"
SUBSET_SQUARE_THRESHOLD = "subset_square_threshold"
CONSTANT = "constant"
LINEAR_FAMILIES = (COORDINATE_THRESHOLD, SCALED_SUM_THRESHOLD, SUBSET_SUM_THRESHOLD)
SQUARE_FAMILIES = (COORDINATE_SQUARE_THRESHOLD, SUBSET_SQUARE_THRESHOLD)
QUERY_FAMILIES = LINEAR_FAMILIES + SQUARE_FAMILIES + (CONSTANT,)


def std_normal_cdf(x):
    """Standard normal CDF, shared by every threshold in the lab."""
    return ndtr(x)


def std_normal_sf(x):
    return ndtr(-np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemInstance:
    """
    A detection problem: model, structure class and signal parameters.

    ``alpha`` is the mixture weight of the shifted-mean alternative and is
    pinned to 1 for the spiked covariance model.
    """
    model: str
    structure: StructureClass
    beta_star: float
    alpha: float = 1.0
    planted: IndexSet = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"Unknown model '{self.model}', expected one of {MODEL_KINDS}")
        if self.model == SPIKED_COVARIANCE:
            if not 0.0 < self.beta_star < 1.0:
                raise ValueError(f"Spiked covariance needs 0 < beta* < 1, got {self.beta_star}")
            object.__setattr__(self, "alpha", 1.0)
        else:
            if self.beta_star < 0:
                raise ValueError(f"beta* must be nonnegative, got {self.beta_star}")
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.planted is not None:
            self.structure.check_member(self.planted)

    @property
    def d(self):
        return self.structure.d

    @property
    def s_star(self):
        return self.structure.s_star

    def with_planted(self, S):
        return replace(self, planted=S)

    def describe(self):
        return {"model": self.model, **self.structure.describe(),
                "beta_star": self.beta_star, "alpha": self.alpha,
                "planted": None if self.planted is None else self.planted.to_list()}


@dataclass(frozen=True)
class QueryDescriptor:
    """Tag of a canonical query family; coords are 1-based."""
    family: str
    coords: tuple = ()
    threshold: float = 0.0

    def __post_init__(self):
        if self.family not in QUERY_FAMILIES:
            raise ValueError(f"Unknown query family '{self.family}'")
        object.__setattr__(self, "coords", tuple(int(j) for j in self.coords))

    @property
    def scale(self):
        if self.family in (SCALED_SUM_THRESHOLD, SUBSET_SQUARE_THRESHOLD):
            return 1.0 / math.sqrt(len(self.coords))
        return 1.0

    def to_dict(self):
        return {"family": self.family, "coords": list(self.coords), "threshold": self.threshold}


@dataclass(frozen=True)
class QueryMoments:
    mean: float
    variance: float
    std_error: float = 0.0
    exact: bool = True


def resolve_truth(instance, hypothesis_or_S):
    """Map 'null' / 'alternative' / an IndexSet to the true support (None under the null)."""
    if hypothesis_or_S is None or hypothesis_or_S == NULL:
        return None
    if isinstance(hypothesis_or_S, IndexSet):
        instance.structure.check_member(hypothesis_or_S)
        return hypothesis_or_S
    if hypothesis_or_S == ALTERNATIVE:
        if instance.planted is None:
            raise ValueError("The alternative hypothesis needs a planted set on the instance")
        return instance.planted
    raise ValueError(f"Unknown hypothesis '{hypothesis_or_S}'")


def sample(instance, hypothesis, n, rng):
    """
    Draw an n x d data matrix under the null or the alternative.

    Parameters
    ----------
    instance : ProblemInstance
        Model and parameters
    hypothesis : str or IndexSet
        'null', 'alternative' (uses the planted set) or an explicit support
    n : int
        Number of rows
    rng : numpy.random.Generator
        Random stream

    Returns
    -------
    numpy.ndarray
        Data matrix of shape (n, d)
    """
    if n < 1:
        raise ValueError(f"Sample size must be at least 1, got n={n}")
    truth = resolve_truth(instance, hypothesis)
    data = rng.standard_normal((n, instance.d))
    if truth is None:
        return data
    cols = truth.positions
    if instance.model == SHIFTED_MEAN:
        # latent mixture coin, never returned
        coins = rng.random(n) < instance.alpha
        data[np.ix_(coins, cols)] += instance.beta_star
    else:
        g = rng.standard_normal(n)
        data[:, cols] += math.sqrt(instance.beta_star / instance.s_star) * g[:, None]
    return data


def _as_rows(x, d):
    rows = np.asarray(x, dtype=float)
    single = rows.ndim == 1
    rows = np.atleast_2d(rows)
    if rows.shape[1] != d:
        raise DimensionMismatchError(f"Observation length {rows.shape[1]} does not match d={d}")
    return rows, single


def as_data_matrix(data, instance):
    """Validate an n x d data matrix for ``instance``."""
    rows = np.asarray(data, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError(f"Data must be a nonempty n x d matrix, got shape {rows.shape}")
    if rows.shape[1] != instance.d:
        raise DimensionMismatchError(f"Data has {rows.shape[1]} columns, instance has d={instance.d}")
    return rows


def log_lr_from_block_sums(instance, block):
    """
    Per-row log dP_S/dP_0 from the block sums sum_{j in S} x_j.

    The likelihood ratio depends on a row only through this sum, for
    both models, so scans over C can share one block-sum matrix.
    """
    block = np.asarray(block, dtype=float)
    beta, s = instance.beta_star, instance.s_star
    if instance.model == SHIFTED_MEAN:
        u = beta * block - s * beta ** 2 / 2.0
        if instance.alpha == 1.0:
            return u
        if instance.alpha == 0.0:
            return np.zeros_like(u)
        return np.logaddexp(math.log(instance.alpha) + u, math.log1p(-instance.alpha))
    return -0.5 * math.log1p(beta) + beta / (2.0 * (1.0 + beta)) * block ** 2 / s


def log_likelihood_ratio(instance, S, x):
    """log dP_S/dP_0 at each row of ``x`` (a vector or a matrix of rows)."""
    instance.structure.check_member(S)
    rows, single = _as_rows(x, instance.d)
    out = log_lr_from_block_sums(instance, rows[:, S.positions].sum(axis=1))
    return float(out[0]) if single else out


def likelihood_ratio_point(instance, S, x):
    value = np.exp(log_likelihood_ratio(instance, S, x))
    return float(value) if np.ndim(value) == 0 else value


def h_value(instance, overlap):
    """E_0[(dP_S1/dP_0)(dP_S2/dP_0)] as a function of |S1 ∩ S2|."""
    s = instance.s_star
    if not 0 <= overlap <= s:
        raise ValueError(f"Overlap must lie in [0, {s}], got {overlap}")
    beta = instance.beta_star
    if instance.model == SHIFTED_MEAN:
        a2 = instance.alpha ** 2
        return a2 * math.exp(overlap * beta ** 2) + 1.0 - a2
    return (1.0 - beta ** 2 * overlap ** 2 / s ** 2) ** -0.5


def _linear_form_components(instance, truth, descriptor):
    """Gaussian mixture components (weight, mean, sd) of the query's linear form."""
    scale = descriptor.scale
    norm2 = scale ** 2 * len(descriptor.coords)
    if truth is None:
        return [(1.0, 0.0, math.sqrt(norm2))]
    k = len(set(descriptor.coords) & set(truth.indices))
    if instance.model == SHIFTED_MEAN:
        sd = math.sqrt(norm2)
        comps = [(instance.alpha, instance.beta_star * scale * k, sd),
                 (1.0 - instance.alpha, 0.0, sd)]
        return [c for c in comps if c[0] > 0.0]
    wv = scale * k / math.sqrt(instance.s_star)
    return [(1.0, 0.0, math.sqrt(norm2 + instance.beta_star * wv ** 2))]


def _closed_form_mean(instance, truth, descriptor):
    if descriptor.family == CONSTANT:
        return descriptor.threshold
    c = descriptor.threshold
    total = 0.0
    for weight, mu, sd in _linear_form_components(instance, truth, descriptor):
        if descriptor.family in LINEAR_FAMILIES:
            total += weight * float(std_normal_sf((c - mu) / sd))
        elif c <= 0.0:
            total += weight
        else:
            root = math.sqrt(c)
            total += weight * float(std_normal_sf((root - mu) / sd) + std_normal_cdf((-root - mu) / sd))
    return total


def _monte_carlo_moments(instance, truth, query, rng, samples):
    rng = np.random.default_rng(settings.mc_seed) if rng is None else rng
    samples = settings.mc_samples if samples is None else int(samples)
    data = sample(instance, NULL if truth is None else truth, samples, rng)
    values = query.evaluate(data)
    var = float(values.var(ddof=1)) if samples > 1 else 0.0
    log_debug(f"Monte Carlo expectation over {samples} samples")
    return QueryMoments(float(values.mean()), var, math.sqrt(var / samples), exact=False)


def query_moments(instance, hypothesis_or_S, query, rng=None, samples=None):
    """
    Mean and variance of q(X) under P_0 or P_S.

    Canonical indicator families are evaluated in closed form; any other
    bounded query falls back to Monte Carlo with a reported standard error.
    """
    truth = resolve_truth(instance, hypothesis_or_S)
    descriptor = getattr(query, "descriptor", None)
    if descriptor is None:
        return _monte_carlo_moments(instance, truth, query, rng, samples)
    if descriptor.coords and max(descriptor.coords) > instance.d:
        raise DimensionMismatchError(f"Query touches coordinate {max(descriptor.coords)} > d={instance.d}")
    mean = _closed_form_mean(instance, truth, descriptor)
    if descriptor.family == CONSTANT:
        return QueryMoments(mean, 0.0)
    return QueryMoments(mean, mean * (1.0 - mean))


def expected_query_value(instance, hypothesis_or_S, query, rng=None, samples=None):
    return query_moments(instance, hypothesis_or_S, query, rng, samples).mean
