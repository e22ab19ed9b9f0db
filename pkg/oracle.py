"""
Statistical-query oracle protocol: tolerance accounting, data-backed and
ideal oracles, transcript validation, distinguishable sets and the
worst-case adversarial oracle
"""
import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from models import (CONSTANT, COORDINATE_SQUARE_THRESHOLD, COORDINATE_THRESHOLD,
                    NULL, SCALED_SUM_THRESHOLD, SUBSET_SQUARE_THRESHOLD,
                    SUBSET_SUM_THRESHOLD, QueryDescriptor, expected_query_value,
                    query_moments, resolve_truth)
from structure_classes import enumerate_class
from utils import BudgetExceededError, log_debug

NULL_WORSTCASE = "null_worstcase"

CASE_CONFUSABLE = "confusable_sequence"
CASE_UNIFORM = "uniform_remainder"
CASE_UNDECLARED = "undeclared_schedule"

# Evaluation slack for the |q(x)| <= b check
_RANGE_SLACK = 1e-12


def _descriptor_evaluator(descriptor):
    family = descriptor.family
    cols = np.asarray(descriptor.coords, dtype=np.intp) - 1
    c = descriptor.threshold

    if family == CONSTANT:
        return lambda X: np.full(X.shape[0], c, dtype=float)
    if family == COORDINATE_THRESHOLD:
        return lambda X: (X[:, cols[0]] >= c).astype(float)
    if family == COORDINATE_SQUARE_THRESHOLD:
        return lambda X: (X[:, cols[0]] ** 2 >= c).astype(float)
    scale = descriptor.scale
    if family in (SCALED_SUM_THRESHOLD, SUBSET_SUM_THRESHOLD):
        return lambda X: (scale * X[:, cols].sum(axis=1) >= c).astype(float)
    return lambda X: ((scale * X[:, cols].sum(axis=1)) ** 2 >= c).astype(float)


@dataclass(eq=False)
class Query:
    """
    A bounded query q : R^d -> [-b, b].

    ``evaluator`` maps an (n, d) array of rows to n values. Canonical
    families carry a descriptor, which unlocks closed-form moments.
    """
    evaluator: object
    bound_b: float = 1.0
    descriptor: QueryDescriptor = None
    name: str = ""

    def __post_init__(self):
        if self.bound_b <= 0:
            raise ValueError(f"Query bound b must be positive, got {self.bound_b}")

    @property
    def key(self):
        return self.descriptor if self.descriptor is not None else id(self)

    def evaluate(self, data):
        rows = np.atleast_2d(np.asarray(data, dtype=float))
        values = np.asarray(self.evaluator(rows), dtype=float).reshape(rows.shape[0])
        if np.any(np.abs(values) > self.bound_b + _RANGE_SLACK):
            raise ValueError(f"Query '{self.label}' left its range [-{self.bound_b}, {self.bound_b}]")
        return values

    def __call__(self, x):
        return float(self.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0])

    @property
    def label(self):
        if self.name:
            return self.name
        if self.descriptor is not None:
            coords = self.descriptor.coords
            shown = coords if len(coords) <= 6 else coords[:3] + ("...",) + coords[-2:]
            return f"{self.descriptor.family}{list(shown)}>={self.descriptor.threshold:.6g}"
        return "custom"

    def describe(self):
        if self.descriptor is not None:
            return {**self.descriptor.to_dict(), "bound_b": self.bound_b}
        return {"family": "custom", "name": self.label, "bound_b": self.bound_b}


def _canonical(family, coords, threshold):
    descriptor = QueryDescriptor(family, tuple(coords), float(threshold))
    return Query(_descriptor_evaluator(descriptor), 1.0, descriptor)


def coordinate_threshold(t, c):
    """q(x) = 1(x_t >= c)"""
    return _canonical(COORDINATE_THRESHOLD, (t,), c)


def scaled_sum_threshold(d, c):
    """q(x) = 1(sum_j x_j / sqrt(d) >= c)"""
    return _canonical(SCALED_SUM_THRESHOLD, range(1, d + 1), c)


def subset_sum_threshold(indices, c):
    """q(x) = 1(sum_{j in A} x_j >= c)"""
    return _canonical(SUBSET_SUM_THRESHOLD, indices, c)


def coordinate_square_threshold(t, c):
    """q(x) = 1(x_t^2 >= c)"""
    return _canonical(COORDINATE_SQUARE_THRESHOLD, (t,), c)


def subset_square_threshold(indices, c):
    """q(x) = 1((sum_{j in A} x_j)^2 / |A| >= c)"""
    return _canonical(SUBSET_SQUARE_THRESHOLD, indices, c)


def constant_query(c):
    descriptor = QueryDescriptor(CONSTANT, (), float(c))
    return Query(_descriptor_evaluator(descriptor), max(1.0, abs(float(c))), descriptor)


def custom_query(evaluator, bound_b, name="custom"):
    return Query(evaluator, float(bound_b), None, name)


@dataclass(frozen=True)
class OracleConfig:
    """
    Tolerance accounting for one oracle: sample size n, tail probability
    xi, query-space capacity eta and query range b.
    """
    n: int
    xi: float
    eta: float = 0.0
    bound_b: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Sample size must be at least 1, got n={self.n}")
        if not 0.0 < self.xi < 0.25:
            raise ValueError(f"xi must lie in (0, 1/4), got {self.xi}; the xi = 0 oracle is the ideal oracle")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.bound_b <= 0:
            raise ValueError(f"b must be positive, got {self.bound_b}")

    @classmethod
    def for_query_count(cls, n, xi, count, bound_b=1.0):
        """Config whose eta is the log-cardinality of a countable query space."""
        return cls(int(n), float(xi), math.log(count) if count > 1 else 0.0, float(bound_b))

    @property
    def log_term(self):
        return self.eta + math.log(1.0 / self.xi)


def tolerance(config, variance):
    """
    Bernstein tolerance tau_q for a query with the given variance.

    Parameters
    ----------
    config : OracleConfig
        Oracle parameters (n, xi, eta, b)
    variance : float
        Var[q(X)] under the true distribution

    Returns
    -------
    float
        max{2b/3 (eta + log(1/xi))/n, sqrt(2 Var (eta + log(1/xi))/n)}
    """
    if variance < 0:
        raise ValueError(f"Variance must be nonnegative, got {variance}")
    if config.xi <= 0:
        raise ValueError("xi = 0 gives an infinite tolerance term")
    term = config.log_term / config.n
    return max(2.0 * config.bound_b / 3.0 * term, math.sqrt(2.0 * variance * term))


def reduced_tolerance(config, variance_under_null):
    return tolerance(replace(config, eta=0.0), variance_under_null)


def vstat_tolerance(n, variance, bound_b=1.0):
    """Tolerance of the xi = 0, eta = 0 oracle, which n samples cannot honour."""
    return max(2.0 * bound_b / (3.0 * n), math.sqrt(2.0 * variance / n))


@dataclass
class TranscriptEntry:
    query: Query
    response: float
    ideal: bool = False


@dataclass
class OracleTranscript:
    entries: list = field(default_factory=list)

    def append(self, query, response, ideal=False):
        response = float(response)
        if not math.isfinite(response):
            raise ValueError(f"Oracle response must be finite, got {response}")
        self.entries.append(TranscriptEntry(query, response, ideal))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def responses(self):
        return [entry.response for entry in self.entries]

    def digest(self):
        """Stable hash of the (query, response) sequence."""
        payload = [[entry.query.describe(), repr(entry.response)] for entry in self.entries]
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def data_oracle_respond(query, data):
    rows = np.atleast_2d(np.asarray(data, dtype=float))
    if rows.shape[0] == 0:
        raise ValueError("The data oracle needs at least one row")
    return float(query.evaluate(rows).mean())


def ideal_oracle_respond(query, instance, hypothesis_or_S):
    return expected_query_value(instance, hypothesis_or_S, query)


class OracleSession:
    """One logical oracle session: budget accounting plus a transcript."""

    ideal = False

    def __init__(self, budget=None):
        self.budget = budget
        self.transcript = OracleTranscript()

    def respond(self, query):
        if self.budget is not None and len(self.transcript) >= self.budget:
            raise BudgetExceededError(f"Oracle budget of {self.budget} queries exhausted")
        value = self._answer(query)
        self.transcript.append(query, value, ideal=self.ideal)
        return value

    def _answer(self, query):
        raise NotImplementedError


class DataOracle(OracleSession):
    def __init__(self, data, budget=None):
        super().__init__(budget)
        self.data = np.atleast_2d(np.asarray(data, dtype=float))

    def _answer(self, query):
        return data_oracle_respond(query, self.data)


class IdealOracle(OracleSession):
    ideal = True

    def __init__(self, instance, hypothesis_or_S, budget=None):
        super().__init__(budget)
        self.instance = instance
        self.truth = resolve_truth(instance, hypothesis_or_S)

    def _answer(self, query):
        return ideal_oracle_respond(query, self.instance, self.truth)


def _expectation_key(query, S):
    # canonical expectations depend on S only through |coords ∩ S|
    if query.descriptor is not None:
        return len(set(query.descriptor.coords) & set(S.indices))
    return S


def distinguishable_set(query, instance, config, cap=None):
    """
    C(q): elements whose expectation gap strictly exceeds the reduced
    tolerance evaluated with the null variance.
    """
    null = query_moments(instance, NULL, query)
    tau_bar = reduced_tolerance(config, null.variance)
    memo = {}
    out = []
    for S in enumerate_class(instance.structure, cap):
        key = _expectation_key(query, S)
        if key not in memo:
            memo[key] = expected_query_value(instance, S, query)
        if abs(memo[key] - null.mean) > tau_bar:
            out.append(S)
    return out


@dataclass
class AdversaryState:
    """
    Worst-case oracle for one game. Under the null it commits to a
    planted set (or to truthful null answers) on the first query and
    answers consistently afterwards; under alternative(S) it is truthful.
    """
    instance: object
    config: OracleConfig
    budget: int
    mode: object = NULL_WORSTCASE
    schedule: list = None
    rng: object = None
    case: str = CASE_UNDECLARED
    plan: list = field(default_factory=list)
    distinguishable: list = field(default_factory=list)
    confusable: list = field(default_factory=list)
    remaining: list = field(default_factory=list)
    calls: int = 0
    committed: object = None
    has_committed: bool = False

    @property
    def structure(self):
        return self.instance.structure

    @property
    def schedule_keys(self):
        return {q.key for q in self.schedule or ()}


def commitment_plan(instance, config, schedule, cap=None):
    """
    Build the null commitment distribution for a declared schedule.

    Returns
    -------
    tuple
        (case, plan, distinguishable, confusable, remaining); ``plan`` is a
        list of (probability, target) where target None means truthful
        null answers
    """
    elements = enumerate_class(instance.structure, cap)
    sets = [set(distinguishable_set(q, instance, config, cap)) for q in schedule]
    union = set().union(*sets) if sets else set()
    remaining = [S for S in elements if S not in union]
    T = len(schedule)

    confusable = []
    for t in range(T):
        others = set().union(*(sets[u] for u in range(T) if u != t))
        private = [S for S in elements if S in sets[t] and S not in others]
        if not private:
            confusable = None
            break
        confusable.append(private[0])

    m = len(remaining)
    if T > 0 and confusable is not None:
        plan = [(2.0 * config.xi / T, S) for S in confusable]
        plan += [((1.0 - 2.0 * config.xi) / m, S) for S in remaining] if m else [(1.0 - 2.0 * config.xi, None)]
        case = CASE_CONFUSABLE
    else:
        plan = [(1.0 / m, S) for S in remaining] if m else [(1.0, None)]
        case = CASE_UNIFORM
        confusable = []
    log_debug(f"adversary plan: case={case}, T={T}, |union C(q_t)|={len(union)}, m={m}")
    return case, plan, [sorted(s, key=lambda S: S.indices) for s in sets], confusable, remaining


def init_adversary(instance, config, budget, mode=NULL_WORSTCASE, schedule=None, rng=None, cap=None):
    """
    Prepare an adversarial oracle for a detector with total budget T.

    Without a declared schedule the commitment is uniform over C and a
    committed set is never revealed through a query that distinguishes it.
    """
    state = AdversaryState(instance, config, int(budget), mode,
                           list(schedule) if schedule is not None else None,
                           rng if rng is not None else np.random.default_rng(0))
    if mode != NULL_WORSTCASE:
        resolve_truth(instance, mode)
        return state
    if schedule is not None:
        if len(schedule) > budget:
            raise BudgetExceededError(f"Declared schedule has {len(schedule)} queries, budget is {budget}")
        (state.case, state.plan, state.distinguishable,
         state.confusable, state.remaining) = commitment_plan(instance, config, state.schedule, cap)
    else:
        elements = enumerate_class(instance.structure, cap)
        state.plan = [(1.0 / len(elements), S) for S in elements]
        state.remaining = elements
    return state


def _draw(plan, rng):
    u = rng.random()
    acc = 0.0
    for prob, target in plan:
        acc += prob
        if u < acc:
            return target
    return plan[-1][1]


def commit(state):
    """Draw the committed target from the plan."""
    return commit_to(state, _draw(state.plan, state.rng))


def commit_to(state, target):
    """Fix the committed target explicitly (None: truthful null answers)."""
    state.committed = target
    state.has_committed = True
    return target


def adversary_respond(state, query):
    if state.calls >= state.budget:
        raise BudgetExceededError(f"Adversary budget of {state.budget} queries exhausted")
    state.calls += 1
    instance = state.instance
    if state.mode != NULL_WORSTCASE:
        return expected_query_value(instance, state.mode, query)
    if not state.has_committed:
        commit(state)
    target = state.committed
    if target is None:
        return expected_query_value(instance, NULL, query)
    if state.schedule is not None and query.key not in state.schedule_keys:
        return expected_query_value(instance, NULL, query)
    if state.schedule is None and target in distinguishable_set(query, instance, state.config):
        return expected_query_value(instance, NULL, query)
    return expected_query_value(instance, target, query)


class AdversarialOracle(OracleSession):
    def __init__(self, state):
        super().__init__(None)
        self.state = state

    def _answer(self, query):
        return adversary_respond(self.state, query)


def audit_transcript(transcript, instance, hypothesis_or_S, config):
    """Per-query audit records: response, expectation, tolerance, pass/fail."""
    records = []
    for index, entry in enumerate(transcript):
        moments = query_moments(instance, hypothesis_or_S, entry.query)
        tau = tolerance(config, moments.variance)
        deviation = abs(entry.response - moments.mean)
        records.append({"index": index, "query": entry.query.describe(),
                        "response": entry.response, "expectation": moments.mean,
                        "tolerance": tau, "deviation": deviation,
                        "pass": bool(deviation <= tau), "ideal": entry.ideal})
    return records


def validate_transcript(transcript, instance, hypothesis_or_S, config):
    return all(record["pass"] for record in audit_transcript(transcript, instance, hypothesis_or_S, config))


def write_transcript_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
