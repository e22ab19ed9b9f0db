"""
Monte Carlo risk estimation, adversarial oracle games, parameter sweeps
and result persistence with deterministic counter-based seeding
"""
import functools
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd

from bounds import (MATCHING_SM, SPARSE_SM, SPCA, PhasePoint, normalize_problem,
                    phase_classify, risk_lower_bound, sup_distinguishable_numeric)
from detectors import (LR, MATCHING_MEAN_SETTINGS, PM_SM1, PM_SM3, PM_SM4A, REJECT_NULL,
                       SM1, SM2, SM3, SM4A, SPCA1, SPCA2, SPCA_SETTINGS, Detector, build_schedule,
                       oracle_config, query_count, run, signal_ratio)
from models import (NULL, SHIFTED_MEAN, SPIKED_COVARIANCE, ProblemInstance,
                    query_moments, sample)
from oracle import (NULL_WORSTCASE, AdversarialOracle, DataOracle, IdealOracle,
                    commit_to, data_oracle_respond, init_adversary, tolerance,
                    validate_transcript, vstat_tolerance)
from structure_classes import (PERFECT_MATCHING, SPARSE_SET, StructureClass,
                               enumerate_class, sample_uniform)
from utils import CapExceededError, log_debug, settings

ORACLE_MODES = ("data", "ideal", "adversarial")
AUTO_SETTING = "auto"

# Stream roles of the counter-based generator
ROLE_IDS = {"data_null": 0, "data_alternative": 1, "planted": 2, "adversary": 3}

RISK_COLUMNS = ["setting", "d", "s_star", "beta_star", "alpha", "n", "xi", "oracle_mode",
                "trials", "seed", "type1_hat", "type2_hat", "risk_hat", "ci_halfwidth"]
PHASE_COLUMNS = ["problem", "p_s", "p_beta", "p_n", "p_alpha", "regime"]

WALD_Z = 1.959963984540054


def rng_stream(seed, trial, role):
    """Philox generator keyed by (seed, trial, role), independent of scheduling order."""
    key = np.random.SeedSequence(int(seed), spawn_key=(int(trial), ROLE_IDS[role]))
    return np.random.Generator(np.random.Philox(key))


def _default_model_and_kind(setting):
    if setting in SPCA_SETTINGS:
        return SPIKED_COVARIANCE, SPARSE_SET
    if setting in MATCHING_MEAN_SETTINGS:
        return SHIFTED_MEAN, PERFECT_MATCHING
    return SHIFTED_MEAN, SPARSE_SET


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One risk experiment: instance parameters, detector, oracle mode,
    trial count and seed. ``model`` and ``kind`` follow from the setting
    unless given (the likelihood-ratio detector works with any pair).
    """
    setting: str
    d: int
    s_star: int
    beta_star: float
    n: int
    alpha: float = 1.0
    xi: float = 0.05
    oracle_mode: str = "data"
    trials: int = 100
    seed: int = 0
    workers: int = 1
    model: str = None
    kind: str = None
    constant: float = None
    budget: int = None
    threshold_override: float = None
    enumerate_alternatives: bool = False
    check_transcripts: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if self.oracle_mode not in ORACLE_MODES:
            raise ValueError(f"Unknown oracle mode '{self.oracle_mode}', expected one of {ORACLE_MODES}")
        model, kind = _default_model_and_kind(self.setting)
        if self.model is None:
            object.__setattr__(self, "model", model)
        if self.kind is None:
            object.__setattr__(self, "kind", kind)
        if self.constant is None:
            object.__setattr__(self, "constant", settings.detector_constant)
        if self.model == SPIKED_COVARIANCE:
            object.__setattr__(self, "alpha", 1.0)
        if self.kind == PERFECT_MATCHING:
            object.__setattr__(self, "s_star", math.isqrt(self.d))

    def build_structure(self):
        if self.kind == PERFECT_MATCHING:
            return StructureClass.matching(self.d)
        return StructureClass.sparse(self.d, self.s_star)

    def build_instance(self, planted=None):
        return ProblemInstance(self.model, self.build_structure(), self.beta_star, self.alpha, planted)

    def build_detector(self):
        return Detector(self.setting, self.build_instance(), self.n, self.constant, self.budget)

    def to_dict(self):
        """Provenance record; the worker count never changes results, so it is left out."""
        out = asdict(self)
        out.pop("workers")
        return out

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


@dataclass(frozen=True)
class RiskEstimate:
    setting: str
    d: int
    s_star: int
    beta_star: float
    alpha: float
    n: int
    xi: float
    oracle_mode: str
    trials: int
    seed: int
    type1_hat: float
    type2_hat: float
    risk_hat: float
    ci_halfwidth: float
    type2_max_hat: float = None
    transcript_valid_rate: float = None

    def to_row(self):
        return {column: getattr(self, column) for column in RISK_COLUMNS}


@dataclass
class GameResult:
    setting: str
    T: int
    sup_cq: int
    class_size: int
    xi: float
    bound: float
    case: str
    exact_type1: float
    exact_type2: float
    exact_risk: float
    type1_hat: float
    type2_hat: float
    realized_risk: float
    ci_halfwidth: float
    trials: int
    seed: int
    episodes: list = field(default_factory=list)

    def summary(self):
        return {k: v for k, v in asdict(self).items() if k != "episodes"}

    def to_records(self):
        """JSON-lines records: one summary line, then one line per episode."""
        return [{"record": "summary", **self.summary()}] + [{"record": "episode", **e} for e in self.episodes]


@functools.lru_cache(maxsize=32)
def _prepared(config):
    detector = config.build_detector()
    schedule = build_schedule(detector) if config.setting != LR else []
    return detector.instance, detector, schedule, oracle_config(detector, config.xi)


@functools.lru_cache(maxsize=32)
def _adversary_template(config):
    instance, _, schedule, oconfig = _prepared(config)
    return init_adversary(instance, oconfig, len(schedule), NULL_WORSTCASE, schedule)


@functools.lru_cache(maxsize=32)
def _class_elements(config):
    return enumerate_class(config.build_structure())


def _alternative_truth(config, trial):
    if config.enumerate_alternatives:
        elements = _class_elements(config)
        return elements[trial % len(elements)]
    return sample_uniform(config.build_structure(), rng_stream(config.seed, trial, "planted"))


def _open_session(config, trial, truth):
    instance, _, schedule, oconfig = _prepared(config)
    if config.oracle_mode == "data":
        role = "data_null" if truth is None else "data_alternative"
        data = sample(instance, NULL if truth is None else truth, config.n, rng_stream(config.seed, trial, role))
        return DataOracle(data)
    if config.oracle_mode == "ideal":
        return IdealOracle(instance, truth)
    mode = NULL_WORSTCASE if truth is None else truth
    state = replace(_adversary_template(config), mode=mode, calls=0, committed=None,
                    has_committed=False, rng=rng_stream(config.seed, trial, "adversary"))
    return AdversarialOracle(state)


def _run_trial(task):
    config, trial, hypothesis = task
    instance, detector, schedule, oconfig = _prepared(config)
    truth = None if hypothesis == NULL else _alternative_truth(config, trial)
    session = _open_session(config, trial, truth)
    verdict = run(detector, session, schedule, config.threshold_override)
    valid = None
    if config.check_transcripts and config.oracle_mode == "data":
        valid = validate_transcript(session.transcript, instance, truth, oconfig)
    return {"trial": trial, "hypothesis": hypothesis, "rejects": verdict.rejects,
            "statistic": verdict.statistic, "truth": None if truth is None else truth.to_list(),
            "digest": session.transcript.digest(), "valid": valid}


def _map_trials(config, tasks, worker=_run_trial):
    if config.workers <= 1:
        return [worker(task) for task in tasks]
    # results come back in task order whatever the worker count
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(worker, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))))


def _wald_halfwidth(p1, p2, trials):
    return WALD_Z * math.sqrt((p1 * (1.0 - p1) + p2 * (1.0 - p2)) / trials)


def estimate_risk(config):
    """
    Estimate type-I plus averaged type-II error of the configured detector.

    Parameters
    ----------
    config : ExperimentConfig
        Experiment definition

    Returns
    -------
    RiskEstimate
        Estimates with the 95% Wald half-width
    """
    log_debug(f"risk: {config.setting} {config.oracle_mode} oracle, {config.trials} trials per hypothesis")
    tasks = [(config, i, NULL) for i in range(config.trials)]
    tasks += [(config, i, "alternative") for i in range(config.trials)]
    outcomes = _map_trials(config, tasks)
    nulls, alts = outcomes[:config.trials], outcomes[config.trials:]

    type1 = sum(o["rejects"] for o in nulls) / config.trials
    type2 = sum(not o["rejects"] for o in alts) / config.trials
    type2_max = type2
    if config.enumerate_alternatives:
        per_set = {}
        for o in alts:
            per_set.setdefault(tuple(o["truth"]), []).append(not o["rejects"])
        type2_max = max(sum(v) / len(v) for v in per_set.values())
    valid_rate = None
    if config.check_transcripts and config.oracle_mode == "data":
        valid_rate = sum(o["valid"] for o in outcomes) / len(outcomes)

    return RiskEstimate(config.setting, config.d, config.s_star, config.beta_star, config.alpha,
                        config.n, config.xi, config.oracle_mode, config.trials, config.seed,
                        type1, type2, type1 + type2, _wald_halfwidth(type1, type2, config.trials),
                        type2_max, valid_rate)


def _play(detector, schedule, session, threshold_override):
    verdict = run(detector, session, schedule, threshold_override)
    return verdict, session.transcript.digest()


def _play_episode(task):
    """One null and one alternative game of a trial, each on its own stream."""
    config, trial = task
    _, detector, schedule, _ = _prepared(config)
    template = _adversary_template(config)
    state = replace(template, calls=0, has_committed=False, committed=None,
                    rng=rng_stream(config.seed, trial, "adversary"))
    verdict, digest = _play(detector, schedule, AdversarialOracle(state), config.threshold_override)
    committed = state.committed.to_list() if state.committed is not None else None
    null = {"episode": trial, "hypothesis": NULL, "committed": committed,
            "decision": verdict.decision, "digest": digest}

    S = _alternative_truth(config, trial)
    state = replace(template, mode=S, calls=0)
    verdict, digest = _play(detector, schedule, AdversarialOracle(state), config.threshold_override)
    alt = {"episode": trial, "hypothesis": "alternative", "planted": S.to_list(),
           "decision": verdict.decision, "digest": digest}
    return null, alt


def adversary_game(config, exhaustive=True):
    """
    Play the detector against the worst-case oracle.

    The exhaustive pass weighs every committed target of the null plan by
    its probability and every alternative by 1/|C|; the episode pass
    samples ``trials`` games per hypothesis.
    """
    if config.setting == LR:
        raise ValueError("The likelihood-ratio detector makes no queries; there is no oracle game")
    instance, detector, schedule, oconfig = _prepared(config)
    structure = instance.structure
    T = len(schedule)
    sup_cq = sup_distinguishable_numeric(structure, instance, config.n, config.xi)
    size = structure.cardinality
    bound = risk_lower_bound(T, sup_cq, size, config.xi)
    template = _adversary_template(config)
    elements = _class_elements(config)
    log_debug(f"game: {config.setting}, T={T}, sup|C(q)|<={sup_cq}, |C|={size}, bound={bound:.6g}")

    exact_type1 = exact_type2 = float("nan")
    if exhaustive:
        exact_type1 = 0.0
        for prob, target in template.plan:
            state = replace(template, calls=0)
            commit_to(state, target)
            verdict, _ = _play(detector, schedule, AdversarialOracle(state), config.threshold_override)
            exact_type1 += prob * verdict.rejects
        misses = 0
        for S in elements:
            state = replace(template, mode=S, calls=0)
            verdict, _ = _play(detector, schedule, AdversarialOracle(state), config.threshold_override)
            misses += not verdict.rejects
        exact_type2 = misses / size

    pairs = _map_trials(config, [(config, trial) for trial in range(config.trials)], _play_episode)
    episodes = [episode for pair in pairs for episode in pair]
    type1 = sum(null["decision"] == REJECT_NULL for null, _ in pairs) / config.trials
    type2 = sum(alt["decision"] != REJECT_NULL for _, alt in pairs) / config.trials
    return GameResult(config.setting, T, sup_cq, size, config.xi, bound, template.case,
                      exact_type1, exact_type2, exact_type1 + exact_type2,
                      type1, type2, type1 + type2, _wald_halfwidth(type1, type2, config.trials),
                      config.trials, config.seed, episodes)


def vstat_violation_rate(config, replications, hypothesis=NULL):
    """
    Fraction of data-oracle replications in which some scheduled query
    strays beyond its Bernstein tolerance, and beyond the xi = 0 tolerance.
    """
    instance, _, schedule, oconfig = _prepared(config)
    truth = None if hypothesis == NULL else _alternative_truth(config, 0)
    targets = []
    for query in schedule:
        moments = query_moments(instance, truth, query)
        targets.append((query, moments.mean, tolerance(oconfig, moments.variance),
                        vstat_tolerance(config.n, moments.variance, query.bound_b)))
    bernstein_fail = vstat_fail = 0
    role = "data_null" if truth is None else "data_alternative"
    for rep in range(replications):
        data = sample(instance, NULL if truth is None else truth, config.n, rng_stream(config.seed, rep, role))
        deviations = [(abs(data_oracle_respond(q, data) - mean), tau, vtau) for q, mean, tau, vtau in targets]
        bernstein_fail += any(dev > tau for dev, tau, _ in deviations)
        vstat_fail += any(dev > vtau for dev, _, vtau in deviations)
    return {"replications": replications, "queries": len(schedule), "eta": oconfig.eta,
            "bernstein_failure_rate": bernstein_fail / replications,
            "vstat_failure_rate": vstat_fail / replications}


@dataclass(frozen=True)
class PhaseGrid:
    """
    A rectangular grid over two exponents, repeated for every combination
    of the fixed exponents in ``slices``.
    """
    x_axis: str = "p_beta"
    x_range: tuple = (0.0, 1.0)
    y_axis: str = "p_n"
    y_range: tuple = (0.0, 2.0)
    res: int = 51
    slices: tuple = (("p_s", (0.25, 0.5, 0.75)), ("p_alpha", (0.0,)))

    def points(self, problem):
        axes = ("p_s", "p_beta", "p_n", "p_alpha")
        for name in (self.x_axis, self.y_axis):
            if name not in axes:
                raise ValueError(f"Unknown exponent axis '{name}', expected one of {axes}")
        slices = dict(self.slices)
        if problem == MATCHING_SM:
            slices["p_s"] = (0.5,)
        names = [k for k in slices if k not in (self.x_axis, self.y_axis)]
        xs = np.linspace(self.x_range[0], self.x_range[1], self.res)
        ys = np.linspace(self.y_range[0], self.y_range[1], self.res)
        defaults = {"p_s": 0.5, "p_beta": 0.0, "p_n": 1.0, "p_alpha": 0.0}
        for combo in itertools.product(*(slices[k] for k in names)):
            for y in ys:
                for x in xs:
                    values = dict(defaults, **dict(zip(names, combo)))
                    values[self.x_axis], values[self.y_axis] = float(x), float(y)
                    if problem == MATCHING_SM:
                        values["p_s"] = 0.5
                    yield PhasePoint(values["p_s"], values["p_beta"], values["p_n"], values["p_alpha"])


def sweep_phase_diagram(grid, problem, res_cap=None):
    """Classify every grid point; returns a frame with the phase CSV columns."""
    problem = normalize_problem(problem)
    res_cap = settings.phase_res_cap if res_cap is None else res_cap
    if grid.res > res_cap:
        raise CapExceededError(f"Grid resolution {grid.res} exceeds the cap {res_cap}")
    rows = [{"problem": problem, "p_s": p.p_s, "p_beta": p.p_beta, "p_n": p.p_n,
             "p_alpha": p.p_alpha, "regime": phase_classify(p, problem).value}
            for p in grid.points(problem)]
    log_debug(f"phase sweep: {len(rows)} points for {problem}")
    return pd.DataFrame(rows, columns=PHASE_COLUMNS)


_CANDIDATES = {SPARSE_SM: (SM1, SM2, SM3, SM4A), MATCHING_SM: (PM_SM1, PM_SM3, PM_SM4A),
               SPCA: (SPCA1, SPCA2)}

# Exhaustive scans above this size are skipped when picking a detector
_SCAN_LIMIT = 5000


def select_setting(problem, config):
    """The candidate detector with the largest signal ratio at this point."""
    problem = normalize_problem(problem)
    best, best_ratio = None, -math.inf
    for setting in _CANDIDATES[problem]:
        candidate = replace(config, setting=setting, model=None, kind=None)
        detector = candidate.build_detector()
        if query_count(detector) > _SCAN_LIMIT:
            continue
        ratio = signal_ratio(detector, config.xi)
        if ratio > best_ratio:
            best, best_ratio = setting, ratio
    if best is None:
        raise CapExceededError(f"Every {problem} detector scans more than {_SCAN_LIMIT} queries here")
    return best


def sweep_empirical_boundary(problem, base, parameter, values, trials=None,
                             second=None, second_values=(), setting=None):
    """
    Risk along a 1-D (or 2-D) slice through (d, s*, beta*, alpha, n).

    Parameters
    ----------
    problem : str
        Problem tag
    base : ExperimentConfig
        Fixed parameters of the slice
    parameter, values : str, sequence
        Swept field and its values
    trials : int, optional
        Trials per hypothesis at each point
    second, second_values : str, sequence, optional
        Second swept field for 2-D slices
    setting : str, optional
        Detector to use everywhere; chosen per point when omitted

    Returns
    -------
    pandas.DataFrame
        One row per point with the risk CSV columns
    """
    problem = normalize_problem(problem)
    rows = []
    grid = itertools.product(values, second_values) if second else ((v, None) for v in values)
    for value, other in grid:
        changes = {parameter: value}
        if second:
            changes[second] = other
        if trials is not None:
            changes["trials"] = trials
        point = replace(base, **changes)
        chosen = setting or base.setting
        if chosen == AUTO_SETTING:
            chosen = select_setting(problem, point)
        if chosen != LR:
            point = replace(point, setting=chosen, model=None, kind=None)
        estimate = estimate_risk(point)
        rows.append(estimate.to_row())
        log_debug(f"boundary sweep {parameter}={value}: risk {estimate.risk_hat:.4f} ({chosen})")
    return pd.DataFrame(rows, columns=RISK_COLUMNS)


def risk_frame(estimates):
    return pd.DataFrame([e.to_row() for e in estimates], columns=RISK_COLUMNS)


def write_risk_csv(frame, path):
    frame = frame if isinstance(frame, pd.DataFrame) else risk_frame(frame)
    frame.to_csv(path, index=False, columns=RISK_COLUMNS)


def write_phase_csv(frame, path):
    frame.to_csv(path, index=False, columns=PHASE_COLUMNS)


def write_game_jsonl(result, path, config=None):
    with open(path, "w", encoding="utf-8") as handle:
        if config is not None:
            handle.write(json.dumps({"record": "config", **config}, sort_keys=True) + "\n")
        for record in result.to_records():
            handle.write(json.dumps(record, sort_keys=True) + "\n")
