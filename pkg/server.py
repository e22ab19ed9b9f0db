# -*- coding: utf-8 -*-
"""
MCP server exposing the SQ phase lab: class enumeration, lower bounds,
chi-square divergences, phase classification, risk estimation and
adversary games
"""
import functools
import json
import sys
import traceback
from dataclasses import asdict
from datetime import datetime

import numpy as np
from mcp.server.fastmcp import FastMCP

from bounds import PhasePoint, normalize_problem, phase_classify
from harness import ExperimentConfig, adversary_game, estimate_risk
from reports import bounds_report, chi2_report, enumerate_report
from structure_classes import PERFECT_MATCHING, SPARSE_SET
from utils import log_debug, settings


class LabState:
    def __init__(self):
        self.tool_responses = {}

    def add_tool_response(self, tool_name, response_data, timestamp=None):
        """Store a tool response with its timestamp"""
        timestamp = timestamp or datetime.now()
        self.tool_responses.setdefault(tool_name, []).append({"data": response_data, "timestamp": timestamp})


lab_state = LabState()

mcp = FastMCP("sqphase")


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _success(**payload):
    return json.dumps({"success": True, **payload}, indent=2, default=_json_default)


def _failure(tool_name, error):
    log_debug(f"ERROR in {tool_name}: {error}")
    traceback.print_exc(file=sys.stderr)
    return json.dumps({"success": False, "error": f"{type(error).__name__}: {error}"}, indent=2)


def capture_response(func):
    """Record every tool response in the lab state; errors come back as success: false"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        log_debug(f"Tool {func.__name__} called with {kwargs or args}")
        try:
            response = func(*args, **kwargs)
        except Exception as e:
            response = _failure(func.__name__, e)
        lab_state.add_tool_response(func.__name__, response)
        return response
    return wrapper


@mcp.tool()
@capture_response
def enumerate_structure_class(class_kind: str, d: int, s_star: int = None, list_elements: bool = False) -> str:
    """
    Shell counts and overlap distribution of a structure class.

    Args:
        class_kind: "sparse" or "matching"
        d: Ambient dimension (a perfect square for matchings)
        s_star: Sparsity (sparse sets only)
        list_elements: Also list every element (small classes only)

    Returns:
        JSON report
    """
    kind = PERFECT_MATCHING if class_kind == "matching" else SPARSE_SET
    return _success(report=enumerate_report(kind, d, s_star, list_elements))


@mcp.tool()
@capture_response
def compute_bounds(problem: str, d: int, s_star: int, beta_star: float, n: int,
                   xi: float = 0.05, T: int = 0, alpha: float = 1.0, delta: float = None) -> str:
    """
    Numeric sup|C(q)|, the oracle risk lower bound for T queries and the
    applicable closed-form bounds.

    Args:
        problem: sparse-sm, matching-sm or spca
        d, s_star, beta_star, alpha: Instance parameters
        n: Sample size
        xi: Oracle tail probability in (0, 1/4)
        T: Query budget
        delta: delta of the matching bound (configured default when omitted)

    Returns:
        JSON report; inapplicable closed forms carry value null
    """
    return _success(report=bounds_report(problem, d, s_star, beta_star, n, xi, T, alpha, delta))


@mcp.tool()
@capture_response
def compute_chi2(problem: str, d: int, s_star: int, beta_star: float, n: int = 1, alpha: float = 1.0) -> str:
    """
    Exact chi-square divergence between the uniform mixture over the class
    and the null, with the Le Cam risk lower bound.
    """
    return _success(report=chi2_report(problem, d, s_star, beta_star, n, alpha))


@mcp.tool()
@capture_response
def classify_phase(problem: str, p_s: float, p_beta: float, p_n: float, p_alpha: float = 0.0) -> str:
    """
    Regime of an exponent tuple: impossible, intractable_possible,
    tractable or boundary.
    """
    point = PhasePoint(p_s, p_beta, p_n, p_alpha)
    return _success(problem=normalize_problem(problem), point=asdict(point),
                    regime=phase_classify(point, problem).value)


@mcp.tool()
@capture_response
def estimate_detector_risk(setting: str, d: int, s_star: int, beta_star: float, n: int,
                           alpha: float = 1.0, xi: float = 0.05, oracle_mode: str = "data",
                           trials: int = 100, seed: int = 0, budget: int = None) -> str:
    """
    Monte Carlo type-I plus type-II error of a detector.

    Args:
        setting: Detector setting (SM1, SM2, SM3, SM4a, SM4b, PM_SM1, PM_SM3, PM_SM4a, SPCA1, SPCA2)
        oracle_mode: data, ideal or adversarial
        trials: Trials per hypothesis
        seed: Seed of the counter-based streams

    Returns:
        JSON with the estimate and the resolved experiment config
    """
    config = ExperimentConfig(setting, d, s_star, beta_star, n, alpha, xi, oracle_mode,
                              trials, seed, budget=budget)
    return _success(config=config.to_dict(), estimate=asdict(estimate_risk(config)))


@mcp.tool()
@capture_response
def play_adversary_game(setting: str, d: int, s_star: int, beta_star: float, n: int, T: int = None,
                        alpha: float = 1.0, xi: float = 0.05, trials: int = 200, seed: int = 0,
                        workers: int = 1) -> str:
    """
    Play a detector with declared budget T against the worst-case oracle.

    Args:
        workers: Worker processes for the sampled episodes; results do not depend on it

    Returns:
        JSON summary: exact and realized risk next to the oracle lower bound
    """
    config = ExperimentConfig(setting, d, s_star, beta_star, n, alpha, xi, "adversarial",
                              trials, seed, workers, budget=T)
    result = adversary_game(config)
    return _success(config=config.to_dict(), summary=result.summary(),
                    holds=bool(result.exact_risk >= result.bound - 1e-12))


if __name__ == "__main__":
    # stdout carries the protocol, so diagnostics always go to stderr here
    settings.debug = True
    sys.stderr.write("Starting SQ phase lab MCP Server...\n")
    sys.stderr.flush()
    mcp.run(transport="stdio")
