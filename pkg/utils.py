"""
Shared settings, error types and debug logging for the SQ phase lab
"""
import os
import sys

from dotenv import load_dotenv

# Load environment overrides from an optional .env next to the modules
env_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), '.env')
load_dotenv(dotenv_path=env_path, override=False)


class SQPhaseError(RuntimeError):
    """Base class for lab errors surfaced with a dedicated exit code."""


class CapExceededError(SQPhaseError):
    """An enumeration, permanent, schedule or resolution cap was exceeded."""


class HypothesisViolatedError(SQPhaseError):
    """A closed-form bound or inequality was asked for outside its hypotheses."""


class BudgetExceededError(SQPhaseError):
    """An oracle session received more queries than its declared budget."""


class DimensionMismatchError(ValueError):
    """Two objects live in different ambient dimensions."""


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value not in (None, "") else default


def _env_float(name, default):
    value = os.environ.get(name)
    return float(value) if value not in (None, "") else default


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


class LabSettings:
    """Tunable defaults, read from the environment once at import."""

    def __init__(self):
        self.enum_cap = _env_int("SQPHASE_ENUM_CAP", 10**6)
        self.mc_samples = _env_int("SQPHASE_MC_SAMPLES", 10**5)
        self.mc_seed = _env_int("SQPHASE_MC_SEED", 20240601)
        self.permanent_cap = _env_int("SQPHASE_PERMANENT_CAP", 12)
        self.brute_permanent_cap = _env_int("SQPHASE_BRUTE_PERMANENT_CAP", 8)
        self.row_subset_cap = _env_int("SQPHASE_ROW_SUBSET_CAP", 12)
        self.detector_constant = _env_float("SQPHASE_DETECTOR_CONSTANT", 8.0)
        self.delta = _env_float("SQPHASE_DELTA", 0.1)
        self.phase_res_cap = _env_int("SQPHASE_PHASE_RES_CAP", 401)
        self.boundary_tol = _env_float("SQPHASE_BOUNDARY_TOL", 1e-12)
        self.cache_dir = os.environ.get("SQPHASE_CACHE_DIR") or None
        self.debug = _env_flag("SQPHASE_DEBUG")

    def as_dict(self):
        return dict(vars(self))


# Shared default instance; operations accept explicit overrides
settings = LabSettings()


def log_debug(message):
    """Write a debug line to stderr when debugging is enabled."""
    if settings.debug:
        sys.stderr.write(f"DEBUG: {message}\n")
        sys.stderr.flush()


def resolve_cap(cap, default):
    """Return ``cap`` unless it is None, in which case ``default``."""
    return default if cap is None else int(cap)
