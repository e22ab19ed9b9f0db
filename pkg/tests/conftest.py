"""Shared fixtures; the modules live flat at the repository root."""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import SHIFTED_MEAN, SPIKED_COVARIANCE, ProblemInstance  # noqa: E402
from structure_classes import StructureClass  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def sparse_instance():
    """Shifted mean over 2-subsets of [4], beta*^2 = 0.1."""
    return ProblemInstance(SHIFTED_MEAN, StructureClass.sparse(4, 2), 0.1 ** 0.5)


@pytest.fixture
def matching_instance():
    return ProblemInstance(SHIFTED_MEAN, StructureClass.matching(9), 0.7)


@pytest.fixture
def spiked_instance():
    return ProblemInstance(SPIKED_COVARIANCE, StructureClass.sparse(6, 2), 0.5)
