import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("ci", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("ci")


def random_valid_covariance(rng, spread=0.3, mix=0.5):
    """Random physical covariance: thermal-ish diagonal conjugated by a random symplectic matrix."""
    from scipy.linalg import expm

    from hybridsim.states import symplectic_form

    a = rng.normal(size=(4, 4)) * mix
    h = a @ a.T + 0.1 * np.eye(4)
    s = expm(symplectic_form() @ h * 0.5)
    base = 0.5 * np.eye(4) + np.diag(rng.uniform(0, spread, 4))
    return s @ base @ s.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
