import os
import sys

import numpy as np
import pytest
from scipy.special import erf

sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "Scripts"))
from core_functions import GridFunction, Line, grid_points  # noqa: E402
from nonperiodic_flow import Diffeo  # noqa: E402


def smooth_diffeo(rng, domain, n):
    """x + erf step + gaussian bump, with analytic phi_x >= 0.2 and exact left anchoring"""
    a, c, w = rng.uniform(-0.6, 0.6), rng.uniform(-1, 1), rng.uniform(0.8, 1.0)
    b, c2, w2 = rng.uniform(-0.3, 0.3), rng.uniform(-1, 1), rng.uniform(0.7, 1.0)
    x = grid_points(domain, n)
    bump = np.exp(-((x - c2) / w2) ** 2)
    phi = x + 0.5 * a * (1 + erf((x - c) / w)) + b * bump
    phi_x = 1 + a / (w * np.sqrt(np.pi)) * np.exp(-((x - c) / w) ** 2) - 2 * b * (x - c2) / w2 ** 2 * bump
    return Diffeo(GridFunction(domain, phi), GridFunction(domain, phi_x))


def smooth_tangent(rng, domain, n):
    x = grid_points(domain, n)
    values = sum(
        rng.uniform(-1, 1) * np.exp(-((x - rng.uniform(-1, 1)) / rng.uniform(0.7, 1.0)) ** 2)
        for _ in range(3)
    )
    return GridFunction(domain, values)


@pytest.fixture
def window():
    return Line(-8.0, 8.0)


@pytest.fixture
def gaussian(window):
    return GridFunction.sample(window, 2048, lambda x: np.exp(-x ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_diffeo(rng):
    return lambda domain, n: smooth_diffeo(rng, domain, n)


@pytest.fixture
def make_tangent(rng):
    return lambda domain, n: smooth_tangent(rng, domain, n)
