"""
Shared fixtures for the tessellate test suite.
"""

import os
import sys

import numpy as np
import pytest

os.environ.setdefault('TESSELLATE_ENV', 'testing')
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.services.geometry import ConvexPolytope  # noqa: E402
from app.services.hyperplane_measure import DrivingMeasure  # noqa: E402
from app.services.split_kernels import SplitKernelSpec  # noqa: E402
from app.services.tessellation_service import simulate_window  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run long Monte Carlo acceptance checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long Monte Carlo acceptance check')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def unit_square():
    return ConvexPolytope.box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def unit_cube():
    return ConvexPolytope.cube(1.0, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def iso2():
    return DrivingMeasure.isotropic(2)


@pytest.fixture
def iso3():
    return DrivingMeasure.isotropic(3)


@pytest.fixture(scope='session')
def stit_2d():
    """Isotropic planar STIT in [0,10]^2 at t = 2."""
    W = ConvexPolytope.box([0.0, 0.0], [10.0, 10.0])
    return simulate_window(W, SplitKernelSpec.stit(), DrivingMeasure.isotropic(2), 2.0, seed=7)


@pytest.fixture(scope='session')
def stit_3d():
    """Isotropic spatial STIT in [0,3]^3 at t = 2."""
    W = ConvexPolytope.cube(3.0, 3)
    return simulate_window(W, SplitKernelSpec.stit(), DrivingMeasure.isotropic(3), 2.0, seed=3)
