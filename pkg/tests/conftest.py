"""
Shared fixtures for the test suite.

Long experiment tests are marked slow and only run with CUBIC_PUZZLES_SLOW=1.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from puzzles.geometry import GeometryConfig  # noqa: E402

SLOW_ENV = "CUBIC_PUZZLES_SLOW"


def pytest_configure(config):
    config.addinivalue_line("markers", f"slow: long experiment run, enabled with {SLOW_ENV}=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv(SLOW_ENV) == "1":
        return
    skip = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def desk_geometry():
    return GeometryConfig.desk()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_clip(desk_geometry):
    """A uint8 T x H x W x 3 clip at desk resolution."""
    gen = np.random.default_rng(7)
    return gen.integers(0, 256, size=desk_geometry.clip_size + (3,), dtype=np.uint8)
