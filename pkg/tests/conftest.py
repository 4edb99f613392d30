# tests/conftest.py

import sys
from pathlib import Path

# Add the project root directory to the system path so that packages like
# 'common' and 'perception' import in tests. The project root is one level up
# from this file's directory.
project_root = Path(__file__).parent.parent.resolve()
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

import numpy as np
import pytest

from perception.geo3d import PointCloud
from perception.labels import GridGeometry

DEMO_CONFIG = project_root / "configs" / "demo.toml"


# --- Helper Functions ---

def plane_cloud(n: int, rng: np.random.Generator, extent: float = 2.0, z=lambda x, y: 0.0 * x,
                noise: float = 0.0) -> PointCloud:
    """n points uniform over [0, extent)^2 on the surface z(x, y), with optional height noise."""
    x = rng.uniform(0.0, extent, n)
    y = rng.uniform(0.0, extent, n)
    h = z(x, y) + (rng.normal(0.0, noise, n) if noise > 0 else 0.0)
    return PointCloud(xyz=np.column_stack([x, y, h]))


# --- Fixtures ---

@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def small_geometry() -> GridGeometry:
    return GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=0.4, n_rows=5, n_cols=5)


@pytest.fixture
def demo_config_path() -> Path:
    return DEMO_CONFIG
