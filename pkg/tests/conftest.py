import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minidpsnn.harness import PlanCache  # noqa: E402
from minidpsnn.topology import GridConfig, build_topology  # noqa: E402

SMALL = GridConfig(grid_x=3, grid_y=3, neurons_per_column=200, out_degree_exc=100, out_degree_inh=80, seed=7)


@pytest.fixture(scope="session")
def small_topo():
    return build_topology(SMALL)


@pytest.fixture(scope="session")
def grid4x4_topo():
    return build_topology(GridConfig())


@pytest.fixture(scope="session")
def plan_cache():
    return PlanCache()
