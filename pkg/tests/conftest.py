"""Shared fixtures: small model configurations and hand-built scenes.

Everything here uses the reduced ("toy") configuration so that individual
tests stay fast; the full-width configuration is exercised where a test is
specifically about it (parameter accounting, width arithmetic).
"""

import numpy as np
import pytest

from intentsim.cli import toy_model
from intentsim.kinematics import (
    ControlInput,
    VehicleState,
    build_primitive_set,
)
from intentsim.scene import (
    AgentState,
    Intention,
    RasterConfig,
    SemanticMap,
    build_graph,
)


@pytest.fixture(scope="session")
def tprims():
    """9 x 9 lattice shared by read-only tests."""
    return build_primitive_set(9, 8.0, 9, 0.5)


@pytest.fixture(scope="session")
def straight_map():
    """A 240 m straight road, one center lane, 5 m half width."""
    x0, x1 = -120.0, 120.0
    drivable = [[[x0, -5.0], [x1, -5.0], [x1, 5.0], [x0, 5.0]]]
    lane = [[x, 0.0] for x in np.arange(x0, x1 + 1e-9, 5.0)]
    return SemanticMap.from_geometry(drivable, [lane])


@pytest.fixture
def tmodel():
    """A freshly initialized toy model; safe to mutate."""
    return toy_model(seed=0)


@pytest.fixture(scope="session")
def traster():
    return RasterConfig(size=24)


def make_agent(agent_id, x, y, theta, v, kind="vehicle", count=81):
    if kind == "pedestrian":
        intention = Intention.one_hot(count, (count - 1) // 2)
    else:
        intention = Intention.uniform(count)
    return AgentState(agent_id=agent_id, kind=kind,
                      state=VehicleState(x, y, theta, v), intention=intention)


def two_car_graph(prims, semantic_map, raster_config, gap=8.0, v=6.0):
    """Ego plus one follower on the straight road, within edge radius."""
    agents = [
        make_agent("ego", 0.0, 0.0, 0.0, v, kind="ego", count=prims.count),
        make_agent("follower", -gap, 0.0, 0.0, v, count=prims.count),
    ]
    return build_graph(agents, prims, semantic_map,
                       raster_config=raster_config)


@pytest.fixture
def tgraph(tmodel, straight_map):
    return two_car_graph(tmodel.prims, straight_map, tmodel.raster_config)


def random_state(rng, speed_max=15.0):
    return VehicleState(
        x=float(rng.uniform(-30.0, 30.0)),
        y=float(rng.uniform(-10.0, 10.0)),
        theta=float(rng.uniform(-np.pi, np.pi)),
        v=float(rng.uniform(0.0, speed_max)),
    )


def random_control(rng, accel_max=8.0, turn_max=0.5):
    return ControlInput(a=float(rng.uniform(-accel_max, accel_max)),
                        omega=float(rng.uniform(-turn_max, turn_max)))
