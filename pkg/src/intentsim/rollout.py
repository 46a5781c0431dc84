"""Recurrent multi-step prediction.

A rollout repeatedly refreshes intentions with the network, picks one
control per agent, and advances every state by one lattice step.  The
node and edge sets are frozen from the initial graph for the whole
horizon; features (reachable-state grids, map rasters) are rebuilt at the
new poses each step, and intentions carry forward as the next step's
inputs.

Control selection: max-likelihood mode takes the stepwise argmax of each
refreshed intention (lowest index on ties) — an approximation, not the
jointly most likely trajectory; sampled mode draws an index per agent per
step from its marginal intention.  Pedestrians hold the center (zero)
primitive.  A conditioned ego advances under its raw planned control —
not the lattice snap — so its trajectory reproduces the plan's
integration exactly, while the intention broadcast to neighbors is the
snapped one-hot for the current plan entry.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kinematics import ControlInput, Pose2, VehicleState, future_states, integrate_unicycle
from .network import Model, gnn_forward
from .scene import AgentState, GraphNode, Intention, TrafficGraph, rasterize_map
from .training import sample_index

__all__ = [
    "RolloutConfig",
    "Trajectory",
    "VelocityEstimate",
    "constant_velocity_predict",
    "estimate_velocity",
    "rollout",
]


@dataclass(frozen=True)
class Trajectory:
    """Per-agent waypoints at lattice spacing: ``points[i, s]`` is agent
    ``agent_ids[i]``'s position after s+1 steps."""

    agent_ids: tuple[str, ...]
    points: np.ndarray  # (n_agents, horizon, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ValueError(f"points must be (agents, horizon, 2), got {pts.shape}")
        if pts.shape[0] != len(self.agent_ids):
            raise ValueError(
                f"{len(self.agent_ids)} agent ids for {pts.shape[0]} trajectories")
        if pts.shape[1] < 1:
            raise ValueError("horizon must be at least one step")
        if not np.all(np.isfinite(pts)):
            raise ValueError("waypoints must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def horizon(self) -> int:
        return self.points.shape[1]

    def truncated(self, horizon: int) -> "Trajectory":
        if not 1 <= horizon <= self.horizon:
            raise ValueError(f"cannot truncate horizon {self.horizon} to {horizon}")
        return Trajectory(self.agent_ids, self.points[:, :horizon])

    def subset(self, agent_ids) -> "Trajectory":
        index = {aid: i for i, aid in enumerate(self.agent_ids)}
        missing = [aid for aid in agent_ids if aid not in index]
        if missing:
            raise ValueError(f"unknown agent ids {missing}")
        rows = [index[aid] for aid in agent_ids]
        return Trajectory(tuple(agent_ids), self.points[rows])


@dataclass(frozen=True)
class RolloutConfig:
    """Horizon (steps), mode, optional per-step ego plan, rng seed, and the
    number of trajectories drawn in sampled mode."""

    horizon: int = 8
    mode: str = "max_likelihood"
    conditional: tuple[ControlInput, ...] | None = None
    seed: int = 0
    samples: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.mode not in ("max_likelihood", "sampled"):
            raise ValueError(f"unknown rollout mode {self.mode!r}")
        if self.samples < 1:
            raise ValueError("sample count must be at least 1")
        if self.conditional is not None:
            if len(self.conditional) != self.horizon:
                raise ValueError(
                    f"conditional plan length {len(self.conditional)} "
                    f"!= horizon {self.horizon}")
            object.__setattr__(self, "conditional", tuple(self.conditional))


def _refreshed_nodes(graph: TrafficGraph, states, intents) -> tuple[GraphNode, ...]:
    nodes = []
    for i, node in enumerate(graph.nodes):
        agent = AgentState(node.agent.agent_id, node.agent.kind, states[i],
                           Intention(intents[i]))
        raster = rasterize_map(graph.semantic_map, Pose2.from_state(states[i]),
                               graph.raster_config)
        nodes.append(GraphNode(agent=agent,
                               future=future_states(states[i], graph.prims),
                               raster=raster))
    return tuple(nodes)


def _single_rollout(model: Model, graph: TrafficGraph, horizon: int, mode: str,
                    plan, rng) -> Trajectory:
    prims = model.prims
    n = len(graph.nodes)
    ego = graph.ego_index
    states = [node.agent.state for node in graph.nodes]
    intents = [node.agent.intention.p.copy() for node in graph.nodes]
    points = np.empty((n, horizon, 2))

    for step in range(horizon):
        if plan is not None:
            intents[ego] = Intention.one_hot(
                prims.count, prims.nearest_index(plan[step])).p
        g = replace(graph, nodes=_refreshed_nodes(graph, states, intents))
        result = gnn_forward(g, model.params, model.config)
        for i in result.updatable:
            intents[i] = result.intentions[i].data
        for i in range(n):
            kind = graph.nodes[i].agent.kind
            if plan is not None and i == ego:
                u = plan[step]
            elif kind == "pedestrian":
                u = prims.control(prims.zero_index)
            elif mode == "max_likelihood":
                u = prims.control(int(np.argmax(intents[i])))
            else:
                u = prims.control(sample_index(intents[i], rng))
            states[i] = integrate_unicycle(states[i], u, prims.dt)
            points[i, step] = (states[i].x, states[i].y)
    return Trajectory(tuple(node.agent.agent_id for node in graph.nodes), points)


def rollout(model: Model, graph: TrafficGraph, config: RolloutConfig) -> list[Trajectory]:
    """Run the configured rollout from ``graph``; a list of one trajectory
    in max-likelihood mode, of ``config.samples`` in sampled mode.

    Sample s draws from a generator seeded ``(config.seed, s)``, so the
    first k of n samples match the first k of k for any n >= k.
    """
    if config.conditional is not None and not graph.ego_conditioned:
        raise ValueError("conditional rollout requires an ego-conditioned graph")
    if graph.ego_conditioned and config.conditional is None:
        raise ValueError("ego-conditioned graph requires a conditional plan")
    if config.mode == "max_likelihood":
        return [_single_rollout(model, graph, config.horizon, config.mode,
                                config.conditional, None)]
    out = []
    for s in range(config.samples):
        rng = np.random.default_rng((config.seed, s))
        out.append(_single_rollout(model, graph, config.horizon, config.mode,
                                   config.conditional, rng))
    return out


def constant_velocity_predict(graph: TrafficGraph, horizon: int) -> Trajectory:
    """Every agent advances under u = (0, 0): straight at constant speed."""
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    hold = ControlInput(0.0, 0.0)
    n = len(graph.nodes)
    points = np.empty((n, horizon, 2))
    for i, node in enumerate(graph.nodes):
        s = node.agent.state
        for step in range(horizon):
            s = integrate_unicycle(s, hold, graph.prims.dt)
            points[i, step] = (s.x, s.y)
    return Trajectory(tuple(node.agent.agent_id for node in graph.nodes), points)


# ---------------------------------------------------------------------------
# position-only ingestion


@dataclass(frozen=True)
class VelocityEstimate:
    """Speed and heading recovered from past positions; ``fallback`` marks
    an agent treated as stationary for lack of data."""

    v: float
    theta: float
    fallback: bool


def _map_aligned_heading(xy, semantic_map) -> float:
    if semantic_map is None or not semantic_map.lanes:
        return 0.0
    best = None
    best_heading = 0.0
    for points, headings in semantic_map.lanes:
        d = np.hypot(points[:, 0] - xy[0], points[:, 1] - xy[1])
        k = int(np.argmin(d))
        if best is None or d[k] < best:
            best = d[k]
            best_heading = float(headings[k])
    return best_heading


def estimate_velocity(positions, hz: float = 2.0,
                      semantic_map=None) -> VelocityEstimate:
    """Speed and heading from the most recent one-second displacement.

    ``positions`` are past (x, y) samples at ``hz``, oldest first, ending
    at the current time; only past data enters.  With a single position
    the agent is treated as stationary (heading aligned to the nearest
    lane when a map is given) and flagged.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if len(pos) < 2:
        if len(pos) == 0:
            raise ValueError("at least one position is required")
        return VelocityEstimate(0.0, _map_aligned_heading(pos[-1], semantic_map),
                                True)
    back = min(int(round(hz)), len(pos) - 1)  # one second of steps if available
    delta = pos[-1] - pos[-1 - back]
    v = float(np.hypot(*delta) * hz / back)
    theta = float(np.arctan2(delta[1], delta[0])) if v > 0.0 else 0.0
    return VelocityEstimate(v, theta, False)
