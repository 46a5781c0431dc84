"""Traffic scene state: agents, semantic maps, rasters, and the graph.

The interaction graph is ego-centric: nodes are the agents inside a
rectangle aligned with the ego heading (40 m ahead, 10 m behind, 25 m to
each side, boundaries inclusive), and a directed edge (b -> a) exists
whenever the two agents are within the proximity radius of each other, so
edges come in bidirectional pairs until ego conditioning removes the ego's
incoming half.

Each node carries, besides the agent state and intention, the grid of
next states reachable in one primitive step and an agent-centric map
raster.  Rasters are heading-aligned, 0.5 m/cell, with channels

    0  drivable-area mask (even-odd polygon fill)
    1  lane-occupancy mask (cell center within a half width of a centerline)
    2  relative lane direction: cos(lane heading - agent heading) on
       occupied cells, 0 elsewhere (nearest centerline wins)

Cell (i, j) covers forward offset x in [-S/2 + i*res, ...) and leftward
offset y likewise, so cell centers never sit exactly on the frame axes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kinematics import (
    ControlInput,
    FutureStates,
    MotionPrimitiveSet,
    Pose2,
    VehicleState,
    future_states,
    wrap_angle,
)

__all__ = [
    "AgentState",
    "GraphNode",
    "Intention",
    "RasterConfig",
    "RegionConfig",
    "SemanticMap",
    "TrafficGraph",
    "build_graph",
    "condition_on_ego",
    "in_degree",
    "rasterize_map",
    "select_local_agents",
]

AGENT_KINDS = ("vehicle", "pedestrian", "ego")

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Intention:
    """A probability distribution over the motion-primitive lattice."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"intention must be a vector, got shape {arr.shape}")
        if np.any(arr < 0.0):
            raise ValueError("intention entries must be non-negative")
        if abs(arr.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"intention must sum to 1 (got {arr.sum()!r})")
        object.__setattr__(self, "p", arr)

    @classmethod
    def uniform(cls, count: int) -> "Intention":
        return cls(np.full(count, 1.0 / count))

    @classmethod
    def one_hot(cls, count: int, index: int) -> "Intention":
        p = np.zeros(count)
        p[index] = 1.0
        return cls(p)

    @property
    def count(self) -> int:
        return self.p.shape[0]


def _pedestrian_intention(count: int) -> Intention:
    side = int(round(np.sqrt(count)))
    if side * side != count:
        raise ValueError(f"intention length {count} is not a square lattice")
    return Intention.one_hot(count, (side // 2) * side + side // 2)


@dataclass(frozen=True)
class AgentState:
    """One agent: identity, kind, vehicle state, current intention.

    Pedestrians always carry the fixed one-hot on the (0, 0) primitive;
    the constructor enforces it.
    """

    agent_id: str
    kind: str
    state: VehicleState
    intention: Intention

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}; expected {AGENT_KINDS}")
        if self.kind == "pedestrian":
            fixed = _pedestrian_intention(self.intention.count)
            if not np.array_equal(self.intention.p, fixed.p):
                raise ValueError(
                    "pedestrians must carry the fixed one-hot intention on the "
                    "(0, 0) primitive"
                )


@dataclass(frozen=True)
class SemanticMap:
    """Drivable polygons plus directed lane centerlines.

    ``lanes`` is a tuple of (points, headings) pairs: points (P, 2) and the
    heading at each point, taken from the outgoing segment (the last point
    repeats the final segment heading), so headings are consistent with the
    polyline direction by construction.
    """

    drivable: tuple[np.ndarray, ...]
    lanes: tuple[tuple[np.ndarray, np.ndarray], ...]

    @classmethod
    def from_geometry(cls, drivable, lane_polylines) -> "SemanticMap":
        polys = []
        for poly in drivable:
            arr = np.asarray(poly, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
                raise ValueError(f"drivable polygon must be (>=3, 2), got {arr.shape}")
            polys.append(arr)
        lanes = []
        for line in lane_polylines:
            pts = np.asarray(line, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
                raise ValueError(f"lane polyline must be (>=2, 2), got {pts.shape}")
            seg = np.diff(pts, axis=0)
            if np.any(np.hypot(seg[:, 0], seg[:, 1]) < 1e-9):
                raise ValueError("lane polyline has a zero-length segment")
            head = np.arctan2(seg[:, 1], seg[:, 0])
            headings = np.append(head, head[-1])
            lanes.append((pts, headings))
        return cls(tuple(polys), tuple(lanes))

    def transformed(self, pose: Pose2) -> "SemanticMap":
        """The same geometry expressed through ``pose``."""
        polys = []
        for poly in self.drivable:
            xs, ys = pose.apply_xy(poly[:, 0], poly[:, 1])
            polys.append(np.column_stack([xs, ys]))
        lanes = []
        for pts, headings in self.lanes:
            xs, ys = pose.apply_xy(pts[:, 0], pts[:, 1])
            lanes.append((np.column_stack([xs, ys]), wrap_angle(headings + pose.theta)))
        return SemanticMap(tuple(polys), tuple(lanes))


@dataclass(frozen=True)
class RasterConfig:
    """Geometry of the agent-centric map raster."""

    size: int = 100
    resolution: float = 0.5
    lane_half_width: float = 1.75

    def __post_init__(self):
        if self.size < 2 or self.resolution <= 0 or self.lane_half_width <= 0:
            raise ValueError(f"invalid raster config {self!r}")

    @property
    def span(self) -> float:
        return self.size * self.resolution

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshes of cell-center coordinates in the agent frame, (size, size);
        axis 0 is the forward (x) axis, axis 1 the leftward (y) axis."""
        offs = (np.arange(self.size) + 0.5) * self.resolution - self.span / 2.0
        return np.meshgrid(offs, offs, indexing="ij")


def _points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over points."""
    inside = np.zeros(px.shape, dtype=bool)
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        crosses = (y0 > py) != (y1 > py)
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (x1 - x0) * (py - y0) / (y1 - y0) + x0
            inside ^= crosses & (px < xint)
        x0, y0 = x1, y1
    return inside


def rasterize_map(semantic_map: SemanticMap, pose: Pose2,
                  config: RasterConfig = RasterConfig()) -> np.ndarray:
    """Heading-aligned raster around ``pose``; returns (3, size, size)."""
    local = semantic_map.transformed(pose.inverse())
    cx, cy = config.cell_centers()
    out = np.zeros((3, config.size, config.size))

    drivable = np.zeros(cx.shape, dtype=bool)
    for poly in local.drivable:
        drivable |= _points_in_polygon(cx, cy, poly)
    out[0] = drivable

    best = np.full(cx.shape, np.inf)
    best_heading = np.zeros(cx.shape)
    pts_flat = np.column_stack([cx.ravel(), cy.ravel()])
    for pts, headings in local.lanes:
        for k in range(len(pts) - 1):
            a, b = pts[k], pts[k + 1]
            ab = b - a
            denom = float(ab @ ab)
            t = np.clip(((pts_flat - a) @ ab) / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.hypot(*(pts_flat - proj).T).reshape(cx.shape)
            closer = d < best
            best = np.where(closer, d, best)
            best_heading = np.where(closer, headings[k], best_heading)
    occupied = best <= config.lane_half_width
    out[1] = occupied
    out[2] = np.where(occupied, np.cos(best_heading), 0.0)
    return out


@dataclass(frozen=True)
class RegionConfig:
    """Ego-aligned local region: [-behind, ahead] x [-side, side], inclusive."""

    ahead: float = 40.0
    behind: float = 10.0
    side: float = 25.0


def select_local_agents(agents, ego_id: str,
                        region: RegionConfig = RegionConfig()):
    """Agents inside the ego-aligned rectangle, input order preserved."""
    ego = next((a for a in agents if a.agent_id == ego_id), None)
    if ego is None:
        raise ValueError(f"ego agent {ego_id!r} not present")
    to_ego = Pose2.from_state(ego.state).inverse()
    kept = []
    for agent in agents:
        lx, ly = to_ego.apply_xy(agent.state.x, agent.state.y)
        if -region.behind <= lx <= region.ahead and abs(ly) <= region.side:
            kept.append(agent)
    return kept


@dataclass(frozen=True)
class GraphNode:
    agent: AgentState
    future: FutureStates
    raster: np.ndarray


@dataclass(frozen=True)
class TrafficGraph:
    """Immutable interaction graph over the selected agents.

    ``edges`` are (source, target) index pairs sorted by (target, source);
    this fixed order also defines message order during aggregation.
    """

    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int], ...]
    radius: float
    prims: MotionPrimitiveSet
    semantic_map: SemanticMap
    raster_config: RasterConfig
    ego_index: int | None
    ego_conditioned: bool = False
    ego_control: ControlInput | None = None


def in_degree(graph: TrafficGraph, node_index: int) -> int:
    return sum(1 for _, dst in graph.edges if dst == node_index)


def build_graph(agents, prims: MotionPrimitiveSet, semantic_map: SemanticMap,
                radius: float = 25.0,
                raster_config: RasterConfig = RasterConfig(),
                rasters=None) -> TrafficGraph:
    """Construct the proximity graph over ``agents``.

    ``rasters`` may supply precomputed per-agent rasters (a list aligned
    with ``agents``; ``None`` entries are computed here), which callers use
    to cache ground-truth rasters across epochs.
    """
    agents = list(agents)
    if not agents:
        raise ValueError("cannot build a graph over zero agents")
    ids = [a.agent_id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate agent ids in graph: {sorted(ids)}")
    ego_ids = [i for i, a in enumerate(agents) if a.kind == "ego"]
    if len(ego_ids) > 1:
        raise ValueError("at most one ego agent per graph")
    ego_index = ego_ids[0] if ego_ids else None

    nodes = []
    for i, agent in enumerate(agents):
        raster = None if rasters is None else rasters[i]
        if raster is None:
            raster = rasterize_map(semantic_map, Pose2.from_state(agent.state),
                                   raster_config)
        nodes.append(GraphNode(agent=agent,
                               future=future_states(agent.state, prims),
                               raster=raster))

    xy = np.array([[a.state.x, a.state.y] for a in agents])
    edges = []
    for dst in range(len(agents)):
        for src in range(len(agents)):
            if src == dst:
                continue
            if np.hypot(*(xy[src] - xy[dst])) <= radius:
                edges.append((src, dst))
    return TrafficGraph(nodes=tuple(nodes), edges=tuple(edges), radius=radius,
                        prims=prims, semantic_map=semantic_map,
                        raster_config=raster_config, ego_index=ego_index)


def condition_on_ego(graph: TrafficGraph, ego_control: ControlInput) -> TrafficGraph:
    """Fix the ego: drop its incoming edges and pin its intention.

    The pinned intention is the one-hot on the lattice primitive nearest to
    ``ego_control`` (per-axis nearest; boundary clamp; lowest index on
    ties).  No other node or edge is touched.
    """
    if graph.ego_index is None:
        raise ValueError("graph has no ego agent to condition on")
    if graph.ego_conditioned:
        raise ValueError("graph is already ego-conditioned")
    e = graph.ego_index
    snapped = graph.prims.nearest_index(ego_control)
    ego_node = graph.nodes[e]
    pinned = replace(ego_node.agent,
                     intention=Intention.one_hot(graph.prims.count, snapped))
    nodes = tuple(replace(n, agent=pinned) if i == e else n
                  for i, n in enumerate(graph.nodes))
    edges = tuple((s, d) for s, d in graph.edges if d != e)
    return replace(graph, nodes=nodes, edges=edges,
                   ego_conditioned=True, ego_control=ego_control)
