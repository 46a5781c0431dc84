"""The intention network: encoders, messages, and the node update.

One forward pass runs a fixed number of synchronous message-passing
iterations over the traffic graph.  Within an iteration every quantity is
derived from the iteration's input intentions:

* every node's one-step-reachable states are rendered, in the frame of the
  node whose computation consumes them, as a (6, side, side) image with
  channels (x, y, cos heading, sin heading, speed, intention mass) and
  encoded by a small CNN (the image encoder) into a feature vector;
* a directed edge (b -> a) produces a message from the target's speed, the
  target's own image feature, the source state localized into the target
  frame (x, y, cos, sin, v), and the source's image feature rendered in
  the target frame;
* incoming messages are reduced by an elementwise max (empty set: zeros);
* the node update decodes (speed, image feature, map feature, aggregated
  message) into fresh intention logits, normalized by a softmax.

Pedestrians and a conditioned ego are pass-through nodes: their intentions
are never updated, but their features still feed neighbors' messages.

Layer size chains for the default configuration:

    image encoder: (6, 21, 21) -conv5-> (16, 17, 17) -pool-> (16, 8, 8)
                   -conv5-> (32, 4, 4) -global max-> 32
    map encoder:   (3, 100, 100) -conv5-> (4, 96, 96) -pool-> (4, 48, 48)
                   -conv5-> (8, 44, 44) -pool-> (8, 22, 22)
                   -conv3-> (16, 20, 20) -global max-> 16 -linear-> 32
    message net:   70 -> 64 -> 32 -> 16
    update net:    81 -> 64 -> 128 -> 441 (softmax)

(The trailing pool of a per-layer conv/act/pool stack followed by a global
max equals a single global max, so the chains above match the per-layer
reading exactly; a reference configuration of this architecture reports
94,105 parameters against the 95,681 counted here, the difference being
the 81-wide update input, the 3-channel raster, and the map head
projection.)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kinematics import FutureStates, MotionPrimitiveSet, Pose2, VehicleState, build_primitive_set
from .optim import ParameterStore
from .scene import Intention, RasterConfig, TrafficGraph

__all__ = [
    "ForwardResult",
    "GnnConfig",
    "Model",
    "REFERENCE_PARAM_COUNT",
    "aggregate_messages",
    "build_parameters",
    "compute_message",
    "encode_primitive_image",
    "gnn_forward",
    "parameter_count",
    "validate_params",
]

# Parameter total reported for the reference configuration of this
# architecture family; the computed count is logged alongside it.
REFERENCE_PARAM_COUNT = 94_105

_STATE_CHANNELS = 5  # x, y, cos(theta), sin(theta), v; intention mass is +1


@dataclass(frozen=True)
class GnnConfig:
    """Architecture and iteration-count table for the intention network."""

    iterations: int = 2
    lattice_side: int = 21
    raster_size: int = 100
    raster_channels: int = 3
    image_encoder_channels: tuple[int, ...] = (16, 32)
    image_encoder_kernels: tuple[int, ...] = (5, 5)
    map_encoder_channels: tuple[int, ...] = (4, 8, 16)
    map_encoder_kernels: tuple[int, ...] = (5, 5, 3)
    map_feature_width: int = 32
    message_hidden: tuple[int, ...] = (64, 32)
    message_width: int = 16
    update_hidden: tuple[int, ...] = (64, 128)
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lattice_side < 3 or self.lattice_side % 2 == 0:
            raise ValueError("lattice_side must be odd and >= 3")
        if len(self.image_encoder_channels) != len(self.image_encoder_kernels):
            raise ValueError("image encoder channel/kernel tables differ in length")
        if len(self.map_encoder_channels) != len(self.map_encoder_kernels):
            raise ValueError("map encoder channel/kernel tables differ in length")
        if len(self.message_hidden) != 2 or len(self.update_hidden) != 2:
            raise ValueError("message and update nets are three-layer MLPs")
        self._conv_chain(self.lattice_side, self.image_encoder_kernels, "image encoder")
        self._conv_chain(self.raster_size, self.map_encoder_kernels, "map encoder")

    @staticmethod
    def _conv_chain(size: int, kernels, label: str) -> None:
        for i, k in enumerate(kernels):
            if size < k:
                raise ValueError(
                    f"{label}: layer {i} input {size} smaller than kernel {k}"
                )
            size = size - k + 1
            if i < len(kernels) - 1:
                size //= 2
                if size < 1:
                    raise ValueError(f"{label}: layer {i} pools to nothing")

    @property
    def primitive_count(self) -> int:
        return self.lattice_side ** 2

    @property
    def image_feature_width(self) -> int:
        return self.image_encoder_channels[-1]

    @property
    def message_input_width(self) -> int:
        return 1 + self.image_feature_width + _STATE_CHANNELS + self.image_feature_width

    @property
    def update_input_width(self) -> int:
        return (1 + self.image_feature_width + self.map_feature_width
                + self.message_width)


def _conv_param_shapes(in_channels, channels, kernels, prefix):
    shapes = []
    c = in_channels
    for i, (f, k) in enumerate(zip(channels, kernels)):
        shapes.append((f"{prefix}/conv{i}/w", (f, c, k, k)))
        shapes.append((f"{prefix}/conv{i}/b", (f,)))
        c = f
    return shapes


def _mlp_param_shapes(widths, prefix):
    shapes = []
    for i in range(len(widths) - 1):
        shapes.append((f"{prefix}/lin{i}/w", (widths[i + 1], widths[i])))
        shapes.append((f"{prefix}/lin{i}/b", (widths[i + 1],)))
    return shapes


def _param_shapes(config: GnnConfig):
    shapes = []
    shapes += _conv_param_shapes(_STATE_CHANNELS + 1, config.image_encoder_channels,
                                 config.image_encoder_kernels, "image_enc")
    shapes += _conv_param_shapes(config.raster_channels, config.map_encoder_channels,
                                 config.map_encoder_kernels, "map_enc")
    shapes.append(("map_enc/proj/w",
                   (config.map_feature_width, config.map_encoder_channels[-1])))
    shapes.append(("map_enc/proj/b", (config.map_feature_width,)))
    shapes += _mlp_param_shapes(
        [config.message_input_width, *config.message_hidden, config.message_width],
        "message")
    shapes += _mlp_param_shapes(
        [config.update_input_width, *config.update_hidden, config.primitive_count],
        "update")
    return shapes


def parameter_count(config: GnnConfig) -> int:
    """Total trainable scalars; a pure function of the configuration."""
    return sum(int(np.prod(shape)) for _, shape in _param_shapes(config))


def build_parameters(config: GnnConfig, rng: np.random.Generator) -> ParameterStore:
    """He-style initialization: weights ~ N(0, 2/fan_in), biases zero."""
    store = ParameterStore()
    for name, shape in _param_shapes(config):
        if name.endswith("/b"):
            store.add(name, np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            store.add(name, rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
    return store


def validate_params(config: GnnConfig, store: ParameterStore) -> None:
    expected = dict(_param_shapes(config))
    have = {name: t.shape for name, t in store.items()}
    if set(expected) != set(have):
        missing = sorted(set(expected) - set(have))
        extra = sorted(set(have) - set(expected))
        raise ad.ShapeError(
            f"parameter table mismatch: missing={missing} extra={extra}")
    for name, shape in expected.items():
        if have[name] != shape:
            raise ad.ShapeError(
                f"parameter {name!r} has shape {have[name]}, expected {shape}")


# ---------------------------------------------------------------------------
# encoders


def _image_encoder(images: Tensor, params: ParameterStore, config: GnnConfig) -> Tensor:
    h = images
    n_layers = len(config.image_encoder_kernels)
    for i in range(n_layers):
        h = ad.conv2d(h, params[f"image_enc/conv{i}/w"], params[f"image_enc/conv{i}/b"])
        h = ad.leaky_relu(h, config.leaky_slope)
        if i < n_layers - 1:
            h = ad.maxpool2d(h)
    return ad.spatial_max(h)


def _map_encoder(rasters: Tensor, params: ParameterStore, config: GnnConfig) -> Tensor:
    h = rasters
    n_layers = len(config.map_encoder_kernels)
    for i in range(n_layers):
        h = ad.conv2d(h, params[f"map_enc/conv{i}/w"], params[f"map_enc/conv{i}/b"])
        h = ad.relu(h)
        if i < n_layers - 1:
            h = ad.maxpool2d(h)
    pooled = ad.spatial_max(h)
    return ad.linear(pooled, params["map_enc/proj/w"], params["map_enc/proj/b"])


def _mlp(x: Tensor, prefix: str, params: ParameterStore, config: GnnConfig) -> Tensor:
    h = x
    for i in range(3):
        h = ad.linear(h, params[f"{prefix}/lin{i}/w"], params[f"{prefix}/lin{i}/b"])
        if i < 2:
            h = ad.leaky_relu(h, config.leaky_slope)
    return h


def _localized_state_channels(target_state: VehicleState,
                              source_future: FutureStates) -> np.ndarray:
    """(5, side, side) constant channels of the source's reachable states in
    the target's frame."""
    inv = Pose2.from_state(target_state).inverse()
    lx, ly, lth, lv = inv.apply_state_arrays(source_future.x, source_future.y,
                                             source_future.theta, source_future.v)
    return np.stack([lx, ly, np.cos(lth), np.sin(lth), lv])


def _localized_state_vector(target_state: VehicleState,
                            source_state: VehicleState) -> np.ndarray:
    inv = Pose2.from_state(target_state).inverse()
    s = inv.apply_state(source_state)
    return np.array([s.x, s.y, np.cos(s.theta), np.sin(s.theta), s.v])


def encode_primitive_image(target_state: VehicleState, source_future: FutureStates,
                           source_intention, params: ParameterStore,
                           config: GnnConfig) -> Tensor:
    """Image feature of one (target frame, source agent) pair, shape (width,).

    ``source_intention`` may be an array, an :class:`Intention`, or a taped
    tensor; its mass grid forms the sixth image channel.
    """
    side = config.lattice_side
    q = source_intention.p if isinstance(source_intention, Intention) else source_intention
    qt = ad.as_tensor(q)
    if qt.shape != (config.primitive_count,):
        raise ad.ShapeError(
            f"intention must have shape ({config.primitive_count},), got {qt.shape}")
    const = Tensor(_localized_state_channels(target_state, source_future)[None])
    image = ad.concat([const, ad.reshape(qt, (1, 1, side, side))], axis=1)
    return ad.reshape(_image_encoder(image, params, config),
                      (config.image_feature_width,))


def compute_message(target_state: VehicleState, target_feature: Tensor,
                    source_state: VehicleState, source_feature: Tensor,
                    params: ParameterStore, config: GnnConfig) -> Tensor:
    """Edge message for (source -> target), shape (message_width,)."""
    w = config.image_feature_width
    row = ad.concat([
        Tensor(np.array([[target_state.v]])),
        ad.reshape(target_feature, (1, w)),
        Tensor(_localized_state_vector(target_state, source_state)[None]),
        ad.reshape(source_feature, (1, w)),
    ], axis=1)
    return ad.reshape(_mlp(row, "message", params, config), (config.message_width,))


def aggregate_messages(messages, width: int) -> Tensor:
    """Elementwise max over a message list; the empty set reduces to zeros."""
    if not messages:
        return Tensor(np.zeros(width))
    return ad.max_reduce(messages)


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class ForwardResult:
    """Per-node intentions after the final iteration.

    ``intentions`` holds one (primitive_count,) tensor per node (constants
    for pass-through nodes).  ``logits`` stacks the final-iteration decoder
    outputs for the updated nodes (None when nothing updates), row order
    following ``updatable``.
    """

    intentions: list[Tensor]
    logits: Tensor | None
    updatable: list[int]


def _updatable_indices(graph: TrafficGraph) -> list[int]:
    out = []
    for i, node in enumerate(graph.nodes):
        kind = node.agent.kind
        if kind == "vehicle" or (kind == "ego" and not graph.ego_conditioned):
            out.append(i)
    return out


def gnn_forward(graph: TrafficGraph, params: ParameterStore, config: GnnConfig,
                intentions: list[Tensor] | None = None) -> ForwardResult:
    """Run ``config.iterations`` synchronous message-passing rounds.

    ``intentions`` optionally overrides the per-node input intentions with
    taped tensors (the recurrent path during training); by default the
    graph's stored intentions enter as constants.
    """
    validate_params(config, params)
    side = config.lattice_side
    m = config.primitive_count
    if graph.prims.side != side:
        raise ad.ShapeError(
            f"lattice side {graph.prims.side} does not match config {side}")

    nodes = graph.nodes
    if intentions is None:
        current: list[Tensor] = [Tensor(n.agent.intention.p) for n in nodes]
    else:
        if len(intentions) != len(nodes):
            raise ad.ShapeError("one input intention required per node")
        current = [ad.as_tensor(q) for q in intentions]
    for q in current:
        if q.shape != (m,):
            raise ad.ShapeError(f"intention shape {q.shape}, expected ({m},)")

    upd = _updatable_indices(graph)
    if not upd:
        return ForwardResult(intentions=current, logits=None, updatable=[])
    n_upd = len(upd)
    row_of = {node: j for j, node in enumerate(upd)}

    raster_shape = (config.raster_channels, config.raster_size, config.raster_size)
    for i in upd:
        if nodes[i].raster.shape != raster_shape:
            raise ad.ShapeError(
                f"raster shape {nodes[i].raster.shape}, expected {raster_shape}")

    edges = [(s, d) for s, d in graph.edges if d in row_of]
    n_edge = len(edges)

    # image jobs: self images for updatable nodes, then one per incoming edge
    jobs = [(i, i) for i in upd] + [(d, s) for s, d in edges]
    const_block = Tensor(np.stack([
        _localized_state_channels(nodes[t].agent.state, nodes[s].future)
        for t, s in jobs
    ]))
    job_sources = [s for _, s in jobs]

    map_in = Tensor(np.stack([nodes[i].raster for i in upd]))
    map_feat = _map_encoder(map_in, params, config)            # (n_upd, map_w)

    upd_speed = Tensor(np.array([[nodes[i].agent.state.v] for i in upd]))
    upd_row_idx = np.arange(n_upd)

    if n_edge:
        edge_target_rows = np.array([row_of[d] for _, d in edges])
        edge_feat_rows = n_upd + np.arange(n_edge)
        edge_speed = Tensor(np.array([[nodes[d].agent.state.v] for _, d in edges]))
        edge_rel = Tensor(np.stack([
            _localized_state_vector(nodes[d].agent.state, nodes[s].agent.state)
            for s, d in edges
        ]))
        incoming: list[list[int]] = [[] for _ in range(n_upd)]
        for e_idx, (_, d) in enumerate(edges):
            incoming[row_of[d]].append(e_idx)

    logits = None
    for _ in range(config.iterations):
        q_block = ad.stack([ad.reshape(current[s], (1, side, side))
                            for s in job_sources])
        images = ad.concat([const_block, q_block], axis=1)
        feats = _image_encoder(images, params, config)          # (B, img_w)

        if n_edge:
            msg_in = ad.concat([
                edge_speed,
                ad.take_rows(feats, edge_target_rows),
                edge_rel,
                ad.take_rows(feats, edge_feat_rows),
            ], axis=1)
            msgs = _mlp(msg_in, "message", params, config)      # (n_edge, msg_w)
            agg_rows = []
            for j in range(n_upd):
                if incoming[j]:
                    agg_rows.append(ad.axis_max(ad.take_rows(msgs, incoming[j])))
                else:
                    agg_rows.append(Tensor(np.zeros(config.message_width)))
            agg = ad.stack(agg_rows)
        else:
            agg = Tensor(np.zeros((n_upd, config.message_width)))

        upd_in = ad.concat([
            upd_speed,
            ad.take_rows(feats, upd_row_idx),
            map_feat,
            agg,
        ], axis=1)
        logits = _mlp(upd_in, "update", params, config)          # (n_upd, M)
        q_upd = ad.softmax(logits)
        for j, i in enumerate(upd):
            current[i] = ad.reshape(ad.take_rows(q_upd, [j]), (m,))

    return ForwardResult(intentions=current, logits=logits, updatable=list(upd))


# ---------------------------------------------------------------------------
# model bundle


@dataclass
class Model:
    """Configuration, lattice, raster geometry, and parameters together."""

    config: GnnConfig
    prims: MotionPrimitiveSet
    raster_config: RasterConfig
    params: ParameterStore

    @classmethod
    def create(cls, config: GnnConfig | None = None,
               prims: MotionPrimitiveSet | None = None,
               raster_config: RasterConfig | None = None,
               seed: int = 0) -> "Model":
        config = config or GnnConfig()
        prims = prims or build_primitive_set()
        raster_config = raster_config or RasterConfig()
        if prims.side != config.lattice_side:
            raise ValueError(
                f"lattice side {prims.side} does not match config {config.lattice_side}")
        if raster_config.size != config.raster_size:
            raise ValueError(
                f"raster size {raster_config.size} does not match config "
                f"{config.raster_size}")
        rng = np.random.default_rng(seed)
        return cls(config, prims, raster_config, build_parameters(config, rng))

    def config_digest(self) -> str:
        """Hex digest of the full structural configuration."""
        doc = {
            "gnn": asdict(self.config),
            "lattice": {
                "accelerations": list(self.prims.accelerations),
                "turn_rates": list(self.prims.turn_rates),
                "dt": self.prims.dt,
            },
            "raster": asdict(self.raster_config),
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def forward(self, graph: TrafficGraph,
                intentions: list[Tensor] | None = None) -> ForwardResult:
        return gnn_forward(graph, self.params, self.config, intentions)
