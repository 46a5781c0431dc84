"""Training: intention targets, scheduled sampling, the epoch loop, and
checkpoints.

A training sample is one scene sequence.  At every transition t -> t+1 the
network refreshes the intentions of the graph members (vehicles plus an
unconditioned ego, present and inside the ego-local region at t) and the
refreshed intentions are scored against targets built purely from the
recorded pair (state_t, state_{t+1}).  Intentions carry forward across
steps as taped tensors, so the per-sequence loss backpropagates through
the whole recurrence.

The input *states* follow the recorded sequence by default; with
scheduled sampling a per-agent coin instead advances the carried state by
a control drawn from the agent's current intention.  Targets are
unaffected: they always come from recorded pairs.  Random-number
consumption is fixed and documented on :func:`sequence_loss` so a run can
be resumed bit-exactly.

Checkpoints are single files holding a named tensor table (parameters,
Adam moments, counters) plus the model's configuration digest; loading
into a structurally different model is refused.
"""

from __future__ import annotations

import csv
import shutil
import struct
import time
import warnings
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import SerializationError, Tensor, tensor_from_bytes, tensor_to_bytes
from .kinematics import (MotionPrimitiveSet, Pose2, VehicleState, integrate_unicycle,
                         wrap_angle)
from .network import Model, gnn_forward
from .optim import AdamState, ParameterStore, adam_step, collect_gradients
from .scene import AgentState, Intention, RegionConfig, build_graph
from .sceneio import Scene

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "TargetSigma",
    "TrainConfig",
    "TrainResult",
    "TrainingSample",
    "load_checkpoint",
    "restore_model",
    "sample_index",
    "sampling_rate",
    "save_checkpoint",
    "sequence_fd_check",
    "sequence_loss",
    "target_distances",
    "target_intention_gaussian",
    "target_intention_onehot",
    "train",
]


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True)
class TargetSigma:
    """Per-component scales of the target distance (x, y, heading, speed)."""

    x: float = 5e-2
    y: float = 5e-2
    theta: float = 1.75e-2
    v: float = 0.1


def target_distances(prev: VehicleState, nxt: VehicleState,
                     prims: MotionPrimitiveSet,
                     sigma: TargetSigma = TargetSigma()) -> np.ndarray:
    """Squared scale-weighted distance from each primitive's endpoint to the
    recorded successor, in the predecessor's frame.  Shape (count,)."""
    from .kinematics import future_states

    fut = future_states(prev, prims)
    inv = Pose2.from_state(prev).inverse()
    fx, fy, fth, fv = inv.apply_state_arrays(fut.x, fut.y, fut.theta, fut.v)
    tgt = inv.apply_state(nxt)
    d2 = ((fx - tgt.x) / sigma.x) ** 2
    d2 += ((fy - tgt.y) / sigma.y) ** 2
    d2 += (wrap_angle(fth - tgt.theta) / sigma.theta) ** 2
    d2 += ((fv - tgt.v) / sigma.v) ** 2
    return d2.reshape(-1)


def target_intention_onehot(prev: VehicleState, nxt: VehicleState,
                            prims: MotionPrimitiveSet,
                            sigma: TargetSigma = TargetSigma()) -> int:
    """Index of the primitive whose endpoint best matches the recorded
    successor (lowest index on exact ties)."""
    return int(np.argmin(target_distances(prev, nxt, prims, sigma)))


def target_intention_gaussian(prev: VehicleState, nxt: VehicleState,
                              prims: MotionPrimitiveSet,
                              sigma: TargetSigma = TargetSigma()) -> np.ndarray:
    """Soft target: mass proportional to exp(-d^2/2) over the lattice.

    Computed with the minimum distance shifted out before exponentiation,
    which leaves the normalized result unchanged and keeps the best entry
    at weight one.  Should the sum still degenerate, the one-hot target is
    used instead (with a warning).
    """
    d2 = target_distances(prev, nxt, prims, sigma)
    z = np.exp(-(d2 - d2.min()) / 2.0)
    total = z.sum()
    if not np.isfinite(total) or total <= 0.0:
        warnings.warn("soft target degenerated; falling back to one-hot",
                      RuntimeWarning, stacklevel=2)
        out = np.zeros(prims.count)
        out[int(np.argmin(d2))] = 1.0
        return out
    return z / total


# ---------------------------------------------------------------------------
# scheduled sampling


def sampling_rate(epoch: int) -> float:
    """Scheduled-sampling rate for a 1-based epoch number.

    Zero through epoch 10, then linear up to 0.5 at epoch 30, constant
    afterwards.
    """
    if epoch <= 10:
        return 0.0
    if epoch >= 30:
        return 0.5
    return 0.5 * (epoch - 10) / 20.0


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a probability vector by inverse CDF (one draw)."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1)


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class TrainingSample:
    """One scene sequence prepared for the loss: per-step presence and
    region membership resolved against the recorded ego pose."""

    scene_id: str
    scene: Scene
    agent_ids: tuple[str, ...]
    kinds: tuple[str, ...]
    ego_slot: int
    # indexed [step][agent_slot]; state is None when absent
    states: tuple[tuple[VehicleState | None, ...], ...]
    in_region: tuple[tuple[bool, ...], ...]

    @property
    def length(self) -> int:
        return len(self.states)

    @classmethod
    def from_scene(cls, scene: Scene, region: RegionConfig = RegionConfig(),
                   length: int | None = None) -> "TrainingSample":
        steps = scene.steps if length is None else scene.steps[:length]
        if len(steps) < 2:
            raise ValueError(f"scene {scene.scene_id!r}: need at least two steps")
        ego_id = scene.ego_id()
        if ego_id is None:
            raise ValueError(f"scene {scene.scene_id!r}: no ego agent")
        agent_ids: list[str] = []
        kinds: dict[str, str] = {}
        for step in steps:
            for a in step.agents:
                if a.agent_id not in kinds:
                    agent_ids.append(a.agent_id)
                    kinds[a.agent_id] = a.kind
                elif kinds[a.agent_id] != a.kind:
                    raise ValueError(
                        f"scene {scene.scene_id!r}: agent {a.agent_id!r} changes kind")
        states = []
        in_region = []
        for step in steps:
            ego = step.get(ego_id)
            if ego is None:
                raise ValueError(
                    f"scene {scene.scene_id!r}: ego absent at t={step.t}")
            to_ego = Pose2.from_state(ego.state).inverse()
            row_s: list[VehicleState | None] = []
            row_r: list[bool] = []
            for aid in agent_ids:
                rec = step.get(aid)
                if rec is None:
                    row_s.append(None)
                    row_r.append(False)
                    continue
                row_s.append(rec.state)
                lx, ly = to_ego.apply_xy(rec.state.x, rec.state.y)
                row_r.append(-region.behind <= lx <= region.ahead
                             and abs(ly) <= region.side)
            states.append(tuple(row_s))
            in_region.append(tuple(row_r))
        return cls(scene_id=scene.scene_id, scene=scene,
                   agent_ids=tuple(agent_ids),
                   kinds=tuple(kinds[a] for a in agent_ids),
                   ego_slot=agent_ids.index(ego_id),
                   states=tuple(states), in_region=tuple(in_region))


# ---------------------------------------------------------------------------
# sequence loss


def sequence_loss(model: Model, sample: TrainingSample, rate: float = 0.0,
                  rng: np.random.Generator | None = None,
                  sigma: TargetSigma = TargetSigma(), radius: float = 25.0,
                  compute_grads: bool = True):
    """Summed cross-entropy over one sequence; optionally its gradients.

    Returns ``(loss, grads)`` where ``grads`` maps parameter names to
    arrays (zero-filled for untouched parameters) or is None when
    ``compute_grads`` is false.

    Randomness: when ``rate`` is exactly zero no draws are made at all.
    Otherwise, per transition t and per vehicle/ego agent present at both
    t and t+1 (sample agent order), one coin draw decides GT vs sampled;
    a sampled advance costs one further draw for the control index.
    Pedestrians always follow the recorded states and consume nothing.
    """
    if rate < 0.0 or rate > 1.0:
        raise ValueError(f"sampling rate {rate} outside [0, 1]")
    if rate > 0.0 and rng is None:
        raise ValueError("a generator is required when the sampling rate is > 0")
    prims = model.prims
    m = prims.count
    uniform = Intention.uniform(m)
    ped_onehot = Intention.one_hot(m, prims.zero_index)
    n_agents = len(sample.agent_ids)
    kinds = sample.kinds
    dt = prims.dt

    carried_state: dict[int, VehicleState] = {}
    carried_intent: dict[int, Tensor] = {}

    ctx = ad.record() if compute_grads else nullcontext(None)
    with ctx as tape:
        total: Tensor | None = None
        for t in range(sample.length - 1):
            present = [sample.states[t][i] is not None for i in range(n_agents)]
            # entries and exits against the recorded presence
            for i in range(n_agents):
                if present[i] and i not in carried_state:
                    carried_state[i] = sample.states[t][i]
                elif not present[i] and i in carried_state:
                    del carried_state[i]
                    carried_intent.pop(i, None)

            members = [i for i in range(n_agents)
                       if present[i] and sample.in_region[t][i]]
            if members:
                agents = []
                intents = []
                for i in members:
                    placeholder = ped_onehot if kinds[i] == "pedestrian" else uniform
                    agents.append(AgentState(sample.agent_ids[i], kinds[i],
                                             carried_state[i], placeholder))
                    if kinds[i] == "pedestrian":
                        intents.append(Tensor(ped_onehot.p))
                    else:
                        intents.append(carried_intent.get(i, Tensor(uniform.p)))
                graph = build_graph(agents, prims, sample.scene.semantic_map,
                                    radius=radius,
                                    raster_config=model.raster_config)
                result = gnn_forward(graph, model.params, model.config, intents)
                for node in result.updatable:
                    carried_intent[members[node]] = result.intentions[node]
                if result.logits is not None:
                    targets = np.zeros(result.logits.shape)
                    any_target = False
                    for j, node in enumerate(result.updatable):
                        i = members[node]
                        nxt = sample.states[t + 1][i]
                        if nxt is None:
                            continue
                        targets[j] = target_intention_gaussian(
                            sample.states[t][i], nxt, prims, sigma)
                        any_target = True
                    if any_target:
                        step_loss = ad.negsum(
                            ad.mul(Tensor(targets), ad.log_softmax(result.logits)))
                        total = step_loss if total is None else ad.add(total, step_loss)

            # advance carried states to t+1
            for i in range(n_agents):
                here = sample.states[t][i] is not None
                there = sample.states[t + 1][i] is not None
                if not (here and there):
                    continue
                if kinds[i] == "pedestrian" or rate == 0.0:
                    carried_state[i] = sample.states[t + 1][i]
                    continue
                if rng.random() < rate:
                    q = carried_intent.get(i)
                    p = q.data if q is not None else uniform.p
                    u = prims.control(sample_index(p, rng))
                    carried_state[i] = integrate_unicycle(carried_state[i], u, dt)
                else:
                    carried_state[i] = sample.states[t + 1][i]

    if total is None:
        return 0.0, ({name: np.zeros(p.shape) for name, p in model.params.items()}
                     if compute_grads else None)
    loss = float(total.data)
    if not np.isfinite(loss):
        raise ad.GradientError(
            f"non-finite loss {loss!r} on scene {sample.scene_id!r}")
    grads = collect_gradients(tape, total, model.params) if compute_grads else None
    return loss, grads


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"ITCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    """A parsed checkpoint: the owning model's config digest plus a named
    tensor table (parameters, optimizer moments, counters)."""

    digest: str
    tensors: dict[str, np.ndarray]

    @property
    def epoch(self) -> int:
        return int(self.tensors["meta/epoch"])

    @property
    def best_val(self) -> float:
        return float(self.tensors["meta/best_val"])

    @property
    def best_epoch(self) -> int:
        return int(self.tensors["meta/best_epoch"])

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name[len("param/"):]: arr for name, arr in self.tensors.items()
                if name.startswith("param/")}

    def adam_state(self) -> AdamState | None:
        if "meta/adam_step" not in self.tensors:
            return None
        state = AdamState(lr=float(self.tensors["meta/lr"]),
                          beta1=float(self.tensors["meta/beta1"]),
                          beta2=float(self.tensors["meta/beta2"]),
                          eps=float(self.tensors["meta/eps"]),
                          step=int(self.tensors["meta/adam_step"]))
        for name, arr in self.tensors.items():
            if name.startswith("adam/m/"):
                state.m[name[len("adam/m/"):]] = arr.copy()
            elif name.startswith("adam/v/"):
                state.v[name[len("adam/v/"):]] = arr.copy()
        return state


def save_checkpoint(path, model: Model, adam: AdamState | None = None,
                    epoch: int = 0, best_val: float = float("nan"),
                    best_epoch: int = 0) -> None:
    """Write the model (and optionally optimizer) state to one file.

    Layout: magic ``ITCK``, little-endian u16 version, u16 digest length,
    the config digest (ascii hex), u32 entry count, then per entry a u16
    name length, the utf-8 name, a u32 record length, and the tensor
    record (see :func:`intentsim.autodiff.tensor_to_bytes`).
    """
    tensors: dict[str, np.ndarray] = {}
    for name, p in model.params.items():
        tensors[f"param/{name}"] = p.data
    if adam is not None:
        for name, arr in adam.m.items():
            tensors[f"adam/m/{name}"] = arr
        for name, arr in adam.v.items():
            tensors[f"adam/v/{name}"] = arr
        tensors["meta/adam_step"] = np.array(float(adam.step))
        tensors["meta/lr"] = np.array(adam.lr)
        tensors["meta/beta1"] = np.array(adam.beta1)
        tensors["meta/beta2"] = np.array(adam.beta2)
        tensors["meta/eps"] = np.array(adam.eps)
    tensors["meta/epoch"] = np.array(float(epoch))
    tensors["meta/best_val"] = np.array(float(best_val))
    tensors["meta/best_epoch"] = np.array(float(best_epoch))

    digest = model.config_digest().encode("ascii")
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<HH", CHECKPOINT_VERSION, len(digest)), digest,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        name_b = name.encode("utf-8")
        rec = tensor_to_bytes(Tensor(tensors[name]))
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<I", len(rec)))
        parts.append(rec)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise SerializationError(f"{path}: not a checkpoint file")
    off = 4
    version, digest_len = struct.unpack_from("<HH", buf, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise SerializationError(f"{path}: unsupported checkpoint version {version}")
    digest = buf[off:off + digest_len].decode("ascii")
    off += digest_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        (rec_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        rec = buf[off:off + rec_len]
        if len(rec) != rec_len:
            raise SerializationError(f"{path}: truncated record for {name!r}")
        off += rec_len
        tensors[name] = tensor_from_bytes(rec).data
    if off != len(buf):
        raise SerializationError(f"{path}: {len(buf) - off} trailing bytes")
    return Checkpoint(digest=digest, tensors=tensors)


def restore_model(model: Model, checkpoint: Checkpoint) -> None:
    """Load checkpoint parameters into ``model`` after a digest check."""
    expect = model.config_digest()
    if checkpoint.digest != expect:
        raise SerializationError(
            f"checkpoint was written by a different configuration "
            f"(digest {checkpoint.digest[:12]}..., model {expect[:12]}...)")
    model.params.load_arrays(checkpoint.param_arrays())


# ---------------------------------------------------------------------------
# the epoch loop


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    sequence_length: int = 8
    radius: float = 25.0
    sigma: TargetSigma = TargetSigma()
    region: RegionConfig = RegionConfig()


@dataclass
class TrainResult:
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    best_path: str | None
    metrics_path: str
    final_train_loss: float


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng((seed, epoch))


def train(model: Model, train_samples, val_samples, config: TrainConfig,
          out_dir, resume_from=None, progress=None) -> TrainResult:
    """Run the epoch loop, checkpointing every epoch.

    Determinism: epoch e derives its generator from ``(seed, e)`` and uses
    it first for the shuffle, then for scheduled sampling in processed
    order, so resuming from the epoch-e checkpoint reproduces epochs e+1..
    bit-exactly.  Batches average per-sequence gradients; validation runs
    at sampling rate zero.  The best epoch (lowest validation loss, first
    on ties) is mirrored to ``best.ckpt``.
    """
    if not train_samples:
        raise ValueError("no training samples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"

    adam = AdamState.for_store(model.params, lr=config.lr)
    start_epoch = 1
    best_val = float("inf")
    best_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        restore_model(model, ckpt)
        restored = ckpt.adam_state()
        if restored is None:
            raise SerializationError(
                f"{resume_from}: checkpoint has no optimizer state to resume from")
        adam = restored
        start_epoch = ckpt.epoch + 1
        if np.isfinite(ckpt.best_val):
            best_val = ckpt.best_val
            best_epoch = ckpt.best_epoch
    if resume_from is None or not metrics_path.exists():
        with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerow(
                ["epoch", "split", "loss", "wall_time_s", "sampling_rate"])

    final_train = float("nan")
    epochs_run = 0
    for epoch in range(start_epoch, config.epochs + 1):
        t0 = time.perf_counter()
        rate = sampling_rate(epoch)
        rng = _epoch_rng(config.seed, epoch)
        order = rng.permutation(len(train_samples))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            acc: dict[str, np.ndarray] | None = None
            for k in batch:
                loss, grads = sequence_loss(
                    model, train_samples[int(k)], rate=rate, rng=rng,
                    sigma=config.sigma, radius=config.radius)
                losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    for name in acc:
                        acc[name] += grads[name]
            inv = 1.0 / len(batch)
            for name in acc:
                acc[name] *= inv
            adam_step(model.params, acc, adam)
        train_loss = float(np.mean(losses))
        val_losses = [sequence_loss(model, s, rate=0.0, sigma=config.sigma,
                                    radius=config.radius, compute_grads=False)[0]
                      for s in val_samples]
        val_loss = float(np.mean(val_losses)) if val_samples else float("nan")
        wall = time.perf_counter() - t0

        improved = val_loss < best_val
        if improved:
            best_val = val_loss
            best_epoch = epoch
        ckpt_path = out_dir / f"epoch_{epoch:03d}.ckpt"
        save_checkpoint(ckpt_path, model, adam, epoch, best_val, best_epoch)
        if improved:
            shutil.copyfile(ckpt_path, out_dir / "best.ckpt")
        with open(metrics_path, "a", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([epoch, "train", f"{train_loss:.6f}", f"{wall:.3f}",
                        f"{rate:.4f}"])
            w.writerow([epoch, "val", f"{val_loss:.6f}", f"{wall:.3f}",
                        f"{rate:.4f}"])
        final_train = train_loss
        epochs_run += 1
        if progress is not None:
            progress(f"epoch {epoch:3d}  train {train_loss:9.4f}  "
                     f"val {val_loss:9.4f}  rate {rate:.2f}  {wall:6.1f}s")

    best_path = str(out_dir / "best.ckpt") if best_epoch else None
    return TrainResult(epochs_run=epochs_run, best_epoch=best_epoch,
                       best_val_loss=best_val, best_path=best_path,
                       metrics_path=str(metrics_path), final_train_loss=final_train)


# ---------------------------------------------------------------------------
# gradient checking for the recurrent loss


def sequence_fd_check(model: Model, sample: TrainingSample, step: float = 1e-5,
                      sigma: TargetSigma = TargetSigma(), radius: float = 25.0):
    """Exhaustive central-difference check of the sequence-loss gradients.

    Perturbs every scalar of every parameter; the sampling rate is pinned
    to zero so both sides are deterministic.  Returns an
    :class:`intentsim.optim.FdReport`.
    """
    from .optim import FdReport

    _, analytic = sequence_loss(model, sample, rate=0.0, sigma=sigma,
                                radius=radius, compute_grads=True)

    def value() -> float:
        loss, _ = sequence_loss(model, sample, rate=0.0, sigma=sigma,
                                radius=radius, compute_grads=False)
        return loss

    worst = 0.0
    worst_name = ""
    checked = 0
    for name, p in model.params.items():
        grad = analytic[name]
        if not np.all(np.isfinite(grad)):
            raise ad.GradientError(f"non-finite analytic gradient for {name!r}")
        base = p.data
        gflat = grad.reshape(-1)
        for i in range(base.size):
            keep = base.flat[i]
            base.flat[i] = keep + step
            hi = value()
            base.flat[i] = keep - step
            lo = value()
            base.flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            if not np.isfinite(numeric):
                raise ad.GradientError(
                    f"non-finite numeric gradient for {name!r}[{i}]")
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return FdReport(max_rel_error=worst, worst_param=worst_name, checked=checked)
