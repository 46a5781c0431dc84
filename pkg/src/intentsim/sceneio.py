"""Scene files and tabular outputs.

Scene corpus format (schema version 1): JSON lines, one scene per line.

    {"schema_version": 1, "id": "scene_0001", "hz": 2,
     "map": {"drivable": [[[x, y], ...], ...],
             "lanes":    [[[x, y], ...], ...]},
     "steps": [{"t": 0.0,
                "agents": [{"id": "a0", "kind": "vehicle",
                            "x": 0.0, "y": 0.0, "theta": 0.0, "v": 5.0}]},
               ...]}

Validation is strict: unknown fields anywhere are rejected, ``hz`` must be
exactly 2 (the lattice step is bound to 0.5 s), timestamps must advance by
1/hz, kinds must be vehicle/pedestrian/ego with at most one ego, and agent
ids must be unique within a step.  Errors carry the offending line number.

Prediction output is CSV with columns
``scene_id,agent_id,sample_id,step,x,y`` where ``sample_id`` is ``ml`` for
the max-likelihood trajectory or the sample index otherwise.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .kinematics import ControlInput, VehicleState
from .scene import AGENT_KINDS, AgentState, Intention, SemanticMap

__all__ = [
    "Scene",
    "SceneAgent",
    "SceneStep",
    "SchemaError",
    "agents_at",
    "load_ego_controls",
    "load_scenes",
    "scene_to_record",
    "write_eval_table",
    "write_predictions",
    "write_scenes",
]

SCHEMA_VERSION = 1
REQUIRED_HZ = 2


class SchemaError(ValueError):
    """A scene file violates the schema."""


@dataclass(frozen=True)
class SceneAgent:
    agent_id: str
    kind: str
    state: VehicleState


@dataclass(frozen=True)
class SceneStep:
    t: float
    agents: tuple[SceneAgent, ...]

    def get(self, agent_id: str) -> SceneAgent | None:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        return None


@dataclass(frozen=True)
class Scene:
    scene_id: str
    semantic_map: SemanticMap
    steps: tuple[SceneStep, ...]
    hz: float

    @property
    def dt(self) -> float:
        return 1.0 / self.hz

    def agent_ids(self) -> list[str]:
        seen: list[str] = []
        for step in self.steps:
            for a in step.agents:
                if a.agent_id not in seen:
                    seen.append(a.agent_id)
        return seen

    def ego_id(self) -> str | None:
        for step in self.steps:
            for a in step.agents:
                if a.kind == "ego":
                    return a.agent_id
        return None


def agents_at(scene: Scene, step_index: int, primitive_count: int) -> list[AgentState]:
    """Agent states at one step with fresh initial intentions (uniform for
    vehicles and ego, the fixed center one-hot for pedestrians)."""
    side = int(round(np.sqrt(primitive_count)))
    ped = Intention.one_hot(primitive_count, (side // 2) * side + side // 2)
    uniform = Intention.uniform(primitive_count)
    out = []
    for a in scene.steps[step_index].agents:
        intent = ped if a.kind == "pedestrian" else uniform
        out.append(AgentState(a.agent_id, a.kind, a.state, intent))
    return out


def _reject_unknown(obj: dict, allowed: set[str], where: str, line: int) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"line {line}: unknown field(s) {sorted(unknown)} in {where}")


def _need(obj: dict, key: str, where: str, line: int):
    if key not in obj:
        raise SchemaError(f"line {line}: missing field {key!r} in {where}")
    return obj[key]


def _parse_agent(obj, line: int) -> SceneAgent:
    if not isinstance(obj, dict):
        raise SchemaError(f"line {line}: agent entry must be an object")
    _reject_unknown(obj, {"id", "kind", "x", "y", "theta", "v"}, "agent", line)
    agent_id = _need(obj, "id", "agent", line)
    kind = _need(obj, "kind", "agent", line)
    if not isinstance(agent_id, str) or not agent_id:
        raise SchemaError(f"line {line}: agent id must be a non-empty string")
    if kind not in AGENT_KINDS:
        raise SchemaError(f"line {line}: unknown agent kind {kind!r}")
    vals = {}
    for key in ("x", "y", "theta", "v"):
        raw = _need(obj, key, f"agent {agent_id!r}", line)
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            raise SchemaError(f"line {line}: agent field {key!r} must be a number")
        vals[key] = float(raw)
    if vals["v"] < 0:
        raise SchemaError(f"line {line}: agent {agent_id!r} has negative speed")
    return SceneAgent(agent_id, kind, VehicleState(**vals))


def _parse_points(raw, what: str, line: int) -> list[list[float]]:
    if not isinstance(raw, list) or not raw:
        raise SchemaError(f"line {line}: {what} must be a non-empty point list")
    pts = []
    for p in raw:
        if (not isinstance(p, list) or len(p) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool)
                           for c in p)):
            raise SchemaError(f"line {line}: {what} points must be [x, y] numbers")
        pts.append([float(p[0]), float(p[1])])
    return pts


def parse_scene_record(obj: dict, line: int) -> Scene:
    if not isinstance(obj, dict):
        raise SchemaError(f"line {line}: scene record must be an object")
    _reject_unknown(obj, {"schema_version", "id", "hz", "map", "steps"},
                    "scene record", line)
    version = _need(obj, "schema_version", "scene record", line)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"line {line}: unsupported schema_version {version!r}")
    scene_id = _need(obj, "id", "scene record", line)
    if not isinstance(scene_id, str) or not scene_id:
        raise SchemaError(f"line {line}: scene id must be a non-empty string")
    hz = _need(obj, "hz", "scene record", line)
    if hz != REQUIRED_HZ:
        raise SchemaError(f"line {line}: hz must be exactly {REQUIRED_HZ}, got {hz!r}")

    map_obj = _need(obj, "map", "scene record", line)
    if not isinstance(map_obj, dict):
        raise SchemaError(f"line {line}: map must be an object")
    _reject_unknown(map_obj, {"drivable", "lanes"}, "map", line)
    drivable = [_parse_points(poly, "drivable polygon", line)
                for poly in _need(map_obj, "drivable", "map", line)]
    lanes = [_parse_points(lane, "lane polyline", line)
             for lane in _need(map_obj, "lanes", "map", line)]
    try:
        semantic_map = SemanticMap.from_geometry(drivable, lanes)
    except ValueError as exc:
        raise SchemaError(f"line {line}: {exc}") from None

    steps_raw = _need(obj, "steps", "scene record", line)
    if not isinstance(steps_raw, list) or not steps_raw:
        raise SchemaError(f"line {line}: steps must be a non-empty list")
    steps = []
    prev_t = None
    for step_obj in steps_raw:
        if not isinstance(step_obj, dict):
            raise SchemaError(f"line {line}: step entry must be an object")
        _reject_unknown(step_obj, {"t", "agents"}, "step", line)
        t = _need(step_obj, "t", "step", line)
        if not isinstance(t, (int, float)) or isinstance(t, bool):
            raise SchemaError(f"line {line}: step t must be a number")
        t = float(t)
        if prev_t is not None and abs(t - prev_t - 1.0 / REQUIRED_HZ) > 1e-9:
            raise SchemaError(
                f"line {line}: timestamps must advance by {1.0 / REQUIRED_HZ} s "
                f"(got {prev_t} -> {t})")
        prev_t = t
        agents = [_parse_agent(a, line) for a in _need(step_obj, "agents", "step", line)]
        ids = [a.agent_id for a in agents]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"line {line}: duplicate agent ids within a step")
        if sum(1 for a in agents if a.kind == "ego") > 1:
            raise SchemaError(f"line {line}: more than one ego agent in a step")
        steps.append(SceneStep(t=t, agents=tuple(agents)))
    return Scene(scene_id=scene_id, semantic_map=semantic_map,
                 steps=tuple(steps), hz=float(REQUIRED_HZ))


def scene_to_record(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": scene.scene_id,
        "hz": REQUIRED_HZ,
        "map": {
            "drivable": [poly.tolist() for poly in scene.semantic_map.drivable],
            "lanes": [pts.tolist() for pts, _ in scene.semantic_map.lanes],
        },
        "steps": [
            {"t": step.t,
             "agents": [{"id": a.agent_id, "kind": a.kind, "x": a.state.x,
                         "y": a.state.y, "theta": a.state.theta, "v": a.state.v}
                        for a in step.agents]}
            for step in scene.steps
        ],
    }


def load_scenes(path) -> list[Scene]:
    scenes = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            scene = parse_scene_record(obj, line_no)
            if scene.scene_id in seen_ids:
                raise SchemaError(f"line {line_no}: duplicate scene id {scene.scene_id!r}")
            seen_ids.add(scene.scene_id)
            scenes.append(scene)
    if not scenes:
        raise SchemaError(f"{path}: no scene records found")
    return scenes


def write_scenes(path, scenes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene), separators=(",", ":")))
            fh.write("\n")


def load_ego_controls(path) -> list[ControlInput]:
    """Planned ego controls: a JSON list of [a, omega] pairs."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise SchemaError(f"{path}: expected a non-empty list of [a, omega] pairs")
    controls = []
    for i, pair in enumerate(raw):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool)
                           for c in pair)):
            raise SchemaError(f"{path}: entry {i} is not an [a, omega] pair")
        controls.append(ControlInput(float(pair[0]), float(pair[1])))
    return controls


def write_predictions(path, rows) -> None:
    """Rows: (scene_id, agent_id, sample_id, step, x, y)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "agent_id", "sample_id", "step", "x", "y"])
        for scene_id, agent_id, sample_id, step, x, y in rows:
            writer.writerow([scene_id, agent_id, sample_id, step,
                             f"{x:.6f}", f"{y:.6f}"])


def write_eval_table(path, rows) -> None:
    """Rows: dicts with case, method, horizon_s, ade, fde (None allowed)."""
    fields = ["case", "method", "horizon_s", "ade", "fde"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([
                row["case"], row["method"], f"{row['horizon_s']:g}",
                "" if row["ade"] is None else f"{row['ade']:.4f}",
                "" if row["fde"] is None else f"{row['fde']:.4f}",
            ])
