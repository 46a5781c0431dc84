"""Synthetic scenario generation.

Every vehicle in a generated scene advances by an exact lattice primitive
each step (scripted controllers pick on-lattice controls and the states
are produced by the same integrator the model uses), so every consecutive
state pair is exactly reachable and intention targets are well-posed.
Pedestrians walk straight at constant speed, which is the center
primitive, so the same holds for them.

Five kinds:

* ``car_following`` — the ego leads with a scripted speed profile
  (constant, gentle brake, or hard brake); a follower sits a few meters
  back and regulates gap and closing speed, braking when the ego brakes.
* ``intersection`` — a crossing; vehicles on the right (turn) lane slow
  and take the corner, vehicles on the through lanes either stop at the
  stop line or roll through; the ego trails the platoon and stops.
* ``lane_change`` — a slowing leader in the right lane; the vehicle
  behind it swerves one lane left when the gap closes; the ego follows.
* ``parked_merge`` — a parked car on the right edge; the approaching
  vehicle swerves around it; the ego follows.
* ``pedestrian_cross`` — a pedestrian crosses the road; vehicles brake
  to a stop short of the crossing while it is occupied.

Behaviors depend only on the current step's states (own speed, gaps,
lane geometry), matching the one-step prediction setting; the ego always
exists, and agents other than a car-following ego's follower are placed
ahead of the ego so they fall inside the forward-biased local region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (ControlInput, MotionPrimitiveSet, VehicleState,
                         build_primitive_set, integrate_unicycle)
from .scene import SemanticMap
from .sceneio import Scene, SceneAgent, SceneStep

__all__ = [
    "SCENARIO_KINDS",
    "ScenarioSpec",
    "default_specs",
    "generate_corpus",
    "generate_scene",
]

SCENARIO_KINDS = ("car_following", "intersection", "lane_change",
                  "parked_merge", "pedestrian_cross")

_SPEED_CAP = 20.0  # generator envelope; one lattice step can change v by 4 m/s


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    agents: tuple[int, int] = (2, 3)
    speeds: tuple[float, float] = (5.0, 9.0)
    template: str = "auto"
    length: int = 9

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.length < 2:
            raise ValueError("sequence length must be at least 2")
        lo, hi = self.agents
        if not (1 <= lo <= hi):
            raise ValueError(f"bad agent count range {self.agents}")
        vlo, vhi = self.speeds
        if not (0.0 <= vlo <= vhi <= _SPEED_CAP):
            raise ValueError(
                f"speed range {self.speeds} outside the lattice envelope "
                f"[0, {_SPEED_CAP}]")


def default_specs(length: int = 9) -> list[ScenarioSpec]:
    return [
        ScenarioSpec("car_following", agents=(2, 2), speeds=(5.0, 9.0), length=length),
        ScenarioSpec("intersection", agents=(2, 3), speeds=(5.0, 8.0), length=length),
        ScenarioSpec("lane_change", agents=(3, 3), speeds=(6.0, 8.0), length=length),
        ScenarioSpec("parked_merge", agents=(3, 3), speeds=(5.0, 7.0), length=length),
        ScenarioSpec("pedestrian_cross", agents=(3, 3), speeds=(5.0, 8.0), length=length),
    ]


# ---------------------------------------------------------------------------
# maps


def _straight_road_map(lanes_y, half_width: float, length: float = 240.0) -> SemanticMap:
    x0, x1 = -length / 2, length / 2
    drivable = [[[x0, -half_width], [x1, -half_width], [x1, half_width],
                 [x0, half_width]]]
    lane_lines = [[[x, y] for x in np.arange(x0, x1 + 1e-9, 5.0)] for y in lanes_y]
    return SemanticMap.from_geometry(drivable, lane_lines)


def _intersection_map() -> SemanticMap:
    h = 7.0
    drivable = [
        [[-90.0, -h], [90.0, -h], [90.0, h], [-90.0, h]],
        [[-h, -90.0], [h, -90.0], [h, 90.0], [-h, 90.0]],
    ]
    through = [[x, -5.25] for x in np.arange(-90.0, 90.0 + 1e-9, 5.0)]
    opposite = [[x, 1.75] for x in np.arange(90.0, -90.0 - 1e-9, -5.0)]
    # right-turn lane: east approach at y = -1.75, quarter arc, then south
    turn = [[x, -1.75] for x in np.arange(-90.0, -10.0 + 1e-9, 5.0)]
    r = 8.25
    cx, cy = -10.0, -1.75 - r
    for ang in np.linspace(np.pi / 2, 0.0, 10)[1:]:
        turn.append([cx + r * np.cos(ang), cy + r * np.sin(ang)])
    turn += [[-1.75, y] for y in np.arange(-12.0, -90.0 - 1e-9, -5.0)]
    return SemanticMap.from_geometry(drivable, [through, opposite, turn])


# ---------------------------------------------------------------------------
# scripted controllers (always returning lattice entries)


def _accel_floor(prims: MotionPrimitiveSet, a_des: float) -> float:
    """Strongest-or-equal lattice acceleration not above ``a_des``."""
    acc = np.asarray(prims.accelerations)
    i = int(np.searchsorted(acc, a_des + 1e-12, side="right")) - 1
    return float(acc[max(0, min(i, len(acc) - 1))])


def _snap(prims: MotionPrimitiveSet, a: float, w: float) -> ControlInput:
    return prims.control(prims.nearest_index(ControlInput(a, w)))


def _brake_to_stop(v: float, gap: float) -> float:
    if gap <= 0.3:
        return -8.0
    return -(v * v) / (2.0 * gap)


def _follow_accel(v: float, v_lead: float, gap: float) -> float:
    d_des = 4.0 + 0.5 * v
    a = 0.6 * (gap - d_des) + 1.4 * (v_lead - v)
    return float(np.clip(a, -6.4, 2.4))


def _no_pass(prims: MotionPrimitiveSet, state: VehicleState, a: float,
             lead_next_x: float, margin: float = 2.0) -> float:
    """Reduce a (by lattice steps) until the next-step position keeps a
    forward margin to the leader's next position."""
    acc = np.asarray(prims.accelerations)
    i = int(np.argmin(np.abs(acc - a)))
    while i > 0:
        nxt = integrate_unicycle(state, ControlInput(float(acc[i]), 0.0), prims.dt)
        if nxt.x <= lead_next_x - margin:
            break
        i -= 1
    return float(acc[i])


# ---------------------------------------------------------------------------
# per-kind builders: return (records, controller)
#   records: list of [agent_id, kind, initial VehicleState]
#   controller(t, states) -> list[ControlInput] (lattice entries), evaluated
#   front-to-back so followers react to their leader's current state


def _build_car_following(spec: ScenarioSpec, prims, rng):
    v_ego = rng.uniform(*spec.speeds)
    v_f = min(v_ego + rng.uniform(0.0, 2.0), _SPEED_CAP)
    gap0 = rng.uniform(5.5, 9.0)
    profile = rng.choice(["hold", "gentle", "hard"], p=[0.3, 0.35, 0.35])
    brake_at = int(rng.integers(1, 4))
    ego = VehicleState(0.0, 0.0, 0.0, v_ego)
    follower = VehicleState(-gap0, 0.0, 0.0, v_f)
    records = [["ego", "ego", ego], ["follower", "vehicle", follower]]

    def controller(t, states):
        se, sf = states
        if profile == "hold" or t < brake_at:
            a_e = 0.0
        else:
            a_e = -1.6 if profile == "gentle" else -4.0
        u_e = _snap(prims, a_e, 0.0)
        lead_next = integrate_unicycle(se, u_e, prims.dt)
        a_f = _follow_accel(sf.v, se.v, se.x - sf.x)
        a_f = _no_pass(prims, sf, _snap(prims, a_f, 0.0).a, lead_next.x)
        return [u_e, ControlInput(a_f, 0.0)]

    return _straight_road_map([0.0], 5.0), records, controller


def _build_intersection(spec: ScenarioSpec, prims, rng):
    n_lead = int(rng.integers(spec.agents[0], spec.agents[1] + 1)) - 1
    n_lead = max(1, n_lead)
    stop_x = -9.0
    records = []
    roles = []
    lanes = []
    x = -rng.uniform(12.0, 18.0)
    for i in range(n_lead):
        v0 = rng.uniform(*spec.speeds)
        role = rng.choice(["turn", "stop", "through"], p=[0.4, 0.4, 0.2])
        y = -1.75 if role == "turn" else -5.25
        records.append([f"car{i}", "vehicle", VehicleState(x, y, 0.0, v0)])
        roles.append(role)
        lanes.append(y)
        x -= rng.uniform(10.0, 14.0)
    v_ego = rng.uniform(*spec.speeds)
    records.append(["ego", "ego", VehicleState(x - rng.uniform(2.0, 5.0), -5.25,
                                               0.0, v_ego)])
    roles.append("stop")
    lanes.append(-5.25)

    def controller(t, states):
        controls = []
        prev_next_x = {}
        for i, s in enumerate(states):
            role = roles[i]
            if role == "turn":
                if s.theta <= -np.pi / 2 + 0.05:
                    u = _snap(prims, 0.0, 0.0)
                elif s.x >= -12.0 and abs(s.theta) < np.pi / 4:
                    a = 0.0 if s.v <= 4.4 else -1.6
                    u = _snap(prims, a, -0.5)
                elif abs(s.theta) >= np.pi / 4:
                    u = _snap(prims, 0.0, -0.5)
                else:
                    a = 0.0 if s.v <= 4.4 else _brake_to_stop(s.v - 4.0, -12.0 - s.x)
                    u = ControlInput(_accel_floor(prims, max(a, -4.8)), 0.0)
            else:
                if role == "stop":
                    a = _brake_to_stop(s.v, stop_x - s.x)
                    a = _accel_floor(prims, max(a, -6.4))
                else:
                    a = 0.0
                # keep distance to any same-lane car ahead
                for j in range(i):
                    if lanes[j] == lanes[i] and abs(states[j].theta) < 0.3:
                        if states[j].x > s.x:
                            a = min(a, _no_pass(prims, s, a,
                                                prev_next_x[j]))
                u = ControlInput(a, 0.0)
            controls.append(u)
            prev_next_x[i] = integrate_unicycle(s, u, prims.dt).x
        return controls

    return _intersection_map(), records, controller


_SWERVE = (0.35, 0.35, -0.35, -0.35)  # heading-symmetric one-lane shift


def _build_lane_change(spec: ScenarioSpec, prims, rng):
    v_lead = rng.uniform(2.0, 3.5)
    v_c = rng.uniform(*spec.speeds)
    v_ego = rng.uniform(*spec.speeds)
    x_lead = rng.uniform(24.0, 30.0)
    x_c = x_lead - rng.uniform(16.0, 20.0)
    records = [
        ["leader", "vehicle", VehicleState(x_lead, 0.0, 0.0, v_lead)],
        ["changer", "vehicle", VehicleState(x_c, 0.0, 0.0, v_c)],
        ["ego", "ego", VehicleState(x_c - rng.uniform(7.0, 9.0), 0.0, 0.0, v_ego)],
    ]
    phase = {"i": None}

    def controller(t, states):
        sl, sc, se = states
        u_l = _snap(prims, -0.8, 0.0) if sl.v > 0 else _snap(prims, 0.0, 0.0)
        lead_next = integrate_unicycle(sl, u_l, prims.dt)
        if phase["i"] is None and sl.x - sc.x < 14.0 + 0.8 * sc.v:
            phase["i"] = 0
        if phase["i"] is not None and phase["i"] < len(_SWERVE):
            u_c = _snap(prims, 0.0, _SWERVE[phase["i"]])
            phase["i"] += 1
        elif phase["i"] is None:
            a = _follow_accel(sc.v, sl.v, sl.x - sc.x)
            a = _no_pass(prims, sc, _snap(prims, a, 0.0).a, lead_next.x)
            u_c = ControlInput(a, 0.0)
        else:
            u_c = _snap(prims, 0.0, 0.0)
        changer_next = integrate_unicycle(sc, u_c, prims.dt)
        if abs(sc.y - se.y) < 1.5:
            a_e = _follow_accel(se.v, sc.v, sc.x - se.x)
            a_e = _no_pass(prims, se, _snap(prims, a_e, 0.0).a, changer_next.x)
        else:
            # the changer left the lane; the slow leader is the ego's leader now
            a_e = _follow_accel(se.v, sl.v, sl.x - se.x)
            a_e = _no_pass(prims, se, _snap(prims, a_e, 0.0).a, lead_next.x)
        return [u_l, u_c, ControlInput(a_e, 0.0)]

    return _straight_road_map([0.0, 3.5], 7.0), records, controller


def _build_parked_merge(spec: ScenarioSpec, prims, rng):
    x_parked = rng.uniform(22.0, 28.0)
    v_m = rng.uniform(*spec.speeds)
    v_ego = rng.uniform(*spec.speeds)
    x_m = x_parked - rng.uniform(14.0, 18.0)
    records = [
        ["parked", "vehicle", VehicleState(x_parked, -1.2, 0.0, 0.0)],
        ["mover", "vehicle", VehicleState(x_m, 0.0, 0.0, v_m)],
        ["ego", "ego", VehicleState(x_m - rng.uniform(7.0, 9.0), 0.0, 0.0, v_ego)],
    ]
    phase = {"i": None}

    def controller(t, states):
        sp, sm, se = states
        u_p = _snap(prims, 0.0, 0.0)
        if phase["i"] is None and sp.x - sm.x < 12.0 + 0.8 * sm.v:
            phase["i"] = 0
        if phase["i"] is not None and phase["i"] < len(_SWERVE):
            u_m = _snap(prims, 0.0, _SWERVE[phase["i"]])
            phase["i"] += 1
        elif phase["i"] is None:
            u_m = ControlInput(_accel_floor(
                prims, max(_brake_to_stop(sm.v, sp.x - sm.x - 6.0), -6.4)), 0.0)
        else:
            u_m = _snap(prims, 0.0, 0.0)
        mover_next = integrate_unicycle(sm, u_m, prims.dt)
        if abs(sm.y - se.y) < 1.5:
            a_e = _follow_accel(se.v, sm.v, sm.x - se.x)
            a_e = _no_pass(prims, se, _snap(prims, a_e, 0.0).a, mover_next.x)
        else:
            # the mover swerved out; queue behind the parked car instead
            a_e = _accel_floor(
                prims, max(_brake_to_stop(se.v, sp.x - se.x - 6.0), -6.4))
        return [u_p, u_m, ControlInput(a_e, 0.0)]

    return _straight_road_map([0.0, 3.5], 7.0), records, controller


def _build_pedestrian_cross(spec: ScenarioSpec, prims, rng):
    x_cross = rng.uniform(22.0, 30.0)
    v_ped = rng.uniform(1.0, 1.5)
    side = 1.0 if rng.random() < 0.5 else -1.0
    v_a = rng.uniform(*spec.speeds)
    v_ego = rng.uniform(*spec.speeds)
    x_a = rng.uniform(4.0, 8.0)
    records = [
        ["walker", "pedestrian",
         VehicleState(x_cross, -side * 6.0, side * np.pi / 2, v_ped)],
        ["car", "vehicle", VehicleState(x_a, 0.0, 0.0, v_a)],
        ["ego", "ego", VehicleState(x_a - rng.uniform(7.0, 9.0), 0.0, 0.0, v_ego)],
    ]

    def controller(t, states):
        sw, sa, se = states
        u_w = ControlInput(0.0, 0.0)

        def ped_brake(s):
            if abs(sw.y) <= 5.0 and sw.x > s.x:
                stop_gap = sw.x - 6.0 - s.x
                return _accel_floor(prims, max(_brake_to_stop(s.v, stop_gap), -6.4))
            return 0.0

        u_a = ControlInput(ped_brake(sa), 0.0)
        car_next = integrate_unicycle(sa, u_a, prims.dt)
        # the ego honors both the crossing and the car ahead
        a_e = min(ped_brake(se),
                  _snap(prims, _follow_accel(se.v, sa.v, sa.x - se.x), 0.0).a)
        a_e = _no_pass(prims, se, a_e, car_next.x)
        return [u_w, u_a, ControlInput(a_e, 0.0)]

    return _straight_road_map([0.0], 5.0), records, controller


_BUILDERS = {
    "car_following": _build_car_following,
    "intersection": _build_intersection,
    "lane_change": _build_lane_change,
    "parked_merge": _build_parked_merge,
    "pedestrian_cross": _build_pedestrian_cross,
}


# ---------------------------------------------------------------------------
# simulation and corpus assembly


def generate_scene(spec: ScenarioSpec, scene_id: str, seed,
                   prims: MotionPrimitiveSet | None = None) -> Scene:
    """Simulate one scene: scripted lattice controls, exact integration."""
    prims = prims or build_primitive_set()
    rng = np.random.default_rng(seed)
    semantic_map, records, controller = _BUILDERS[spec.kind](spec, prims, rng)
    ids = [r[0] for r in records]
    kinds = [r[1] for r in records]
    states = [r[2] for r in records]
    steps = [SceneStep(t=0.0, agents=tuple(
        SceneAgent(i, k, s) for i, k, s in zip(ids, kinds, states)))]
    for t in range(spec.length - 1):
        controls = controller(t, states)
        states = [integrate_unicycle(s, u, prims.dt)
                  for s, u in zip(states, controls)]
        steps.append(SceneStep(t=(t + 1) * prims.dt, agents=tuple(
            SceneAgent(i, k, s) for i, k, s in zip(ids, kinds, states))))
    return Scene(scene_id=scene_id, semantic_map=semantic_map,
                 steps=tuple(steps), hz=1.0 / prims.dt)


def generate_corpus(specs, n_sequences: int, seed: int,
                    prims: MotionPrimitiveSet | None = None) -> list[Scene]:
    """``n_sequences`` scenes cycling through ``specs``; scene i draws all
    its randomness from a generator seeded ``(seed, i)``."""
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    specs = list(specs)
    if not specs:
        raise ValueError("no scenario specs given")
    scenes = []
    for i in range(n_sequences):
        spec = specs[i % len(specs)]
        scenes.append(generate_scene(spec, f"{spec.kind}_{i:05d}", (seed, i), prims))
    return scenes
