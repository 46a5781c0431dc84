"""Dynamically extended unicycle, motion-primitive lattice, and SE(2) frames.

State
    x, y    position in meters
    theta   heading in radians, wrapped to (-pi, pi]
    v       forward speed in m/s

Input
    a       longitudinal acceleration in m/s^2
    omega   turn rate in rad/s

Dynamics (controls held constant over one step of length dt)
    xdot = v cos(theta),  ydot = v sin(theta),  thetadot = omega,  vdot = a

The step is integrated in closed form.  With u = omega * dt the general
branch uses product-form trig differences so it stays accurate down to the
|omega| = 1e-6 switch point, where a Taylor branch (through omega^2) takes
over; the two agree to well under 1e-9 at the boundary.

Speed clamping (default on) uses stop-at-zero semantics: when braking
would take v through zero inside the step, the closed form is evaluated at
the crossing time and the pose holds from there, so a braking vehicle
comes to rest instead of reversing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ControlInput",
    "FutureStates",
    "MotionPrimitiveSet",
    "Pose2",
    "VehicleState",
    "build_primitive_set",
    "future_states",
    "integrate_unicycle",
    "wrap_angle",
]

_OMEGA_EPS = 1e-6       # Taylor branch below this |omega|
_SERIES_EPS = 1e-3      # series form of the u*cos(u/2) - 2*sin(u/2) helper


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]; array-safe."""
    r = np.remainder(theta, 2.0 * np.pi)
    r = np.where(r > np.pi, r - 2.0 * np.pi, r)
    if np.ndim(theta) == 0:
        return float(r)
    return r


@dataclass(frozen=True)
class VehicleState:
    """Planar vehicle state (x, y, theta, v)."""

    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "v", float(self.v))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v])


@dataclass(frozen=True)
class ControlInput:
    """Constant-over-one-step control (a, omega)."""

    a: float
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "omega", float(self.omega))


@dataclass(frozen=True)
class Pose2:
    """Rigid transform p -> R(theta) p + (x, y); also an agent pose.

    ``from_state`` gives the agent-to-world transform of an agent; its
    ``inverse`` localizes world quantities into that agent's frame.
    """

    x: float
    y: float
    theta: float

    @classmethod
    def from_state(cls, s: VehicleState) -> "Pose2":
        return cls(s.x, s.y, s.theta)

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    def inverse(self) -> "Pose2":
        c, s = np.cos(self.theta), np.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y),
                     wrap_angle(-self.theta))

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = np.cos(self.theta), np.sin(self.theta)
        return Pose2(self.x + c * other.x - s * other.y,
                     self.y + s * other.x + c * other.y,
                     wrap_angle(self.theta + other.theta))

    def apply_xy(self, xs, ys):
        """Transform coordinate arrays (or scalars)."""
        c, s = np.cos(self.theta), np.sin(self.theta)
        return c * xs - s * ys + self.x, s * xs + c * ys + self.y

    def apply_state(self, st: VehicleState) -> VehicleState:
        nx, ny = self.apply_xy(st.x, st.y)
        return VehicleState(nx, ny, wrap_angle(st.theta + self.theta), st.v)

    def apply_state_arrays(self, xs, ys, thetas, vs):
        nx, ny = self.apply_xy(xs, ys)
        return nx, ny, wrap_angle(thetas + self.theta), vs


def _trig_step(theta, v, a, om, t):
    """Displacement of the unicycle over time ``t`` (arrays ok), general branch.

    Uses s1 - s0 = 2 sin(u/2) cos(theta + u/2) (and the cosine analog) plus a
    series for g(u) = u cos(u/2) - 2 sin(u/2) so no catastrophic cancellation
    occurs near the branch switch.
    """
    u = om * t
    om_safe = np.where(np.abs(om) < _OMEGA_EPS / 4, 1.0, om)
    half = np.sin(u / 2.0)
    mid_c = np.cos(theta + u / 2.0)
    mid_s = np.sin(theta + u / 2.0)
    # g(u) = u cos(u/2) - 2 sin(u/2) = -u^3/12 + u^5/480 - ...
    g_direct = u * np.cos(u / 2.0) - 2.0 * half
    g_series = -u ** 3 / 12.0 + u ** 5 / 480.0
    g = np.where(np.abs(u) < _SERIES_EPS, g_series, g_direct)
    fx = mid_s * g + u * half * mid_c          # u sin(th+u) + cos(th+u) - cos th
    fy = -mid_c * g + u * half * mid_s         # -u cos(th+u) + sin(th+u) - sin th
    dx = v * (2.0 * half * mid_c) / om_safe + a * fx / (om_safe * om_safe)
    dy = v * (2.0 * half * mid_s) / om_safe + a * fy / (om_safe * om_safe)
    return dx, dy


def _taylor_step(theta, v, a, om, t):
    """Displacement for |omega| below the switch point, series through omega^2."""
    c0, s0 = np.cos(theta), np.sin(theta)
    p = v * t + a * t * t / 2.0
    q = v * t * t / 2.0 + a * t ** 3 / 3.0
    r = v * t ** 3 / 6.0 + a * t ** 4 / 8.0
    dx = c0 * p - om * s0 * q - om * om * c0 * r
    dy = s0 * p + om * c0 * q - om * om * s0 * r
    return dx, dy


def _advance_arrays(x, y, theta, v, a, om, dt, clamp):
    """Vectorized closed-form step shared by the scalar and grid paths."""
    a = np.asarray(a, dtype=np.float64)
    om = np.asarray(om, dtype=np.float64)
    x, y, theta, v = (np.asarray(q, dtype=np.float64) for q in (x, y, theta, v))
    t = np.broadcast_to(np.float64(dt), np.broadcast_shapes(a.shape, om.shape, v.shape)).copy()
    if clamp:
        a_safe = np.where(a < 0.0, a, -1.0)
        t_stop = v / -a_safe
        stopping = (a < 0.0) & (v + a * dt < 0.0)
        t = np.where(stopping, t_stop, t)
    gx, gy = _trig_step(theta, v, a, om, t)
    tx, ty = _taylor_step(theta, v, a, om, t)
    small = np.abs(om) < _OMEGA_EPS
    dx = np.where(small, tx, gx)
    dy = np.where(small, ty, gy)
    v_end = v + a * t
    if clamp:
        v_end = np.maximum(v_end, 0.0)
    return x + dx, y + dy, wrap_angle(theta + om * t), v_end


def integrate_unicycle(state: VehicleState, u: ControlInput, dt: float,
                       clamp_speed: bool = True) -> VehicleState:
    """One closed-form step of the dynamically extended unicycle."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    nx, ny, nth, nv = _advance_arrays(state.x, state.y, state.theta, state.v,
                                      u.a, u.omega, dt, clamp_speed)
    return VehicleState(float(nx), float(ny), float(nth), float(nv))


@dataclass(frozen=True)
class MotionPrimitiveSet:
    """A grid of (a, omega) controls held constant over one step of dt.

    Both axes are odd-count, symmetric, equally spaced, and include zero.
    Flat index ``i = a_index * omega_count + omega_index`` (row-major).
    """

    accelerations: tuple[float, ...]
    turn_rates: tuple[float, ...]
    dt: float

    def __post_init__(self):
        for name, axis in (("accelerations", self.accelerations),
                           ("turn_rates", self.turn_rates)):
            vals = np.asarray(axis, dtype=np.float64)
            if len(vals) < 3 or len(vals) % 2 == 0:
                raise ValueError(f"{name}: need an odd count >= 3, got {len(vals)}")
            steps = np.diff(vals)
            if not np.allclose(steps, steps[0], rtol=0.0, atol=1e-12) or steps[0] <= 0:
                raise ValueError(f"{name}: values must be equally spaced ascending")
            if abs(vals[len(vals) // 2]) > 1e-12:
                raise ValueError(f"{name}: center value must be zero")
            if not np.allclose(vals, -vals[::-1], atol=1e-12):
                raise ValueError(f"{name}: axis must be symmetric about zero")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def side(self) -> int:
        return len(self.accelerations)

    @property
    def count(self) -> int:
        return len(self.accelerations) * len(self.turn_rates)

    @property
    def zero_index(self) -> int:
        """Flat index of the (0, 0) primitive."""
        na, nw = len(self.accelerations), len(self.turn_rates)
        return (na // 2) * nw + nw // 2

    def control(self, index: int) -> ControlInput:
        na, nw = len(self.accelerations), len(self.turn_rates)
        if not 0 <= index < na * nw:
            raise IndexError(f"primitive index {index} out of range [0, {na * nw})")
        return ControlInput(self.accelerations[index // nw],
                            self.turn_rates[index % nw])

    def nearest_index(self, u: ControlInput) -> int:
        """Snap a control to the lattice: per-axis nearest value, lowest index
        on ties; out-of-range controls clamp to the boundary."""
        acc = np.asarray(self.accelerations)
        trn = np.asarray(self.turn_rates)
        ia = int(np.argmin(np.abs(acc - u.a)))
        iw = int(np.argmin(np.abs(trn - u.omega)))
        return ia * len(trn) + iw

    def grids(self):
        """(a, omega) meshes of shape (side, side)."""
        return np.meshgrid(np.asarray(self.accelerations),
                           np.asarray(self.turn_rates), indexing="ij")


def build_primitive_set(accel_count: int = 21, accel_range: float = 8.0,
                        omega_count: int = 21, omega_range: float = 0.5,
                        dt: float = 0.5) -> MotionPrimitiveSet:
    """Symmetric lattice: ``accel_count`` values on [-accel_range, accel_range]
    by ``omega_count`` on [-omega_range, omega_range]."""
    if accel_count != omega_count:
        raise ValueError("lattice must be square (equal counts per axis)")
    acc = np.linspace(-accel_range, accel_range, accel_count)
    trn = np.linspace(-omega_range, omega_range, omega_count)
    # exact zero at the center (linspace can leave -0.0 or tiny residue)
    acc[accel_count // 2] = 0.0
    trn[omega_count // 2] = 0.0
    return MotionPrimitiveSet(tuple(acc), tuple(trn), dt)


@dataclass(frozen=True)
class FutureStates:
    """Per-primitive next states of one agent: four (side, side) grids."""

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    v: np.ndarray

    @property
    def side(self) -> int:
        return self.x.shape[0]


def future_states(state: VehicleState, prims: MotionPrimitiveSet,
                  clamp_speed: bool = True) -> FutureStates:
    """Evaluate all primitives from ``state``; grid entry (i, j) equals the
    scalar ``integrate_unicycle`` result for primitive ``i * side + j``."""
    a, om = prims.grids()
    nx, ny, nth, nv = _advance_arrays(state.x, state.y, state.theta, state.v,
                                      a, om, prims.dt, clamp_speed)
    return FutureStates(nx, ny, nth, nv)
