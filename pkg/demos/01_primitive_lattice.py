"""Tour of the motion-primitive lattice.

Every agent's "intention" in this package is a distribution over a fixed
grid of (acceleration, yaw-rate) controls held for half a second.  This
script walks through the default 21x21 lattice: what the controls look
like, where they take a moving vehicle, how a continuous control snaps to
its nearest grid entry, and how braking pins the speed at zero instead of
reversing.
"""

import numpy as np

from intentsim.kinematics import (
    ControlInput,
    VehicleState,
    build_primitive_set,
    future_states,
    integrate_unicycle,
)


def main():
    prims = build_primitive_set()
    acc, turn = prims.accelerations, prims.turn_rates
    print(f"default lattice: {prims.count} primitives "
          f"({len(acc)} accelerations x {len(turn)} yaw rates), "
          f"held for {prims.dt} s")
    print(f"  acceleration range [{acc[0]:+.1f}, {acc[-1]:+.1f}] m/s^2 "
          f"in steps of {acc[1] - acc[0]:.2f}")
    print(f"  yaw-rate range     [{turn[0]:+.2f}, {turn[-1]:+.2f}] rad/s "
          f"in steps of {turn[1] - turn[0]:.3f}")
    print(f"  zero control sits at flat index {prims.zero_index}")

    start = VehicleState(x=0.0, y=0.0, theta=0.0, v=8.0)
    print(f"\nendpoints from {start} after one step:")
    for name, u in [("coast", ControlInput(0.0, 0.0)),
                    ("hard brake", ControlInput(-8.0, 0.0)),
                    ("full throttle", ControlInput(8.0, 0.0)),
                    ("left arc", ControlInput(0.0, 0.5)),
                    ("brake + right", ControlInput(-4.0, -0.25))]:
        s = integrate_unicycle(start, u, prims.dt)
        print(f"  {name:14s} a={u.a:+5.1f} w={u.omega:+5.2f} -> "
              f"x={s.x:6.3f} y={s.y:+6.3f} th={s.theta:+6.3f} v={s.v:5.2f}")

    # the endpoint map is closed form; a fine RK4 integration agrees to ~1e-10,
    # so one lattice step is exact rather than an Euler approximation.

    u = ControlInput(a=1.9, omega=0.13)
    idx = prims.nearest_index(u)
    snapped = prims.control(idx)
    print(f"\ncontinuous control (a={u.a}, w={u.omega}) snaps to index {idx}"
          f" = (a={snapped.a:+.1f}, w={snapped.omega:+.3f})")

    slow = VehicleState(0.0, 0.0, 0.0, v=1.0)
    stopped = integrate_unicycle(slow, ControlInput(-8.0, 0.3), prims.dt)
    print(f"\nbraking at -8 m/s^2 from v=1.0 for {prims.dt} s stops the "
          f"vehicle instead of reversing: v={stopped.v}, and the heading "
          f"freezes once motion ends (th={stopped.theta:.4f} rad, not "
          f"{0.3 * prims.dt:.4f})")

    fut = future_states(start, prims)
    print(f"\nfuture_states gives all {fut.side * fut.side} endpoints at "
          f"once; x spans [{fut.x.min():.2f}, {fut.x.max():.2f}] m, "
          f"v spans [{fut.v.min():.2f}, {fut.v.max():.2f}] m/s")
    far = int(np.argmax(np.hypot(fut.x, fut.y)))
    print(f"farthest endpoint is primitive {far} = "
          f"(a={prims.control(far).a:+.1f}, w={prims.control(far).omega:+.3f})")


if __name__ == "__main__":
    main()
