"""Deterministic SVG overlays of a scene and its predictions.

Color scheme: ground truth purple, constant-velocity baseline green,
max-likelihood prediction blue, sampled predictions gray.  Map polygons
render beneath lane centerlines, which render beneath the trajectory
polylines; every float is fixed-format, so identical inputs produce
byte-identical documents.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import quoteattr

from .rollout import Trajectory
from .sceneio import Scene

__all__ = ["Trace", "TRACE_COLORS", "render_svg"]

TRACE_COLORS = {
    "truth": "#7b2d8b",
    "const_vel": "#2e8b57",
    "max_likelihood": "#1f5fd0",
    "sample": "#8c8c8c",
}


@dataclass(frozen=True)
class Trace:
    """One family of polylines: a labeled trajectory set."""

    label: str
    trajectory: Trajectory

    def __post_init__(self):
        if self.label not in TRACE_COLORS:
            raise ValueError(
                f"unknown trace label {self.label!r}; expected one of "
                f"{sorted(TRACE_COLORS)}")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _polyline(points, color: str, width: float, dash: str | None = None,
              opacity: float = 1.0, klass: str | None = None) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in points)  # y up
    attrs = [f'points="{pts}"', 'fill="none"', f'stroke="{color}"',
             f'stroke-width="{_fmt(width)}"']
    if dash:
        attrs.append(f'stroke-dasharray="{dash}"')
    if opacity != 1.0:
        attrs.append(f'opacity="{_fmt(opacity)}"')
    if klass:
        attrs.append(f"class={quoteattr(klass)}")
    return f'<polyline {" ".join(attrs)} />'


def render_svg(scene: Scene, traces=(), start_step: int = 0,
               width: int = 720) -> str:
    """Render the scene map with trajectory overlays.

    Each trace contributes one polyline per agent (anchored at the
    agent's recorded position at ``start_step`` when available), so truth
    + baseline + max-likelihood + five samples yields eight polylines per
    agent.  An empty trace list yields a map-only document.
    """
    xs, ys = [], []
    for poly in scene.semantic_map.drivable:
        xs += list(poly[:, 0])
        ys += list(poly[:, 1])
    for trace in traces:
        pts = trace.trajectory.points
        xs += list(pts[:, :, 0].reshape(-1))
        ys += list(pts[:, :, 1].reshape(-1))
    for agent in scene.steps[start_step].agents:
        xs.append(agent.state.x)
        ys.append(agent.state.y)
    margin = 8.0
    x0, x1 = min(xs) - margin, max(xs) + margin
    y0, y1 = min(ys) - margin, max(ys) + margin
    span_x, span_y = x1 - x0, y1 - y0
    height = max(1, int(round(width * span_y / span_x)))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="{_fmt(x0)} {_fmt(-y1)} {_fmt(span_x)} '
        f'{_fmt(span_y)}">',
        '<rect x="%s" y="%s" width="%s" height="%s" fill="#f4f1ec" />'
        % (_fmt(x0), _fmt(-y1), _fmt(span_x), _fmt(span_y)),
    ]
    for poly in scene.semantic_map.drivable:
        pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in poly)
        parts.append(f'<polygon points="{pts}" fill="#d8d8d8" stroke="none" />')
    for lane_pts, _ in scene.semantic_map.lanes:
        parts.append(_polyline(lane_pts, "#b9b1a3", 0.3, dash="2.0 2.0"))

    start_xy = {a.agent_id: (a.state.x, a.state.y)
                for a in scene.steps[start_step].agents}
    for trace in traces:
        color = TRACE_COLORS[trace.label]
        width_px = 0.5 if trace.label == "sample" else 0.7
        opacity = 0.65 if trace.label == "sample" else 1.0
        traj = trace.trajectory
        for i, aid in enumerate(traj.agent_ids):
            pts = [start_xy[aid]] if aid in start_xy else []
            pts += [tuple(p) for p in traj.points[i]]
            parts.append(_polyline(pts, color, width_px, opacity=opacity,
                                   klass=f"{trace.label} {aid}"))

    for agent in scene.steps[start_step].agents:
        fill = "#111111" if agent.kind == "ego" else "#ffffff"
        parts.append(
            '<circle cx="%s" cy="%s" r="0.9" fill="%s" stroke="#333333" '
            'stroke-width="0.25" />'
            % (_fmt(agent.state.x), _fmt(-agent.state.y), fill))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
