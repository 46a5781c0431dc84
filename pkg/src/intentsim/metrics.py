"""Displacement-error metrics and the evaluation table.

ADE is the mean L2 distance over all agents and steps; FDE is the mean
over agents of the final-step distance.  The min-k variants take, per
agent, the minimum of the per-agent metric over the first k sampled
trajectories and then average over agents, so a single good sample is
enough for an agent even if others miss.

The evaluation table covers horizons of 1-4 s in two cases: the plain
rollout, and the ego-conditioned rollout (conditioned on the lattice snap
of the ego's recorded controls) with the ego itself excluded from the
pooled errors.  Within a scene errors pool over agents; the table entries
average scene values.
"""

from __future__ import annotations

import numpy as np

from .network import Model
from .rollout import RolloutConfig, Trajectory, constant_velocity_predict, rollout
from .scene import RegionConfig, build_graph, condition_on_ego, select_local_agents
from .sceneio import Scene, agents_at
from .training import target_intention_onehot

__all__ = [
    "ade",
    "build_eval_table",
    "evaluate_scenes",
    "fde",
    "min_k_ade",
    "min_k_fde",
    "per_agent_ade",
    "per_agent_fde",
    "truth_trajectory",
]


def _check_pair(pred: Trajectory, truth: Trajectory) -> None:
    if pred.agent_ids != truth.agent_ids:
        raise ValueError(
            f"agent ids differ: {pred.agent_ids} vs {truth.agent_ids}")
    if pred.horizon != truth.horizon:
        raise ValueError(f"horizons differ: {pred.horizon} vs {truth.horizon}")


def per_agent_ade(pred: Trajectory, truth: Trajectory) -> np.ndarray:
    _check_pair(pred, truth)
    d = np.linalg.norm(pred.points - truth.points, axis=2)  # (agents, steps)
    return d.mean(axis=1)


def per_agent_fde(pred: Trajectory, truth: Trajectory) -> np.ndarray:
    _check_pair(pred, truth)
    return np.linalg.norm(pred.points[:, -1] - truth.points[:, -1], axis=1)


def ade(pred: Trajectory, truth: Trajectory) -> float:
    return float(per_agent_ade(pred, truth).mean())


def fde(pred: Trajectory, truth: Trajectory) -> float:
    return float(per_agent_fde(pred, truth).mean())


def _min_k(preds, truth: Trajectory, k: int, per_agent) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(preds) < k:
        raise ValueError(f"need at least k={k} trajectories, got {len(preds)}")
    stacked = np.stack([per_agent(p, truth) for p in preds[:k]])  # (k, agents)
    return float(stacked.min(axis=0).mean())


def min_k_ade(preds, truth: Trajectory, k: int = 5) -> float:
    return _min_k(preds, truth, k, per_agent_ade)


def min_k_fde(preds, truth: Trajectory, k: int = 5) -> float:
    return _min_k(preds, truth, k, per_agent_fde)


# ---------------------------------------------------------------------------
# scene evaluation


def truth_trajectory(scene: Scene, agent_ids, horizon: int,
                     start_step: int = 0) -> Trajectory:
    """Recorded waypoints for ``agent_ids`` over steps start+1 .. start+H.

    Every requested agent must be present at each of those steps.
    """
    points = np.empty((len(agent_ids), horizon, 2))
    for s in range(1, horizon + 1):
        step_index = start_step + s
        if step_index >= len(scene.steps):
            raise ValueError(
                f"scene {scene.scene_id!r} has {len(scene.steps)} steps; "
                f"cannot read step {step_index}")
        step = scene.steps[step_index]
        for i, aid in enumerate(agent_ids):
            rec = step.get(aid)
            if rec is None:
                raise ValueError(
                    f"scene {scene.scene_id!r}: agent {aid!r} absent at "
                    f"step {step_index}")
            points[i, s - 1] = (rec.state.x, rec.state.y)
    return Trajectory(tuple(agent_ids), points)


def _covered_ids(scene: Scene, candidate_ids, horizon: int) -> list[str]:
    out = []
    for aid in candidate_ids:
        if all(scene.steps[s].get(aid) is not None for s in range(1, horizon + 1)):
            out.append(aid)
    return out


def _snapped_ego_plan(scene: Scene, ego_id: str, horizon: int, prims):
    plan = []
    for t in range(horizon):
        a = scene.steps[t].get(ego_id)
        b = scene.steps[t + 1].get(ego_id)
        if a is None or b is None:
            raise ValueError(
                f"scene {scene.scene_id!r}: ego absent within the horizon")
        plan.append(prims.control(target_intention_onehot(a.state, b.state, prims)))
    return tuple(plan)


def evaluate_scenes(model: Model, scenes, horizons_s=(1.0, 2.0, 3.0, 4.0),
                    samples: int = 5, seed: int = 0,
                    region: RegionConfig = RegionConfig(),
                    radius: float = 25.0, conditional: bool = True):
    """Mean displacement errors per (case, method, horizon) over ``scenes``.

    Returns a dict keyed (case, method, horizon_s) -> (ade, fde), where
    case is "unconditional" or "conditional" and method is one of
    "const_vel", "max_likelihood", "sampled_min5".  Scenes whose coverage
    cannot support the longest horizon are rejected.
    """
    dt = model.prims.dt
    steps_for = {h: int(round(h / dt)) for h in horizons_s}
    max_h = max(steps_for.values())
    cases = ["unconditional"] + (["conditional"] if conditional else [])
    acc: dict[tuple, list] = {}

    for scene in scenes:
        ego_id = scene.ego_id()
        if ego_id is None:
            raise ValueError(f"scene {scene.scene_id!r} has no ego agent")
        if len(scene.steps) < max_h + 1:
            raise ValueError(
                f"scene {scene.scene_id!r}: {len(scene.steps)} steps cannot "
                f"cover a {max_h}-step horizon")
        agents0 = select_local_agents(agents_at(scene, 0, model.prims.count),
                                      ego_id, region)
        graph = build_graph(agents0, model.prims, scene.semantic_map,
                            radius=radius, raster_config=model.raster_config)

        for case in cases:
            if case == "unconditional":
                g = graph
                plan = None
            else:
                plan = _snapped_ego_plan(scene, ego_id, max_h, model.prims)
                g = condition_on_ego(graph, plan[0])
            ids = _covered_ids(scene, [n.agent.agent_id for n in g.nodes], max_h)
            if case == "conditional":
                ids = [aid for aid in ids if aid != ego_id]
            if not ids:
                continue
            truth = truth_trajectory(scene, ids, max_h)

            ml = rollout(model, g, RolloutConfig(
                horizon=max_h, mode="max_likelihood", conditional=plan))[0]
            sampled = rollout(model, g, RolloutConfig(
                horizon=max_h, mode="sampled", conditional=plan,
                seed=seed, samples=samples))
            const = constant_velocity_predict(g, max_h)

            for h_s, h in steps_for.items():
                t_h = truth.truncated(h)
                pairs = {
                    "const_vel": const.subset(ids).truncated(h),
                    "max_likelihood": ml.subset(ids).truncated(h),
                }
                for method, pred in pairs.items():
                    acc.setdefault((case, method, h_s), []).append(
                        (ade(pred, t_h), fde(pred, t_h)))
                subs = [p.subset(ids).truncated(h) for p in sampled]
                acc.setdefault((case, "sampled_min5", h_s), []).append(
                    (min_k_ade(subs, t_h, k=min(5, samples)),
                     min_k_fde(subs, t_h, k=min(5, samples))))

    return {key: (float(np.mean([a for a, _ in vals])),
                  float(np.mean([f for _, f in vals])))
            for key, vals in acc.items()}


def build_eval_table(results: dict) -> list[dict]:
    """Flatten :func:`evaluate_scenes` output into sorted CSV-ready rows."""
    case_order = {"unconditional": 0, "conditional": 1}
    method_order = {"const_vel": 0, "max_likelihood": 1, "sampled_min5": 2}
    rows = []
    for (case, method, h_s), (a, f) in results.items():
        rows.append({"case": case, "method": method, "horizon_s": h_s,
                     "ade": a, "fde": f})
    rows.sort(key=lambda r: (case_order.get(r["case"], 9),
                             method_order.get(r["method"], 9), r["horizon_s"]))
    return rows
