"""Roll the model forward and draw the result.

Builds a lane-change scene, runs the constant-velocity baseline, the
max-likelihood rollout, and five sampled rollouts from the first frame,
then renders everything over the map into an SVG.  If a checkpoint from
demo 03 exists it is loaded first; otherwise the untrained net's guesses
are drawn (expect them to wander -- that is what training fixes).
"""

import pathlib

from intentsim.cli import toy_model
from intentsim.render import Trace, render_svg
from intentsim.rollout import RolloutConfig, constant_velocity_predict, rollout
from intentsim.scene import RegionConfig, build_graph, select_local_agents
from intentsim.scenarios import ScenarioSpec, generate_scene
from intentsim.sceneio import agents_at
from intentsim.training import load_checkpoint, restore_model

CKPT = pathlib.Path("demo_out/train_small/best.ckpt")
OUT = pathlib.Path("demo_out/lane_change.svg")
HORIZON = 8  # steps of 0.5 s -> a 4 s prediction


def main():
    model = toy_model(seed=0)
    if CKPT.exists():
        restore_model(model, load_checkpoint(CKPT))
        print(f"restored weights from {CKPT}")
    else:
        print("no checkpoint found (run demo 03 first for trained weights); "
              "using the untrained net")

    spec = ScenarioSpec("lane_change", agents=(3, 3), length=9)
    scene = generate_scene(spec, "demo_lane_change", seed=3, prims=model.prims)
    agents = select_local_agents(agents_at(scene, 0, model.prims.count),
                                 scene.ego_id(), RegionConfig())
    graph = build_graph(agents, model.prims, scene.semantic_map,
                        raster_config=model.raster_config)

    traces = [Trace("const_vel", constant_velocity_predict(graph, HORIZON))]
    ml = rollout(model, graph, RolloutConfig(horizon=HORIZON))[0]
    traces.append(Trace("max_likelihood", ml))
    for sample in rollout(model, graph, RolloutConfig(
            horizon=HORIZON, mode="sampled", samples=5, seed=11)):
        traces.append(Trace("sample", sample))

    from intentsim.metrics import truth_trajectory  # ground truth overlay
    truth = truth_trajectory(scene, ml.agent_ids, HORIZON)
    traces.insert(0, Trace("truth", truth))

    svg = render_svg(scene, traces)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(svg, encoding="utf-8")
    print(f"wrote {OUT} ({len(svg)} bytes): purple truth, green "
          f"constant-velocity, blue max-likelihood, grey samples")

    for aid in ml.agent_ids:
        i = ml.agent_ids.index(aid)
        end = ml.points[i, -1]
        tru = truth.points[truth.agent_ids.index(aid), -1]
        err = ((end[0] - tru[0]) ** 2 + (end[1] - tru[1]) ** 2) ** 0.5
        print(f"  {aid:8s} 4 s max-likelihood endpoint ({end[0]:7.2f}, "
              f"{end[1]:+7.2f}); {err:6.2f} m from truth")


if __name__ == "__main__":
    main()
