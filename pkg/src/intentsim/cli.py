"""Command-line surface.

Subcommands: ``gen`` (synthetic corpus), ``train``, ``predict``, ``eval``,
``plot``, ``gradcheck``.  Every subcommand takes ``--seed``.  Options may
also come from a declarative JSON config file (``--config``), whose top
level maps subcommand names to option tables; explicit flags win over the
file, the file wins over built-in defaults.  When an output path is
omitted, files land in ``$INTENTSIM_OUTPUT_DIR`` (or the working
directory).

Exit codes: 0 on success; 2 for usage errors including missing input
files; 1 otherwise, always with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .kinematics import build_primitive_set
from .metrics import build_eval_table, evaluate_scenes, truth_trajectory
from .network import (GnnConfig, Model, REFERENCE_PARAM_COUNT, parameter_count)
from .render import Trace, render_svg
from .rollout import RolloutConfig, constant_velocity_predict, rollout
from .scene import RasterConfig, RegionConfig, build_graph, condition_on_ego, select_local_agents
from .sceneio import (SchemaError, agents_at, load_ego_controls, load_scenes,
                      write_eval_table, write_predictions, write_scenes)
from .scenarios import (SCENARIO_KINDS, ScenarioSpec, default_specs,
                        generate_corpus, generate_scene)
from .training import (TrainConfig, TrainingSample, load_checkpoint, restore_model,
                       sequence_fd_check, train)

__all__ = ["main", "toy_model"]


def _toy_config() -> GnnConfig:
    return GnnConfig(
        lattice_side=9, raster_size=24,
        image_encoder_channels=(4, 8), image_encoder_kernels=(3, 3),
        map_encoder_channels=(4, 8), map_encoder_kernels=(3, 3),
        map_feature_width=8,
        message_hidden=(16, 12), message_width=8,
        update_hidden=(12, 16),
    )


def toy_model(seed: int = 0) -> Model:
    """A desk-scale model: 9x9 lattice, 24-cell raster, narrow encoders."""
    return Model.create(config=_toy_config(),
                        prims=build_primitive_set(9, 8.0, 9, 0.5),
                        raster_config=RasterConfig(size=24), seed=seed)


def _make_model(toy: bool, seed: int = 0) -> Model:
    return toy_model(seed) if toy else Model.create(seed=seed)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _out_path(value, filename: str) -> Path:
    if value is not None:
        return Path(value)
    base = os.environ.get("INTENTSIM_OUTPUT_DIR")
    return Path(base) / filename if base else Path(filename)


def _load_model(args) -> Model:
    model = _make_model(bool(args.toy))
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    restore_model(model, ckpt)
    return model


def _scene_subset(scenes, scene_id):
    if scene_id is None:
        return scenes
    for s in scenes:
        if s.scene_id == scene_id:
            return [s]
    raise ValueError(f"scene {scene_id!r} not in corpus")


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen(args) -> int:
    kinds = args.kinds.split(",") if args.kinds else list(SCENARIO_KINDS)
    for k in kinds:
        if k not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {k!r}")
    specs = [s for s in default_specs(length=args.length) if s.kind in kinds]
    scenes = generate_corpus(specs, args.sequences, args.seed)
    out = _out_path(args.out, "corpus.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scenes(out, scenes)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def _cmd_train(args) -> int:
    scenes = load_scenes(_require_file(args.corpus, "corpus"))
    model = _make_model(bool(args.toy), seed=args.seed)
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      seed=args.seed, sequence_length=args.sequence_length)
    samples = [TrainingSample.from_scene(s, region=cfg.region,
                                         length=cfg.sequence_length)
               for s in scenes]
    split_rng = np.random.default_rng((args.seed, 1_000_003))
    order = split_rng.permutation(len(samples))
    n_val = max(1, int(round(args.val_fraction * len(samples))))
    val = [samples[i] for i in order[:n_val]]
    tr = [samples[i] for i in order[n_val:]]
    if not tr:
        raise ValueError("validation split consumed every sequence")
    out_dir = _out_path(args.out_dir, "run")
    print(f"training on {len(tr)} sequences (val {len(val)}), "
          f"{parameter_count(model.config)} parameters "
          f"(reference configuration: {REFERENCE_PARAM_COUNT})")
    result = train(model, tr, val, cfg, out_dir, resume_from=args.resume,
                   progress=print)
    print(f"best epoch {result.best_epoch} "
          f"(val {result.best_val_loss:.4f}) -> {result.best_path}")
    return 0


def _cmd_predict(args) -> int:
    scenes = _scene_subset(load_scenes(_require_file(args.corpus, "corpus")),
                           args.scene)
    model = _load_model(args)
    if not args.ml and args.samples is None:
        raise ValueError("choose --ml and/or --samples N")
    plan = None
    if args.conditional is not None:
        controls = load_ego_controls(_require_file(args.conditional,
                                                   "ego controls file"))
        if len(controls) < args.horizon:
            raise ValueError(
                f"ego plan has {len(controls)} controls; horizon needs "
                f"{args.horizon}")
        plan = tuple(controls[:args.horizon])

    rows = []
    for scene in scenes:
        ego_id = scene.ego_id()
        if ego_id is None:
            raise ValueError(f"scene {scene.scene_id!r} has no ego agent")
        agents = select_local_agents(agents_at(scene, 0, model.prims.count),
                                     ego_id, RegionConfig())
        graph = build_graph(agents, model.prims, scene.semantic_map,
                            radius=args.radius,
                            raster_config=model.raster_config)
        if plan is not None:
            graph = condition_on_ego(graph, plan[0])

        def emit(traj, sample_id):
            for i, aid in enumerate(traj.agent_ids):
                for s in range(traj.horizon):
                    rows.append((scene.scene_id, aid, sample_id, s + 1,
                                 traj.points[i, s, 0], traj.points[i, s, 1]))

        if args.ml:
            traj = rollout(model, graph, RolloutConfig(
                horizon=args.horizon, mode="max_likelihood", conditional=plan))[0]
            emit(traj, "ml")
        if args.samples is not None:
            for k, traj in enumerate(rollout(model, graph, RolloutConfig(
                    horizon=args.horizon, mode="sampled", conditional=plan,
                    seed=args.seed, samples=args.samples))):
                emit(traj, str(k))
    out = _out_path(args.out, "predictions.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, rows)
    print(f"wrote {len(rows)} waypoints to {out}")
    return 0


def _cmd_eval(args) -> int:
    scenes = _scene_subset(load_scenes(_require_file(args.corpus, "corpus")),
                           args.scene)
    model = _load_model(args)
    results = evaluate_scenes(model, scenes, samples=args.samples,
                              seed=args.seed, radius=args.radius,
                              conditional=not args.no_conditional)
    table = build_eval_table(results)
    out = _out_path(args.out, "eval.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_eval_table(out, table)
    print(f"{'case':<14} {'method':<16} {'h [s]':>5} {'ADE':>8} {'FDE':>8}")
    for row in table:
        print(f"{row['case']:<14} {row['method']:<16} {row['horizon_s']:>5g} "
              f"{row['ade']:>8.3f} {row['fde']:>8.3f}")
    print(f"wrote {out}")
    return 0


def _cmd_plot(args) -> int:
    scenes = load_scenes(_require_file(args.corpus, "corpus"))
    scene = _scene_subset(scenes, args.scene)[0]
    ego_id = scene.ego_id()
    if ego_id is None:
        raise ValueError(f"scene {scene.scene_id!r} has no ego agent")
    horizon = min(args.horizon, len(scene.steps) - 1)
    model = _load_model(args) if args.checkpoint is not None else None
    probe = model if model is not None else _make_model(bool(args.toy))
    agents = select_local_agents(agents_at(scene, 0, probe.prims.count), ego_id,
                                 RegionConfig())
    graph = build_graph(agents, probe.prims, scene.semantic_map,
                        radius=args.radius,
                        raster_config=probe.raster_config)
    ids = [n.agent.agent_id for n in graph.nodes]
    covered = [aid for aid in ids
               if all(scene.steps[s].get(aid) is not None
                      for s in range(1, horizon + 1))]
    traces = [Trace("truth", truth_trajectory(scene, covered, horizon)),
              Trace("const_vel",
                    constant_velocity_predict(graph, horizon).subset(covered))]
    if model is not None:
        ml = rollout(model, graph, RolloutConfig(horizon=horizon))[0]
        traces.append(Trace("max_likelihood", ml.subset(covered)))
        for traj in rollout(model, graph, RolloutConfig(
                horizon=horizon, mode="sampled", seed=args.seed,
                samples=args.samples)):
            traces.append(Trace("sample", traj.subset(covered)))
    out = _out_path(args.out, f"{scene.scene_id}.svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(scene, traces), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def _cmd_gradcheck(args) -> int:
    model = toy_model(seed=args.seed)
    spec = ScenarioSpec("car_following", agents=(2, 2), length=3)
    scene = generate_scene(spec, "gradcheck", (args.seed, 0), model.prims)
    sample = TrainingSample.from_scene(scene)
    report = sequence_fd_check(model, sample, step=args.step)
    ok = report.max_rel_error < args.tolerance
    print(f"checked {report.checked} entries; max relative error "
          f"{report.max_rel_error:.3e} at {report.worst_param} "
          f"({'PASS' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="intentsim",
        description="Stochastic traffic-dynamics model over a motion-"
                    "primitive lattice: corpus generation, training, "
                    "prediction, evaluation, plotting, gradient checking.")
    p.add_argument("--config", default=None,
                   help="JSON file mapping subcommand names to option tables")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None)
        return sp

    sp = add("gen", "generate a synthetic scene corpus")
    sp.add_argument("--out", default=None)
    sp.add_argument("--sequences", type=int, default=None)
    sp.add_argument("--length", type=int, default=None)
    sp.add_argument("--kinds", default=None,
                    help="comma-separated subset of scenario kinds")

    sp = add("train", "train a model on a scene corpus")
    sp.add_argument("--corpus", default=None)
    sp.add_argument("--out-dir", default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--val-fraction", type=float, default=None)
    sp.add_argument("--sequence-length", type=int, default=None)
    sp.add_argument("--resume", default=None)
    sp.add_argument("--toy", action="store_true", default=None)

    sp = add("predict", "roll the model out and write waypoints")
    sp.add_argument("--corpus", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--ml", action="store_true", default=None)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--conditional", default=None,
                    help="JSON file with the planned ego controls")
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--toy", action="store_true", default=None)

    sp = add("eval", "displacement-error table over a corpus")
    sp.add_argument("--corpus", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--no-conditional", action="store_true", default=None)
    sp.add_argument("--toy", action="store_true", default=None)

    sp = add("plot", "render a scene with prediction overlays to SVG")
    sp.add_argument("--corpus", default=None)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--toy", action="store_true", default=None)

    sp = add("gradcheck", "finite-difference check on a toy sequence loss")
    sp.add_argument("--step", type=float, default=None)
    sp.add_argument("--tolerance", type=float, default=None)

    return p


_DEFAULTS = {
    "gen": {"seed": 0, "sequences": 50, "length": 9, "kinds": None, "out": None},
    "train": {"seed": 0, "epochs": 50, "batch_size": 16, "lr": 2e-3,
              "val_fraction": 0.15, "sequence_length": 8, "resume": None,
              "toy": False, "corpus": None, "out_dir": None},
    "predict": {"seed": 0, "ml": False, "samples": None, "conditional": None,
                "horizon": 8, "radius": 25.0, "toy": False, "corpus": None,
                "checkpoint": None, "out": None, "scene": None},
    "eval": {"seed": 0, "samples": 5, "radius": 25.0, "no_conditional": False,
             "toy": False, "corpus": None, "checkpoint": None, "out": None,
             "scene": None},
    "plot": {"seed": 0, "samples": 5, "horizon": 8, "radius": 25.0, "toy": False,
             "corpus": None, "checkpoint": None, "out": None, "scene": None},
    "gradcheck": {"seed": 0, "step": 1e-5, "tolerance": 1e-4},
}

_HANDLERS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "plot": _cmd_plot,
    "gradcheck": _cmd_gradcheck,
}

_REQUIRED = {
    "train": ("corpus",),
    "predict": ("corpus", "checkpoint"),
    "eval": ("corpus", "checkpoint"),
    "plot": ("corpus",),
}


def _apply_config(args) -> None:
    table = {}
    if args.config is not None:
        with open(_require_file(args.config, "config file"),
                  encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise SchemaError(f"{args.config}: config root must be an object")
        table = doc.get(args.command, {})
        if not isinstance(table, dict):
            raise SchemaError(
                f"{args.config}: section {args.command!r} must be an object")
        unknown = set(table) - set(_DEFAULTS[args.command])
        if unknown:
            raise SchemaError(
                f"{args.config}: unknown option(s) {sorted(unknown)} "
                f"for {args.command!r}")
    for name, built_in in _DEFAULTS[args.command].items():
        if getattr(args, name, None) is None:
            setattr(args, name, table.get(name, built_in))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(args)
        for req in _REQUIRED.get(args.command, ()):
            if getattr(args, req) is None:
                parser.error(f"{args.command}: --{req.replace('_', '-')} is required")
        return _HANDLERS[args.command](args)
    except SystemExit as exc:  # parser.error inside handlers
        return int(exc.code or 0)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, ad.ShapeError, ad.GradientError, ad.SerializationError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
