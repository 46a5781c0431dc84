"""intentsim: a Markovian stochastic traffic-dynamics model.

Per-agent "intentions" are probability distributions over a lattice of
motion primitives (acceleration x turn-rate pairs held for half a
second).  A message-passing network evolves the intentions one step at a
time from agent states, neighbors, and a rasterized semantic map; rolling
the loop forward yields multi-step trajectory predictions, optionally
conditioned on a planned ego trajectory whose influence is made one-way.

The package is numpy-only and self-contained: a small reverse-mode
autodiff tape (:mod:`~intentsim.autodiff`), closed-form unicycle
kinematics and the primitive lattice (:mod:`~intentsim.kinematics`),
scene/graph/raster construction (:mod:`~intentsim.scene`), the network
(:mod:`~intentsim.network`), training with scheduled sampling
(:mod:`~intentsim.training`), rollouts and displacement metrics
(:mod:`~intentsim.rollout`, :mod:`~intentsim.metrics`), synthetic
scenario generation (:mod:`~intentsim.scenarios`), file formats
(:mod:`~intentsim.sceneio`), SVG rendering (:mod:`~intentsim.render`),
and a CLI (:mod:`~intentsim.cli`).
"""

from .autodiff import (GradientError, SerializationError, ShapeError, Tape,
                       Tensor, backward, record)
from .kinematics import (ControlInput, FutureStates, MotionPrimitiveSet, Pose2,
                         VehicleState, build_primitive_set, future_states,
                         integrate_unicycle, wrap_angle)
from .metrics import (ade, build_eval_table, evaluate_scenes, fde, min_k_ade,
                      min_k_fde, truth_trajectory)
from .network import (ForwardResult, GnnConfig, Model, REFERENCE_PARAM_COUNT,
                      build_parameters, gnn_forward, parameter_count)
from .optim import (AdamState, FdReport, ParameterStore, adam_step,
                    collect_gradients, finite_difference_check)
from .rollout import (RolloutConfig, Trajectory, VelocityEstimate,
                      constant_velocity_predict, estimate_velocity, rollout)
from .scene import (AgentState, GraphNode, Intention, RasterConfig,
                    RegionConfig, SemanticMap, TrafficGraph, build_graph,
                    condition_on_ego, in_degree, rasterize_map,
                    select_local_agents)
from .sceneio import (Scene, SceneAgent, SceneStep, SchemaError, agents_at,
                      load_ego_controls, load_scenes, write_predictions,
                      write_scenes)
from .scenarios import (SCENARIO_KINDS, ScenarioSpec, default_specs,
                        generate_corpus, generate_scene)
from .training import (TargetSigma, TrainConfig, TrainingSample,
                       load_checkpoint, restore_model, sampling_rate,
                       save_checkpoint, sequence_fd_check, sequence_loss,
                       target_intention_gaussian, target_intention_onehot,
                       train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
