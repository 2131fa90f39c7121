"""Cooperative lane-change decision making from driving data.

Learn Markov opponent-behavior models from trajectory corpora, synthesize
interaction-aware policies for the lane-keeping and lane-changing vehicle by
stochastic dynamic programming over a relative-state MDP, and evaluate them
in closed loop against IDM and game-theoretic baselines -- including a
real-time duet server where a human drives one of the two vehicles.
"""

from .grid import ActionSet, AxisSpec, Role, StateGrid, default_actions, grid_preset
from .interaction import ActionPair, RelativeState, VehicleState, relative_state, step_mdp, step_world
from .costs import LcvWeights, LkvWeights, lcv_preset, lkv_preset, stage_cost_lcv, stage_cost_lkv
from .tpm import ExtractionParams, InteractionScenario, Tpm, TrajectoryRecord, \
    build_tpm, extract_interaction_scenarios, read_trajectory_csv, smooth
from .synth import CorpusParams, generate_corpus
from .sdp import Policy, SolverConfig, lookup_action, make_cost_fn, policy_iteration, \
    value_iteration_oracle

__version__ = "0.1.0"
