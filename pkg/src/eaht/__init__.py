"""Evasive active hypothesis testing.

Agents adaptively probe noisy sensors to identify a hidden hypothesis as
fast as possible while keeping a passive eavesdropper, who taps the same
channels through her own (noisier) observation model, uncertain about
the answer. Policies are small neural networks evolved with cooperative
synapse neuroevolution under a fitness that rules out privacy violations
before rewarding speed; an optional pruning schedule sparsifies them
during evolution. Classical one-step heuristics (Chernoff, extrinsic
Jensen-Shannon, random) serve as baselines.
"""

from .belief import (Belief, DiscreteModel, ErrorThresholds, GaussianModel,
                     HypothesisSpace, map_decision, map_error, should_stop,
                     update_belief, update_belief_multi)
from .baselines import BaselinePolicy, kl_divergence, make_baseline, mc_kl_divergence
from .cosyne import EvolutionConfig, EvolutionResult, run_evolution
from .environments import (BinomialParams, Environment, GaussianParams,
                           KernelMismatchSpec, RadarParams, RiceanParams,
                           SensorGridSpec, apply_mismatch, build_binomial_env,
                           build_gaussian_env, build_radar_env, build_ricean_env,
                           env_from_config, env_to_config)
from .errors import (BadAgentIndex, CalibrationDiverged, ConfigError, EahtError,
                     EvaluationFailed, GenomeArchMismatch, ParamOutOfRange,
                     ShapeMismatch, ZeroLikelihood)
from .fitness import (CommSpec, EpisodeLimits, EpisodeTrace, FitnessResult,
                      default_assignment, export_eve_dataset, fitness_centralized,
                      fitness_decentralized, fitness_from_stats,
                      rollout_centralized, rollout_decentralized)
from .harness import (EvalReport, IndependentScenario, MessageLossScenario,
                      MismatchScenario, SweepSpec, action_frequency,
                      evaluate_policy, robustness_suite, sweep, sweep_cv)
from .policy import (Genome, MultiAgentArch, SingleAgentArch, act_multi,
                     act_single, apply_prune, init_genome, load_genome,
                     param_count, save_genome)
from .prune_evolve import (PruneConfig, evolve_with_pruning, finetune_pruned,
                           prune_and_finetune, sparsity_report)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # beliefs
    "HypothesisSpace", "Belief", "ErrorThresholds", "DiscreteModel", "GaussianModel",
    "update_belief", "update_belief_multi", "map_error", "map_decision", "should_stop",
    # environments
    "SensorGridSpec", "BinomialParams", "GaussianParams", "RiceanParams", "RadarParams",
    "KernelMismatchSpec", "Environment", "build_binomial_env", "build_gaussian_env",
    "build_ricean_env", "build_radar_env", "apply_mismatch", "env_to_config",
    "env_from_config",
    # policies
    "SingleAgentArch", "MultiAgentArch", "Genome", "init_genome", "param_count",
    "act_single", "act_multi", "apply_prune", "save_genome", "load_genome",
    # evolution
    "EvolutionConfig", "EvolutionResult", "run_evolution",
    "PruneConfig", "evolve_with_pruning", "finetune_pruned", "prune_and_finetune",
    "sparsity_report",
    # episodes and fitness
    "EpisodeLimits", "CommSpec", "EpisodeTrace", "FitnessResult", "fitness_from_stats",
    "rollout_centralized", "rollout_decentralized", "fitness_centralized",
    "fitness_decentralized", "default_assignment", "export_eve_dataset",
    # baselines
    "BaselinePolicy", "make_baseline", "kl_divergence", "mc_kl_divergence",
    # evaluation
    "EvalReport", "SweepSpec", "MismatchScenario", "MessageLossScenario",
    "IndependentScenario", "evaluate_policy", "action_frequency", "robustness_suite",
    "sweep", "sweep_cv",
    # errors
    "EahtError", "ZeroLikelihood", "ParamOutOfRange", "CalibrationDiverged",
    "ShapeMismatch", "BadAgentIndex", "GenomeArchMismatch", "EvaluationFailed",
    "ConfigError",
]
