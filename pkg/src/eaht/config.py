"""Experiment configuration: one JSON document drives a whole run.

Block layout::

    {
      "seed": 0,
      "out_dir": "runs/demo",
      "environment": {"kind": "binomial", "num_sensors": 2, ...},
      "problem": {
        "mode": "centralized" | "decentralized",
        "num_agents": 1,
        "comm": {"topology": "fully_connected", "loss_rate": 0.0},
        "assignment": [[0], [1]],            // optional sensor ownership
        "legit_threshold": 0.1,
        "eve_threshold": 0.3,
        "max_horizon": 200
      },
      "optimizer": {
        "pop_size": 20, "generations": 20,
        "mutation_prob": 0.5, "mutation_sigma": 0.6,
        "episodes_per_eval": 100, "perm_shift_eps": 1e-6, "threads": 1,
        "hidden": [200, 200],                       // centralized network
        "extractor_hidden": [300, 300],             // decentralized network
        "branch_hidden": [300, 300],
        "prune": {"fraction": 0.2, "finetune_noise_var": 0.01}   // optional
      },
      "evaluation": {"episodes": 2000, "scenarios": ["mismatch"], "threads": 1}
    }

Only ``environment`` and the two problem thresholds are mandatory; every
other field falls back to the defaults above. The optimizer defaults
keep the published operator settings but run a reduced population and
generation count suitable for a workstation.

One master ``seed`` is the only seed a user supplies. Environment
construction, training, evaluation, and sweep replicates each draw from
their own fixed substream of it (see the seeding module), so a config
plus a seed pins every random draw in the run.

Validation failures raise :class:`~eaht.errors.ConfigError` carrying the
dotted path of the offending field, e.g. ``problem.legit_threshold``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .belief import ErrorThresholds
from .cosyne import EvolutionConfig
from .environments import Environment, env_from_config
from .errors import ConfigError, ParamOutOfRange, ShapeMismatch
from .fitness import (CommSpec, EpisodeLimits, arch_for_environment,
                      centralized_fitness_fn, decentralized_fitness_fn,
                      default_assignment)
from .harness import parse_scenario
from .policy import SingleAgentArch
from .prune_evolve import PruneConfig
from .seeding import STREAM_ENV, derive_seed

__all__ = [
    "ExperimentConfig",
    "load_config",
    "validate_config",
    "build_experiment",
    "apply_sweep_value",
    "SWEEP_PARAMETERS",
    "DEFAULT_OPTIMIZER",
]

DEFAULT_OPTIMIZER = {
    "pop_size": 20,
    "generations": 20,
    "mutation_prob": 0.5,
    "mutation_sigma": 0.6,
    "episodes_per_eval": 100,
    "perm_shift_eps": 1e-6,
    "threads": 1,
    "hidden": [200, 200],
    "extractor_hidden": [300, 300],
    "branch_hidden": [300, 300],
}

GRID_KINDS = ("binomial", "gaussian", "ricean", "mismatch")
ENV_KINDS = GRID_KINDS + ("radar",)

# name -> (config path, kind of edit)
SWEEP_PARAMETERS = (
    "mutation_prob",
    "mutation_sigma",
    "hidden",
    "extractor_hidden",
    "branch_hidden",
    "num_sensors",
    "eve_threshold",
    "loss_rate",
    "radar_eve_var",
    "noise_power_db",
)


def _number(block: dict, key: str, path: str, default=None, *, lo=None, hi=None,
            lo_open=False, hi_open=False, required=False):
    if key not in block:
        if required:
            raise ConfigError(f"{path}.{key}", "is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", "must be a number")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{path}.{key}", f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(f"{path}.{key}", f"must be {'<' if hi_open else '<='} {hi}")
    return v


def _integer(block: dict, key: str, path: str, default=None, *, lo=None, required=False):
    v = _number(block, key, path, default, lo=lo, required=required)
    if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"{path}.{key}", "must be an integer")
    return v


def _pair_of_ints(block: dict, key: str, path: str, default):
    v = block.get(key, default)
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or any(isinstance(e, bool) or not isinstance(e, int) or e < 1 for e in v)):
        raise ConfigError(f"{path}.{key}", "must be a pair of positive integers")
    return tuple(v)


@dataclass
class ExperimentConfig:
    """A fully validated and resolved experiment description."""

    raw: dict
    seed: int
    out_dir: Path | None
    env: Environment
    mode: str
    num_agents: int
    comm: CommSpec
    assignment: list | None
    thresholds: ErrorThresholds
    max_horizon: int
    evolution: EvolutionConfig
    prune: PruneConfig | None
    arch: object
    eval_episodes: int
    eval_threads: int
    scenarios: list

    @property
    def train_limits(self) -> EpisodeLimits:
        return EpisodeLimits(self.max_horizon, self.evolution.episodes_per_eval)

    @property
    def eval_limits(self) -> EpisodeLimits:
        return EpisodeLimits(self.max_horizon, self.eval_episodes)

    def fitness_fn(self):
        if self.mode == "centralized":
            return centralized_fitness_fn(self.env, self.thresholds, self.train_limits)
        return decentralized_fitness_fn(self.env, self.comm, self.thresholds,
                                        self.train_limits, self.assignment)


def validate_config(raw: dict) -> None:
    """Structural validation; raises ConfigError naming the bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in raw:
        if key not in ("seed", "out_dir", "environment", "problem", "optimizer", "evaluation"):
            raise ConfigError(key, "unknown top-level field")
    _integer(raw, "seed", "<root>", 0, lo=0)
    if "out_dir" in raw and not isinstance(raw["out_dir"], str):
        raise ConfigError("out_dir", "must be a string path")

    env = raw.get("environment")
    if not isinstance(env, dict):
        raise ConfigError("environment", "block is required")
    kind = env.get("kind")
    if kind not in ENV_KINDS:
        raise ConfigError("environment.kind", f"must be one of {ENV_KINDS}")
    if kind in GRID_KINDS and kind != "mismatch":
        _integer(env, "num_sensors", "environment", required=True, lo=1)

    problem = raw.get("problem")
    if not isinstance(problem, dict):
        raise ConfigError("problem", "block is required")
    mode = problem.get("mode", "centralized")
    if mode not in ("centralized", "decentralized"):
        raise ConfigError("problem.mode", "must be centralized or decentralized")
    _number(problem, "legit_threshold", "problem", required=True, lo=0, hi=1,
            lo_open=True, hi_open=True)
    _number(problem, "eve_threshold", "problem", required=True, lo=0, hi=1,
            lo_open=True, hi_open=True)
    _integer(problem, "max_horizon", "problem", 200, lo=1)
    num_agents = _integer(problem, "num_agents", "problem",
                          1 if mode == "centralized" else 2, lo=1)
    if mode == "centralized" and num_agents != 1:
        raise ConfigError("problem.num_agents", "must be 1 in centralized mode")
    if mode == "decentralized":
        if num_agents < 2:
            raise ConfigError("problem.num_agents", "must be >= 2 in decentralized mode")
        if kind == "radar":
            raise ConfigError("problem.mode",
                              "decentralized mode needs a sensor-grid environment")
    comm = problem.get("comm", {})
    if not isinstance(comm, dict):
        raise ConfigError("problem.comm", "must be an object")
    topology = comm.get("topology", "fully_connected")
    if topology not in ("fully_connected", "independent", "lossy"):
        raise ConfigError("problem.comm.topology",
                          "must be fully_connected, independent, or lossy")
    _number(comm, "loss_rate", "problem.comm", 0.0, lo=0.0, hi=1.0, hi_open=True)
    if "assignment" in problem:
        assignment = problem["assignment"]
        if (not isinstance(assignment, list) or len(assignment) != num_agents
                or any(not isinstance(group, list) or not group for group in assignment)):
            raise ConfigError("problem.assignment",
                              f"must be {num_agents} non-empty lists of sensor indices")

    optimizer = raw.get("optimizer", {})
    if not isinstance(optimizer, dict):
        raise ConfigError("optimizer", "must be an object")
    _integer(optimizer, "pop_size", "optimizer", DEFAULT_OPTIMIZER["pop_size"], lo=4)
    _integer(optimizer, "generations", "optimizer", DEFAULT_OPTIMIZER["generations"], lo=0)
    _number(optimizer, "mutation_prob", "optimizer", 0.5, lo=0.0, hi=1.0)
    _number(optimizer, "mutation_sigma", "optimizer", 0.6, lo=0.0)
    _integer(optimizer, "episodes_per_eval", "optimizer", 100, lo=1)
    _number(optimizer, "perm_shift_eps", "optimizer", 1e-6, lo=0.0, hi=1.0,
            lo_open=True, hi_open=True)
    _integer(optimizer, "threads", "optimizer", 1, lo=1)
    _pair_of_ints(optimizer, "hidden", "optimizer", DEFAULT_OPTIMIZER["hidden"])
    _pair_of_ints(optimizer, "extractor_hidden", "optimizer",
                  DEFAULT_OPTIMIZER["extractor_hidden"])
    _pair_of_ints(optimizer, "branch_hidden", "optimizer", DEFAULT_OPTIMIZER["branch_hidden"])
    if "prune" in optimizer:
        prune = optimizer["prune"]
        if not isinstance(prune, dict):
            raise ConfigError("optimizer.prune", "must be an object")
        _number(prune, "fraction", "optimizer.prune", 0.2, lo=0.0, hi=1.0,
                lo_open=True, hi_open=True)
        _number(prune, "finetune_noise_var", "optimizer.prune", 0.01, lo=0.0)

    evaluation = raw.get("evaluation", {})
    if not isinstance(evaluation, dict):
        raise ConfigError("evaluation", "must be an object")
    _integer(evaluation, "episodes", "evaluation", 2000, lo=1)
    _integer(evaluation, "threads", "evaluation", 1, lo=1)
    scenarios = evaluation.get("scenarios", [])
    if not isinstance(scenarios, list):
        raise ConfigError("evaluation.scenarios", "must be a list of scenario strings")
    for i, text in enumerate(scenarios):
        if not isinstance(text, str):
            raise ConfigError(f"evaluation.scenarios[{i}]", "must be a string")
        try:
            parse_scenario(text)
        except ParamOutOfRange as e:
            raise ConfigError(f"evaluation.scenarios[{i}]", str(e)) from None


def load_config(path) -> dict:
    """Read and validate a JSON config file; returns the raw dict."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON: {e}") from e
    validate_config(raw)
    return raw


def build_experiment(raw: dict, *, seed: int | None = None, threads: int | None = None,
                     out_dir=None) -> ExperimentConfig:
    """Resolve a validated raw config into live objects.

    ``seed``, ``threads``, and ``out_dir`` override the corresponding
    config fields (command-line flags win over the file).
    """
    validate_config(raw)
    master = int(seed if seed is not None else raw.get("seed", 0))

    env_block = dict(raw["environment"])
    if "seed" not in env_block:
        env_block["seed"] = derive_seed(master, STREAM_ENV)
    try:
        env = env_from_config(env_block)
    except (ParamOutOfRange, ShapeMismatch) as e:
        raise ConfigError("environment", str(e)) from e

    problem = raw["problem"]
    mode = problem.get("mode", "centralized")
    num_agents = int(problem.get("num_agents", 1 if mode == "centralized" else 2))
    thresholds = ErrorThresholds(float(problem["legit_threshold"]),
                                 float(problem["eve_threshold"]))
    max_horizon = int(problem.get("max_horizon", 200))
    comm_block = problem.get("comm", {})
    try:
        comm = CommSpec(comm_block.get("topology", "fully_connected"),
                        float(comm_block.get("loss_rate", 0.0)))
    except ParamOutOfRange as e:
        raise ConfigError("problem.comm", str(e)) from e

    assignment = None
    optimizer = {**DEFAULT_OPTIMIZER, **raw.get("optimizer", {})}
    if mode == "decentralized":
        try:
            assignment = problem.get("assignment")
            if assignment is None:
                assignment = default_assignment(env.num_sensors, num_agents)
            arch = arch_for_environment(
                env, assignment,
                extractor_hidden=tuple(optimizer["extractor_hidden"]),
                branch_hidden=tuple(optimizer["branch_hidden"]))
        except (ParamOutOfRange, ShapeMismatch) as e:
            raise ConfigError("problem.assignment", str(e)) from e
    else:
        arch = SingleAgentArch(env.n_hypotheses, env.n_actions,
                               hidden=tuple(optimizer["hidden"]))

    evolution = EvolutionConfig(
        pop_size=int(optimizer["pop_size"]),
        generations=int(optimizer["generations"]),
        mutation_prob=float(optimizer["mutation_prob"]),
        mutation_sigma=float(optimizer["mutation_sigma"]),
        episodes_per_eval=int(optimizer["episodes_per_eval"]),
        perm_shift_eps=float(optimizer["perm_shift_eps"]),
        seed=master,
        threads=int(threads if threads is not None else optimizer["threads"]),
    )
    prune = None
    if "prune" in raw.get("optimizer", {}):
        block = raw["optimizer"]["prune"]
        prune = PruneConfig(float(block.get("fraction", 0.2)),
                            float(block.get("finetune_noise_var", 0.01)))

    evaluation = raw.get("evaluation", {})
    out = out_dir if out_dir is not None else raw.get("out_dir")
    return ExperimentConfig(
        raw=raw,
        seed=master,
        out_dir=None if out is None else Path(out),
        env=env,
        mode=mode,
        num_agents=num_agents,
        comm=comm,
        assignment=assignment,
        thresholds=thresholds,
        max_horizon=max_horizon,
        evolution=evolution,
        prune=prune,
        arch=arch,
        eval_episodes=int(evaluation.get("episodes", 2000)),
        eval_threads=int(threads if threads is not None else evaluation.get("threads", 1)),
        scenarios=[parse_scenario(s) for s in evaluation.get("scenarios", [])],
    )


def apply_sweep_value(raw: dict, parameter: str, value) -> dict:
    """A deep-copied config with one named parameter replaced.

    Width parameters (``hidden``, ``extractor_hidden``, ``branch_hidden``)
    take a single integer that fills both layers. ``loss_rate`` switches
    the communication topology to lossy (or fully connected at zero).
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError("sweep.parameter",
                          f"unknown parameter {parameter!r}, expected one of {SWEEP_PARAMETERS}")
    new = copy.deepcopy(raw)
    optimizer = new.setdefault("optimizer", {})
    problem = new.setdefault("problem", {})
    environment = new.setdefault("environment", {})
    if parameter in ("mutation_prob", "mutation_sigma"):
        optimizer[parameter] = float(value)
    elif parameter in ("hidden", "extractor_hidden", "branch_hidden"):
        optimizer[parameter] = [int(value), int(value)]
    elif parameter == "num_sensors":
        environment["num_sensors"] = int(value)
    elif parameter == "eve_threshold":
        problem["eve_threshold"] = float(value)
    elif parameter == "loss_rate":
        rate = float(value)
        problem["comm"] = ({"topology": "lossy", "loss_rate": rate} if rate > 0
                           else {"topology": "fully_connected", "loss_rate": 0.0})
    elif parameter == "radar_eve_var":
        environment["var_eve"] = float(value)
    elif parameter == "noise_power_db":
        environment["noise_power_db"] = float(value)
    return new
