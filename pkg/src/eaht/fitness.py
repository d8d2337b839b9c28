"""Episode rollouts and the privacy-constrained fitness.

An episode runs the sensing loop: pick actions from the current belief,
draw the agent-side and eavesdropper-side observations for every probed
sensor, update all beliefs, and stop once the agent-side MAP error
reaches the target (break test uses <=). The eavesdropper passively
taps every probed channel and filters with her own model; she never
sees agent-to-agent messages, so message loss between agents does not
touch her belief.

Fitness of a policy over a batch of episodes:

    eve_peak_mean = mean over episodes of max over steps of the
                    eavesdropper's top posterior mass
    fitness = -eve_peak_mean                 if eve_peak_mean >= 1 - eve_threshold
            = 1 / mean_stopping_time         otherwise

so privacy violations are pushed down below zero and feasible policies
compete on speed alone.

In the decentralized variant each agent owns a subset of sensors, may
skip sensing for a step (last branch output), broadcasts its
(action, observation) pair subject to the communication topology, exits
for good once its own error target is met, and stops broadcasting after
exiting. The episode ends when everyone has exited or the horizon runs
out; the episode stopping time is the latest exit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .belief import (Belief, ErrorThresholds, categorical, map_decision, map_error,
                     update_belief_multi)
from .environments import Environment
from .errors import ParamOutOfRange, ShapeMismatch
from .policy import Genome, MultiAgentArch, SingleAgentArch, act_multi, act_single
from .seeding import child_sequences

__all__ = [
    "EpisodeLimits",
    "CommSpec",
    "StepRecord",
    "EpisodeTrace",
    "FitnessResult",
    "fitness_from_stats",
    "rollout_centralized",
    "rollout_with_policy",
    "rollout_decentralized",
    "fitness_centralized",
    "fitness_decentralized",
    "centralized_fitness_fn",
    "decentralized_fitness_fn",
    "default_assignment",
    "agent_action_tables",
    "arch_for_environment",
    "export_eve_dataset",
]

FULLY_CONNECTED = "fully_connected"
INDEPENDENT = "independent"
LOSSY = "lossy"


@dataclass(frozen=True)
class EpisodeLimits:
    """Hard episode horizon and Monte Carlo batch size per fitness call."""

    max_horizon: int = 200
    episodes_per_eval: int = 100

    def __post_init__(self):
        if self.max_horizon < 1 or self.episodes_per_eval < 1:
            raise ParamOutOfRange("max_horizon and episodes_per_eval must be >= 1")


@dataclass(frozen=True)
class CommSpec:
    """Inter-agent broadcast topology.

    ``fully_connected`` delivers every message, ``independent`` delivers
    none (agents hear only themselves), ``lossy`` drops each
    (sender, receiver, step) message independently with probability
    ``loss_rate``. A lossy topology with rate zero behaves exactly like
    fully connected, consuming no extra randomness.
    """

    topology: str = FULLY_CONNECTED
    loss_rate: float = 0.0

    def __post_init__(self):
        if self.topology not in (FULLY_CONNECTED, INDEPENDENT, LOSSY):
            raise ParamOutOfRange(f"unknown topology {self.topology!r}")
        if not (0.0 <= self.loss_rate < 1.0):
            raise ParamOutOfRange("loss_rate must lie in [0, 1)")
        if self.topology != LOSSY and self.loss_rate != 0.0:
            raise ParamOutOfRange("loss_rate only applies to the lossy topology")


@dataclass
class StepRecord:
    """One time step. Entries are per-agent tuples; ``None`` marks an agent
    that did not sense (idle or already exited)."""

    t: int
    actions: tuple
    obs_legit: tuple
    obs_eve: tuple
    errors_legit: tuple
    eve_error: float
    eve_top: float
    beliefs_legit: tuple | None = None
    belief_eve: np.ndarray | None = None


@dataclass
class EpisodeTrace:
    true_hypothesis: int
    steps: list
    stop_time: int
    agent_stop_times: tuple
    final_decisions: tuple
    eve_peak: float
    action_modes: tuple | None = None

    @property
    def num_agents(self) -> int:
        return len(self.agent_stop_times)


@dataclass(frozen=True)
class FitnessResult:
    fitness: float
    eve_peak_mean: float
    mean_stopping_time: float
    privacy_ok: bool
    episodes: int


def fitness_from_stats(eve_peak_mean: float, mean_stopping_time: float,
                       eve_threshold: float) -> float:
    """Penalize privacy violations, otherwise reward fast stopping."""
    if eve_peak_mean >= 1.0 - eve_threshold:
        return -eve_peak_mean
    return 1.0 / mean_stopping_time


def rollout_with_policy(policy_fn, env: Environment, thresholds: ErrorThresholds,
                        limits: EpisodeLimits, rng: np.random.Generator, *,
                        record_beliefs: bool = False) -> EpisodeTrace:
    """Single-agent episode driven by ``policy_fn(belief, rng) -> action``."""
    x = categorical(rng, env.hyp.prior)
    bel_l = Belief.from_prior(env.hyp)
    bel_e = Belief.from_prior(env.hyp)
    steps = []
    eve_peak = -np.inf
    t = 0
    for t in range(1, limits.max_horizon + 1):
        a = int(policy_fn(bel_l, rng))
        y = env.sample_legit(a, x, rng)
        z = env.sample_eve(a, x, rng)
        bel_l = update_belief_multi(bel_l, env.model_legit, [(a, y)])
        bel_e = update_belief_multi(bel_e, env.model_eve, [(a, z)])
        err_l = map_error(bel_l)
        top_e = float(np.max(bel_e.probs))
        eve_peak = max(eve_peak, top_e)
        steps.append(StepRecord(
            t, (a,), (y,), (z,), (err_l,), 1.0 - top_e, top_e,
            beliefs_legit=(bel_l.probs,) if record_beliefs else None,
            belief_eve=bel_e.probs if record_beliefs else None))
        if err_l <= thresholds.legit:
            break
    return EpisodeTrace(
        true_hypothesis=x,
        steps=steps,
        stop_time=t,
        agent_stop_times=(t,),
        final_decisions=(map_decision(bel_l),),
        eve_peak=float(eve_peak),
        action_modes=env.action_mode,
    )


def rollout_centralized(genome: Genome, env: Environment, thresholds: ErrorThresholds,
                        limits: EpisodeLimits, rng: np.random.Generator, *,
                        mode: str = "stochastic", record_beliefs: bool = False) -> EpisodeTrace:
    """One episode of a single-agent network policy."""
    arch = genome.arch
    if not isinstance(arch, SingleAgentArch):
        raise ShapeMismatch("rollout_centralized needs a single-agent genome")
    if arch.n_inputs != env.n_hypotheses or arch.n_actions != env.n_actions:
        raise ShapeMismatch(
            f"genome expects {arch.n_inputs} hypotheses / {arch.n_actions} actions, "
            f"environment has {env.n_hypotheses} / {env.n_actions}")

    def policy_fn(belief, r):
        return act_single(genome, belief, r, mode)

    return rollout_with_policy(policy_fn, env, thresholds, limits, rng,
                               record_beliefs=record_beliefs)


def default_assignment(num_sensors: int, num_agents: int) -> list:
    """Sensor ownership: one agent owns everything; otherwise the first
    half of the agents shares the first half of the sensors and the rest
    share the remainder."""
    if num_agents < 1:
        raise ParamOutOfRange("num_agents must be >= 1")
    if num_agents == 1:
        return [list(range(num_sensors))]
    if num_sensors < 2:
        raise ParamOutOfRange("need at least 2 sensors to split between agents")
    first = list(range(num_sensors // 2))
    second = list(range(num_sensors // 2, num_sensors))
    half = (num_agents + 1) // 2
    return [list(first) if k < half else list(second) for k in range(num_agents)]


def agent_action_tables(env: Environment, assignment) -> list:
    """Global action ids for each agent's local action index."""
    if env.num_sensors is None or env.modes_per_sensor is None:
        raise ShapeMismatch("decentralized rollouts need a sensor-grid environment")
    modes = env.modes_per_sensor
    tables = []
    for sensors in assignment:
        if any(not (0 <= s < env.num_sensors) for s in sensors):
            raise ParamOutOfRange(f"sensor assignment {sensors} outside the grid")
        tables.append(np.asarray([s * modes + m for s in sensors for m in range(modes)]))
    return tables


def arch_for_environment(env: Environment, assignment, *, extractor_hidden=(300, 300),
                         branch_hidden=(300, 300)) -> MultiAgentArch:
    """Multi-agent architecture sized for an environment and assignment."""
    tables = agent_action_tables(env, assignment)
    return MultiAgentArch(
        n_inputs=env.n_hypotheses,
        branch_actions=tuple(len(t) + 1 for t in tables),
        extractor_hidden=tuple(extractor_hidden),
        branch_hidden=tuple(branch_hidden),
    )


def _deliveries(comm: CommSpec, sensed, active, rng) -> list:
    """delivered[j] = list of sender indices whose pair reaches agent j.

    Draw order is fixed: receivers in index order, senders in index
    order, one Bernoulli draw per foreign (sender, receiver) pair, only
    under a strictly lossy topology.
    """
    out = []
    lossy = comm.topology == LOSSY and comm.loss_rate > 0.0
    for j in range(len(active)):
        if not active[j]:
            out.append([])
            continue
        senders = []
        for k, action in enumerate(sensed):
            if action is None:
                continue
            if k == j:
                senders.append(k)
            elif comm.topology == INDEPENDENT:
                continue
            elif lossy:
                if rng.random() >= comm.loss_rate:
                    senders.append(k)
            else:
                senders.append(k)
        out.append(senders)
    return out


def rollout_decentralized(genome: Genome, env: Environment, comm: CommSpec,
                          thresholds: ErrorThresholds, limits: EpisodeLimits,
                          rng: np.random.Generator, *, assignment=None,
                          mode: str = "stochastic",
                          record_beliefs: bool = False) -> EpisodeTrace:
    """One episode of a multi-agent policy under a broadcast topology."""
    arch = genome.arch
    if not isinstance(arch, MultiAgentArch):
        raise ShapeMismatch("rollout_decentralized needs a multi-agent genome")
    num_agents = arch.num_agents
    if assignment is None:
        assignment = default_assignment(env.num_sensors, num_agents)
    tables = agent_action_tables(env, assignment)
    if len(tables) != num_agents:
        raise ShapeMismatch(f"assignment covers {len(tables)} agents, genome has {num_agents}")
    for k, table in enumerate(tables):
        if arch.branch_actions[k] != len(table) + 1:
            raise ShapeMismatch(
                f"agent {k}: branch width {arch.branch_actions[k]} != {len(table)} actions + idle")
    if arch.n_inputs != env.n_hypotheses:
        raise ShapeMismatch(
            f"genome expects {arch.n_inputs} hypotheses, environment has {env.n_hypotheses}")

    x = categorical(rng, env.hyp.prior)
    beliefs = [Belief.from_prior(env.hyp) for _ in range(num_agents)]
    bel_e = Belief.from_prior(env.hyp)
    active = [True] * num_agents
    stop_times = [limits.max_horizon] * num_agents
    decisions = [None] * num_agents
    errors = [map_error(b) for b in beliefs]
    steps = []
    eve_peak = -np.inf
    t = 0
    for t in range(1, limits.max_horizon + 1):
        actions = [None] * num_agents
        for k in range(num_agents):
            if not active[k]:
                continue
            local = act_multi(genome, k, beliefs[k], rng, mode)
            if local < len(tables[k]):
                actions[k] = int(tables[k][local])
        obs_l = [None] * num_agents
        obs_e = [None] * num_agents
        for k, a in enumerate(actions):
            if a is not None:
                obs_l[k] = env.sample_legit(a, x, rng)
                obs_e[k] = env.sample_eve(a, x, rng)
        delivered = _deliveries(comm, actions, active, rng)
        for j in range(num_agents):
            if not active[j]:
                continue
            pairs = [(actions[k], obs_l[k]) for k in delivered[j]]
            beliefs[j] = update_belief_multi(beliefs[j], env.model_legit, pairs)
            errors[j] = map_error(beliefs[j])
        eve_pairs = [(a, obs_e[k]) for k, a in enumerate(actions) if a is not None]
        bel_e = update_belief_multi(bel_e, env.model_eve, eve_pairs)
        top_e = float(np.max(bel_e.probs))
        eve_peak = max(eve_peak, top_e)
        for k in range(num_agents):
            if active[k] and errors[k] <= thresholds.legit:
                active[k] = False
                stop_times[k] = t
                decisions[k] = map_decision(beliefs[k])
        steps.append(StepRecord(
            t, tuple(actions), tuple(obs_l), tuple(obs_e), tuple(errors),
            1.0 - top_e, top_e,
            beliefs_legit=tuple(b.probs for b in beliefs) if record_beliefs else None,
            belief_eve=bel_e.probs if record_beliefs else None))
        if not any(active):
            break
    for k in range(num_agents):
        if decisions[k] is None:
            decisions[k] = map_decision(beliefs[k])
    return EpisodeTrace(
        true_hypothesis=x,
        steps=steps,
        stop_time=max(stop_times),
        agent_stop_times=tuple(stop_times),
        final_decisions=tuple(decisions),
        eve_peak=float(eve_peak),
        action_modes=env.action_mode,
    )


def _batch_stats(traces) -> tuple:
    peaks = np.asarray([tr.eve_peak for tr in traces])
    taus = np.asarray([tr.stop_time for tr in traces], dtype=np.float64)
    return float(peaks.mean()), float(taus.mean())


def fitness_centralized(genome: Genome, env: Environment, thresholds: ErrorThresholds,
                        limits: EpisodeLimits, seed, *, mode: str = "stochastic") -> FitnessResult:
    """Monte Carlo fitness of a single-agent genome.

    ``seed`` is an int or a fresh SeedSequence; one child stream per
    episode keeps the batch reproducible and order-independent.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    traces = [
        rollout_centralized(genome, env, thresholds, limits, np.random.default_rng(child), mode=mode)
        for child in child_sequences(ss, limits.episodes_per_eval)
    ]
    eve_peak_mean, mean_tau = _batch_stats(traces)
    value = fitness_from_stats(eve_peak_mean, mean_tau, thresholds.eve)
    return FitnessResult(value, eve_peak_mean, mean_tau,
                         eve_peak_mean < 1.0 - thresholds.eve, len(traces))


def fitness_decentralized(genome: Genome, env: Environment, comm: CommSpec,
                          thresholds: ErrorThresholds, limits: EpisodeLimits, seed, *,
                          assignment=None, mode: str = "stochastic") -> FitnessResult:
    """Monte Carlo fitness of a multi-agent genome."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    traces = [
        rollout_decentralized(genome, env, comm, thresholds, limits,
                              np.random.default_rng(child), assignment=assignment, mode=mode)
        for child in child_sequences(ss, limits.episodes_per_eval)
    ]
    eve_peak_mean, mean_tau = _batch_stats(traces)
    value = fitness_from_stats(eve_peak_mean, mean_tau, thresholds.eve)
    return FitnessResult(value, eve_peak_mean, mean_tau,
                         eve_peak_mean < 1.0 - thresholds.eve, len(traces))


def centralized_fitness_fn(env: Environment, thresholds: ErrorThresholds,
                           limits: EpisodeLimits):
    """Adapter: (Genome, SeedSequence) -> float, for the evolution loop."""
    def fit(genome, seed):
        return fitness_centralized(genome, env, thresholds, limits, seed).fitness
    return fit


def decentralized_fitness_fn(env: Environment, comm: CommSpec, thresholds: ErrorThresholds,
                             limits: EpisodeLimits, assignment=None):
    def fit(genome, seed):
        return fitness_decentralized(genome, env, comm, thresholds, limits, seed,
                                     assignment=assignment).fitness
    return fit


def export_eve_dataset(traces, path, *, include_legit: bool = False) -> int:
    """Write one JSON line per episode: the eavesdropper's view.

    Each record holds the probed global action ids in step order (agents
    flattened in index order within a step), her raw observations, and
    the true hypothesis label. ``include_legit`` adds the agent-side
    observations and per-step beliefs when the trace recorded them.
    Returns the number of records written.
    """
    path = Path(path)
    count = 0
    with path.open("w") as fh:
        for tr in traces:
            actions = []
            z = []
            for step in tr.steps:
                for k, a in enumerate(step.actions):
                    if a is None:
                        continue
                    actions.append(int(a))
                    z.append(step.obs_eve[k].item() if hasattr(step.obs_eve[k], "item")
                             else step.obs_eve[k])
            record = {"actions": actions, "z": z, "label": int(tr.true_hypothesis)}
            if include_legit:
                record["y"] = [
                    step.obs_legit[k].item() if hasattr(step.obs_legit[k], "item") else step.obs_legit[k]
                    for step in tr.steps for k, a in enumerate(step.actions) if a is not None]
                if tr.steps and tr.steps[0].belief_eve is not None:
                    record["eve_beliefs"] = [[float(v) for v in step.belief_eve] for step in tr.steps]
            fh.write(json.dumps(record) + "\n")
            count += 1
    return count
