"""Monte Carlo evaluation reports, robustness scenarios, sweeps, CSV output.

Evaluation always runs greedy action selection (argmax of the policy
head) over freshly seeded episodes, so a report is a pure function of
(policy, environment, thresholds, limits, episode count, seed).

A report carries two agent-side error statistics because they answer
different questions: ``legit_error`` is the empirical misclassification
rate of the final MAP decisions, and ``mean_final_error_legit`` is the
mean final posterior error. The identification verdict checks the
former against the agent-side threshold; the privacy verdict checks the
per-step mean eavesdropper error curve (its minimum) against the
eavesdropper threshold. Curves freeze after an episode ends: once the
last agent exits, nobody probes, so neither side's belief moves.

CSV schemas (column names and order are stable):

* report.csv: ``policy, scenario, episodes, seed, legit_error,
  mean_final_error_legit, eve_error_min, eve_peak_mean, mean_tau,
  cv_tau, agent_stop_means, legit_ok, eve_ok`` with agent_stop_means
  joined by ``;``.
* curve.csv: ``t, legit_error_mean, eve_error_mean``.
* freq.csv: ``mode, frequency`` where mode is the 1-based sensing mode
  or ``none`` for the no-sensing action.
* sweep.csv: ``param, value, seed, legit_error, eve_error_min,
  eve_peak_mean, mean_tau, cv_tau, legit_ok, eve_ok``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .baselines import BASELINE_NAMES, BaselinePolicy, make_baseline
from .belief import ErrorThresholds
from .environments import Environment, KernelMismatchSpec, apply_mismatch
from .errors import ParamOutOfRange, ShapeMismatch
from .fitness import (FULLY_CONNECTED, CommSpec, EpisodeLimits, rollout_centralized,
                      rollout_decentralized, rollout_with_policy)
from .policy import Genome, MultiAgentArch, SingleAgentArch
from .seeding import STREAM_EVAL, child_sequences, seed_sequence

__all__ = [
    "EvalReport",
    "SweepSpec",
    "MismatchScenario",
    "MessageLossScenario",
    "IndependentScenario",
    "collect_traces",
    "evaluate_policy",
    "action_frequency",
    "apply_scenario",
    "robustness_suite",
    "parse_scenario",
    "sweep",
    "sweep_cv",
    "write_report_csv",
    "write_curve_csv",
    "write_freq_csv",
    "write_sweep_csv",
    "REPORT_COLUMNS",
    "CURVE_COLUMNS",
    "FREQ_COLUMNS",
    "SWEEP_COLUMNS",
]

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["policy", "scenario", "episodes", "seed", "legit_error",
                  "mean_final_error_legit", "eve_error_min", "eve_peak_mean",
                  "mean_tau", "cv_tau", "agent_stop_means", "legit_ok", "eve_ok"]
CURVE_COLUMNS = ["t", "legit_error_mean", "eve_error_mean"]
FREQ_COLUMNS = ["mode", "frequency"]
SWEEP_COLUMNS = ["param", "value", "seed", "legit_error", "eve_error_min",
                 "eve_peak_mean", "mean_tau", "cv_tau", "legit_ok", "eve_ok"]


@dataclass
class EvalReport:
    """Aggregate statistics of one greedy evaluation run."""

    policy: str
    scenario: str
    episodes: int
    seed: int
    legit_error: float
    mean_final_error_legit: float
    eve_error_min: float
    eve_peak_mean: float
    mean_tau: float
    cv_tau: float
    agent_stop_means: tuple
    legit_ok: bool
    eve_ok: bool
    legit_curve: np.ndarray
    eve_curve: np.ndarray
    mode_frequency: dict

    def row(self) -> dict:
        """The report.csv row (curves and frequencies have their own files)."""
        return {
            "policy": self.policy,
            "scenario": self.scenario,
            "episodes": self.episodes,
            "seed": self.seed,
            "legit_error": repr(self.legit_error),
            "mean_final_error_legit": repr(self.mean_final_error_legit),
            "eve_error_min": repr(self.eve_error_min),
            "eve_peak_mean": repr(self.eve_peak_mean),
            "mean_tau": repr(self.mean_tau),
            "cv_tau": repr(self.cv_tau),
            "agent_stop_means": ";".join(repr(v) for v in self.agent_stop_means),
            "legit_ok": int(self.legit_ok),
            "eve_ok": int(self.eve_ok),
        }


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter, its value grid, and replicate seeds per value."""

    parameter: str
    values: tuple
    seeds: int = 20

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ParamOutOfRange("sweep needs a non-empty value grid")
        if self.seeds < 1:
            raise ParamOutOfRange("sweep needs at least one seed per value")


@dataclass(frozen=True)
class MismatchScenario:
    """Evaluate under perturbed true kernels while filtering stays nominal."""

    spec: KernelMismatchSpec = KernelMismatchSpec()

    @property
    def name(self) -> str:
        return "mismatch"


@dataclass(frozen=True)
class MessageLossScenario:
    """Drop each inter-agent message independently with the given rate."""

    loss_rate: float

    @property
    def name(self) -> str:
        return f"loss:{self.loss_rate:g}"


@dataclass(frozen=True)
class IndependentScenario:
    """Sever all inter-agent communication."""

    @property
    def name(self) -> str:
        return "independent"


def apply_scenario(scenario, env: Environment, comm: CommSpec) -> tuple:
    """Perturbed (env, comm) for a frozen-policy robustness evaluation."""
    if isinstance(scenario, MismatchScenario):
        return apply_mismatch(env, scenario.spec), comm
    if isinstance(scenario, MessageLossScenario):
        if scenario.loss_rate == 0.0:
            return env, CommSpec(FULLY_CONNECTED)
        return env, CommSpec("lossy", scenario.loss_rate)
    if isinstance(scenario, IndependentScenario):
        return env, CommSpec("independent")
    raise ParamOutOfRange(f"unknown scenario {scenario!r}")


def parse_scenario(text: str):
    """Scenario from its CLI spelling: mismatch | independent | loss:RATE."""
    if text == "mismatch":
        return MismatchScenario()
    if text == "independent":
        return IndependentScenario()
    if text.startswith("loss:"):
        try:
            rate = float(text.split(":", 1)[1])
        except ValueError:
            raise ParamOutOfRange(f"bad loss rate in scenario {text!r}") from None
        return MessageLossScenario(rate)
    raise ParamOutOfRange(
        f"unknown scenario {text!r}; expected mismatch, independent, or loss:RATE")


def _policy_label(policy) -> str:
    if isinstance(policy, Genome):
        return "genome"
    if isinstance(policy, BaselinePolicy):
        return policy.name
    return str(policy)


def _run_episode(policy, env, comm, thresholds, limits, assignment, child):
    rng = np.random.default_rng(child)
    if isinstance(policy, Genome):
        if isinstance(policy.arch, SingleAgentArch):
            return rollout_centralized(policy, env, thresholds, limits, rng, mode="greedy")
        return rollout_decentralized(policy, env, comm, thresholds, limits, rng,
                                     assignment=assignment, mode="greedy")
    return rollout_with_policy(policy, env, thresholds, limits, rng)


def _frozen_curves(traces) -> tuple:
    """Per-step mean error curves, episodes padded with their final values."""
    t_max = max(len(tr.steps) for tr in traces)
    legit = np.zeros(t_max)
    eve = np.zeros(t_max)
    for tr in traces:
        ev = np.asarray([s.eve_error for s in tr.steps])
        lg = np.asarray([np.mean(s.errors_legit) for s in tr.steps])
        n = len(tr.steps)
        if n < t_max:
            ev = np.concatenate([ev, np.full(t_max - n, ev[-1])])
            lg = np.concatenate([lg, np.full(t_max - n, lg[-1])])
        eve += ev
        legit += lg
    return legit / len(traces), eve / len(traces)


def action_frequency(traces) -> dict:
    """Fraction of active agent-steps spent in each sensing mode.

    Keys are the 1-based mode index as a string plus ``none`` for steps
    where an active agent chose not to sense. Values sum to one.
    """
    modes = traces[0].action_modes
    if modes is None:
        raise ShapeMismatch("traces carry no action mode table")
    n_modes = int(max(modes)) + 1
    counts = {str(m + 1): 0 for m in range(n_modes)}
    counts["none"] = 0
    for tr in traces:
        for step in tr.steps:
            for k, a in enumerate(step.actions):
                if a is not None:
                    counts[str(int(modes[a]) + 1)] += 1
                elif step.t <= tr.agent_stop_times[k]:
                    counts["none"] += 1
    total = sum(counts.values())
    if total == 0:
        raise ShapeMismatch("no agent-steps counted")
    return {k: v / total for k, v in counts.items()}


def collect_traces(policy, env: Environment, thresholds: ErrorThresholds,
                   limits: EpisodeLimits, n_episodes: int, seed, *,
                   comm: CommSpec | None = None, assignment=None,
                   threads: int = 1) -> list:
    """Greedy rollouts returned as raw traces, seeded like evaluate_policy."""
    if n_episodes < 1:
        raise ParamOutOfRange("n_episodes must be >= 1")
    if isinstance(policy, str):
        if policy not in BASELINE_NAMES:
            raise ParamOutOfRange(f"unknown baseline {policy!r}")
        policy = make_baseline(policy, env)
    if isinstance(policy, Genome) and isinstance(policy.arch, MultiAgentArch) and comm is None:
        comm = CommSpec(FULLY_CONNECTED)
    ss = seed if isinstance(seed, np.random.SeedSequence) else seed_sequence(int(seed), STREAM_EVAL)
    children = child_sequences(ss, n_episodes)
    if threads > 1:
        return Parallel(n_jobs=threads, prefer="threads")(
            delayed(_run_episode)(policy, env, comm, thresholds, limits, assignment, c)
            for c in children)
    return [_run_episode(policy, env, comm, thresholds, limits, assignment, c)
            for c in children]


def evaluate_policy(policy, env: Environment, thresholds: ErrorThresholds,
                    limits: EpisodeLimits, n_episodes: int, seed, *,
                    comm: CommSpec | None = None, assignment=None,
                    threads: int = 1, scenario: str = "nominal",
                    policy_name: str | None = None) -> EvalReport:
    """Greedy Monte Carlo evaluation of a genome or a named baseline.

    ``seed`` may be a master integer (the evaluation stream is derived
    from it) or a prepared SeedSequence. Episode i always consumes the
    i-th child stream, so reports are bitwise reproducible for any
    ``threads`` value.
    """
    if isinstance(policy, str):
        if policy not in BASELINE_NAMES:
            raise ParamOutOfRange(f"unknown baseline {policy!r}")
        policy = make_baseline(policy, env)
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        seed_label = int(ss.entropy) if isinstance(ss.entropy, int) else -1
    else:
        ss = seed_sequence(int(seed), STREAM_EVAL)
        seed_label = int(seed)
    traces = collect_traces(policy, env, thresholds, limits, n_episodes, ss,
                            comm=comm, assignment=assignment, threads=threads)

    correct = np.asarray([
        [d == tr.true_hypothesis for d in tr.final_decisions] for tr in traces])
    final_err = np.asarray([
        list(tr.steps[-1].errors_legit) for tr in traces])
    taus = np.asarray([tr.stop_time for tr in traces], dtype=np.float64)
    peaks = np.asarray([tr.eve_peak for tr in traces])
    stops = np.asarray([tr.agent_stop_times for tr in traces], dtype=np.float64)
    legit_curve, eve_curve = _frozen_curves(traces)

    legit_error = float(1.0 - correct.mean())
    eve_error_min = float(eve_curve.min())
    mean_tau = float(taus.mean())
    cv_tau = float(taus.std(ddof=1) / mean_tau) if len(taus) > 1 and mean_tau > 0 else 0.0
    report = EvalReport(
        policy=policy_name if policy_name is not None else _policy_label(policy),
        scenario=scenario,
        episodes=n_episodes,
        seed=seed_label,
        legit_error=legit_error,
        mean_final_error_legit=float(final_err.mean()),
        eve_error_min=eve_error_min,
        eve_peak_mean=float(peaks.mean()),
        mean_tau=mean_tau,
        cv_tau=cv_tau,
        agent_stop_means=tuple(float(v) for v in stops.mean(axis=0)),
        legit_ok=bool(legit_error <= thresholds.legit),
        eve_ok=bool(eve_error_min >= thresholds.eve),
        legit_curve=legit_curve,
        eve_curve=eve_curve,
        mode_frequency=action_frequency(traces),
    )
    log.info("evaluated %s under %s: legit_error=%.4f eve_min=%.4f mean_tau=%.2f",
             report.policy, scenario, legit_error, eve_error_min, mean_tau)
    return report


def robustness_suite(genome: Genome, scenario, env: Environment,
                     thresholds: ErrorThresholds, limits: EpisodeLimits,
                     n_episodes: int, seed, *, comm: CommSpec | None = None,
                     assignment=None, threads: int = 1) -> EvalReport:
    """Evaluate a frozen genome under one perturbed scenario, no retraining."""
    if comm is None:
        comm = CommSpec(FULLY_CONNECTED)
    if isinstance(scenario, (MessageLossScenario, IndependentScenario)) and \
            not isinstance(genome.arch, MultiAgentArch):
        raise ShapeMismatch(f"scenario {scenario.name} needs a multi-agent genome")
    env2, comm2 = apply_scenario(scenario, env, comm)
    return evaluate_policy(genome, env2, thresholds, limits, n_episodes, seed,
                           comm=comm2, assignment=assignment, threads=threads,
                           scenario=scenario.name)


def _cell_path(out_dir: Path, spec: SweepSpec, value, seed: int) -> Path:
    tag = repr(value).replace("/", "_").replace(" ", "")
    return out_dir / f"cell_{spec.parameter}_{tag}_s{seed}.json"


def _metrics_dict(report: EvalReport) -> dict:
    return {
        "legit_error": report.legit_error,
        "eve_error_min": report.eve_error_min,
        "eve_peak_mean": report.eve_peak_mean,
        "mean_tau": report.mean_tau,
        "cv_tau": report.cv_tau,
        "legit_ok": bool(report.legit_ok),
        "eve_ok": bool(report.eve_ok),
    }


def sweep(spec: SweepSpec, run_cell, out_dir, *, resume: bool = False) -> list:
    """Grid x seeds study. ``run_cell(value, seed) -> EvalReport`` does a
    full retrain-and-evaluate; each finished cell persists to its own
    JSON file, and ``resume`` loads finished cells instead of rerunning
    them. Returns one row dict per cell in fixed (value, seed) order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in spec.values:
        for seed in range(spec.seeds):
            path = _cell_path(out, spec, value, seed)
            if resume and path.exists():
                metrics = json.loads(path.read_text())
                log.info("sweep cell %s reused", path.name)
            else:
                report = run_cell(value, seed)
                metrics = _metrics_dict(report)
                path.write_text(json.dumps(metrics, sort_keys=True))
            rows.append({"param": spec.parameter, "value": value, "seed": seed, **metrics})
    return rows


def sweep_cv(rows) -> dict:
    """Across-seed coefficient of variation of mean stopping time, per value."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(row["value"], []).append(row["mean_tau"])
    out = {}
    for value, taus in groups.items():
        arr = np.asarray(taus)
        m = arr.mean()
        out[value] = float(arr.std(ddof=1) / m) if len(arr) > 1 and m > 0 else 0.0
    return out


def write_report_csv(reports, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.row())


def write_curve_csv(report: EvalReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for t in range(len(report.eve_curve)):
            writer.writerow([t + 1, repr(float(report.legit_curve[t])),
                             repr(float(report.eve_curve[t]))])


def write_freq_csv(report: EvalReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FREQ_COLUMNS)
        for mode in sorted(report.mode_frequency):
            writer.writerow([mode, repr(float(report.mode_frequency[mode]))])


def write_sweep_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("legit_error", "eve_error_min", "eve_peak_mean", "mean_tau", "cv_tau"):
                out[key] = repr(float(out[key]))
            out["legit_ok"] = int(out["legit_ok"])
            out["eve_ok"] = int(out["eve_ok"])
            writer.writerow(out)
