"""Command line interface.

Subcommands::

    eaht train      --config c.json [--seed N] [--threads N] [--resume] [--out DIR]
    eaht eval       --config c.json (--genome g.json | --baseline NAME) [...]
    eaht robust     --config c.json --genome g.json [--scenario SPEC ...] [...]
    eaht export-eve --config c.json (--genome g.json | --baseline NAME) [...]

Exit codes: 0 on success, 2 for configuration problems (bad config file,
bad flag values, genome/environment mismatch), 3 for runtime failures.
Every output lands under the configured output directory (``out_dir`` in
the config, overridden by ``--out``). Set ``EAHT_LOG`` to DEBUG, INFO,
WARNING, or ERROR to enable logging.

All commands are deterministic in (config, seed); ``--threads`` changes
wall time only, never outputs.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .baselines import BASELINE_NAMES
from .config import ExperimentConfig, build_experiment, load_config
from .cosyne import run_evolution
from .errors import ConfigError, EahtError, GenomeArchMismatch, ParamOutOfRange
from .fitness import export_eve_dataset
from .harness import (collect_traces, evaluate_policy, parse_scenario,
                      robustness_suite, write_curve_csv, write_freq_csv,
                      write_report_csv)
from .policy import arch_to_dict, load_genome, save_genome
from .prune_evolve import evolve_with_pruning, finetune_pruned, write_sparsity_csv

__all__ = ["main", "build_parser"]

log = logging.getLogger(__name__)


def _configure_logging() -> None:
    name = os.environ.get("EAHT_LOG")
    if not name:
        return
    level = getattr(logging, name.upper(), None)
    if not isinstance(level, int):
        print(f"ignoring EAHT_LOG={name!r} (not a log level)", file=sys.stderr)
        return
    logging.basicConfig(level=level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eaht",
        description="Train and evaluate eavesdropper-evading sensing policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, resume=False):
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker count")
        p.add_argument("--out", default=None, help="output directory override")
        if resume:
            p.add_argument("--resume", action="store_true",
                           help="continue from the latest checkpoint")

    p_train = sub.add_parser("train", help="evolve a policy")
    common(p_train, resume=True)

    p_eval = sub.add_parser("eval", help="evaluate a genome or baseline")
    common(p_eval)
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--genome", help="genome JSON produced by train")
    group.add_argument("--baseline", choices=BASELINE_NAMES)
    p_eval.add_argument("--episodes", type=int, default=None)

    p_robust = sub.add_parser("robust", help="evaluate a frozen genome under perturbations")
    common(p_robust)
    p_robust.add_argument("--genome", required=True)
    p_robust.add_argument("--scenario", action="append", default=None,
                          help="mismatch | independent | loss:RATE (repeatable)")
    p_robust.add_argument("--episodes", type=int, default=None)

    p_export = sub.add_parser("export-eve",
                              help="dump the eavesdropper's observations as JSONL")
    common(p_export)
    group = p_export.add_mutually_exclusive_group(required=True)
    group.add_argument("--genome")
    group.add_argument("--baseline", choices=BASELINE_NAMES)
    p_export.add_argument("--episodes", type=int, default=None)
    return parser


def _experiment(args) -> ExperimentConfig:
    raw = load_config(args.config)
    return build_experiment(raw, seed=args.seed, threads=args.threads, out_dir=args.out)


def _out_dir(exp: ExperimentConfig) -> Path:
    if exp.out_dir is None:
        raise ConfigError("out_dir", "no output directory (set out_dir or pass --out)")
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    return exp.out_dir


def _write_fitness_curve(curve, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness"])
        for gen, value in enumerate(curve):
            writer.writerow([gen, repr(float(value))])


def _load_checked_genome(path: str, exp: ExperimentConfig):
    genome = load_genome(path)
    want = arch_to_dict(exp.arch)
    have = arch_to_dict(genome.arch)
    keys = (("n_inputs", "n_actions") if have["type"] == "single"
            else ("n_inputs", "branch_actions"))
    if have["type"] != want["type"] or any(have[k] != want[k] for k in keys):
        raise GenomeArchMismatch(
            f"genome architecture {have} does not fit the configured environment "
            f"(expected {want})")
    return genome


def cmd_train(args) -> int:
    exp = _experiment(args)
    out = _out_dir(exp)
    fit = exp.fitness_fn()
    if exp.prune is not None:
        step1 = evolve_with_pruning(exp.arch, exp.evolution, fit, exp.prune,
                                    checkpoint_dir=out / "checkpoints" / "prune",
                                    resume=args.resume)
        save_genome(step1.best, out / "pruned_genome.json")
        write_sparsity_csv(step1.best, out / "sparsity.csv")
        _write_fitness_curve(step1.curve, out / "fitness_curve.csv")
        step2 = finetune_pruned(step1.best, exp.evolution, fit, exp.prune,
                                checkpoint_dir=out / "checkpoints" / "finetune",
                                resume=args.resume)
        save_genome(step2.best, out / "best_genome.json")
        _write_fitness_curve(step2.curve, out / "finetune_curve.csv")
        best_fitness = step2.best_fitness
        print(f"pruned genome sparsity {step1.best.sparsity():.4f}, "
              f"fine-tuned fitness {best_fitness:.6g}")
    else:
        result = run_evolution(exp.arch, exp.evolution, fit,
                               checkpoint_dir=out / "checkpoints", resume=args.resume)
        save_genome(result.best, out / "best_genome.json")
        _write_fitness_curve(result.curve, out / "fitness_curve.csv")
        best_fitness = result.best_fitness
    print(f"training done: best fitness {best_fitness:.6g}, "
          f"genome at {out / 'best_genome.json'}")
    return 0


def _verdict_line(report) -> str:
    return (f"{report.policy} [{report.scenario}]: "
            f"legit_error={report.legit_error:.4f} ({'ok' if report.legit_ok else 'VIOLATED'}), "
            f"eve_error_min={report.eve_error_min:.4f} ({'ok' if report.eve_ok else 'VIOLATED'}), "
            f"mean_tau={report.mean_tau:.2f}")


def cmd_eval(args) -> int:
    exp = _experiment(args)
    out = _out_dir(exp)
    policy = args.baseline if args.baseline else _load_checked_genome(args.genome, exp)
    n = args.episodes if args.episodes is not None else exp.eval_episodes
    report = evaluate_policy(policy, exp.env, exp.thresholds, exp.eval_limits, n,
                             exp.seed, comm=exp.comm, assignment=exp.assignment,
                             threads=exp.eval_threads)
    write_report_csv([report], out / "report.csv")
    write_curve_csv(report, out / "curve.csv")
    write_freq_csv(report, out / "freq.csv")
    print(_verdict_line(report))
    print(f"wrote report.csv, curve.csv, freq.csv to {out}")
    return 0


def cmd_robust(args) -> int:
    exp = _experiment(args)
    out = _out_dir(exp)
    genome = _load_checked_genome(args.genome, exp)
    if args.scenario:
        try:
            scenarios = [parse_scenario(s) for s in args.scenario]
        except ParamOutOfRange as e:
            raise ConfigError("--scenario", str(e)) from None
    else:
        scenarios = exp.scenarios
    if not scenarios:
        raise ConfigError("--scenario",
                          "no scenarios given (flag or evaluation.scenarios)")
    n = args.episodes if args.episodes is not None else exp.eval_episodes
    for scenario in scenarios:
        report = robustness_suite(genome, scenario, exp.env, exp.thresholds,
                                  exp.eval_limits, n, exp.seed, comm=exp.comm,
                                  assignment=exp.assignment, threads=exp.eval_threads)
        slug = scenario.name.replace(":", "_")
        write_report_csv([report], out / f"report_{slug}.csv")
        write_curve_csv(report, out / f"curve_{slug}.csv")
        write_freq_csv(report, out / f"freq_{slug}.csv")
        print(_verdict_line(report))
    print(f"wrote {len(scenarios)} scenario report(s) to {out}")
    return 0


def cmd_export_eve(args) -> int:
    exp = _experiment(args)
    out = _out_dir(exp)
    policy = args.baseline if args.baseline else _load_checked_genome(args.genome, exp)
    n = args.episodes if args.episodes is not None else exp.eval_episodes
    traces = collect_traces(policy, exp.env, exp.thresholds, exp.eval_limits, n,
                            exp.seed, comm=exp.comm, assignment=exp.assignment,
                            threads=exp.eval_threads)
    path = out / "eve_dataset.jsonl"
    count = export_eve_dataset(traces, path)
    print(f"wrote {count} episodes to {path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "robust": cmd_robust,
    "export-eve": cmd_export_eve,
}


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, GenomeArchMismatch) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except EahtError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
