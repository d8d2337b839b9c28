"""Cooperative synapse neuroevolution (CoSyNE) over flat genomes.

The population is a matrix with one genome per row. Each generation:

1. every row is evaluated (optionally pruned in place first) and the
   matrix is sorted by fitness, best first, stable on ties;
2. the top quarter survives unchanged while the bottom three quarters
   are replaced by uniform crossover of two distinct elite parents plus
   per-gene Gaussian mutation;
3. genes are probabilistically permuted within their column, weights of
   fitter rows moving less, which recombines synapse subpopulations
   without touching the best row.

Offspring keep the fitness of the row they replaced until the next
evaluation; that stale value only steers the permutation step. The
best genome ever evaluated is tracked outside the matrix and returned.

All randomness is derived from (seed, phase, operation, generation,
row) counters, so runs are reproducible bit for bit for any worker
count and resume exactly from a checkpoint.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .errors import EvaluationFailed, ParamOutOfRange, ShapeMismatch
from .policy import (Genome, arch_from_dict, arch_to_dict, mask_to_rle, param_count,
                     rle_to_mask)
from .seeding import OP_BREED, OP_FIT, OP_INIT, OP_PERM, STREAM_TRAIN, generator, seed_sequence

__all__ = [
    "EvolutionConfig",
    "Population",
    "EvolutionResult",
    "init_population",
    "evaluate_and_sort",
    "breed",
    "permutation_probabilities",
    "permute_columns",
    "run_evolution",
    "evolution_engine",
]

log = logging.getLogger(__name__)


@dataclass
class EvolutionConfig:
    pop_size: int = 50
    generations: int = 50
    mutation_prob: float = 0.5
    mutation_sigma: float = 0.6
    episodes_per_eval: int = 100
    perm_shift_eps: float = 1e-6
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.pop_size < 4:
            raise ParamOutOfRange(f"pop_size must be >= 4, got {self.pop_size}")
        if self.generations < 0:
            raise ParamOutOfRange("generations must be >= 0")
        if not (0.0 <= self.mutation_prob <= 1.0):
            raise ParamOutOfRange("mutation_prob must lie in [0, 1]")
        if self.mutation_sigma < 0:
            raise ParamOutOfRange("mutation_sigma must be >= 0")
        if not (0.0 < self.perm_shift_eps < 1.0):
            raise ParamOutOfRange("perm_shift_eps must lie in (0, 1)")
        if self.threads < 1:
            raise ParamOutOfRange("threads must be >= 1")


@dataclass
class Population:
    """Row-per-individual weight matrix plus masks and optional fitnesses."""

    theta: np.ndarray
    masks: np.ndarray
    arch: object
    fitnesses: np.ndarray | None = None

    def __post_init__(self):
        n = param_count(self.arch)
        if self.theta.ndim != 2 or self.theta.shape[1] != n:
            raise ShapeMismatch(f"theta must be (rows, {n}), got {self.theta.shape}")
        if self.masks.shape != self.theta.shape:
            raise ShapeMismatch("masks must match theta's shape")

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def n_params(self) -> int:
        return self.theta.shape[1]

    def row_genome(self, row: int) -> Genome:
        return Genome(self.theta[row].copy(), self.masks[row].copy(), self.arch)


@dataclass
class EvolutionResult:
    best: Genome
    best_fitness: float
    curve: list
    final_sorted: Population
    generations_run: int


def init_population(arch, pop_size: int, rng: np.random.Generator) -> Population:
    n = param_count(arch)
    theta = rng.uniform(-1.0, 1.0, (pop_size, n))
    return Population(theta, np.ones((pop_size, n), dtype=np.uint8), arch)


def _eval_one(fit, weights, mask, arch, seed, row):
    try:
        return float(fit(Genome(weights, mask, arch), seed))
    except Exception as e:  # noqa: BLE001 - report the row, keep the cause
        raise EvaluationFailed(row, e) from e


def evaluate_and_sort(pop: Population, fit, seeds, *, threads: int = 1) -> Population:
    """Evaluate every row with its own seed and sort best-first.

    ``seeds`` holds one SeedSequence per row. The sort is stable, so
    equal fitnesses keep their pre-sort order. Rows are reduced in row
    order regardless of ``threads``, which keeps results bitwise
    independent of parallelism.
    """
    if len(seeds) != pop.size:
        raise ShapeMismatch(f"need {pop.size} seeds, got {len(seeds)}")
    jobs = (delayed(_eval_one)(fit, pop.theta[l].copy(), pop.masks[l].copy(), pop.arch, seeds[l], l)
            for l in range(pop.size))
    values = Parallel(n_jobs=threads, prefer="threads")(jobs) if threads > 1 else [
        _eval_one(fit, pop.theta[l].copy(), pop.masks[l].copy(), pop.arch, seeds[l], l)
        for l in range(pop.size)]
    fitnesses = np.asarray(values, dtype=np.float64)
    order = np.argsort(-fitnesses, kind="stable")
    return Population(pop.theta[order].copy(), pop.masks[order].copy(), pop.arch,
                      fitnesses[order].copy())


def breed(pop: Population, cfg: EvolutionConfig, rng: np.random.Generator) -> Population:
    """Keep the elite quarter, rebuild the rest by crossover and mutation.

    Elite count is floor(size / 4) (at least one). Each offspring picks
    two distinct elite parents uniformly (with a single elite, both
    point at it), takes each gene from either parent with probability
    1/2, then mutates each gene with probability ``mutation_prob`` by
    adding N(0, mutation_sigma^2) noise. The offspring mask is the AND
    of the parent masks and masked genes are neither mutated nor left
    nonzero. Offspring inherit the stale fitness of the row they
    replace; only the next evaluation refreshes it.
    """
    if pop.fitnesses is None:
        raise ShapeMismatch("breed needs an evaluated, sorted population")
    size = pop.size
    n_elite = max(1, size // 4)
    n_off = size - n_elite
    first = rng.integers(0, n_elite, n_off)
    if n_elite > 1:
        second = (first + 1 + rng.integers(0, n_elite - 1, n_off)) % n_elite
    else:
        second = first.copy()
    pick = rng.random((n_off, pop.n_params)) < 0.5
    child_w = np.where(pick, pop.theta[first], pop.theta[second])
    child_m = pop.masks[first] & pop.masks[second]
    mutate = rng.random((n_off, pop.n_params)) < cfg.mutation_prob
    noise = rng.normal(0.0, cfg.mutation_sigma, (n_off, pop.n_params))
    child_w = child_w + np.where(mutate, noise, 0.0)
    child_w *= child_m
    theta = np.concatenate([pop.theta[:n_elite], child_w])
    masks = np.concatenate([pop.masks[:n_elite], child_m]).astype(np.uint8)
    return Population(theta, masks, pop.arch, pop.fitnesses.copy())


def permutation_probabilities(fitnesses: np.ndarray, n_params: int,
                              eps: float = 1e-6) -> np.ndarray:
    """Per-row gene permutation probability 1 - (f / f_max) ** (1 / n).

    Fitnesses are first shifted affinely onto [eps, 1] so the ratio is
    well defined for negative or zero values. The best row always maps
    to probability zero; when every fitness ties, all rows do.
    """
    f = np.asarray(fitnesses, dtype=np.float64)
    fmin, fmax = f.min(), f.max()
    if fmax > fmin:
        shifted = eps + (1.0 - eps) * (f - fmin) / (fmax - fmin)
    else:
        shifted = np.ones_like(f)
    return 1.0 - shifted ** (1.0 / n_params)


def permute_columns(pop: Population, rng: np.random.Generator, *,
                    eps: float = 1e-6) -> Population:
    """Shuffle marked genes within each column.

    Each gene of row l is marked with that row's permutation
    probability; within a column the marked values are dealt back out
    in random order among the marked rows, so every column keeps its
    exact multiset of values. Genes whose mask bit is zero are never
    marked, so sparsity patterns stay put.
    """
    if pop.fitnesses is None:
        raise ShapeMismatch("permute_columns needs fitness values")
    p = permutation_probabilities(pop.fitnesses, pop.n_params, eps)
    marked = rng.random(pop.theta.shape) < p[:, None]
    marked &= pop.masks.astype(bool)
    key = rng.random(pop.theta.shape)
    rows = np.arange(pop.size, dtype=np.float64)[:, None]
    # Destination order: marked rows by row index, then unmarked rows.
    dest = np.argsort(np.where(marked, rows, pop.size + rows), axis=0, kind="stable")
    # Source order: marked rows by random key (a uniform permutation),
    # then unmarked rows by row index so they land back on themselves.
    src = np.argsort(np.where(marked, key, 2.0 + rows), axis=0, kind="stable")
    theta = np.empty_like(pop.theta)
    np.put_along_axis(theta, dest, np.take_along_axis(pop.theta, src, axis=0), axis=0)
    return Population(theta, pop.masks.copy(), pop.arch, pop.fitnesses.copy())


def _checkpoint_path(directory: Path, generation: int) -> Path:
    return directory / f"gen_{generation:05d}.json"


def _write_checkpoint(directory: Path, generation: int, pop: Population,
                      best: Genome | None, best_fitness: float, curve: list) -> None:
    doc = {
        "format": "eaht-checkpoint-v1",
        "generation": generation,
        "theta": [[float(v) for v in row] for row in pop.theta],
        "mask_rle_rows": [mask_to_rle(row) for row in pop.masks],
        "fitnesses": None if pop.fitnesses is None else [float(v) for v in pop.fitnesses],
        "arch": arch_to_dict(pop.arch),
        "best_weights": None if best is None else [float(v) for v in best.weights],
        "best_mask_rle": None if best is None else mask_to_rle(best.mask),
        "best_fitness": best_fitness,
        "curve": [float(v) for v in curve],
    }
    directory.mkdir(parents=True, exist_ok=True)
    _checkpoint_path(directory, generation).write_text(json.dumps(doc))


def _load_latest_checkpoint(directory: Path):
    pattern = re.compile(r"gen_(\d+)\.json$")
    best = None
    for p in directory.glob("gen_*.json"):
        m = pattern.search(p.name)
        if m and (best is None or int(m.group(1)) > best[0]):
            best = (int(m.group(1)), p)
    if best is None:
        return None
    doc = json.loads(best[1].read_text())
    arch = arch_from_dict(doc["arch"])
    n = param_count(arch)
    theta = np.asarray(doc["theta"], dtype=np.float64)
    masks = np.stack([rle_to_mask(r, n) for r in doc["mask_rle_rows"]])
    fitnesses = None if doc["fitnesses"] is None else np.asarray(doc["fitnesses"])
    pop = Population(theta, masks, arch, fitnesses)
    best_genome = None
    if doc["best_weights"] is not None:
        best_genome = Genome(np.asarray(doc["best_weights"]), rle_to_mask(doc["best_mask_rle"], n), arch)
    return doc["generation"], pop, best_genome, doc["best_fitness"], list(doc["curve"])


def evolution_engine(arch, cfg: EvolutionConfig, fit, *, prune_fraction: float | None = None,
                     init_pop: Population | None = None, base_key: tuple = (STREAM_TRAIN, 0),
                     checkpoint_dir=None, resume: bool = False) -> EvolutionResult:
    """Full evolution loop shared by the plain and pruning pipelines.

    ``fit`` maps (Genome, SeedSequence) to a float. When
    ``prune_fraction`` is set, every row is magnitude-pruned in place
    before each evaluation, so sparsity compounds across generations.
    ``base_key`` prefixes every derived random stream; the fine-tuning
    phase passes a different prefix than the main run. A checkpoint is
    written after each generation when ``checkpoint_dir`` is given, and
    ``resume`` restarts bit-exactly after the last completed one.
    """
    from .policy import apply_prune  # local import keeps module load light

    directory = Path(checkpoint_dir) if checkpoint_dir is not None else None
    start_gen = 0
    best_genome = None
    best_fitness = -np.inf
    curve: list = []
    pop = None
    if resume and directory is not None:
        loaded = _load_latest_checkpoint(directory)
        if loaded is not None:
            start_gen, pop, best_genome, best_fitness, curve = loaded
            start_gen += 1
            log.info("resuming after generation %d", start_gen - 1)
    if pop is None:
        if init_pop is not None:
            pop = init_pop
        else:
            pop = init_population(arch, cfg.pop_size, generator(cfg.seed, *base_key, OP_INIT))

    total = max(cfg.generations, 1)  # zero generations still evaluates once
    last_sorted = None
    for gen in range(start_gen, total):
        if prune_fraction is not None:
            for row in range(pop.size):
                pruned = apply_prune(pop.row_genome(row), prune_fraction)
                pop.theta[row] = pruned.weights
                pop.masks[row] = pruned.mask
        seeds = [seed_sequence(cfg.seed, *base_key, OP_FIT, gen, row) for row in range(pop.size)]
        pop = evaluate_and_sort(pop, fit, seeds, threads=cfg.threads)
        last_sorted = pop
        if pop.fitnesses[0] > best_fitness:
            best_fitness = float(pop.fitnesses[0])
            best_genome = pop.row_genome(0)
        curve.append(float(pop.fitnesses[0]))
        log.debug("generation %d best fitness %.6g", gen, pop.fitnesses[0])
        if cfg.generations > 0:
            pop = breed(pop, cfg, generator(cfg.seed, *base_key, OP_BREED, gen))
            pop = permute_columns(pop, generator(cfg.seed, *base_key, OP_PERM, gen),
                                  eps=cfg.perm_shift_eps)
        if directory is not None:
            _write_checkpoint(directory, gen, pop, best_genome, best_fitness, curve)

    if last_sorted is None:  # resumed a run that had already finished
        last_sorted = pop
    return EvolutionResult(best_genome, best_fitness, curve, last_sorted,
                           max(total - start_gen, 0))


def run_evolution(arch, cfg: EvolutionConfig, fit, *, checkpoint_dir=None,
                  resume: bool = False) -> EvolutionResult:
    """Evolve dense genomes; returns the best-ever genome and the
    per-generation best-fitness curve."""
    return evolution_engine(arch, cfg, fit, checkpoint_dir=checkpoint_dir, resume=resume)
