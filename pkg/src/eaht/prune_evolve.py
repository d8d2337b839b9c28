"""Two-step joint evolution and magnitude pruning.

Step 1 interleaves pruning with evolution: at the top of every
generation each individual loses a fixed fraction of its surviving
weights (smallest magnitudes first, per layer), then the normal
evaluate / breed / permute cycle runs. Sparsity therefore compounds
toward roughly 1 - (1 - fraction) ** generations, a little under it
because per-layer floor rounding prunes conservatively. The champion of
this step is the best row of the final sorted generation, a genome at
full final sparsity, not the dense early best.

Step 2 fine-tunes that champion with its mask frozen: the new
population is the champion plus noisy copies (Gaussian noise on
surviving weights only, the first row kept noise-free), and because
crossover ANDs parent masks and mutation respects masks, no pruned
connection can ever come back.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cosyne import EvolutionConfig, EvolutionResult, Population, evolution_engine
from .errors import ParamOutOfRange
from .policy import Genome, layer_slices, perturb_nonzero
from .seeding import STREAM_TRAIN, generator

__all__ = [
    "PruneConfig",
    "evolve_with_pruning",
    "finetune_pruned",
    "prune_and_finetune",
    "sparsity_report",
    "write_sparsity_csv",
    "PHASE_PRUNE",
    "PHASE_FINETUNE",
]

# base_key phase tags: keep the two steps on disjoint random streams
PHASE_PRUNE = 1
PHASE_FINETUNE = 2


@dataclass(frozen=True)
class PruneConfig:
    """Per-generation prune fraction and Step 2 perturbation variance."""

    fraction: float = 0.2
    finetune_noise_var: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.fraction < 1.0):
            raise ParamOutOfRange(f"prune fraction {self.fraction} outside (0, 1)")
        if self.finetune_noise_var < 0:
            raise ParamOutOfRange("finetune_noise_var must be >= 0")


def evolve_with_pruning(arch, cfg: EvolutionConfig, fit, prune: PruneConfig, *,
                        checkpoint_dir=None, resume: bool = False) -> EvolutionResult:
    """Step 1. The returned ``best`` is the top row of the final sorted
    generation (maximum sparsity), not the best-ever dense genome; the
    best-ever value is still visible through ``curve``."""
    result = evolution_engine(arch, cfg, fit, prune_fraction=prune.fraction,
                              base_key=(STREAM_TRAIN, PHASE_PRUNE),
                              checkpoint_dir=checkpoint_dir, resume=resume)
    champion = result.final_sorted.row_genome(0)
    return EvolutionResult(champion, float(result.final_sorted.fitnesses[0]),
                           result.curve, result.final_sorted, result.generations_run)


def finetune_pruned(champion: Genome, cfg: EvolutionConfig, fit, prune: PruneConfig, *,
                    checkpoint_dir=None, resume: bool = False) -> EvolutionResult:
    """Step 2: restart evolution around ``champion`` with its mask frozen.

    Row 0 of the seed population is the champion itself; every other row
    adds independent Gaussian noise to the surviving weights. All rows
    share the champion's mask, and the variation operators preserve it,
    so the final genome has exactly the same sparsity pattern.
    """
    rng = generator(cfg.seed, STREAM_TRAIN, PHASE_FINETUNE, 0)
    sigma = float(np.sqrt(prune.finetune_noise_var))
    rows = [champion.weights.copy()]
    for _ in range(cfg.pop_size - 1):
        rows.append(perturb_nonzero(champion, sigma, rng).weights)
    theta = np.stack(rows)
    masks = np.tile(champion.mask, (cfg.pop_size, 1)).astype(np.uint8)
    pop = Population(theta, masks, champion.arch)
    return evolution_engine(champion.arch, cfg, fit, init_pop=pop,
                            base_key=(STREAM_TRAIN, PHASE_FINETUNE),
                            checkpoint_dir=checkpoint_dir, resume=resume)


def prune_and_finetune(arch, cfg: EvolutionConfig, fit, prune: PruneConfig, *,
                       checkpoint_root=None, resume: bool = False) -> tuple:
    """Run both steps back to back; returns (step1_result, step2_result)."""
    root = Path(checkpoint_root) if checkpoint_root is not None else None
    step1 = evolve_with_pruning(
        arch, cfg, fit, prune,
        checkpoint_dir=None if root is None else root / "prune", resume=resume)
    step2 = finetune_pruned(
        step1.best, cfg, fit, prune,
        checkpoint_dir=None if root is None else root / "finetune", resume=resume)
    return step1, step2


def sparsity_report(genome: Genome) -> list:
    """Per-layer and global sparsity rows: dicts with layer, total
    parameter count, surviving count, and sparsity in [0, 1]."""
    rows = []
    total = 0
    alive = 0
    for s in layer_slices(genome.arch):
        idx = np.arange(s.w.start, s.b.stop)
        n = len(idx)
        live = int(genome.mask[idx].sum())
        rows.append({"layer": s.name, "params": n, "nonzero": live,
                     "sparsity": 1.0 - live / n})
        total += n
        alive += live
    rows.append({"layer": "total", "params": total, "nonzero": alive,
                 "sparsity": 1.0 - alive / total})
    return rows


def write_sparsity_csv(genome: Genome, path) -> None:
    rows = sparsity_report(genome)
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["layer", "params", "nonzero", "sparsity"])
        writer.writeheader()
        writer.writerows(rows)
