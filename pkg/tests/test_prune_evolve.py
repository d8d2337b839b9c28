import csv

import numpy as np
import pytest

from eaht.cosyne import EvolutionConfig
from eaht.errors import ParamOutOfRange
from eaht.policy import SingleAgentArch, layer_slices, param_count
from eaht.prune_evolve import (PruneConfig, evolve_with_pruning, finetune_pruned,
                               prune_and_finetune, sparsity_report,
                               write_sparsity_csv)

ARCH = SingleAgentArch(3, 3, hidden=(6, 6))


def sphere_fitness(target):
    def fit(genome, seed):
        return -float(np.sum((genome.weights - target) ** 2))
    return fit


def surviving_floor(initial: int, fraction: float, generations: int) -> int:
    """Survivors after repeated floor-rounded pruning of one layer."""
    n = initial
    for _ in range(generations):
        n -= int(np.floor(fraction * n))
    return n


def test_prune_config_validation():
    with pytest.raises(ParamOutOfRange):
        PruneConfig(fraction=0.0)
    with pytest.raises(ParamOutOfRange):
        PruneConfig(fraction=1.0)
    with pytest.raises(ParamOutOfRange):
        PruneConfig(finetune_noise_var=-0.1)
    assert PruneConfig().fraction == 0.2


def test_champion_is_final_generation_top_row_at_full_sparsity():
    target = np.random.default_rng(0).uniform(-0.5, 0.5, param_count(ARCH))
    cfg = EvolutionConfig(pop_size=8, generations=5, mutation_sigma=0.2, seed=3)
    prune = PruneConfig(fraction=0.3)
    res = evolve_with_pruning(ARCH, cfg, sphere_fitness(target), prune)
    champ = res.best
    np.testing.assert_array_equal(champ.weights, res.final_sorted.theta[0])
    np.testing.assert_array_equal(champ.mask, res.final_sorted.masks[0])
    assert res.best_fitness == res.final_sorted.fitnesses[0]
    # crossover can only AND masks, so every layer is at or below the
    # floor-rounded survivor count after five prune passes
    for s in layer_slices(ARCH):
        size = s.b.stop - s.w.start
        live = int(champ.mask[s.w.start:s.b.stop].sum())
        assert live <= surviving_floor(size, 0.3, 5)
        assert live >= 1
    assert champ.sparsity() > 0.5


def test_finetune_keeps_the_mask_frozen_everywhere():
    target = np.random.default_rng(1).uniform(-0.5, 0.5, param_count(ARCH))
    fit = sphere_fitness(target)
    cfg = EvolutionConfig(pop_size=8, generations=4, mutation_sigma=0.2, seed=9)
    prune = PruneConfig(fraction=0.3, finetune_noise_var=0.04)
    step1 = evolve_with_pruning(ARCH, cfg, fit, prune)
    step2 = finetune_pruned(step1.best, cfg, fit, prune)
    for row in range(step2.final_sorted.size):
        np.testing.assert_array_equal(step2.final_sorted.masks[row], step1.best.mask)
    np.testing.assert_array_equal(step2.best.mask, step1.best.mask)
    np.testing.assert_array_equal(step2.best.weights[step1.best.mask == 0], 0.0)
    assert step2.best_fitness >= step1.best_fitness


def test_finetune_row_zero_starts_as_the_unperturbed_champion():
    # with zero generations the engine evaluates the seeded population once;
    # under a distance fitness the champion itself is its own optimum, so the
    # sorted top row must be the champion bit for bit
    target = np.random.default_rng(2).uniform(-0.5, 0.5, param_count(ARCH))
    cfg = EvolutionConfig(pop_size=6, generations=3, mutation_sigma=0.3, seed=4)
    prune = PruneConfig(fraction=0.25, finetune_noise_var=0.05)
    step1 = evolve_with_pruning(ARCH, cfg, sphere_fitness(target), prune)
    champ = step1.best
    anchored = sphere_fitness(champ.weights)
    probe_cfg = EvolutionConfig(pop_size=6, generations=0, seed=4)
    probe = finetune_pruned(champ, probe_cfg, anchored, prune)
    np.testing.assert_array_equal(probe.final_sorted.theta[0], champ.weights)
    assert probe.final_sorted.fitnesses[0] == 0.0
    # and the noisy rows really are perturbed on surviving weights
    others = probe.final_sorted.theta[1:]
    assert (others[:, champ.mask == 1] != champ.weights[champ.mask == 1]).any()
    np.testing.assert_array_equal(others[:, champ.mask == 0], 0.0)


def test_finetune_zero_noise_spawns_identical_rows():
    n = param_count(ARCH)
    target = np.zeros(n)
    cfg = EvolutionConfig(pop_size=4, generations=0, seed=8)
    prune = PruneConfig(fraction=0.2, finetune_noise_var=0.0)
    champ = evolve_with_pruning(
        ARCH, EvolutionConfig(pop_size=4, generations=2, seed=8),
        sphere_fitness(target), prune).best
    res = finetune_pruned(champ, cfg, sphere_fitness(target), prune)
    for row in range(4):
        np.testing.assert_array_equal(res.final_sorted.theta[row], champ.weights)


def test_prune_and_finetune_pipeline_checkpoints(tmp_path):
    target = np.random.default_rng(3).uniform(-0.5, 0.5, param_count(ARCH))
    fit = sphere_fitness(target)
    cfg = EvolutionConfig(pop_size=6, generations=3, mutation_sigma=0.2, seed=5)
    prune = PruneConfig(fraction=0.2)
    s1, s2 = prune_and_finetune(ARCH, cfg, fit, prune, checkpoint_root=tmp_path)
    assert sorted(p.name for p in (tmp_path / "prune").glob("*.json")) == \
        [f"gen_{g:05d}.json" for g in range(3)]
    assert len(list((tmp_path / "finetune").glob("*.json"))) == 3
    r1, r2 = prune_and_finetune(ARCH, cfg, fit, prune)
    np.testing.assert_array_equal(r1.best.weights, s1.best.weights)
    np.testing.assert_array_equal(r2.best.weights, s2.best.weights)
    # the two phases draw from disjoint streams, so step 2 is not a replay
    assert not np.array_equal(s1.curve, s2.curve)


def test_sparsity_report_counts_and_total(tmp_path):
    n = param_count(ARCH)
    from eaht.policy import Genome, apply_prune
    g = apply_prune(Genome(np.arange(1, n + 1, dtype=np.float64),
                           np.ones(n, dtype=np.uint8), ARCH), 0.5)
    rows = sparsity_report(g)
    assert [r["layer"] for r in rows][-1] == "total"
    assert sum(r["params"] for r in rows[:-1]) == rows[-1]["params"] == n
    assert sum(r["nonzero"] for r in rows[:-1]) == rows[-1]["nonzero"]
    for r in rows:
        assert r["sparsity"] == pytest.approx(1.0 - r["nonzero"] / r["params"])
        live = int(g.mask.sum())
    assert rows[-1]["nonzero"] == live
    path = tmp_path / "sparsity.csv"
    write_sparsity_csv(g, path)
    with path.open() as fh:
        read = list(csv.DictReader(fh))
    assert len(read) == len(rows)
    assert read[-1]["layer"] == "total"
    assert int(read[-1]["nonzero"]) == live
