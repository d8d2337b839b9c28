"""Policy networks stored as flat genomes for neuroevolution.

Two architectures: a single-agent MLP mapping a belief vector to action
logits, and a multi-agent network with a shared feature extractor and
one branch per agent whose last output index means "do not sense this
step". Weights live in one flat float64 vector per individual, paired
with a 0/1 mask of the same length (magnitude pruning zeroes both the
weight and its mask bit). There is no gradient anywhere; evolution is
the only optimizer.

Canonical flat layout: layers in network order, extractor before
branches, each layer as the weight matrix in row-major (n_in, n_out)
order followed by its bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .belief import Belief, categorical
from .errors import BadAgentIndex, ParamOutOfRange, ShapeMismatch

__all__ = [
    "SingleAgentArch",
    "MultiAgentArch",
    "LayerSlice",
    "Genome",
    "layer_slices",
    "param_count",
    "init_genome",
    "forward_single",
    "forward_multi",
    "act_single",
    "act_multi",
    "apply_prune",
    "perturb_nonzero",
    "softmax",
    "arch_to_dict",
    "arch_from_dict",
    "genome_to_dict",
    "genome_from_dict",
    "save_genome",
    "load_genome",
    "mask_to_rle",
    "rle_to_mask",
]


@dataclass(frozen=True)
class SingleAgentArch:
    """Belief -> hidden -> hidden -> action logits."""

    n_inputs: int
    n_actions: int
    hidden: tuple = (200, 200)
    activation: str = "tanh"

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_actions < 1:
            raise ParamOutOfRange("n_inputs and n_actions must be positive")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise ParamOutOfRange("hidden must be two positive layer widths")
        if self.activation != "tanh":
            raise ParamOutOfRange(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class MultiAgentArch:
    """Shared extractor plus one branch per agent.

    ``branch_actions[k]`` is the branch output width, the agent's local
    action count plus one trailing no-sensing output.
    """

    n_inputs: int
    branch_actions: tuple
    extractor_hidden: tuple = (300, 300)
    branch_hidden: tuple = (300, 300)
    activation: str = "tanh"

    def __post_init__(self):
        if self.n_inputs < 1:
            raise ParamOutOfRange("n_inputs must be positive")
        if len(self.branch_actions) < 1 or any(b < 2 for b in self.branch_actions):
            raise ParamOutOfRange("each branch needs at least one action plus the idle output")
        if len(self.extractor_hidden) != 2 or len(self.branch_hidden) != 2:
            raise ParamOutOfRange("extractor_hidden and branch_hidden must be pairs")
        if self.activation != "tanh":
            raise ParamOutOfRange(f"unsupported activation {self.activation!r}")

    @property
    def num_agents(self) -> int:
        return len(self.branch_actions)


@dataclass(frozen=True)
class LayerSlice:
    """Addressing for one layer inside the flat genome."""

    name: str
    w: slice
    b: slice
    shape: tuple


def _layer_dims(arch) -> list:
    """(name, n_in, n_out) triples in canonical order."""
    if isinstance(arch, SingleAgentArch):
        h1, h2 = arch.hidden
        return [("l0", arch.n_inputs, h1), ("l1", h1, h2), ("out", h2, arch.n_actions)]
    if isinstance(arch, MultiAgentArch):
        f1, f2 = arch.extractor_hidden
        b1, b2 = arch.branch_hidden
        dims = [("ext0", arch.n_inputs, f1), ("ext1", f1, f2)]
        for k, width in enumerate(arch.branch_actions):
            dims += [(f"br{k}_0", f2, b1), (f"br{k}_1", b1, b2), (f"br{k}_out", b2, width)]
        return dims
    raise ShapeMismatch(f"unknown architecture type {type(arch).__name__}")


@lru_cache(maxsize=64)
def layer_slices(arch) -> tuple:
    """Flat-vector slices for every layer, cached per architecture."""
    out = []
    offset = 0
    for name, n_in, n_out in _layer_dims(arch):
        w = slice(offset, offset + n_in * n_out)
        offset += n_in * n_out
        b = slice(offset, offset + n_out)
        offset += n_out
        out.append(LayerSlice(name, w, b, (n_in, n_out)))
    return tuple(out)


def param_count(arch) -> int:
    return sum((s.w.stop - s.w.start) + (s.b.stop - s.b.start) for s in layer_slices(arch))


@dataclass(frozen=True, eq=False)
class Genome:
    """Flat weights plus mask plus architecture.

    The constructor forces weights to zero wherever the mask is zero, so
    masked positions can never influence the forward pass.
    """

    weights: np.ndarray
    mask: np.ndarray
    arch: object

    def __post_init__(self):
        n = param_count(self.arch)
        weights = np.asarray(self.weights, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.uint8)
        if weights.shape != (n,) or mask.shape != (n,):
            raise ShapeMismatch(f"genome arrays must have shape ({n},), got {weights.shape} and {mask.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ShapeMismatch("mask entries must be 0 or 1")
        weights = np.where(mask == 1, weights, 0.0)
        weights.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "mask", mask)

    @property
    def n_params(self) -> int:
        return len(self.weights)

    def sparsity(self) -> float:
        return 1.0 - float(self.mask.sum()) / self.n_params


def init_genome(arch, rng: np.random.Generator) -> Genome:
    """Fresh dense genome, weights uniform on [-1, 1]."""
    n = param_count(arch)
    return Genome(rng.uniform(-1.0, 1.0, n), np.ones(n, dtype=np.uint8), arch)


def _forward_layers(weights: np.ndarray, slices, x: np.ndarray) -> np.ndarray:
    """Run tanh MLP layers; no activation after the last layer."""
    h = x
    last = len(slices) - 1
    for i, s in enumerate(slices):
        w = weights[s.w].reshape(s.shape)
        h = h @ w + weights[s.b]
        if i != last:
            h = np.tanh(h)
    return h


def forward_single(genome: Genome, x: np.ndarray) -> np.ndarray:
    """Action logits of a single-agent network."""
    arch = genome.arch
    if not isinstance(arch, SingleAgentArch):
        raise ShapeMismatch("forward_single needs a SingleAgentArch genome")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arch.n_inputs,):
        raise ShapeMismatch(f"input shape {x.shape} != ({arch.n_inputs},)")
    return _forward_layers(genome.weights, layer_slices(arch), x)


def forward_multi(genome: Genome, agent: int, x: np.ndarray) -> np.ndarray:
    """Logits of agent ``agent``'s branch, shared extractor included."""
    arch = genome.arch
    if not isinstance(arch, MultiAgentArch):
        raise ShapeMismatch("forward_multi needs a MultiAgentArch genome")
    if not (0 <= agent < arch.num_agents):
        raise BadAgentIndex(f"agent {agent} outside [0, {arch.num_agents})")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arch.n_inputs,):
        raise ShapeMismatch(f"input shape {x.shape} != ({arch.n_inputs},)")
    slices = layer_slices(arch)
    feats = _forward_layers_through(genome.weights, slices[:2], x)
    branch = slices[2 + 3 * agent: 2 + 3 * (agent + 1)]
    return _forward_layers(genome.weights, branch, feats)


def _forward_layers_through(weights, slices, x):
    """Like _forward_layers but with activation after every layer."""
    h = x
    for s in slices:
        w = weights[s.w].reshape(s.shape)
        h = np.tanh(h @ w + weights[s.b])
    return h


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits))
    return z / z.sum()


def _select(logits: np.ndarray, rng, mode: str) -> int:
    if mode == "greedy":
        return int(np.argmax(logits))
    if mode == "stochastic":
        if rng is None:
            raise ParamOutOfRange("stochastic action selection needs an RNG")
        return categorical(rng, softmax(logits))
    raise ParamOutOfRange(f"unknown action mode {mode!r}")


def act_single(genome: Genome, belief: Belief, rng: np.random.Generator | None = None,
               mode: str = "greedy") -> int:
    """Pick an action from the belief. ``stochastic`` samples the softmax
    (used while evolving); ``greedy`` takes the argmax, lowest index on ties
    (used for final evaluation)."""
    return _select(forward_single(genome, belief.probs), rng, mode)


def act_multi(genome: Genome, agent: int, belief: Belief, rng: np.random.Generator | None = None,
              mode: str = "greedy") -> int:
    """Pick agent ``agent``'s local action; the last index means no sensing."""
    return _select(forward_multi(genome, agent, belief.probs), rng, mode)


def apply_prune(genome: Genome, fraction: float) -> Genome:
    """Zero the smallest-magnitude surviving weights, layer by layer.

    Each layer (weight matrix plus its bias, treated as one unit) loses
    ``floor(fraction * nonzero_count)`` of its currently nonzero weights,
    so repeated application compounds. Ties on magnitude resolve to the
    lowest flat index. Already-masked positions never count.
    """
    if not (0.0 < fraction < 1.0):
        raise ParamOutOfRange(f"prune fraction {fraction} outside (0, 1)")
    weights = genome.weights.copy()
    mask = genome.mask.copy()
    for s in layer_slices(genome.arch):
        idx = np.arange(s.w.start, s.b.stop)  # bias sits right after its matrix
        live = idx[mask[idx] == 1]
        n_prune = int(fraction * len(live))
        if n_prune == 0:
            continue
        order = np.argsort(np.abs(weights[live]), kind="stable")
        drop = live[order[:n_prune]]
        weights[drop] = 0.0
        mask[drop] = 0
    return Genome(weights, mask, genome.arch)


def perturb_nonzero(genome: Genome, sigma: float, rng: np.random.Generator) -> Genome:
    """Add N(0, sigma^2) noise to every unmasked weight; masked stay zero."""
    noise = rng.normal(0.0, sigma, genome.n_params) if sigma > 0 else np.zeros(genome.n_params)
    return Genome(genome.weights + noise * genome.mask, genome.mask, genome.arch)


def arch_to_dict(arch) -> dict:
    if isinstance(arch, SingleAgentArch):
        return {"type": "single", "n_inputs": arch.n_inputs, "n_actions": arch.n_actions,
                "hidden": list(arch.hidden), "activation": arch.activation}
    if isinstance(arch, MultiAgentArch):
        return {"type": "multi", "n_inputs": arch.n_inputs,
                "branch_actions": list(arch.branch_actions),
                "extractor_hidden": list(arch.extractor_hidden),
                "branch_hidden": list(arch.branch_hidden), "activation": arch.activation}
    raise ShapeMismatch(f"unknown architecture type {type(arch).__name__}")


def arch_from_dict(d: dict):
    if d.get("type") == "single":
        return SingleAgentArch(d["n_inputs"], d["n_actions"], tuple(d["hidden"]), d.get("activation", "tanh"))
    if d.get("type") == "multi":
        return MultiAgentArch(d["n_inputs"], tuple(d["branch_actions"]),
                              tuple(d["extractor_hidden"]), tuple(d["branch_hidden"]),
                              d.get("activation", "tanh"))
    raise ShapeMismatch(f"unknown architecture dict {d.get('type')!r}")


def mask_to_rle(mask: np.ndarray) -> list:
    """Run lengths of alternating values, first run counting ones.

    [2, 3, 1] decodes to [1, 1, 0, 0, 0, 1]. A leading zero run shows up
    as a first entry of 0.
    """
    mask = np.asarray(mask)
    if len(mask) == 0:
        return []
    changes = np.flatnonzero(np.diff(mask)) + 1
    bounds = np.concatenate([[0], changes, [len(mask)]])
    runs = np.diff(bounds).tolist()
    if mask[0] == 0:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_to_mask(runs: list, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=np.uint8)
    pos = 0
    value = 1
    for r in runs:
        if value == 1:
            mask[pos:pos + r] = 1
        pos += r
        value ^= 1
    if pos != n:
        raise ShapeMismatch(f"run lengths cover {pos} entries, mask needs {n}")
    return mask


def genome_to_dict(genome: Genome) -> dict:
    """JSON document with decimal weights (round-trips float64 exactly)."""
    return {
        "format": "eaht-genome-v1",
        "arch": arch_to_dict(genome.arch),
        "weights": [float(w) for w in genome.weights],
        "mask_rle": mask_to_rle(genome.mask),
    }


def genome_from_dict(d: dict) -> Genome:
    arch = arch_from_dict(d["arch"])
    n = param_count(arch)
    weights = np.asarray(d["weights"], dtype=np.float64)
    mask = rle_to_mask(d["mask_rle"], n)
    return Genome(weights, mask, arch)


def save_genome(genome: Genome, path) -> None:
    Path(path).write_text(json.dumps(genome_to_dict(genome), sort_keys=True))


def load_genome(path) -> Genome:
    return genome_from_dict(json.loads(Path(path).read_text()))
