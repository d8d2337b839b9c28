"""Finite hypothesis spaces, Bayesian belief filtering, MAP decisions.

A belief is a posterior distribution over a finite hypothesis set,
maintained by an agent that chooses sensing actions and receives noisy
observations. Updates multiply the prior by the observation likelihood
and renormalize. All accumulation happens in log domain with max
subtraction so that long traces and near-zero likelihoods cannot
underflow; entries whose scaled weight underflows to zero simply stay
at zero mass.

Ties in the MAP decision resolve to the lowest hypothesis index, which
keeps every downstream statistic deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroLikelihood

__all__ = [
    "HypothesisSpace",
    "Belief",
    "ErrorThresholds",
    "DiscreteModel",
    "GaussianModel",
    "update_belief",
    "update_belief_multi",
    "map_error",
    "map_decision",
    "should_stop",
    "categorical",
]


def categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector via inverse CDF."""
    c = np.cumsum(probs)
    i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(i, len(probs) - 1)


@dataclass(frozen=True, eq=False)
class HypothesisSpace:
    """A finite set of hypotheses with a prior distribution.

    ``count`` must be at least 2; the prior must be a proper distribution
    over exactly ``count`` entries.
    """

    count: int
    prior: np.ndarray

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=np.float64).copy()
        if self.count < 2:
            raise ShapeMismatch(f"need at least 2 hypotheses, got {self.count}")
        if prior.shape != (self.count,):
            raise ShapeMismatch(f"prior shape {prior.shape} != ({self.count},)")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ShapeMismatch("prior must be a probability distribution")
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)

    @classmethod
    def uniform(cls, count: int) -> "HypothesisSpace":
        return cls(count, np.full(count, 1.0 / count))


@dataclass(frozen=True, eq=False)
class Belief:
    """A normalized posterior over hypotheses.

    Construction validates: entries nonnegative, no NaN, sum within 1e-9
    of one. Instances are immutable; updates return new beliefs.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or len(probs) < 2:
            raise ShapeMismatch("belief must be a 1-d vector with >= 2 entries")
        if np.any(np.isnan(probs)) or np.any(probs < 0):
            raise ShapeMismatch("belief entries must be nonnegative and finite")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ShapeMismatch(f"belief sums to {probs.sum()!r}, not 1")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)

    @classmethod
    def from_prior(cls, hyp: HypothesisSpace) -> "Belief":
        return cls(hyp.prior)


@dataclass(frozen=True)
class ErrorThresholds:
    """Target error levels: ``legit`` for the agent side, ``eve`` for the
    eavesdropper side. Both must lie strictly inside (0, 1)."""

    legit: float
    eve: float

    def __post_init__(self):
        for name, v in (("legit", self.legit), ("eve", self.eve)):
            if not (0.0 < v < 1.0):
                raise ShapeMismatch(f"threshold {name}={v} outside (0, 1)")


class DiscreteModel:
    """Conditional observation law with a finite observation alphabet.

    ``table[a, x, y]`` is the probability of observing ``y`` after taking
    action ``a`` when hypothesis ``x`` is true. Every (a, x) row must sum
    to one. Log-likelihoods and sampling CDFs are precomputed.
    """

    kind = "discrete"

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 3:
            raise ShapeMismatch(f"table must be (actions, hypotheses, observations), got {table.shape}")
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=2) - 1.0) > 1e-9):
            raise ShapeMismatch("each (action, hypothesis) row must be a distribution")
        self.table = table
        self.table.setflags(write=False)
        with np.errstate(divide="ignore"):
            self._log_table = np.log(table)
        self._cum = np.cumsum(table, axis=2)

    @property
    def n_actions(self) -> int:
        return self.table.shape[0]

    @property
    def n_hypotheses(self) -> int:
        return self.table.shape[1]

    @property
    def n_observations(self) -> int:
        return self.table.shape[2]

    def log_likelihood(self, action: int, obs) -> np.ndarray:
        """log P[obs | action, x] for every hypothesis x; -inf where zero."""
        return self._log_table[action, :, int(obs)]

    def sample(self, action: int, hypothesis: int, rng: np.random.Generator) -> int:
        c = self._cum[action, hypothesis]
        i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        return min(i, self.n_observations - 1)


class GaussianModel:
    """Gaussian observation law: y ~ N(means[a, x], variances[a, x]).

    ``variances`` may be given per action only; it is broadcast across
    hypotheses. Log-densities are finite for every real observation.
    """

    kind = "gaussian"

    def __init__(self, means: np.ndarray, variances: np.ndarray):
        means = np.asarray(means, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        if means.ndim != 2:
            raise ShapeMismatch(f"means must be (actions, hypotheses), got {means.shape}")
        if variances.ndim == 1:
            variances = np.broadcast_to(variances[:, None], means.shape).copy()
        if variances.shape != means.shape:
            raise ShapeMismatch(f"variances shape {variances.shape} != means shape {means.shape}")
        if np.any(variances <= 0):
            raise ShapeMismatch("variances must be positive")
        self.means = means
        self.variances = variances
        self.means.setflags(write=False)
        self.variances.setflags(write=False)
        self._log_norm = -0.5 * np.log(2.0 * np.pi * variances)

    @property
    def n_actions(self) -> int:
        return self.means.shape[0]

    @property
    def n_hypotheses(self) -> int:
        return self.means.shape[1]

    def log_likelihood(self, action: int, obs) -> np.ndarray:
        d = float(obs) - self.means[action]
        return self._log_norm[action] - 0.5 * d * d / self.variances[action]

    def sample(self, action: int, hypothesis: int, rng: np.random.Generator) -> float:
        m = self.means[action, hypothesis]
        s = np.sqrt(self.variances[action, hypothesis])
        return float(rng.normal(m, s))


def _posterior_from_logweights(logw: np.ndarray) -> Belief:
    m = np.max(logw)
    if not np.isfinite(m):
        raise ZeroLikelihood("observation has zero likelihood under every supported hypothesis")
    w = np.exp(logw - m)
    return Belief(w / w.sum())


def update_belief(belief: Belief, model, action: int, obs) -> Belief:
    """One Bayes step: posterior(x) proportional to belief(x) * P[obs | action, x].

    Raises ZeroLikelihood when the normalizer is exactly zero.
    """
    if model.n_hypotheses != len(belief):
        raise ShapeMismatch(f"model has {model.n_hypotheses} hypotheses, belief has {len(belief)}")
    with np.errstate(divide="ignore"):
        logw = np.log(belief.probs) + model.log_likelihood(action, obs)
    return _posterior_from_logweights(logw)


def update_belief_multi(belief: Belief, model, pairs) -> Belief:
    """Batch Bayes step over an iterable of (action, obs) pairs.

    Log-likelihoods for all pairs are accumulated before a single
    normalization, so the result matches a sequential chain of
    single-pair updates and does not depend on pair order. An empty
    iterable returns the input belief unchanged.
    """
    pairs = list(pairs)
    if not pairs:
        return belief
    if model.n_hypotheses != len(belief):
        raise ShapeMismatch(f"model has {model.n_hypotheses} hypotheses, belief has {len(belief)}")
    with np.errstate(divide="ignore"):
        logw = np.log(belief.probs)
        for action, obs in pairs:
            logw = logw + model.log_likelihood(action, obs)
    return _posterior_from_logweights(logw)


def map_error(belief: Belief) -> float:
    """Probability that the MAP decision is wrong: 1 - max_x belief(x)."""
    return float(1.0 - np.max(belief.probs))


def map_decision(belief: Belief) -> int:
    """Index of the most probable hypothesis; ties go to the lowest index."""
    return int(np.argmax(belief.probs))


def should_stop(belief: Belief, thresholds: ErrorThresholds) -> bool:
    """True once the agent-side MAP error is strictly below the target."""
    return map_error(belief) < thresholds.legit
