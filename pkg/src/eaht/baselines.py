"""Classical one-step sensing heuristics used as comparison policies.

Two information-driven rules and a uniform-random control:

* ``chernoff``: trust the current MAP hypothesis x_hat and play the
  action mixture maximizing the worst-case divergence from x_hat to any
  rival, min over x != x_hat of KL(P[a, x_hat] || P[a, x]). On sensor
  grids the pure argmax degenerates (every action has a blind rival
  sensor, so every min is zero and the argmax freezes on action 0);
  the maximin mixture over actions is the standard fix and is what the
  policy samples from. The pure rule stays available as
  ``chernoff_action`` for inspection.
* ``ejs``: pick the action maximizing the belief-weighted divergence of
  each hypothesis from the mixture of the others,
  sum_x pi(x) KL(P[a, x] || sum_{x' != x} pi(x') P[a, x'] / (1 - pi(x))).
  Once some pi(x) reaches 1 the mixture weights are undefined and the
  score is conventionally zero for every action, so action 0 is played.
* ``random``: uniform over actions.

KL terms where the reference distribution assigns zero mass to a
supported outcome are capped at ``KL_CAP`` nats instead of infinity so
comparisons stay total.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .belief import Belief, DiscreteModel, GaussianModel, categorical, map_decision
from .errors import ParamOutOfRange, ShapeMismatch

__all__ = [
    "KL_CAP",
    "kl_divergence",
    "mc_kl_divergence",
    "chernoff_action",
    "chernoff_mixture",
    "ejs_action",
    "BaselinePolicy",
    "make_baseline",
    "BASELINE_NAMES",
]

KL_CAP = 1e6

BASELINE_NAMES = ("chernoff", "ejs", "random")


def _kl_discrete_rows(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] == 0.0):
        return KL_CAP
    val = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    return min(val, KL_CAP)


def _kl_gauss(m1: float, v1: float, m2: float, v2: float) -> float:
    return float(0.5 * (np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0))


def kl_divergence(model, action: int, x_p: int, x_q: int) -> float:
    """KL(P[action, x_p] || P[action, x_q]) in nats, capped at KL_CAP."""
    if isinstance(model, DiscreteModel):
        return _kl_discrete_rows(model.table[action, x_p], model.table[action, x_q])
    if isinstance(model, GaussianModel):
        return min(_kl_gauss(model.means[action, x_p], model.variances[action, x_p],
                             model.means[action, x_q], model.variances[action, x_q]), KL_CAP)
    raise ShapeMismatch(f"no divergence rule for model type {type(model).__name__}")


def mc_kl_divergence(model, action: int, x_p: int, x_q: int,
                     rng: np.random.Generator, n_samples: int = 10_000) -> tuple:
    """Monte Carlo KL estimate: mean and standard error of the log ratio
    log P[y | action, x_p] - log P[y | action, x_q] under y ~ P[. | action, x_p].

    Infinite ratios (zero reference mass on a sampled outcome) are capped
    at KL_CAP per sample.
    """
    if n_samples < 2:
        raise ParamOutOfRange("n_samples must be >= 2")
    ratios = np.empty(n_samples)
    for i in range(n_samples):
        y = model.sample(action, x_p, rng)
        ll = model.log_likelihood(action, y)
        ratios[i] = min(ll[x_p] - ll[x_q], KL_CAP)
    est = float(ratios.mean())
    se = float(ratios.std(ddof=1) / np.sqrt(n_samples))
    return est, se


def _divergence_matrix(model, x_hat: int) -> np.ndarray:
    """D[a, j] = KL from x_hat to the j-th rival hypothesis under action a."""
    rivals = [x for x in range(model.n_hypotheses) if x != x_hat]
    return np.asarray([[kl_divergence(model, a, x_hat, x) for x in rivals]
                       for a in range(model.n_actions)])


def chernoff_action(belief: Belief, model) -> int:
    """Pure best-action rule: argmax over a of min over rivals of
    KL(P[a, x_hat] || P[a, x]). Ties go to the lowest action index."""
    x_hat = map_decision(belief)
    worst = _divergence_matrix(model, x_hat).min(axis=1)
    return int(np.argmax(worst))


def chernoff_mixture(model, x_hat: int) -> np.ndarray:
    """Maximin action mixture against the rivals of x_hat.

    Solves max over mixtures lam of min over rivals x of
    sum_a lam(a) KL(P[a, x_hat] || P[a, x]) as a linear program. When
    every divergence is zero the game is flat and the uniform mixture is
    returned.
    """
    d = _divergence_matrix(model, x_hat)
    n_actions = d.shape[0]
    if np.all(d == 0.0):
        return np.full(n_actions, 1.0 / n_actions)
    # variables: (lam_0 .. lam_{A-1}, t); maximize t
    c = np.zeros(n_actions + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-d.T, np.ones((d.shape[1], 1))])
    b_ub = np.zeros(d.shape[1])
    a_eq = np.zeros((1, n_actions + 1))
    a_eq[0, :n_actions] = 1.0
    bounds = [(0.0, 1.0)] * n_actions + [(0.0, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=bounds, method="highs")
    if not res.success:
        raise ParamOutOfRange(f"maximin mixture solve failed: {res.message}")
    lam = np.clip(res.x[:n_actions], 0.0, None)
    return lam / lam.sum()


def _gauss_hermite_kl_to_mixture(model: GaussianModel, action: int, x: int,
                                 weights: np.ndarray, nodes: int = 64) -> float:
    """KL(P[a, x] || mixture) for a Gaussian row against a Gaussian mixture,
    by Gauss-Hermite quadrature under P[a, x]."""
    t, w = np.polynomial.hermite.hermgauss(nodes)
    mu = model.means[action, x]
    sd = np.sqrt(model.variances[action, x])
    y = mu + np.sqrt(2.0) * sd * t
    log_p = (-0.5 * np.log(2.0 * np.pi * sd * sd)
             - 0.5 * ((y - mu) / sd) ** 2)
    comp_mu = model.means[action][None, :]
    comp_var = model.variances[action][None, :]
    log_comp = (-0.5 * np.log(2.0 * np.pi * comp_var)
                - 0.5 * (y[:, None] - comp_mu) ** 2 / comp_var)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)[None, :]
    a = log_comp + log_w
    m = a.max(axis=1, keepdims=True)
    log_mix = (m[:, 0] + np.log(np.exp(a - m).sum(axis=1)))
    val = float(np.sum(w * (log_p - log_mix)) / np.sqrt(np.pi))
    return min(max(val, 0.0), KL_CAP)


def _discrete_kl_to_mixture(model: DiscreteModel, action: int, x: int,
                            weights: np.ndarray) -> float:
    p = model.table[action, x]
    q = weights @ model.table[action]
    return _kl_discrete_rows(p, q)


def ejs_action(belief: Belief, model) -> int:
    """Extrinsic Jensen-Shannon rule: argmax over a of
    sum_x pi(x) KL(P[a, x] || mixture of the other rows under pi).

    A degenerate belief (some mass exactly 1) leaves the rival mixture
    undefined; every score is then zero and action 0 is returned. Ties
    go to the lowest action index.
    """
    pi = belief.probs
    if np.any(pi >= 1.0):
        return 0
    n_actions = model.n_actions
    scores = np.zeros(n_actions)
    for a in range(n_actions):
        total = 0.0
        for x in range(model.n_hypotheses):
            if pi[x] == 0.0:
                continue
            weights = pi.copy()
            weights[x] = 0.0
            weights = weights / (1.0 - pi[x])
            if isinstance(model, DiscreteModel):
                total += pi[x] * _discrete_kl_to_mixture(model, a, x, weights)
            elif isinstance(model, GaussianModel):
                total += pi[x] * _gauss_hermite_kl_to_mixture(model, a, x, weights)
            else:
                raise ShapeMismatch(f"no divergence rule for model type {type(model).__name__}")
        scores[a] = total
    return int(np.argmax(scores))


class BaselinePolicy:
    """Callable (belief, rng) -> action for one of the named heuristics.

    The chernoff variant caches one maximin mixture per MAP hypothesis;
    the model is fixed, so a mixture never goes stale.
    """

    def __init__(self, name: str, model):
        if name not in BASELINE_NAMES:
            raise ParamOutOfRange(f"unknown baseline {name!r}, expected one of {BASELINE_NAMES}")
        self.name = name
        self.model = model
        self._mixtures = {}

    def __call__(self, belief: Belief, rng: np.random.Generator) -> int:
        if self.name == "random":
            return int(rng.integers(self.model.n_actions))
        if self.name == "ejs":
            return ejs_action(belief, self.model)
        x_hat = map_decision(belief)
        lam = self._mixtures.get(x_hat)
        if lam is None:
            lam = chernoff_mixture(self.model, x_hat)
            self._mixtures[x_hat] = lam
        return categorical(rng, lam)


def make_baseline(name: str, env) -> BaselinePolicy:
    """Baseline acting on the agent-side observation model of ``env``."""
    return BaselinePolicy(name, env.model_legit)
