import numpy as np
import pytest

from eaht.belief import ErrorThresholds
from eaht.environments import SensorGridSpec, build_binomial_env


class StepRng:
    """Deterministic stand-in for a Generator: hands out queued uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, size=None):
        if size is None:
            return self.values.pop(0)
        out = np.asarray([self.values.pop(0) for _ in range(int(np.prod(size)))])
        return out.reshape(size)

    def uniform(self, lo, hi, size=None):
        assert size is None
        v = self.values.pop(0)
        assert lo <= v <= hi, f"queued uniform {v} outside [{lo}, {hi}]"
        return v


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_env():
    return build_binomial_env(SensorGridSpec(2))


@pytest.fixture
def thresholds():
    return ErrorThresholds(0.1, 0.3)


def brute_posterior(prior, table, pairs):
    """Linear-domain joint posterior over a whole action/observation trace."""
    post = np.asarray(prior, dtype=np.float64).copy()
    for action, obs in pairs:
        post = post * table[action, :, obs]
    return post / post.sum()


def idle_multi_genome(arch):
    """Genome whose every branch greedily picks the trailing idle output."""
    from eaht.policy import Genome, layer_slices, param_count

    n = param_count(arch)
    w = np.zeros(n)
    slices = layer_slices(arch)
    for agent in range(arch.num_agents):
        out = slices[2 + 3 * agent + 2]
        bias = np.zeros(arch.branch_actions[agent])
        bias[-1] = 10.0
        w[out.b] = bias
    return Genome(w, np.ones(n, dtype=np.uint8), arch)
