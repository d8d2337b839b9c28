import numpy as np
import pytest

from eaht.baselines import (KL_CAP, BaselinePolicy, chernoff_action,
                            chernoff_mixture, ejs_action, kl_divergence,
                            make_baseline, mc_kl_divergence)
from eaht.belief import Belief, DiscreteModel, ErrorThresholds, GaussianModel
from eaht.environments import (BinomialParams, GaussianParams, SensorGridSpec,
                               build_binomial_env, build_gaussian_env)
from eaht.errors import ParamOutOfRange
from eaht.fitness import EpisodeLimits, rollout_with_policy


def single_sensor_env():
    return build_binomial_env(SensorGridSpec(1, 3))


def binary_model(p, q):
    """One action, two hypotheses with observation laws p and q."""
    return DiscreteModel(np.asarray([[p, q]], dtype=np.float64))


def test_kl_discrete_matches_hand_formula():
    model = binary_model([0.8, 0.2], [0.55, 0.45])
    want = 0.8 * np.log(0.8 / 0.55) + 0.2 * np.log(0.2 / 0.45)
    assert kl_divergence(model, 0, 0, 1) == pytest.approx(want, abs=1e-12)
    assert kl_divergence(model, 0, 0, 0) == 0.0


def test_kl_capped_on_support_mismatch():
    model = binary_model([0.5, 0.5], [1.0, 0.0])
    assert kl_divergence(model, 0, 0, 1) == KL_CAP
    # q covers p's support, so this direction stays finite
    assert kl_divergence(model, 0, 1, 0) == pytest.approx(np.log(2.0))


def test_kl_gaussian_closed_form():
    means = np.asarray([[0.0, 1.0]])
    variances = np.asarray([[0.5, 2.0]])
    model = GaussianModel(means, variances)
    want = 0.5 * (np.log(2.0 / 0.5) + (0.5 + 1.0) / 2.0 - 1.0)
    assert kl_divergence(model, 0, 0, 1) == pytest.approx(want, abs=1e-12)
    assert kl_divergence(model, 0, 1, 1) == 0.0


@pytest.mark.parametrize("model", [
    binary_model([0.8, 0.2], [0.55, 0.45]),
    GaussianModel(np.asarray([[0.0, 1.0]]), np.asarray([[0.5, 2.0]])),
])
def test_mc_kl_within_three_standard_errors(model):
    want = kl_divergence(model, 0, 0, 1)
    est, se = mc_kl_divergence(model, 0, 0, 1, np.random.default_rng(0), 20_000)
    assert se > 0
    assert abs(est - want) < 3 * se


def test_chernoff_pure_rule_degenerates_on_sensor_grids():
    # every action touches one sensor, so some rival always matches it exactly
    env = build_binomial_env(SensorGridSpec(2, 3))
    for probs in ([0.4, 0.3, 0.2, 0.1], [0.1, 0.2, 0.3, 0.4], [0.25] * 4):
        assert chernoff_action(Belief(np.asarray(probs)), env.model_legit) == 0


def test_chernoff_mixture_single_sensor_concentrates_on_best_mode():
    env = single_sensor_env()
    d = np.asarray([kl_divergence(env.model_legit, a, 0, 1) for a in range(3)])
    lam = chernoff_mixture(env.model_legit, 0)
    assert lam.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(lam, np.eye(3)[np.argmax(d)], atol=1e-8)


def test_chernoff_mixture_spreads_over_sensors_on_grids():
    env = build_binomial_env(SensorGridSpec(2, 3))
    model = env.model_legit
    lam = chernoff_mixture(model, 0)
    rivals = [x for x in range(model.n_hypotheses) if x != 0]
    d = np.asarray([[kl_divergence(model, a, 0, x) for x in rivals]
                    for a in range(model.n_actions)])
    maximin = (lam @ d).min()
    assert maximin > 0.0                     # the pure rule's value is zero here
    assert d.min(axis=1).max() == 0.0
    assert lam[:3].sum() > 0.0 and lam[3:].sum() > 0.0


def test_chernoff_mixture_uniform_when_game_is_flat():
    table = np.asarray([[[0.5, 0.5], [0.5, 0.5]], [[0.3, 0.7], [0.3, 0.7]]])
    model = DiscreteModel(table)
    np.testing.assert_allclose(chernoff_mixture(model, 0), [0.5, 0.5])


def test_ejs_scores_match_hand_computation():
    table = np.asarray([
        [[0.9, 0.1], [0.2, 0.8]],    # informative action
        [[0.6, 0.4], [0.5, 0.5]],    # weak action
    ])
    model = DiscreteModel(table)
    belief = Belief(np.asarray([0.3, 0.7]))
    # with two hypotheses each rival mixture is just the other row
    def score(a):
        return (0.3 * kl_divergence(model, a, 0, 1)
                + 0.7 * kl_divergence(model, a, 1, 0))
    assert score(0) > score(1)
    assert ejs_action(belief, model) == 0
    flipped = DiscreteModel(table[::-1])
    assert ejs_action(belief, flipped) == 1


def test_ejs_degenerate_belief_returns_first_action():
    model = binary_model([0.8, 0.2], [0.55, 0.45])
    assert ejs_action(Belief(np.asarray([1.0, 0.0])), model) == 0
    assert ejs_action(Belief(np.asarray([0.0, 1.0])), model) == 0


def test_ejs_gaussian_quadrature_matches_closed_form_on_point_mixture():
    from eaht.baselines import _gauss_hermite_kl_to_mixture
    model = GaussianModel(np.asarray([[0.0, 1.0]]), np.asarray([[0.5, 2.0]]))
    want = kl_divergence(model, 0, 0, 1)
    got = _gauss_hermite_kl_to_mixture(model, 0, 0, np.asarray([0.0, 1.0]))
    assert got == pytest.approx(want, abs=1e-8)
    assert _gauss_hermite_kl_to_mixture(model, 0, 0, np.asarray([1.0, 0.0])) == \
        pytest.approx(0.0, abs=1e-10)


def test_ejs_runs_on_gaussian_environments():
    env = build_gaussian_env(SensorGridSpec(1, 3))
    belief = Belief(np.asarray([0.5, 0.5]))
    a = ejs_action(belief, env.model_legit)
    assert 0 <= a < env.n_actions


def test_baseline_policy_validation_and_random():
    env = single_sensor_env()
    with pytest.raises(ParamOutOfRange):
        make_baseline("greedy", env)
    policy = make_baseline("random", env)
    draws = [policy(Belief(np.asarray([0.5, 0.5])), np.random.default_rng(0))
             for _ in range(1)]
    rng = np.random.default_rng(0)
    seq = [policy(Belief(np.asarray([0.5, 0.5])), rng) for _ in range(100)]
    assert all(0 <= a < 3 for a in seq)
    assert len(set(seq)) == 3
    rng2 = np.random.default_rng(0)
    assert seq == [policy(Belief(np.asarray([0.5, 0.5])), rng2) for _ in range(100)]
    assert draws[0] == seq[0]


def test_chernoff_policy_caches_one_mixture_per_map_hypothesis():
    env = single_sensor_env()
    policy = make_baseline("chernoff", env)
    assert policy._mixtures == {}
    rng = np.random.default_rng(1)
    policy(Belief(np.asarray([0.9, 0.1])), rng)
    policy(Belief(np.asarray([0.8, 0.2])), rng)
    assert list(policy._mixtures) == [0]
    policy(Belief(np.asarray([0.1, 0.9])), rng)
    assert sorted(policy._mixtures) == [0, 1]


@pytest.mark.parametrize("name", ["chernoff", "ejs"])
def test_informed_baselines_identify_quickly(name):
    env = single_sensor_env()
    policy = make_baseline(name, env)
    limits = EpisodeLimits(max_horizon=200)
    taus = []
    for s in range(20):
        tr = rollout_with_policy(policy, env, ErrorThresholds(0.1, 0.3), limits,
                                 np.random.default_rng(s))
        taus.append(tr.stop_time)
        assert tr.stop_time < 200
    assert np.mean(taus) < 60
