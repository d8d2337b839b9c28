import csv
import json

import numpy as np
import pytest

from eaht.belief import ErrorThresholds
from eaht.environments import (BinomialParams, KernelMismatchSpec, SensorGridSpec,
                               build_binomial_env)
from eaht.errors import ParamOutOfRange, ShapeMismatch
from eaht.fitness import CommSpec, EpisodeLimits
from eaht.harness import (CURVE_COLUMNS, FREQ_COLUMNS, REPORT_COLUMNS,
                          SWEEP_COLUMNS, EvalReport, IndependentScenario,
                          MessageLossScenario, MismatchScenario, SweepSpec,
                          action_frequency, apply_scenario, collect_traces,
                          evaluate_policy, parse_scenario, robustness_suite,
                          sweep, sweep_cv, write_curve_csv, write_freq_csv,
                          write_report_csv, write_sweep_csv)
from eaht.policy import (Genome, MultiAgentArch, SingleAgentArch, init_genome,
                         layer_slices, param_count)

from conftest import idle_multi_genome

MULTI = MultiAgentArch(4, (4, 4), extractor_hidden=(6, 6), branch_hidden=(6, 6))
THR = ErrorThresholds(0.1, 0.3)


def grid_env(sensors=2, modes=3, flip=0.2, seed=0):
    return build_binomial_env(SensorGridSpec(sensors, modes),
                              BinomialParams((flip,) * modes, (0.45,) * modes), seed)


def single_action_genome(favored: int, n_hyps: int, n_actions: int) -> Genome:
    arch = SingleAgentArch(n_hyps, n_actions, hidden=(2, 2))
    n = param_count(arch)
    w = np.zeros(n)
    out = layer_slices(arch)[2]
    bias = np.zeros(n_actions)
    bias[favored] = 10.0
    w[out.b] = bias
    return Genome(w, np.ones(n, dtype=np.uint8), arch)


def _stub_report(mean_tau: float) -> EvalReport:
    return EvalReport(
        policy="stub", scenario="nominal", episodes=1, seed=0, legit_error=0.05,
        mean_final_error_legit=0.04, eve_error_min=0.4, eve_peak_mean=0.5,
        mean_tau=mean_tau, cv_tau=0.0, agent_stop_means=(mean_tau,),
        legit_ok=True, eve_ok=True, legit_curve=np.asarray([0.1]),
        eve_curve=np.asarray([0.4]), mode_frequency={"1": 1.0, "none": 0.0})


def test_reports_are_bitwise_deterministic_for_any_thread_count():
    env = grid_env()
    genome = init_genome(MULTI, np.random.default_rng(2))
    limits = EpisodeLimits(max_horizon=40)
    kw = dict(n_episodes=24, seed=9)
    a = evaluate_policy(genome, env, THR, limits, **kw)
    b = evaluate_policy(genome, env, THR, limits, **kw)
    c = evaluate_policy(genome, env, THR, limits, threads=3, **kw)
    for other in (b, c):
        assert a.row() == other.row()
        np.testing.assert_array_equal(a.eve_curve, other.eve_curve)
        np.testing.assert_array_equal(a.legit_curve, other.legit_curve)
        assert a.mode_frequency == other.mode_frequency


def test_near_noiseless_sensor_gives_one_step_identification():
    env = build_binomial_env(SensorGridSpec(1, 1), BinomialParams((1e-9,), (0.45,)))
    report = evaluate_policy("random", env, ErrorThresholds(0.1, 0.3),
                             EpisodeLimits(max_horizon=50), 40, 3)
    assert report.legit_error == 0.0
    assert report.mean_tau == 1.0
    assert report.agent_stop_means == (1.0,)
    assert report.legit_ok
    assert report.policy == "random"
    assert len(report.eve_curve) == 1


def test_idle_policy_keeps_exact_uniform_posterior():
    env = grid_env()
    genome = idle_multi_genome(MULTI)
    limits = EpisodeLimits(max_horizon=15)
    report = evaluate_policy(genome, env, THR, limits, 20, 5)
    assert report.mean_final_error_legit == 1.0 - 1.0 / env.n_hypotheses
    assert report.mean_tau == 15.0
    assert report.agent_stop_means == (15.0, 15.0)
    assert report.eve_error_min == 1.0 - 1.0 / env.n_hypotheses
    assert not report.legit_ok
    assert report.eve_ok
    assert report.mode_frequency["none"] == 1.0


def test_random_baseline_error_matches_flip_rate_within_three_se():
    p = 0.3
    env = build_binomial_env(SensorGridSpec(1, 1), BinomialParams((p,), (0.45,)))
    n = 2000
    report = evaluate_policy("random", env, ErrorThresholds(0.5, 0.3),
                             EpisodeLimits(max_horizon=10), n, 11)
    # one observation decides; the decision is wrong exactly when it flipped
    assert report.mean_tau == 1.0
    se = np.sqrt(p * (1 - p) / n)
    assert abs(report.legit_error - p) < 3 * se


def test_action_frequency_single_mode_policy():
    env = build_binomial_env(SensorGridSpec(1, 3))
    genome = single_action_genome(1, env.n_hypotheses, env.n_actions)
    traces = collect_traces(genome, env, THR, EpisodeLimits(max_horizon=30), 10, 4)
    freq = action_frequency(traces)
    assert freq["2"] == 1.0
    assert freq["1"] == freq["3"] == freq["none"] == 0.0
    assert sum(freq.values()) == pytest.approx(1.0)


def test_action_frequency_requires_mode_table():
    from eaht.fitness import EpisodeTrace, StepRecord
    tr = EpisodeTrace(0, [StepRecord(1, (0,), (0,), (0,), (0.1,), 0.5, 0.5)],
                      1, (1,), (0,), 0.5, action_modes=None)
    with pytest.raises(ShapeMismatch):
        action_frequency([tr])


def test_curves_freeze_after_episode_end():
    env = build_binomial_env(SensorGridSpec(1, 1), BinomialParams((0.25,), (0.45,)))
    limits = EpisodeLimits(max_horizon=60)
    traces = collect_traces("random", env, ErrorThresholds(0.05, 0.3), limits, 50, 7)
    lengths = {len(tr.steps) for tr in traces}
    assert len(lengths) > 1        # mixed stopping times actually exercised
    t_max = max(lengths)
    want_eve = np.zeros(t_max)
    want_legit = np.zeros(t_max)
    for tr in traces:
        ev = [s.eve_error for s in tr.steps]
        lg = [float(np.mean(s.errors_legit)) for s in tr.steps]
        ev += [ev[-1]] * (t_max - len(ev))
        lg += [lg[-1]] * (t_max - len(lg))
        want_eve += ev
        want_legit += lg
    report = evaluate_policy("random", env, ErrorThresholds(0.05, 0.3), limits, 50, 7)
    np.testing.assert_allclose(report.eve_curve, want_eve / 50, atol=1e-15)
    np.testing.assert_allclose(report.legit_curve, want_legit / 50, atol=1e-15)
    assert report.eve_error_min == report.eve_curve.min()


def test_apply_scenario_mappings():
    env = grid_env()
    comm = CommSpec()
    env2, comm2 = apply_scenario(MessageLossScenario(0.0), env, comm)
    assert env2 is env and comm2.topology == "fully_connected"
    _, comm3 = apply_scenario(MessageLossScenario(0.25), env, comm)
    assert comm3.topology == "lossy" and comm3.loss_rate == 0.25
    _, comm4 = apply_scenario(IndependentScenario(), env, comm)
    assert comm4.topology == "independent"
    ident = KernelMismatchSpec((1.0, 1.0), (1.0, 1.0))
    env5, _ = apply_scenario(MismatchScenario(ident), env, comm)
    assert env5 is env
    env6, _ = apply_scenario(MismatchScenario(), env, comm)
    assert env6 is not env
    with pytest.raises(ParamOutOfRange):
        apply_scenario("loss", env, comm)


def test_parse_scenario_spellings():
    assert isinstance(parse_scenario("mismatch"), MismatchScenario)
    assert isinstance(parse_scenario("independent"), IndependentScenario)
    s = parse_scenario("loss:0.4")
    assert isinstance(s, MessageLossScenario) and s.loss_rate == 0.4
    assert s.name == "loss:0.4"
    with pytest.raises(ParamOutOfRange):
        parse_scenario("loss:abc")
    with pytest.raises(ParamOutOfRange):
        parse_scenario("gaussian-drift")


def test_comm_scenarios_reject_single_agent_genomes():
    env = build_binomial_env(SensorGridSpec(1, 3))
    genome = single_action_genome(0, env.n_hypotheses, env.n_actions)
    limits = EpisodeLimits(max_horizon=20)
    with pytest.raises(ShapeMismatch):
        robustness_suite(genome, MessageLossScenario(0.3), env, THR, limits, 5, 1)
    with pytest.raises(ShapeMismatch):
        robustness_suite(genome, IndependentScenario(), env, THR, limits, 5, 1)
    report = robustness_suite(genome, MismatchScenario(), env, THR, limits, 5, 1)
    assert report.scenario == "mismatch"


def test_zero_loss_scenario_matches_nominal_bitwise():
    env = grid_env()
    genome = init_genome(MULTI, np.random.default_rng(6))
    limits = EpisodeLimits(max_horizon=30)
    nominal = evaluate_policy(genome, env, THR, limits, 16, 13)
    scenario = robustness_suite(genome, MessageLossScenario(0.0), env, THR,
                                limits, 16, 13)
    assert scenario.scenario == "loss:0"
    assert scenario.legit_error == nominal.legit_error
    assert scenario.mean_tau == nominal.mean_tau
    np.testing.assert_array_equal(scenario.eve_curve, nominal.eve_curve)


def test_sweep_persists_cells_and_resumes_without_rerunning(tmp_path):
    calls = []

    def run_cell(value, seed):
        calls.append((value, seed))
        return _stub_report(mean_tau=10.0 * value + seed)

    spec = SweepSpec("mutation_prob", (0.2, 0.6), seeds=2)
    rows = sweep(spec, run_cell, tmp_path)
    assert len(calls) == 4 and len(rows) == 4
    assert [(r["value"], r["seed"]) for r in rows] == \
        [(0.2, 0), (0.2, 1), (0.6, 0), (0.6, 1)]
    files = sorted(p.name for p in tmp_path.glob("cell_*.json"))
    assert files == ["cell_mutation_prob_0.2_s0.json", "cell_mutation_prob_0.2_s1.json",
                     "cell_mutation_prob_0.6_s0.json", "cell_mutation_prob_0.6_s1.json"]
    again = sweep(spec, run_cell, tmp_path, resume=True)
    assert len(calls) == 4           # nothing re-ran
    assert [r["mean_tau"] for r in again] == [r["mean_tau"] for r in rows]
    # without resume, cells are recomputed
    sweep(spec, run_cell, tmp_path)
    assert len(calls) == 8
    payload = json.loads((tmp_path / files[0]).read_text())
    assert payload["mean_tau"] == 2.0


def test_sweep_cv_matches_hand_rule():
    rows = [
        {"value": 0.2, "mean_tau": 10.0}, {"value": 0.2, "mean_tau": 10.0},
        {"value": 0.6, "mean_tau": 8.0}, {"value": 0.6, "mean_tau": 12.0},
    ]
    cv = sweep_cv(rows)
    assert cv[0.2] == 0.0
    want = np.std([8.0, 12.0], ddof=1) / 10.0
    assert cv[0.6] == pytest.approx(want)
    assert sweep_cv([{"value": 1, "mean_tau": 5.0}]) == {1: 0.0}


def test_sweep_spec_validation():
    with pytest.raises(ParamOutOfRange):
        SweepSpec("x", ())
    with pytest.raises(ParamOutOfRange):
        SweepSpec("x", (1,), seeds=0)


def test_collect_traces_validation():
    env = grid_env()
    with pytest.raises(ParamOutOfRange):
        collect_traces("random", env, THR, EpisodeLimits(), 0, 1)
    with pytest.raises(ParamOutOfRange):
        collect_traces("greedy", env, THR, EpisodeLimits(), 5, 1)


def test_csv_written_columns_round_trip(tmp_path):
    env = build_binomial_env(SensorGridSpec(1, 3))
    report = evaluate_policy("ejs", env, THR, EpisodeLimits(max_horizon=60), 12, 21)
    write_report_csv([report], tmp_path / "report.csv")
    with (tmp_path / "report.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == REPORT_COLUMNS
    assert float(rows[0]["legit_error"]) == report.legit_error
    assert float(rows[0]["mean_tau"]) == report.mean_tau
    assert rows[0]["policy"] == "ejs" and rows[0]["scenario"] == "nominal"
    assert [float(v) for v in rows[0]["agent_stop_means"].split(";")] == \
        list(report.agent_stop_means)

    write_curve_csv(report, tmp_path / "curve.csv")
    with (tmp_path / "curve.csv").open() as fh:
        curve_rows = list(csv.reader(fh))
    assert curve_rows[0] == CURVE_COLUMNS
    assert len(curve_rows) - 1 == len(report.eve_curve)
    assert int(curve_rows[1][0]) == 1
    assert float(curve_rows[1][2]) == report.eve_curve[0]

    write_freq_csv(report, tmp_path / "freq.csv")
    with (tmp_path / "freq.csv").open() as fh:
        freq_rows = list(csv.reader(fh))
    assert freq_rows[0] == FREQ_COLUMNS
    assert sorted(r[0] for r in freq_rows[1:]) == sorted(report.mode_frequency)
    got = {r[0]: float(r[1]) for r in freq_rows[1:]}
    assert got == report.mode_frequency

    rows = [{"param": "x", "value": 0.2, "seed": 0, "legit_error": 0.1,
             "eve_error_min": 0.4, "eve_peak_mean": 0.5, "mean_tau": 9.0,
             "cv_tau": 0.2, "legit_ok": True, "eve_ok": False}]
    write_sweep_csv(rows, tmp_path / "sweep.csv")
    with (tmp_path / "sweep.csv").open() as fh:
        sweep_rows = list(csv.DictReader(fh))
    assert list(sweep_rows[0]) == SWEEP_COLUMNS
    assert sweep_rows[0]["legit_ok"] == "1" and sweep_rows[0]["eve_ok"] == "0"
    assert float(sweep_rows[0]["mean_tau"]) == 9.0
