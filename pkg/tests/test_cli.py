import csv
import json
import subprocess
import sys

import pytest

from eaht.cli import main


def write_config(path, **overrides):
    raw = {
        "seed": 3,
        "environment": {"kind": "binomial", "num_sensors": 1, "modes_per_sensor": 2,
                        "flip_legit": [0.15, 0.25], "flip_eve": [0.4, 0.45]},
        "problem": {"legit_threshold": 0.1, "eve_threshold": 0.3, "max_horizon": 12},
        "optimizer": {"pop_size": 4, "generations": 2, "episodes_per_eval": 4,
                      "hidden": [4, 4]},
        "evaluation": {"episodes": 6},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and key in raw:
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    path.write_text(json.dumps(raw))
    return path


def decentralized_config(path, **overrides):
    return write_config(
        path,
        environment={"kind": "binomial", "num_sensors": 2, "modes_per_sensor": 1,
                     "flip_legit": [0.2], "flip_eve": [0.45]},
        problem={"legit_threshold": 0.55, "eve_threshold": 0.3, "max_horizon": 10,
                 "mode": "decentralized", "num_agents": 2},
        optimizer={"pop_size": 4, "generations": 1, "episodes_per_eval": 4,
                   "extractor_hidden": [4, 4], "branch_hidden": [4, 4]},
        **overrides)


def test_missing_required_field_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"environment": {"kind": "binomial", "num_sensors": 1},
                               "problem": {"eve_threshold": 0.3}}))
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "problem.legit_threshold" in capsys.readouterr().err


def test_invalid_json_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{broken")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_out_dir_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "out_dir" in capsys.readouterr().err


def test_missing_genome_file_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    code = main(["eval", "--config", str(cfg), "--genome", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 3
    assert "runtime error" in capsys.readouterr().err


def test_train_outputs_are_seed_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "7",
                     "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    assert (tmp_path / "a" / "best_genome.json").read_bytes() == \
        (tmp_path / "b" / "best_genome.json").read_bytes()
    assert (tmp_path / "a" / "fitness_curve.csv").read_bytes() == \
        (tmp_path / "b" / "fitness_curve.csv").read_bytes()
    with (tmp_path / "a" / "fitness_curve.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["generation", "best_fitness"]
    assert len(rows) == 3                      # two generations
    checkpoints = sorted(p.name for p in (tmp_path / "a" / "checkpoints").glob("*.json"))
    assert checkpoints == ["gen_00000.json", "gen_00001.json"]


def test_train_resume_reuses_finished_run(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    first = (out / "best_genome.json").read_bytes()
    assert main(["train", "--config", str(cfg), "--out", str(out), "--resume"]) == 0
    capsys.readouterr()
    assert (out / "best_genome.json").read_bytes() == first


def test_eval_reports_do_not_depend_on_threads(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    for name, threads in (("t1", "1"), ("t2", "3")):
        assert main(["eval", "--config", str(cfg), "--baseline", "random",
                     "--threads", threads, "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    for fname in ("report.csv", "curve.csv", "freq.csv"):
        assert (tmp_path / "t1" / fname).read_bytes() == \
            (tmp_path / "t2" / fname).read_bytes()
    with (tmp_path / "t1" / "report.csv").open() as fh:
        row = next(csv.DictReader(fh))
    assert row["policy"] == "random"
    assert row["episodes"] == "6"
    assert row["seed"] == "3"


def test_trained_genome_evaluates_and_rejects_wrong_environment(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    genome = out / "best_genome.json"
    assert main(["eval", "--config", str(cfg), "--genome", str(genome),
                 "--out", str(out)]) == 0
    assert (out / "report.csv").exists()
    capsys.readouterr()
    other = write_config(tmp_path / "wider.json",
                         environment={"kind": "binomial", "num_sensors": 2,
                                      "modes_per_sensor": 2,
                                      "flip_legit": [0.15, 0.25],
                                      "flip_eve": [0.4, 0.45]})
    code = main(["eval", "--config", str(other), "--genome", str(genome),
                 "--out", str(tmp_path / "bad")])
    assert code == 2
    err = capsys.readouterr().err
    assert "does not fit" in err and "n_actions" in err


def test_robust_writes_one_report_per_scenario(tmp_path, capsys):
    cfg = decentralized_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    genome = str(out / "best_genome.json")
    assert main(["robust", "--config", str(cfg), "--genome", genome,
                 "--scenario", "mismatch", "--scenario", "loss:0.3",
                 "--episodes", "5", "--out", str(out)]) == 0
    capsys.readouterr()
    for slug in ("mismatch", "loss_0.3"):
        for prefix in ("report", "curve", "freq"):
            assert (out / f"{prefix}_{slug}.csv").exists()
    with (out / "report_loss_0.3.csv").open() as fh:
        assert next(csv.DictReader(fh))["scenario"] == "loss:0.3"


def test_robust_falls_back_to_config_scenarios(tmp_path, capsys):
    cfg = decentralized_config(tmp_path / "c.json",
                               evaluation={"episodes": 5, "scenarios": ["independent"]})
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    genome = str(out / "best_genome.json")
    assert main(["robust", "--config", str(cfg), "--genome", genome,
                 "--out", str(out)]) == 0
    assert (out / "report_independent.csv").exists()
    capsys.readouterr()
    plain = decentralized_config(tmp_path / "plain.json")
    code = main(["robust", "--config", str(plain), "--genome", genome,
                 "--out", str(out)])
    assert code == 2
    assert "no scenarios" in capsys.readouterr().err


def test_robust_rejects_unknown_scenario(tmp_path, capsys):
    cfg = decentralized_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    code = main(["robust", "--config", str(cfg),
                 "--genome", str(out / "best_genome.json"),
                 "--scenario", "blackout", "--out", str(out)])
    assert code == 2
    assert "--scenario" in capsys.readouterr().err


def test_comm_scenario_on_single_agent_genome_is_a_runtime_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    code = main(["robust", "--config", str(cfg),
                 "--genome", str(out / "best_genome.json"),
                 "--scenario", "loss:0.3", "--out", str(out)])
    assert code == 3
    assert "multi-agent" in capsys.readouterr().err


def test_export_eve_line_count_and_determinism(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    for name in ("a", "b"):
        assert main(["export-eve", "--config", str(cfg), "--baseline", "ejs",
                     "--episodes", "8", "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    data = (tmp_path / "a" / "eve_dataset.jsonl").read_bytes()
    assert data == (tmp_path / "b" / "eve_dataset.jsonl").read_bytes()
    lines = data.decode().splitlines()
    assert len(lines) == 8
    rec = json.loads(lines[0])
    assert set(rec) == {"actions", "z", "label"}


def test_prune_pipeline_writes_sparsity_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json",
                       optimizer={"pop_size": 4, "generations": 2,
                                  "episodes_per_eval": 4, "hidden": [4, 4],
                                  "prune": {"fraction": 0.25}})
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "sparsity" in stdout
    for fname in ("pruned_genome.json", "best_genome.json", "sparsity.csv",
                  "fitness_curve.csv", "finetune_curve.csv"):
        assert (out / fname).exists(), fname
    with (out / "sparsity.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[-1]["layer"] == "total"
    assert float(rows[-1]["sparsity"]) > 0.0
    from eaht.policy import load_genome
    pruned = load_genome(out / "pruned_genome.json")
    best = load_genome(out / "best_genome.json")
    assert int(rows[-1]["nonzero"]) == int(pruned.mask.sum()) == int(best.mask.sum())


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    proc = subprocess.run(
        [sys.executable, "-m", "eaht", "eval", "--config", str(cfg),
         "--baseline", "random", "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "random" in proc.stdout
    assert (tmp_path / "out" / "report.csv").exists()


def test_eval_requires_exactly_one_policy_source(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--config", str(cfg), "--genome", "g.json",
              "--baseline", "random", "--out", str(tmp_path / "o")])
    assert exc.value.code == 2
