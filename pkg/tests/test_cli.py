"""Run-lifecycle tests: config validation, artifacts, determinism, resume."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from selfmod.cli import build_dataset, build_model, evaluate, load_config, main
from selfmod.errors import CompatError, ConfigError
from selfmod.nn import read_checkpoint
from selfmod.tasks import gen_sine, write_dataset


def _sine_config(out_dir, q_max=60, seed=0):
    return {
        "family": "sine",
        "seed": seed,
        "out_dir": str(out_dir),
        "generator": {"n_envs": 8, "m_tr": 10, "m_te": 16, "n_adapt": 4},
        "eval_cadence": 20,
        "model": {
            "hidden": [16, 16],
            "activation": "softplus",
            "context": {"kind": "csm", "dim": 3},
        },
        "trainer": {
            "name": "ncf",
            "q_max": q_max,
            "inner_steps": 2,
            "eta_theta": 0.005,
            "eta_xi": 0.005,
            "beta": 0.001,
            "batch_size": 8,
            "pool_size": 2,
            "taylor_order": 1,
        },
        "adapt": {"steps": 150, "optimizer": "adam", "lr": 0.01},
    }


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"family": "sine"}')
    assert main(["train", str(bad)]) == 2
    bad.write_text('{"family": "sine", not json')
    assert main(["train", str(bad)]) == 2


def test_config_error_reports_line(tmp_path):
    cfg = _sine_config(tmp_path / "r")
    cfg["trainer"]["taylor_order"] = 99
    path = _write(tmp_path, cfg)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "taylor_order" in str(err.value)
    assert ":" in str(err.value)  # carries a location hint


def test_unknown_keys_rejected(tmp_path):
    cfg = _sine_config(tmp_path / "r")
    cfg["trainer"]["momentum"] = 0.9
    path = _write(tmp_path, cfg)
    with pytest.raises(ConfigError):
        load_config(path)


def test_run_lifecycle_artifacts(tmp_path):
    run_dir = tmp_path / "run"
    path = _write(tmp_path, _sine_config(run_dir))
    assert main(["train", str(path)]) == 0
    for artifact in ("config.json", "checkpoint.smod", "metrics.csv",
                     "results.json", "predictions.csv"):
        assert (run_dir / artifact).exists()
    results = json.loads((run_dir / "results.json").read_text())
    assert set(results) >= {"ind", "ood", "steps", "seed"}
    assert results["ind"]["n_envs"] == 8
    assert results["ood"]["n_envs"] == 4
    # population std against a two-pass oracle
    vals = np.array(list(map(float, results["ind"]["per_env_mse"].values())))
    assert abs(results["ind"]["std_mse"] - float(vals.std())) < 1e-12


def test_same_seed_identical_results(tmp_path):
    p1 = _write(tmp_path, _sine_config(tmp_path / "a"), "a.json")
    p2 = _write(tmp_path, _sine_config(tmp_path / "b"), "b.json")
    assert main(["train", str(p1)]) == 0
    assert main(["train", str(p2)]) == 0
    ra = json.loads((tmp_path / "a" / "results.json").read_text())
    rb = json.loads((tmp_path / "b" / "results.json").read_text())
    ra.pop("config"), rb.pop("config")
    assert json.dumps(ra, sort_keys=True) == json.dumps(rb, sort_keys=True)


def test_resume_continues_step_counter(tmp_path):
    run_dir = tmp_path / "run"
    cfg = _sine_config(run_dir, q_max=20)
    path = _write(tmp_path, cfg)
    assert main(["train", str(path)]) == 0
    cfg["trainer"]["q_max"] = 40
    path = _write(tmp_path, cfg)
    assert main(["train", str(path), "--resume"]) == 0
    with open(run_dir / "metrics.csv") as fh:
        steps = [int(r["step"]) for r in csv.DictReader(fh)]
    assert steps == list(range(1, len(steps) + 1))
    assert len(steps) == 40 * 2 * 2  # q_max * phases * inner_steps


def test_metrics_wall_time_monotone(tmp_path):
    run_dir = tmp_path / "run"
    path = _write(tmp_path, _sine_config(run_dir, q_max=15))
    assert main(["train", str(path)]) == 0
    with open(run_dir / "metrics.csv") as fh:
        times = [float(r["wall_time_s"]) for r in csv.DictReader(fh)]
    assert all(b >= a for a, b in zip(times, times[1:]))


def test_gen_eval_adapt_roundtrip(tmp_path):
    data_path = tmp_path / "sine.gdyn"
    assert main(["gen", "--family", "sine", "--seed", "3", "--out", str(data_path),
                 "--opts", '{"n_envs": 8, "m_tr": 10, "m_te": 12, "n_adapt": 4}']) == 0
    run_dir = tmp_path / "run"
    cfg = _sine_config(run_dir, q_max=15, seed=3)
    cfg["dataset_path"] = str(data_path)
    cfg.pop("generator")
    path = _write(tmp_path, cfg)
    assert main(["train", str(path)]) == 0
    ckpt = run_dir / "checkpoint.smod"
    assert main(["eval", str(ckpt), str(data_path), "--split", "ind"]) == 0
    assert main(["eval", str(ckpt), str(data_path), "--split", "ood"]) == 0
    assert main(["adapt", str(ckpt), str(data_path), "--steps", "20"]) == 0


def test_eval_family_mismatch(tmp_path):
    run_dir = tmp_path / "run"
    path = _write(tmp_path, _sine_config(run_dir, q_max=5))
    assert main(["train", str(path)]) == 0
    from selfmod.tasks import gen_divergent_series

    other = tmp_path / "other.gdyn"
    write_dataset(other, gen_divergent_series(seed=0, m_tr=2, m_te=2))
    assert main(["eval", str(run_dir / "checkpoint.smod"), str(other)]) == 2


def test_plot_outputs(tmp_path):
    run_dir = tmp_path / "run"
    path = _write(tmp_path, _sine_config(run_dir, q_max=10))
    assert main(["train", str(path)]) == 0
    assert main(["plot", str(run_dir)]) == 0
    for artifact in ("loss_vs_step.csv", "loss_vs_step.svg",
                     "candidate_variance.csv", "candidate_variance.svg"):
        assert (run_dir / artifact).exists()
    # the SVG must be well-formed XML
    import xml.etree.ElementTree as ET

    ET.fromstring((run_dir / "loss_vs_step.svg").read_text())
    with open(run_dir / "candidate_variance.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["variance"]) >= 0.0 for r in rows)
    with open(run_dir / "loss_vs_step.csv") as fh:
        n_loss = len(list(csv.DictReader(fh)))
    with open(run_dir / "metrics.csv") as fh:
        n_metrics = len(list(csv.DictReader(fh)))
    assert n_loss == n_metrics


def test_plot_missing_metrics(tmp_path):
    assert main(["plot", str(tmp_path)]) == 4


def test_checkpoint_carries_run_config(tmp_path):
    run_dir = tmp_path / "run"
    path = _write(tmp_path, _sine_config(run_dir, q_max=5))
    assert main(["train", str(path)]) == 0
    _, meta = read_checkpoint(run_dir / "checkpoint.smod")
    assert meta["run_config"]["family"] == "sine"
    ds = gen_sine(8, 10, 16, seed=0, n_adapt=4)
    frag = evaluate(run_dir / "checkpoint.smod", ds, "ind")
    assert frag["n_envs"] == 8


def test_bench_deterministic(tmp_path):
    assert main(["bench", "--out", str(tmp_path / "b1"), "--seed", "0"]) == 0
    assert main(["bench", "--out", str(tmp_path / "b2"), "--seed", "0"]) == 0
    a = (tmp_path / "b1" / "results.json").read_bytes()
    b = (tmp_path / "b2" / "results.json").read_bytes()
    assert a == b
