import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from mapfree.cli import main
from mapfree.config import load_config
from mapfree.core import load_scenario, save_scenario
from mapfree.evaluator import CostModel, save_model
from mapfree.io import format_breakdown, load_trajectories, save_trajectories
from mapfree.pipeline import evaluate_trajectory, sample_scenario
from mapfree.raster import read_pgm
from mapfree.scenarios import empty_road, lead_brake


@pytest.fixture
def short_scenario(tmp_path):
    path = tmp_path / "short.json"
    save_scenario(replace(lead_brake(), name="short", duration=0.5), path)
    return path


def _cfg_hash(out):
    return load_config("default", {"output_dir": str(out)}).hash()


def test_simulate_writes_trace_and_metrics(tmp_path, short_scenario, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(short_scenario), "--out", str(out)]) == 0
    assert "short: collisions=0" in capsys.readouterr().out
    trace = (out / "short.trace.csv").read_text().splitlines()
    assert trace[1] == f"# config_hash={_cfg_hash(out)}"
    assert len(trace) == 3 + 5
    metrics = json.loads((out / "short.metrics.json").read_text())
    assert metrics["config_hash"] == _cfg_hash(out) and metrics["scenario"] == "short"


def test_set_flag_changes_hash(tmp_path, short_scenario):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(short_scenario), "--out", str(out),
                 "--set", "safety.n_reserved=5"]) == 0
    stamped = (out / "short.trace.csv").read_text().splitlines()[1]
    want = load_config("default", {"output_dir": str(out), "safety.n_reserved": 5}).hash()
    assert stamped == f"# config_hash={want}" and want != _cfg_hash(out)


def test_unknown_flag_prints_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--bogus"])
    assert exc.value.code != 0
    assert "usage:" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["simulate", "--scenario", "empty_road", "--out", out, "--set", "safety.n_reserved=0"]) == 3
    assert main(["simulate", "--config", str(tmp_path / "none.json"), "--out", out]) == 3
    assert main(["sample", "--scenario", str(tmp_path / "missing.json"), "--out", out]) == 4
    assert main(["evaluate", "--scenario", "empty_road", "--trajectory", str(tmp_path / "t.json"), "--out", out]) == 4
    (tmp_path / "bad.json").write_text('{"name": "x"}')
    assert main(["sample", "--scenario", str(tmp_path / "bad.json"), "--out", out]) == 1
    err = capsys.readouterr().err
    assert "config error" in err and "missing file" in err


def test_sample_and_evaluate_agree_with_library(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["sample", "--scenario", "empty_road", "--out", str(out)]) == 0
    doc = json.loads((out / "empty_road.candidates.json").read_text())
    cfg = load_config("default", {"output_dir": str(out)})
    assert doc["config_hash"] == cfg.hash()
    assert len(doc["trajectories"]) == len(sample_scenario(empty_road(), cfg))
    capsys.readouterr()

    model = CostModel(np.array([1.0, 2.0, 0.3, 0.7, 0.2, 0.1]))
    save_model(tmp_path / "m.json", model)
    trajs = load_trajectories(out / "empty_road.candidates.json")
    assert main(["evaluate", "--scenario", "empty_road", "--trajectory", str(out / "empty_road.candidates.json"),
                 "--index", "3", "--model", str(tmp_path / "m.json"), "--out", str(out)]) == 0
    want = format_breakdown(evaluate_trajectory(empty_road(), trajs[3], cfg, model))
    assert capsys.readouterr().out == want
    assert (out / "empty_road.breakdown.txt").read_text() == f"# config_hash={cfg.hash()}\n" + want
    assert main(["evaluate", "--scenario", "empty_road", "--trajectory", str(out / "empty_road.candidates.json"),
                 "--index", "100000", "--out", str(out)]) == 1


def test_trajectory_file_forms(tmp_path):
    cands = sample_scenario(empty_road())
    save_trajectories(tmp_path / "t.json", list(cands)[:2], "h")
    back = load_trajectories(tmp_path / "t.json")
    assert len(back) == 2 and np.array_equal(back[1].waypoints, cands[1].waypoints)
    (tmp_path / "one.json").write_text(json.dumps(cands[0].to_dict()))
    assert len(load_trajectories(tmp_path / "one.json")) == 1
    (tmp_path / "junk.json").write_text("{")
    with pytest.raises(ValueError):
        load_trajectories(tmp_path / "junk.json")


def test_export_raster(tmp_path, capsys):
    assert main(["export-raster", "--scenario", "lead_brake", "--out", str(tmp_path)]) == 0
    files = capsys.readouterr().out.split()
    pgms = [f for f in files if f.endswith(".pgm")]
    assert len(pgms) == 5
    assert read_pgm(pgms[0]).shape == (500, 500)


def test_build_expert_db_requires_one_source(tmp_path):
    assert main(["build-expert-db", "--out", str(tmp_path)]) == 1
    assert main(["build-expert-db", "--synthetic", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "expert.db").exists()


def test_metrics_rejects_unknown_combo(tmp_path):
    assert main(["metrics", "--combos", "magic", "--out", str(tmp_path)]) == 1


def test_scenario_file_round_trip(tmp_path, short_scenario):
    sc = load_scenario(short_scenario)
    assert sc.name == "short" and sc.agents[0].id == "lead"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mapfree", "--help"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0 and "simulate" in res.stdout
