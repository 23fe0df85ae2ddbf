import json
import subprocess
import sys

import numpy as np
import pytest

from ctrltune import cli
from ctrltune.analysis import align_runs, bootstrap_median_band, compare, landscape
from ctrltune.config import ExperimentConfig, apply_overrides, load_config
from ctrltune.params import ConfigError
from ctrltune.runlog import CheckpointError, CsvLog, load_checkpoint, read_curve, save_checkpoint
from ctrltune.tasks import get_task
from ctrltune.zoac import IterationFailure

FAST = ["zoac.iterations=60", "zoac.n_workers=4", "zoac.segments=2", "zoac.segment_length=5",
        "zoac.critic_hidden=[16, 16]", "zoac.critic_epochs=2", "zoac.eval_every=20"]


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out if capsys else ""
    return code, out


@pytest.fixture
def toy_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    args = ["tune", "--out", d / "run", "--set", "task=toy-quadratic", "--set", "seeds=[0, 1]"]
    for s in FAST:
        args += ["--set", s]
    assert run(args) == (0, "")
    return d / "run"


# ----- config -----

def test_unknown_task_lists_valid_tasks():
    with pytest.raises(ConfigError, match="acc-pid.*tracking-mpc"):
        ExperimentConfig.from_dict({"task": "nope"})


def test_unknown_algorithm_field_reports_path():
    with pytest.raises(ConfigError, match=r"zoac\.sigmaa: unknown field"):
        ExperimentConfig.from_dict({"task": "acc-pid", "zoac": {"sigmaa": 0.1}})


def test_bad_values_report_field():
    with pytest.raises(ConfigError, match="zoac"):
        ExperimentConfig.from_dict({"task": "acc-pid", "zoac": {"sigma": 0.0}})
    with pytest.raises(ConfigError, match=r"seeds\[1\]"):
        ExperimentConfig.from_dict({"task": "acc-pid", "seeds": [0, "x"]})
    with pytest.raises(ConfigError, match="colour: unknown key"):
        ExperimentConfig.from_dict({"task": "acc-pid", "colour": 1})
    with pytest.raises(ConfigError, match="params"):
        ExperimentConfig.from_dict({"task": "acc-pid", "params": [{"name": "k", "lower": 1, "upper": 0}]})


def test_overrides_parse_yaml_scalars():
    raw = apply_overrides({"zoac": {"sigma": 0.1}}, ["zoac.sigma=0.2", "seeds=[1, 2]", "scenario.profiles=[sine]"])
    assert raw == {"zoac": {"sigma": 0.2}, "seeds": [1, 2], "scenario": {"profiles": ["sine"]}}
    with pytest.raises(ConfigError):
        apply_overrides({"zoac": 3}, ["zoac.sigma=0.1"])


def test_load_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("task: acc-pid\nmethod: es\nseeds: [3]\nes:\n  iterations: 5\n")
    cfg = load_config(p, ["es.sigma=0.05"])
    algo = cfg.algorithm_config(cfg.build_task(), 3)
    assert (algo.iterations, algo.sigma, algo.seed) == (5, 0.05, 3)


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["tune", "--out", str(tmp_path), "--set", "task=acc-pid", "--set", "zoac.bogus=1"]) == 2
    assert "zoac.bogus" in capsys.readouterr().err


def test_cli_missing_checkpoint_exit_code(tmp_path):
    assert run(["evaluate", tmp_path / "missing.bin"]) == (2, "")


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise IterationFailure("non-finite gradient")

    monkeypatch.setattr(cli, "tune", boom)
    code, _ = run(["tune", "--out", tmp_path, "--set", "task=toy-quadratic"])
    assert code == 3
    summary = json.loads((tmp_path / "seed_0" / "summary.json").read_text())
    assert summary["status"] == "failed"


# ----- tune / evaluate / checkpoint -----

def test_tune_writes_outputs_and_converges(toy_run):
    for s in (0, 1):
        d = toy_run / f"seed_{s}"
        assert {p.name for p in d.iterdir()} >= {"curve.csv", "timing.csv", "summary.json", "checkpoint.bin"}
        assert (d / "curve.csv").read_text().startswith("# schema=ctrltune-curve/1")
        summary = json.loads((d / "summary.json").read_text())
        meta, arrays = load_checkpoint(d / "checkpoint.bin")
        assert meta["seed"] == s and summary["status"] == "ok"
        assert abs(arrays["best_theta"][0] - 0.3) < 0.05
    assert (toy_run / "aggregate.csv").exists()


def test_curve_has_expected_rows(toy_run):
    curve = read_curve(toy_run / "seed_0" / "curve.csv")
    assert list(curve["iteration"]) == list(range(61))
    np.testing.assert_array_equal(curve["env_steps"], 40 * np.arange(61))
    assert np.flatnonzero(~np.isnan(curve["eval_cost_mean"])).tolist() == [0, 20, 40, 60]


def test_runs_are_bit_identical(tmp_path):
    args = ["tune", "--set", "task=toy-quadratic", "--set", "zoac.iterations=8"]
    for s in FAST[1:]:
        args += ["--set", s]
    assert run(args + ["--out", tmp_path / "a"])[0] == 0
    assert run(args + ["--out", tmp_path / "b"])[0] == 0
    a = (tmp_path / "a" / "seed_0" / "curve.csv").read_bytes()
    assert a == (tmp_path / "b" / "seed_0" / "curve.csv").read_bytes()
    assert (tmp_path / "a" / "seed_0" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "seed_0" / "checkpoint.bin").read_bytes()


def test_evaluate_checkpoint(toy_run, capsys, tmp_path):
    dump = tmp_path / "traj.csv"
    code, out = run(["evaluate", toy_run / "seed_0" / "checkpoint.bin", "--episodes", "3", "--dump", dump], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["controller"] == "tuned" and rep["mean_cost"] < 0.0025
    assert len(dump.read_text().splitlines()) == 4


def test_evaluate_nominal_tracking(capsys):
    code, out = run(["evaluate", "--nominal", "--task", "tracking-mpc", "--episodes", "1",
                     "--set", "scenario.episode_length=20"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["controller"] == "nominal" and rep["n_terminated"] == 0
    assert np.isfinite(rep["mean_cost"])


def test_evaluate_nominal_needs_task():
    assert run(["evaluate", "--nominal"]) == (2, "")
    assert run(["evaluate", "--nominal", "--task", "acc-pid"]) == (2, "")


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    save_checkpoint(tmp_path / "c.bin", {"x": 1, "nested": {"y": [1, 2]}}, arrays)
    meta, got = load_checkpoint(tmp_path / "c.bin")
    assert meta == {"x": 1, "nested": {"y": [1, 2]}}
    for k in arrays:
        np.testing.assert_array_equal(got[k], arrays[k])


def test_corrupt_checkpoint_rejected(tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(p, {}, {"a": np.ones(4)})
    data = p.read_bytes()
    p.write_bytes(b"NOTMAGIC" + data[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_csv_log_formats(tmp_path):
    log = CsvLog(tmp_path / "x.csv", ["iteration", "env_steps", "eval_cost_mean"])
    log({"iteration": 0, "env_steps": 0, "eval_cost_mean": 0.1})
    log({"iteration": 1, "env_steps": 10, "eval_cost_mean": None})
    log.close()
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert lines[2:] == ["0,0,0.1", "1,10,"]
    curve = read_curve(tmp_path / "x.csv")
    assert np.isnan(curve["eval_cost_mean"][1])


# ----- landscape -----

def test_landscape_grid_rows(tmp_path, capsys):
    out = tmp_path / "l.csv"
    code, _ = run(["landscape", "--task", "acc-pid", "--param", "K_p", "--grid", "2", "--episodes", "2",
                   "--at", "k=1", "--out", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "K_p,mean_cost,std_cost,n_terminated" and len(lines) == 3


def test_landscape_unknown_param():
    assert run(["landscape", "--task", "acc-pid", "--param", "nope"]) == (2, "")


def test_toy_landscape_argmin():
    task = get_task("toy-quadratic")
    rows = landscape(task, "x", 41, 1, [0.0])
    best = min(rows, key=lambda r: r[1])
    assert abs(best[0] - 0.3) <= 0.025
    assert best[1] == pytest.approx((best[0] - 0.3) ** 2)


def test_landscape_log_dimension_grid():
    task = get_task("tracking-mpc")
    task.scenario = {**task.scenario, "episode_length": 3}
    rows = landscape(task, "r_delta", 3, 1, task.nominal)
    np.testing.assert_allclose([r[0] for r in rows], [1e-6, 1e-2, 1e2])


# ----- compare -----

def curve(steps, costs):
    return {"env_steps": np.asarray(steps, float), "eval_cost_mean": np.asarray(costs, float)}


def test_align_takes_latest_eval_before_budget():
    c = curve([0, 10, 20, 30], [5.0, np.nan, 3.0, 1.0])
    np.testing.assert_array_equal(align_runs([c], [0, 15, 20, 29, 30])[0], [5, 5, 3, 3, 1])


def test_single_seed_band_collapses():
    med, lo, hi = bootstrap_median_band(np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(med, lo)
    np.testing.assert_array_equal(med, hi)


def test_band_contains_median():
    rng = np.random.default_rng(0)
    med, lo, hi = bootstrap_median_band(rng.normal(size=(7, 5)))
    assert np.all(lo <= med) and np.all(med <= hi)


def test_compare_identical_sets():
    runs = [curve([0, 10, 20], [3.0, 2.0, 1.0]), curve([0, 10, 20], [4.0, 2.5, 0.5])]
    budgets, stats = compare({"a": runs, "b": [dict(r) for r in runs]}, points=3)
    np.testing.assert_array_equal(budgets, [0, 10, 20])
    for k in ("median", "lo", "hi"):
        np.testing.assert_array_equal(stats["a"][k], stats["b"][k])
    np.testing.assert_allclose(stats["a"]["median"], [3.5, 2.25, 0.75])


def test_compare_common_prefix(caplog):
    budgets, _ = compare({"a": [curve([0, 10, 20], [3, 2, 1])], "b": [curve([0, 10], [3, 2])]}, points=11)
    assert budgets[-1] == 10
    assert "different env-step counts" in caplog.text


def test_cli_compare(toy_run, tmp_path, capsys):
    out = tmp_path / "cmp.csv"
    code, text = run(["compare", "--run", f"x={toy_run}", "--run", f"y={toy_run}", "--out", out], capsys)
    assert code == 0
    body = json.loads(text[:text.rindex("}") + 1])
    assert body["final_median"]["x"] == body["final_median"]["y"]
    assert run(["compare", "--run", f"x={toy_run}"]) == (2, "")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ctrltune", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "ctrltune" in res.stdout
