import csv
import json

import pytest
import yaml

from tfcsr import bench, strategies
from tfcsr.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_SWEEP, main
from tfcsr.config import ConfigError, config_from_dict

SMALL = {
    "benchmark": "synthetic",
    "seed": 42,
    "synthetic": {"class_count": 6, "dim": 2, "per_class": 50, "spread": 0.2, "classes_per_task": 2},
    "network": {"kind": "mlp", "hidden": [16]},
    "strategy": {"method": "tfcsr", "epochs_per_task": 3, "lr": 0.01, "buffer_capacity": 50,
                 "mastery_threshold": 50.0},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_outputs(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", config_file, "--out", str(out), "--dump-buffer"]) == 0
    rows = read_csv(out / "curve.csv")
    assert rows[0] == ["tasks_completed", "avg_accuracy"] and len(rows) == 4
    assert all(len(r[1].split(".")[1]) == 2 for r in rows[1:])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["method"] == "tfcsr"
    assert summary["config"]["strategy"]["buffer_capacity"] == 50
    assert list(summary)[:3] == ["method", "status", "final_accuracy"]
    snaps = json.loads((out / "buffer.json").read_text())
    assert [s["after_task"] for s in snaps] == [0, 1, 2] and snaps[-1]["size"] == 50
    assert b"\r" not in (out / "curve.csv").read_bytes()
    assert json.loads(capsys.readouterr().out)["method"] == "tfcsr"


def test_run_is_reproducible(config_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", config_file, "--out", str(a)])
    main(["run", "--config", config_file, "--out", str(b)])
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    sa, sb = (json.loads((d / "summary.json").read_text()) for d in (a, b))
    sa.pop("wall_time_seconds"), sb.pop("wall_time_seconds")
    assert sa == sb


def test_seed_changes_fingerprint(config_file, tmp_path):
    main(["run", "--config", config_file, "--out", str(tmp_path / "a")])
    main(["run", "--config", config_file, "--out", str(tmp_path / "b"), "--seed", "7"])
    fa, fb = (json.loads((tmp_path / d / "summary.json").read_text())["fingerprint"] for d in "ab")
    assert fa != fb


def test_finetune_counters_zero(config_file, tmp_path):
    out = tmp_path / "ft"
    main(["run", "--config", config_file, "--out", str(out), "--method", "finetune"])
    s = json.loads((out / "summary.json").read_text())
    assert s["replay_batches_total"] == 0 and s["memory_checks_total"] == 0


def test_set_override(config_file, tmp_path):
    out = tmp_path / "o"
    main(["run", "--config", config_file, "--out", str(out), "--set", "strategy.epochs_per_task=1"])
    s = json.loads((out / "summary.json").read_text())
    assert s["per_task_epochs"] == [1, 1, 1]


@pytest.mark.parametrize("raw", [
    {"benchmark": "cifar"},
    {"strategy": {"method": "icarl"}},
    {"strategy": {"bogus": 1}},
    {"network": {"kind": "resnet18"}},
])
def test_bad_config_exit_code(raw, tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_missing_mnist_is_config_error(tmp_path, monkeypatch):
    monkeypatch.delenv("TFCSR_DATA_ROOT", raising=False)
    assert main(["run", "--set", "benchmark=mnist_split", "--out", str(tmp_path / "m")]) == EXIT_CONFIG


def test_numeric_failure_flags_partial_output(config_file, tmp_path, monkeypatch):
    calls = {"n": 0}
    real = strategies.adam_step

    def flaky(model, *a, **kw):
        calls["n"] += 1
        if calls["n"] > 10:
            raise FloatingPointError("injected")
        return real(model, *a, **kw)

    monkeypatch.setattr(strategies, "adam_step", flaky)
    out = tmp_path / "nan"
    assert main(["run", "--config", config_file, "--out", str(out)]) == EXIT_NUMERIC
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "failed" and s["partial"] is True


def test_compare_columns_follow_input_order(config_file, tmp_path, capsys):
    out = tmp_path / "cmp"
    methods = ["si", "finetune", "er", "ewc", "tfcsr"]
    assert main(["compare", "--config", config_file, "--methods", ",".join(methods), "--out", str(out)]) == 0
    rows = read_csv(out / "compare.csv")
    assert rows[0] == ["tasks_completed", *methods] and len(rows) == 4
    md = (out / "compare.md").read_text().splitlines()
    assert [line.split("|")[1].strip() for line in md[2:]] == methods
    for m in methods:
        assert (out / m / "curve.csv").exists()


def test_compare_refuses_protocol_mismatch(tmp_path):
    a = config_from_dict(SMALL)
    other = json.loads(json.dumps(SMALL))
    other["synthetic"]["per_class"] = 60
    with pytest.raises(ConfigError):
        bench.compare([a, config_from_dict(other)], str(tmp_path))


def test_capacity_sweep(config_file, tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", config_file, "--param", "buffer_capacity",
                 "--values", "10,20,40,80", "--out", str(out)])
    assert code == 0
    rows = read_csv(out / "trend.csv")
    assert rows[0] == ["value", "final_accuracy", "memory_checks"]
    assert [r[0] for r in rows[1:]] == ["10", "20", "40", "80"]
    assert (out / "buffer_capacity=40" / "summary.json").exists()


def test_threshold_sweep_all_pass_has_equal_checks(config_file, tmp_path):
    out = tmp_path / "thr"
    main(["sweep", "--config", config_file, "--param", "mastery_threshold", "--values", "0,0.5,1",
          "--out", str(out), "--set", "strategy.epochs_per_task=10"])
    checks = {r[2] for r in read_csv(out / "trend.csv")[1:]}
    assert len(checks) == 1


def test_single_value_sweep_matches_run(config_file, tmp_path):
    main(["run", "--config", config_file, "--out", str(tmp_path / "run")])
    main(["sweep", "--config", config_file, "--param", "buffer_capacity", "--values", "50",
          "--out", str(tmp_path / "sw")])
    run_curve = (tmp_path / "run" / "curve.csv").read_bytes()
    assert (tmp_path / "sw" / "buffer_capacity=50" / "curve.csv").read_bytes() == run_curve
    assert len(read_csv(tmp_path / "sw" / "trend.csv")) == 2


def test_sweep_continues_past_failure(config_file, tmp_path, monkeypatch):
    real = bench.execute_run

    def maybe_fail(cfg, dump_buffer=False):
        if cfg.strategy.buffer_capacity == 20:
            raise FloatingPointError("injected")
        return real(cfg, dump_buffer)

    monkeypatch.setattr(bench, "execute_run", maybe_fail)
    out = tmp_path / "sw"
    code = main(["sweep", "--config", config_file, "--param", "buffer_capacity", "--values", "10,20,40",
                 "--out", str(out)])
    assert code == EXIT_SWEEP
    rows = read_csv(out / "trend.csv")
    assert rows[2] == ["20", "", ""] and rows[1][1] and rows[3][1]
    assert json.loads((out / "sweep_errors.json").read_text())[0]["value"] == 20.0


def test_sweep_values_must_increase(config_file, tmp_path):
    assert main(["sweep", "--config", config_file, "--param", "buffer_capacity", "--values", "50,10",
                 "--out", str(tmp_path / "s")]) == EXIT_CONFIG


def test_parallel_sweep_matches_serial(config_file, tmp_path):
    for jobs, name in [(1, "serial"), (2, "parallel")]:
        main(["sweep", "--config", config_file, "--param", "buffer_capacity", "--values", "10,40",
              "--out", str(tmp_path / name), "--jobs", str(jobs)])
    assert (tmp_path / "serial" / "trend.csv").read_bytes() == (tmp_path / "parallel" / "trend.csv").read_bytes()
