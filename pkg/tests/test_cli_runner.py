import json

import pytest

from varplane.cli_runner import (CONSISTENT, INCONSISTENT, SKIPPED, Check, ConfigError, JobConfig,
                                 aggregate_status, default_grid_cap, experiment_seed,
                                 load_config_file, main, parse_range, plan, uniform_points,
                                 validate)


def errors_of(cfg):
    with pytest.raises(ConfigError) as info:
        validate(cfg)
    return dict(info.value.errors)


def test_defaults_filled():
    cfg = validate(JobConfig())
    assert cfg.deltas == (2, 6)
    assert cfg.jrange == (3, 7)
    assert cfg.seed == 0
    assert cfg.grid == default_grid_cap(8.0)


def test_parse_range():
    assert parse_range("2..6") == (2, 6)
    assert parse_range("4") == (4, 4)
    assert parse_range([3, 5]) == (3, 5)


def test_uniform_points_rule():
    assert uniform_points(2.0 ** -10) == 8193
    assert uniform_points(0.5) == 17


def test_fine_delta_rejected_with_point_count():
    errs = errors_of(JobConfig(deltas=(2, 10), grid=128))
    assert "8193" in errs["grid"]


def test_zero_parameter_preset_rejected():
    errs = errors_of(JobConfig(matrix="Ic:0"))
    assert "matrix" in errs


def test_all_errors_reported_together():
    errs = errors_of(JobConfig(matrix="foo", seed=-1, samples=10, command="nope"))
    assert {"matrix", "seed", "samples", "command"} <= set(errs)


def test_fold_needs_rank2_class():
    assert "matrix" in errors_of(JobConfig(command="fold", matrix="E"))
    validate(JobConfig(command="fold", matrix="Ic:2"))


def test_oversized_grid_cap_rejected():
    assert "grid" in errors_of(JobConfig(grid=4096, memory_gib=1.0))


def test_toml_config(tmp_path):
    p = tmp_path / "job.toml"
    p.write_text('command = "classify"\npreset = "NIL:1"\ndeltas = "2..5"\nseed = 7\n')
    data = load_config_file(p)
    assert data == {"command": "classify", "matrix": "NIL:1", "deltas": (2, 5), "seed": 7}
    p.write_text('bogus = 1\n')
    with pytest.raises(ConfigError):
        load_config_file(p)


def test_seed_derivation():
    a = experiment_seed(0, "sublevel")
    assert a == experiment_seed(0, "sublevel")
    assert a != experiment_seed(0, "contrast")
    assert a != experiment_seed(1, "sublevel")
    assert a != experiment_seed(0, "sublevel", batch=1)
    assert 0 <= a < 2 ** 64


def test_aggregate_status():
    ok = Check("a", "x", 1, 1, CONSISTENT)
    bad = Check("b", "x", 1, 2, INCONSISTENT)
    skip = Check("c", "x", None, None, SKIPPED)
    assert aggregate_status([ok, skip]) == 0
    assert aggregate_status([ok, bad]) == 1
    assert aggregate_status([skip]) == 1


def test_plan():
    assert "fold" in plan(validate(JobConfig(matrix="Ic:1")))
    assert "fold" not in plan(validate(JobConfig(matrix="E")))
    assert plan(validate(JobConfig(command="hessian"))) == ["hessian"]


def test_main_bad_config_exit_code(tmp_path, capsys):
    assert main(["classify", "--preset", "Ic:0", "--out", str(tmp_path)]) == 2
    assert "invalid matrix" in capsys.readouterr().err


@pytest.mark.parametrize("cmd,preset", [("classify", "E"), ("hessian", "SYM:2"), ("fold", "Ic:2")])
def test_main_runs_and_writes(tmp_path, cmd, preset):
    out = tmp_path / "o"
    assert main([cmd, "--preset", preset, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["exit_status"] == 0
    assert all(c["verdict"] == CONSISTENT for c in doc["checks"])
    assert (out / "checks.csv").exists() and (out / "summary.txt").exists()


def test_run_subcommand_with_config(tmp_path):
    p = tmp_path / "job.toml"
    out = tmp_path / "o"
    p.write_text(f'command = "classify"\npreset = "I"\nout = "{out}"\n')
    assert main(["run", "--config", str(p)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["config"]["matrix"] == "I"


def test_reruns_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        args = ["sublevel", "--preset", "NIL:1", "--samples", "20000", "--seed", "3",
                "--out", str(out)]
        main(args)
        outs.append(out)
    for name in ("checks.csv", "sublevel.csv"):
        a, b = (o / name for o in outs)
        assert a.read_bytes() == b.read_bytes()
    ra = json.loads((outs[0] / "report.json").read_text())
    rb = json.loads((outs[1] / "report.json").read_text())
    ra["config"].pop("out"), rb["config"].pop("out")
    assert ra == rb
