import json
import os

import numpy as np
import pytest

from vflow import cli, parallel
from vflow.config import DESK_PRESET, RunConfig, parse_assignment, resolve, to_dict
from vflow.errors import ConfigError, NumericError

TINY = ["--set", "pretrain.dataset_size=20", "--set", "pretrain.epochs=1",
        "--set", "loop.k_max=2", "--set", "loop.n_epochs=1", "--set", "loop.m=4",
        "--set", "loop.stage_samples=32", "--set", "loop.final_samples=10",
        "--set", "loop.fno_epochs=1", "--set", "loop.es_samples=4",
        "--set", "fno.width=8", "--set", "fno.modes=4", "--set", "fno.proj_hidden=8",
        "--set", "vf.latent=4", "--set", "vf.prior_layers=2", "--set", "vf.decoder_depth=1",
        "--set", "vf.decoder_hidden=8", "--set", "vf.subnet_hidden=8", "--d", "8",
        "--set", "threads=1"]


def run(args):
    return cli.main([str(a) for a in args])


# configuration

def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError, match="loop.k_maks"):
        resolve({"loop": {"k_maks": 3}})


def test_precedence_flags_over_file_over_preset():
    assert resolve().loop.k_max == DESK_PRESET["loop"]["k_max"]
    assert resolve({"loop": {"k_max": 4}}).loop.k_max == 4
    assert resolve({"loop": {"k_max": 4}}, {"loop": {"k_max": 6}}).loop.k_max == 6
    assert resolve({"scale": "paper"}).loop.k_max == RunConfig().loop.k_max


def test_config_round_trips():
    cfg = resolve({"problem": "darcy2d", "delta": 0.05})
    assert resolve(to_dict(cfg)) == cfg


def test_parse_assignment():
    assert parse_assignment("loop.k_max=5") == {"loop": {"k_max": 5}}
    assert parse_assignment("output_dir=runs/a") == {"output_dir": "runs/a"}
    with pytest.raises(ConfigError):
        parse_assignment("loop.k_max")


def test_dataset_size_flag_reaches_config():
    args = cli.build_parser().parse_args(["pretrain", "--dataset-size", "50"])
    assert cli.config_from_args(args).pretrain.dataset_size == 50


# exit codes

def test_usage_error_exit_code(capsys):
    assert run(["invert", "--method", "nope"]) == cli.EXIT_USAGE
    assert run(["invert", "--set", "loop.bogus=1"]) == cli.EXIT_USAGE
    assert "bogus" in capsys.readouterr().err


def test_missing_config_file_is_io_error(tmp_path):
    assert run(["invert", "--config", tmp_path / "absent.json"]) == cli.EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["pretrain", "--output-dir", blocker / "sub", *TINY]) == cli.EXIT_IO


def test_numeric_failure_exit_code(monkeypatch, tmp_path):
    def boom(cfg):
        raise NumericError("loss diverged")

    monkeypatch.setitem(cli.COMMANDS, "invert", boom)
    assert run(["invert", "--output-dir", tmp_path]) == cli.EXIT_NUMERIC


# commands

def test_pretrain_is_deterministic_and_creates_dirs(tmp_path):
    a, b = tmp_path / "a" / "deep", tmp_path / "b"
    assert run(["pretrain", "--output-dir", a, *TINY]) == 0
    assert run(["pretrain", "--output-dir", b, *TINY]) == 0
    for name in ("fno.vfpar", "dataset.vfgrid", "pretrain_loss.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta = json.loads((a / "dataset.json").read_text())
    assert meta["count"] == 20


def test_invert_with_checkpoint_and_replay(tmp_path, capsys):
    assert run(["pretrain", "--output-dir", tmp_path / "pre", *TINY]) == 0
    out = tmp_path / "inv"
    assert run(["invert", "--output-dir", out, "--pretrained", tmp_path / "pre" / "fno.vfpar",
                *TINY]) == 0
    for name in ("stage_log.csv", "samples.csv", "mu_post.csv", "report.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "invert"
    capsys.readouterr()
    assert run(["replay", out / "manifest.json", "--output-dir", tmp_path / "again"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.endswith("identical") for line in lines)


def test_metrics_aggregates_reports(tmp_path):
    for rep, e in enumerate((0.1, 0.3)):
        d = tmp_path / f"r{rep}"
        d.mkdir()
        (d / "report.csv").write_text(
            "problem,method,d,delta,repeat,e_I,e_S_final,stages_run,converged\n"
            f"darcy1d,ours,32,0.01,{rep},{e},0.01,3,true\n")
    out = tmp_path / "summary.csv"
    assert run(["metrics", tmp_path / "r0", tmp_path / "r1", "--output", out]) == 0
    header, row = out.read_text().splitlines()
    assert row.startswith("darcy1d,ours,32,0.01,2,0.2")


def test_rosenbrock_writes_20000_rows(tmp_path):
    out = tmp_path / "ros"
    code = run(["rosenbrock", "--method", "uki", "--output-dir", out,
                "--set", "rosenbrock.uki_iters=5", "--set", "rosenbrock.mcmc_walkers=200",
                "--set", "rosenbrock.mcmc_burn=10", "--set", "rosenbrock.mcmc_steps=100"])
    assert code == 0
    lines = (out / "samples.csv").read_text().splitlines()
    assert lines[0] == "xi_1,xi_2" and len(lines) == 20001
    assert len((out / "coverage.csv").read_text().splitlines()) == 3


# threads

def test_thread_count_fallbacks(monkeypatch, caplog):
    monkeypatch.setenv("VFLOW_THREADS", "3")
    assert parallel.default_threads() == 3
    monkeypatch.setenv("VFLOW_THREADS", "many")
    assert parallel.default_threads() == (os.cpu_count() or 1)
    assert "ignoring VFLOW_THREADS" in caplog.text
    monkeypatch.delenv("VFLOW_THREADS")
    assert parallel.default_threads() == (os.cpu_count() or 1)


def test_pmap_keeps_order():
    parallel.set_threads(4)
    try:
        assert parallel.pmap(lambda x: x * x, range(20)) == [x * x for x in range(20)]
    finally:
        parallel.set_threads(1)


def test_thread_count_does_not_change_results():
    from vflow.forward import InverseProblem, ProblemSpec
    problem = InverseProblem(ProblemSpec("darcy1d", 8, 0.01, None, 0, surrogate_grid=128))
    xi = np.random.default_rng(0).normal(size=(6, 8))
    parallel.set_threads(1)
    one = problem.exact_states(xi)
    parallel.set_threads(3)
    try:
        three = problem.exact_states(xi)
    finally:
        parallel.set_threads(1)
    np.testing.assert_array_equal(one, three)
