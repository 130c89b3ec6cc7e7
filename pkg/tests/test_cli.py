"""CLI dispatch: subcommands, exit codes, output files, byte-determinism."""

import json

import numpy as np
import pytest

from sflow.cli import cli_dispatch
from sflow.config import config_from_dict

TINY = {
    "matcher": "fm",
    "toy": {"vocab": 5, "seq_len": 2, "n_train": 1000, "seed": 3},
    "training": {"steps": 30, "batch_size": 16},
    "sampler": {"n_steps": 5, "n_samples": 100},
    "seed": 11,
}


@pytest.fixture
def tiny_cfg_path(tmp_path):
    cfg = dict(TINY)
    cfg["output_dir"] = str(tmp_path / "run")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_unknown_flag_exits_2(capsys):
    assert cli_dispatch(["toy-kl", "--bogus"]) == 2
    capsys.readouterr()


def test_unknown_subcommand_exits_2(capsys):
    assert cli_dispatch(["frobnicate"]) == 2
    capsys.readouterr()


def test_missing_config_reports_error(tmp_path, capsys):
    assert cli_dispatch(["toy-kl", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"matchr": "fm"}), encoding="utf-8")
    assert cli_dispatch(["toy-kl", "--config", str(path)]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_toy_kl_writes_report_with_final_kl(tiny_cfg_path, tmp_path, capsys):
    assert cli_dispatch(["toy-kl", "--config", str(tiny_cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "final_kl" in out
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert "final_kl" in report


def test_toy_kl_byte_identical_reports(tiny_cfg_path, tmp_path, capsys):
    assert cli_dispatch(["toy-kl", "--config", str(tiny_cfg_path)]) == 0
    first = (tmp_path / "run" / "report.json").read_bytes()
    assert cli_dispatch(["toy-kl", "--config", str(tiny_cfg_path)]) == 0
    second = (tmp_path / "run" / "report.json").read_bytes()
    assert first == second
    capsys.readouterr()


def test_train_and_sample_pipeline(tiny_cfg_path, tmp_path, capsys):
    assert cli_dispatch(["train-fm", "--config", str(tiny_cfg_path)]) == 0
    capsys.readouterr()
    ckpt = tmp_path / "run" / "checkpoint.bin"
    assert ckpt.exists()
    out_file = tmp_path / "samples.txt"
    assert (
        cli_dispatch(
            ["sample", "--checkpoint", str(ckpt), "-n", "100", "--out", str(out_file)]
        )
        == 0
    )
    lines = out_file.read_text().strip().splitlines()
    assert len(lines) == 100
    for line in lines:
        tokens = [int(v) for v in line.split()]
        assert len(tokens) == 2
        assert all(0 <= v < 5 for v in tokens)


def test_sample_stdout(tiny_cfg_path, tmp_path, capsys):
    cli_dispatch(["train-fm", "--config", str(tiny_cfg_path)])
    capsys.readouterr()
    ckpt = tmp_path / "run" / "checkpoint.bin"
    assert cli_dispatch(["sample", "--checkpoint", str(ckpt), "-n", "7"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 7


def test_guide_runs_and_writes_trace(tiny_cfg_path, tmp_path, capsys):
    cli_dispatch(["train-fm", "--config", str(tiny_cfg_path)])
    capsys.readouterr()
    ckpt = tmp_path / "run" / "checkpoint.bin"
    out_dir = tmp_path / "guided"
    code = cli_dispatch(
        [
            "guide",
            "--checkpoint", str(ckpt),
            "-n", "3",
            "--gamma", "5.0",
            "--candidates", "4",
            "--steps", "5",
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    captured = capsys.readouterr()
    assert len(captured.out.strip().splitlines()) == 3
    trace = (out_dir / "guidance_trace.csv").read_text().splitlines()
    assert trace[0] == "step,t,mean_score,max_score,gamma"
    assert len(trace) == 1 + 5
    assert (out_dir / "guidance_trace.png").exists()


def test_guide_rejects_score_checkpoint(tiny_cfg_path, tmp_path, capsys):
    cfg = dict(TINY)
    cfg["matcher"] = "sm"
    cfg["output_dir"] = str(tmp_path / "sm_run")
    path = tmp_path / "sm.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    cli_dispatch(["train-sm", "--config", str(path)])
    capsys.readouterr()
    code = cli_dispatch(
        ["guide", "--checkpoint", str(tmp_path / "sm_run" / "checkpoint.bin")]
    )
    assert code == 1
    capsys.readouterr()


def test_sample_from_sm_checkpoint(tiny_cfg_path, tmp_path, capsys):
    cfg = dict(TINY)
    cfg["matcher"] = "sm"
    cfg["output_dir"] = str(tmp_path / "sm_run")
    path = tmp_path / "sm.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    assert cli_dispatch(["train-sm", "--config", str(path)]) == 0
    capsys.readouterr()
    ckpt = tmp_path / "sm_run" / "checkpoint.bin"
    assert cli_dispatch(["sample", "--checkpoint", str(ckpt), "-n", "4"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 4
