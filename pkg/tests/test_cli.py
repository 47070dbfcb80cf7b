import json

import pytest

from modnorm.cli import main, parse_config_file
from modnorm.harness import read_records


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# a comment\n"
        "arch = resmlp\n"
        "width = 16   # inline comment\n"
        'dataset = "synthetic"\n'
        "lr0 = 0.05\n"
        "normed = true\n"
    )
    raw = parse_config_file(str(cfg))
    assert raw == {"arch": "resmlp", "width": "16", "dataset": "synthetic",
                   "lr0": "0.05", "normed": "true"}


def test_train_command_writes_records(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "arch = resmlp\nwidth = 8\ndepth = 1\nd_in = 6\nd_out = 4\n"
        "total_steps = 6\nbatch_size = 8\nn_train = 64\nn_test = 16\n"
    )
    out = tmp_path / "records.csv"
    code = main(["train", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    records = read_records(str(out))
    assert records and records[-1].step == 6
    assert "records" in capsys.readouterr().out


def test_cli_flag_overrides_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("arch = resmlp\nwidth = 8\nd_in = 6\nd_out = 4\n"
                   "total_steps = 4\nbatch_size = 8\nn_train = 64\nn_test = 16\nlr0 = 0.5\n")
    out = tmp_path / "r.csv"
    assert main(["train", "--config", str(cfg), "--set", "lr0=0.25", "--out", str(out)]) == 0
    assert read_records(str(out))[0].lr == 0.25


def test_bad_config_exits_two(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("arch = resmlp\ntotal_steps = 0\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_unknown_key_exits_two(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("arch = resmlp\nwarp_factor = 9\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_sweep_command(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("arch = resmlp\nwidth = 8\nd_in = 6\nd_out = 4\n"
                   "total_steps = 3\nbatch_size = 8\nn_train = 64\nn_test = 16\n")
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--config", str(cfg), "--widths", "8,12",
                 "--lrs", "0.05,0.1", "--out", str(out)])
    assert code == 0
    records = read_records(str(out))
    assert len({r.run_id for r in records}) == 4


def test_norms_command_text_and_json(capsys):
    assert main(["norms", "--arch", "resmlp", "--width", "8", "--depth", "2",
                 "--d-in", "6", "--d-out", "4"]) == 0
    text = capsys.readouterr().out
    assert "spectral" in text and "leaf" in text
    assert main(["norms", "--arch", "gpt", "--width", "12", "--heads", "3",
                 "--context", "6", "--vocab", "11", "--d-out", "11", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["arch"] == "gpt" and payload["leaves"]


def test_sharpness_command(capsys):
    assert main(["sharpness", "--arch", "resmlp", "--width", "8", "--depth", "2",
                 "--d-in", "6", "--d-out", "4", "--error", "square", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["lipschitz"] == pytest.approx(
        payload["sigma"] * payload["alpha"] + payload["tau"]
    )


def test_verify_fast_exits_zero(capsys):
    assert main(["verify", "--fast"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_invalid_arch_flags_exit_two():
    assert main(["norms", "--arch", "gpt", "--width", "10", "--heads", "3"]) == 2
