import pytest

from feltloom import fixtures
from feltloom.cli import run
from feltloom.config import parse_config
from feltloom.mesh import to_binary_stl
from feltloom.program import parse

SUBCOMMANDS = ["validate", "plan", "emit", "simulate", "calibrate", "report"]


@pytest.fixture(scope="module")
def program_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "cyl.frp"
    assert run(["plan", "--method", "fit", "--model", "fixture:cylinder", "-o", str(path)]) == 0
    return path


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["knit"],
    ["plan", "--model", "fixture:cylinder"],
    ["plan", "--method", "knit", "--model", "fixture:cylinder"],
    ["validate", "fixture:teapot"],
    ["emit", "/nonexistent/x.frp"],
    ["simulate", "-", "--seeds", "1"],
    ["simulate", "-", "--jobs", "0"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert run(argv) == 2
    err = capsys.readouterr().err
    assert err.startswith("usage error")


def test_validate(tmp_path, capsys):
    assert run(["validate", "fixture:fish"]) == 0
    assert capsys.readouterr().out.strip().endswith("ACCEPTED")
    big = tmp_path / "big.stl"
    big.write_bytes(to_binary_stl(fixtures.cylinder(26.0, 76.0)))
    assert run(["validate", str(big)]) == 1
    out = capsys.readouterr().out
    assert "REJECTED" in out and "radius" in out and "height" in out


def test_plan_is_deterministic_and_parses(program_file, capsys):
    assert run(["plan", "--method", "fit", "--model", "fixture:cylinder"]) == 0
    captured = capsys.readouterr()
    assert captured.out == program_file.read_text()
    assert "punches" in captured.err and "total_s" in captured.err
    assert parse(captured.out).commands


def test_emit_is_canonical(program_file, tmp_path, capsys):
    messy = tmp_path / "messy.frp"
    # shorthand numbers are accepted and written back at fixed precision
    messy.write_text(program_file.read_text().replace(".000 ", " ").replace(".00\n", "\n"))
    assert messy.read_text() != program_file.read_text()
    assert run(["emit", str(messy)]) == 0
    assert capsys.readouterr().out == program_file.read_text()


def test_domain_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.frp"
    bad.write_text("FRP 1\nFELT 1000 25\n")
    assert run(["emit", str(bad)]) == 1
    assert "error" in capsys.readouterr().err
    assert run(["plan", "--method", "fit", "--model", "fixture:cylinder", "--ratio", "33"]) == 1
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[nope]\n")
    assert run(["--config", str(cfg), "report", "-"]) == 1


def test_simulate_and_report(program_file, capsys):
    assert run(["simulate", str(program_file)]) == 0
    once = capsys.readouterr().out
    assert run(["simulate", str(program_file)]) == 0
    assert capsys.readouterr().out == once
    assert run(["simulate", str(program_file), "--seeds", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("seed ") == 3 and "volume_spread_cm3" in out
    assert run(["report", str(program_file)]) == 0
    assert "punches" in capsys.readouterr().out


def test_calibrate_output_is_config(capsys):
    assert run(["calibrate"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("[time]") and "# rms relative error" in text
    cfg = parse_config(text)
    assert cfg.models.time.sec_per_punch > 0


def test_config_option_and_env(program_file, tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "slow.ini"
    cfg.write_text("[time]\nsystem_overhead_base = 1000\n")
    monkeypatch.delenv("FELTLOOM_CONFIG", raising=False)
    assert run(["report", str(program_file)]) == 0
    base = capsys.readouterr().out
    assert run(["--config", str(cfg), "report", str(program_file)]) == 0
    slow = capsys.readouterr().out
    monkeypatch.setenv("FELTLOOM_CONFIG", str(cfg))
    assert run(["report", str(program_file)]) == 0
    assert capsys.readouterr().out == slow != base
