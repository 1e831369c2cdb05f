import subprocess
import sys

import pytest

import drl.runner as runner
from drl.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main, parse_checks, parse_seed_range
from drl.detection import DetectionResult
from drl.errors import ConfigError


def test_parse_checks():
    assert parse_checks("none") == frozenset()
    assert parse_checks("all") == frozenset(runner.ALL_CHECKS)
    assert parse_checks("safety, liveness") == {"safety", "liveness"}
    with pytest.raises(ConfigError):
        parse_checks("safety,speed")


def test_parse_seed_range():
    assert parse_seed_range("3..5") == range(3, 6)
    assert parse_seed_range("7") == range(7, 8)
    for bad in ("5..3", "x..y", ""):
        with pytest.raises(ConfigError):
            parse_seed_range(bad)


def test_run_then_replay(tmp_path, capsys):
    trace = tmp_path / "r.trace"
    assert main(["run", "--seed", "2", "--steps", "60", "--detect-every", "20", "--trace-out", str(trace)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("seed=2 steps=60")
    assert f"trace: {trace}" in out
    assert main(["replay", "--trace", str(trace)]) == EXIT_OK
    assert "replay: identical" in capsys.readouterr().out


def test_verbose_prints_trace(capsys):
    assert main(["run", "--steps", "20", "--detect-every", "10", "-v"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("# drl-trace 1")


def test_sweep_summary(tmp_path, capsys):
    code = main(["sweep", "--seeds", "0..2", "--steps", "40", "--detect-every", "20", "--trace-dir", str(tmp_path / "t")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "3 runs" in out and "safety: 3/3" in out
    assert len(list((tmp_path / "t").iterdir())) == 3


def test_config_file(tmp_path, capsys):
    conf = tmp_path / "p.conf"
    conf.write_text("mode.batchRelease = true\n")
    assert main(["run", "--steps", "40", "--detect-every", "20", "--config", str(conf)]) == EXIT_OK
    conf.write_text("mode.warp = 9\n")
    assert main(["run", "--steps", "40", "--config", str(conf)]) == EXIT_USAGE


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--check", "bogus"],
        ["run", "--steps", "10", "--detect-every", "50"],
        ["run", "--aggregators", "0"],
        ["sweep", "--seeds", "4..1"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "drl:" in capsys.readouterr().err


def test_corrupt_trace_is_usage_error(tmp_path):
    bad = tmp_path / "bad.trace"
    bad.write_text("garbage\n")
    assert main(["replay", "--trace", str(bad)]) == EXIT_USAGE


def test_failing_check_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(runner, "maximum_finalized_subset", lambda q: DetectionResult(q, frozenset()))
    assert main(["run", "--steps", "60", "--detect-every", "20", "--check", "safety"]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "FAIL safety" in out and "trace:" in out


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "drl", "run", "--steps", "30", "--detect-every", "10", "--check", "none"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "no-checks" in proc.stdout
