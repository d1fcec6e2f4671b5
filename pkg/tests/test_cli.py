import json
import subprocess
import sys

import pytest

from deltalab.cli import EXIT_ASSERT, EXIT_BUDGET, EXIT_IO, EXIT_OK, EXIT_USAGE, eval_number, run


def _manifest(root):
    (path,) = list(root.glob("*/manifest.json"))
    return path, json.loads(path.read_text())


def _strip(m):
    m = dict(m)
    m.pop("duration_s")
    return m


def test_numbers_accept_pi2_suffix():
    assert eval_number("1.5pi2") == pytest.approx(1.5 * 9.869604401089358)
    assert eval_number("pi2") == pytest.approx(9.869604401089358)
    assert eval_number("14.8") == 14.8


def test_usage_errors(tmp_path, capsys):
    assert run([]) == EXIT_USAGE
    assert run(["no-such-command"]) == EXIT_USAGE
    assert run(["gamma-check", "--L", "x"]) == EXIT_USAGE
    assert run(["gamma-check", "--workers", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("frobnicate = 3\n")
    assert run(["gamma-check", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE


def test_manifest_schema_and_exit_codes(tmp_path):
    ok = run(["gamma-check", "--E", "2pi2", "--L", "1", "--constant", "parseval",
              "--out", str(tmp_path / "a")])
    assert ok == EXIT_OK
    path, m = _manifest(tmp_path / "a")
    assert set(m) == {"cmd", "params", "seed", "version", "duration_s", "files", "assertions"}
    assert m["cmd"] == "gamma-check" and m["seed"] == 0
    assert path.parent.name.startswith("gamma-check-") and len(path.parent.name) == len("gamma-check-") + 10
    for name in m["files"]:
        assert (path.parent / name).exists()
    assert all(set(a) == {"name", "pass", "value", "bound"} for a in m["assertions"])
    # the literal constant fails at a high-energy point
    assert run(["gamma-check", "--E", "19.74", "--L", "4", "--seed", "7",
                "--out", str(tmp_path / "b")]) == EXIT_ASSERT


def test_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["convolution-check", "--L", "2", "--out", str(blocker)]) == EXIT_IO


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("DELTALAB_OUT", str(tmp_path))
    assert run(["projector-bounds", "--trials", "20"]) == EXIT_OK
    assert _manifest(tmp_path)[1]["cmd"] == "projector-bounds"


def test_config_file_equals_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# proxy sizes\nn = 6\ntrials = 12\nT = 0.5,5\n")
    run(["transport-identity", "--config", str(cfg), "--out", str(tmp_path / "c")])
    run(["transport-identity", "--n", "6", "--trials", "12", "--T", "0.5,5",
         "--out", str(tmp_path / "f")])
    a, b = _manifest(tmp_path / "c")[1], _manifest(tmp_path / "f")[1]
    assert a["params"] == b["params"] and a["assertions"] == b["assertions"]


def test_workers_and_replay_are_deterministic(tmp_path):
    argv = ["inverse-decay", "--L", "2", "--count", "3"]
    assert run(argv + ["--out", str(tmp_path / "one")]) == EXIT_OK
    assert run(argv + ["--workers", "4", "--out", str(tmp_path / "four")]) == EXIT_OK
    p1, m1 = _manifest(tmp_path / "one")
    p4, m4 = _manifest(tmp_path / "four")
    assert _strip(m1) == _strip(m4)
    for name in m1["files"]:
        assert (p1.parent / name).read_text() == (p4.parent / name).read_text()
    assert run(["replay", str(p1), "--out", str(tmp_path / "again")]) == EXIT_OK
    _, mr = _manifest(tmp_path / "again")
    assert _strip(mr) == _strip(m1)
    assert run(["replay", str(tmp_path / "missing.json")]) == EXIT_IO


def test_budget_exit(tmp_path):
    code = run(["deloc-lowerbound", "--free", "--T", "2,4", "--L-grid", "2,3",
                "--budget", "0", "--out", str(tmp_path)])
    assert code == EXIT_BUDGET


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "deltalab", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("deltalab ")
