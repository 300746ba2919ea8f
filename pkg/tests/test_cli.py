import json
import subprocess
import sys

import numpy as np
import pytest

from pinf.cli import emit_csv, emit_json, load_config, main, run


def _write(tmp_path, body, name="run.ini"):
    path = tmp_path / name
    path.write_text(body)
    return path


def _interval(g="two-point 2 1", solver="p = 3", n=100, extra=""):
    return f"""
[domain]
kind = interval
a = -1
b = 1
n_cells = {n}

[data]
g = {g}

[constraint]
alpha = 1

[solver]
{solver}

[output]
directory = out
{extra}"""


def test_solve_writes_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, _interval())
    assert run(cfg, "solve", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "solve_report.json").read_text())
    assert rep["positive_volume"] == pytest.approx(1.0, abs=0.02)
    assert rep["converged"] is True
    lines = (tmp_path / "o" / "u.csv").read_text().splitlines()
    assert lines[0] == "node,x,value" and len(lines) == 102
    assert "energy=" in capsys.readouterr().out


def test_relative_output_directory(tmp_path):
    cfg = _write(tmp_path, _interval())
    assert run(cfg, "solve") == 0
    assert (tmp_path / "out" / "solve_report.json").exists()


def test_negative_datum_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, _interval("constant -1", "schedule = 4 8\nseed = 0"))
    assert run(cfg, "limit", tmp_path / "o") == 2
    assert "NegativeMass" in capsys.readouterr().err


def test_zero_datum_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, _interval("two-point 1 -1"))
    assert run(cfg, "solve", tmp_path / "o") == 2
    assert "ZeroMass" in capsys.readouterr().err


def test_missing_config_exit_4(tmp_path):
    assert run(tmp_path / "nope.ini", "solve") == 4
    assert run(None, "solve") == 4
    assert run(tmp_path / "x.ini", "bogus") == 4


@pytest.mark.parametrize("body", [
    _interval(solver="p = 1.5"),
    _interval(solver="schedule = 8 4"),
    _interval(g="two-point 1"),
    _interval(g="cap-cosine 1 0.5"),
    _interval().replace("alpha = 1", "alpha = 2"),
    _interval().replace("kind = interval", "kind = square"),
    _interval(extra="formats = xml"),
    "[domain]\nkind = interval\n",
])
def test_bad_configs_exit_4(tmp_path, body):
    assert run(_write(tmp_path, body), "solve", tmp_path / "o") == 4


def test_seed_required_for_sampled_checks(tmp_path, capsys):
    cfg = _write(tmp_path, _interval(solver="schedule = 4 8"))
    assert run(cfg, "limit", tmp_path / "o") == 4
    assert "seed" in capsys.readouterr().err


def test_nonconvergence_exit_3(tmp_path):
    cfg = _write(tmp_path, _interval(solver="p = 3\nmax_iter = 1"))
    assert run(cfg, "solve", tmp_path / "o") == 3


def test_unwritable_output_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = _write(tmp_path, _interval())
    assert run(cfg, "solve", blocker / "sub") == 4


def test_limit_artifacts(tmp_path):
    cfg = _write(tmp_path, _interval(solver="schedule = 4 8 16\nseed = 3\n[checks]\nsamples = 20"))
    out = tmp_path / "o"
    assert run(cfg, "limit", out) == 0
    data = json.loads((out / "continuation.json").read_text())
    assert data["schedule"] == [4.0, 8.0, 16.0]
    assert data["maximizer_check"]["samples"] == 20
    for p in ("4", "8", "16"):
        assert (out / f"u_p{p}.csv").exists()
    rows = (out / "convergence.csv").read_text().splitlines()
    assert rows[0] == "p,energy,lipschitz,volume,sup_distance" and len(rows) == 4


def test_transport_artifacts_and_threads(tmp_path, monkeypatch):
    body = _interval(solver="schedule = 4 8 16 32 64 128\nseed = 1\n[checks]\nsamples = 10")
    cfg = _write(tmp_path, body)
    assert run(cfg, "transport", tmp_path / "a") == 0
    monkeypatch.setenv("PINF_THREADS", "3")
    assert run(cfg, "transport", tmp_path / "b") == 0
    for name in ("transport.json", "rays.csv", "nu.csv", "mu.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    data = json.loads((tmp_path / "a" / "transport.json").read_text())
    assert data["nu_total"] == pytest.approx(2.0, rel=0.05)
    monkeypatch.setenv("PINF_THREADS", "zero")
    assert run(cfg, "transport", tmp_path / "c") == 4


def test_symmetrize_artifacts(tmp_path):
    body = """
[domain]
kind = disk
n_r = 8
n_theta = 32

[data]
g = cap-cosine 1 0.5

[constraint]
alpha = 1.2

[solver]
p = 4

[checks]
symmetry_tol = 0.05
"""
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert run(cfg, "symmetrize", out) == 0
    data = json.loads((out / "symmetrize.json").read_text())
    assert data["symmetry"]["passed"] is True
    assert (out / "symmetrize.csv").read_text().startswith("ring,theta,value,value_star")
    cfg2 = _write(tmp_path, _interval(), "i.ini")
    assert run(cfg2, "symmetrize", out) == 4


def test_datum_file(tmp_path):
    (tmp_path / "g.txt").write_text("2\n1\n")
    cfg = _write(tmp_path, _interval("file g.txt"))
    assert load_config(cfg).g_spec == "file g.txt"
    assert run(cfg, "solve", tmp_path / "o") == 0
    (tmp_path / "g.txt").write_text("2\n")
    assert run(cfg, "solve", tmp_path / "o") == 4


def test_determinism(tmp_path):
    cfg = _write(tmp_path, _interval(solver="schedule = 4 8\nseed = 9\n[checks]\nsamples = 15"))
    assert run(cfg, "limit", tmp_path / "a") == 0
    assert run(cfg, "limit", tmp_path / "b") == 0
    data = json.loads((tmp_path / "a" / "continuation.json").read_text())
    assert "Lipschitz" in data["maximizer_check"]["skipped"]
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_emit_formats(tmp_path):
    p = emit_json({"b": 0.1, "a": [1, 2.5], "c": None, "d": float("nan"), "e": np.float64(1 / 3)},
                  tmp_path / "x.json")
    text = p.read_text()
    assert text.index('"b"') < text.index('"a"')
    assert "0.10000000000000001" in text and "0.33333333333333331" in text
    assert json.loads(text)["d"] is None
    c = emit_csv(["x", "note"], [[0.1, "a,b"]], tmp_path / "x.csv")
    assert c.read_bytes() == b'x,note\r\n0.10000000000000001,"a,b"\r\n'


def test_main_and_console_entry(tmp_path):
    cfg = _write(tmp_path, _interval())
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    proc = subprocess.run([sys.executable, "-m", "pinf.cli", "solve", "--config",
                           str(tmp_path / "missing.ini")], capture_output=True, text=True)
    assert proc.returncode == 4
