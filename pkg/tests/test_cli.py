import json

import numpy as np
import pytest

from ksjko import cli
from ksjko.fields import DensityField, GridSpec, read_snapshot, write_snapshot

CONFIG = """
[domain]
cells = 16

[model]
chi = 0.5

[reaction]
alpha = 1.0
beta = 1.0
r = 2.0

[scheme]
tau = {tau}
t_final = 0.05

[init]
preset = uniform

[output]
dir = out
save_every = 1
formats = csv, json
"""


def _write(tmp_path, tau=0.01, extra=""):
    p = tmp_path / "run.ini"
    p.write_text(CONFIG.format(tau=tau) + extra)
    return p


def test_steady_run_exit_0(tmp_path):
    cfg = _write(tmp_path)
    assert cli.main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    rows = (out / "diagnostics.csv").read_text().splitlines()
    assert len(rows) == 7  # header + steps 0..5
    body = [r.split(",") for r in rows[1:]]
    masses = {r[rows[0].split(",").index("mass")] for r in body}
    assert len(masses) == 1
    snaps = sorted((out / "snapshots").glob("rho_*.csv"))
    assert len(snaps) == 6
    assert np.allclose(read_snapshot(snaps[-1]).values, 1.0)
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "completed" and man["steps_completed"] == 5
    assert len(man["config_sha256"]) == 64
    assert man["thresholds"]["chi_star"] > 0
    assert (out / "thresholds.json").exists()


def test_outputs_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = _write(tmp_path)
    cli.main(["run", "--config", str(cfg), "--out", str(a)])
    cli.main(["run", "--config", str(cfg), "--out", str(b)])
    for name in ("diagnostics.csv", "thresholds.json", "snapshots/rho_000005.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    assert ma == mb


def test_threshold_gate_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path, tau=0.5)
    assert cli.main(["run", "--config", str(cfg)]) == 3
    assert not (tmp_path / "out" / "diagnostics.csv").exists()
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "threshold_violation" and man["steps_completed"] == 0


def test_missing_beta_exit_2(tmp_path, capsys):
    p = tmp_path / "run.ini"
    p.write_text(CONFIG.format(tau=0.01).replace("beta = 1.0\n", ""))
    assert cli.main(["run", "--config", str(p)]) == 2
    assert "[reaction].beta" in capsys.readouterr().err


def test_blowup_exit_5(tmp_path, monkeypatch):
    from ksjko import scheme

    real = scheme.SchemeConfig

    def low_sentinel(*a, **kw):
        kw["blowup_factor"] = 1e-3
        return real(*a, **kw)

    monkeypatch.setattr("ksjko.config.SchemeConfig", low_sentinel)
    assert cli.main(["run", "--config", str(_write(tmp_path))]) == 5
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "blowup_sentinel"


def test_solver_failure_exit_4(tmp_path, monkeypatch):
    from ksjko import scheme

    def boom(*a, **kw):
        raise scheme.SolverFailure(1, RuntimeError("no convergence"))

    monkeypatch.setattr(scheme, "run", boom)
    assert cli.main(["run", "--config", str(_write(tmp_path))]) == 4
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "solver_failure"


def test_thresholds_example(capsys):
    args = ["--alpha", "1", "--beta", "2", "--r", "2", "--rho0-linf", "1", "--chi", "1", "--lambda", "1.01"]
    assert cli.main(["thresholds", *args, "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["report"]["chi_star"] == 2.0
    assert data["report"]["chi_star_case"] == "r=2"
    assert cli.main(["chi-star", *args]) == 0
    out = capsys.readouterr().out
    assert "chi_star" in out and "r=2" in out


@pytest.mark.parametrize("bad", [["--r", "1"], ["--beta", "0"], ["--beta", "-1"]])
def test_thresholds_invalid_exit_2(bad, capsys):
    args = {"--alpha": "1", "--beta": "2", "--r": "2", "--rho0-linf": "1"}
    args[bad[0]] = bad[1]
    flat = [x for kv in args.items() for x in kv]
    assert cli.main(["thresholds", *flat]) == 2


def test_thresholds_json_loads_back(capsys):
    from ksjko.config import load_thresholds_json

    cli.main(["thresholds", "--alpha", "1", "--beta", "2", "--r", "2", "--rho0-linf", "1", "--json"])
    F, rep = load_thresholds_json(capsys.readouterr().out)
    assert F.beta == 2.0 and rep.chi_star == 2.0


def test_dist(tmp_path, capsys):
    g = GridSpec.interval(1.0, 32)
    x = g.centers()
    a = DensityField(g, 1 + 0.5 * np.cos(np.pi * x))
    b = DensityField(g, np.ones(32))
    (tmp_path / "a.csv").write_text(write_snapshot(a))
    (tmp_path / "b.csv").write_text(write_snapshot(b))
    vals = {}
    for m in ("w2", "fr", "wfr-ub"):
        assert cli.main(["dist", "--metric", m, "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv")]) == 0
        vals[m] = float(capsys.readouterr().out)
    assert vals["w2"] > 0 and vals["fr"] > 0
    assert vals["wfr-ub"] <= min(vals["w2"], vals["fr"]) + 1e-12
    assert cli.main(["dist", "--a", str(tmp_path / "nope.csv"), "--b", str(tmp_path / "b.csv")]) == 2


def test_bad_arguments_exit_2():
    assert cli.main([]) == 2
    assert cli.main(["validate", "--suite", "nonsense"]) == 2


@pytest.mark.parametrize("suite", ["lemmas", "metrics", "convergence"])
def test_validate_suites_pass(suite, capsys):
    assert cli.main(["validate", "--suite", suite, "--jobs", "2"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
