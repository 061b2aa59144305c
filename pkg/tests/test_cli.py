"""Command-line interface: config parsing, subcommands, exit codes."""

import csv
import json

import numpy as np
import pytest

from missedthrust.cli import (
    ConfigError, MPS2_TO_KMPS2, _build_model, _build_transcription, main,
)
from missedthrust.dynamics import CircularOrbit, EccentricOrbit


def write_config(path, **over):
    cfg = {
        "model": {"type": "circular", "radius_km": 6871.0,
                  "mean_motion": 1.109e-3},
        "transcription": {
            "x0": [2.0, -1.0, 0.5, 0.0, 0.0, 0.0],
            "n_leader": 2,
            "n_steps": 8,
            "t_flight": 3000.0,
            "t_bounds": [1500.0, 6000.0],
            "u_max_mps2": 5e-2,
        },
        "solver": {"max_outer": 30, "refine_iters": 200},
    }
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.reader(lines))


def test_model_builders():
    circ = _build_model({"model": {"type": "circular", "radius_km": 7000.0,
                                   "mean_motion": 1e-3}})
    assert isinstance(circ, CircularOrbit)
    ecc = _build_model({"model": {"type": "eccentric", "a_km": 7000.0,
                                  "ecc": 0.1, "mu": 398600.4418}})
    assert isinstance(ecc, EccentricOrbit)
    with pytest.raises(ConfigError):
        _build_model({"model": {"type": "parabolic"}})
    with pytest.raises(ConfigError):
        _build_model({})


def test_thrust_unit_conversion(tmp_path):
    cfg = json.loads(write_config(tmp_path / "c.json").read_text())
    tc = _build_transcription(cfg)
    assert tc.u_max == pytest.approx(5e-2 * MPS2_TO_KMPS2)
    assert MPS2_TO_KMPS2 == 1e-3


def test_solve_writes_outputs(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json")
    rc = main(["solve", "--config", str(cfg), "--out", "sol"])
    assert rc == 0
    z = np.load("sol.npz")["z"]
    assert z.ndim == 1 and np.all(np.isfinite(z))
    rows = read_csv("sol.csv")
    assert rows[0][0] == "kind"
    assert sum(r[0] == "leader" for r in rows[1:]) == 3  # n_leader + 1 nodes


def test_certify_exit_codes(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json")
    rc = main(["solve", "--config", str(cfg), "--out", "sol"])
    assert rc == 0
    # the min-fuel solution thrusts hard early: a window inside the
    # first segment yields a positive certificate
    rc = main(["certify", "--config", str(cfg), "--solution", "sol.npz",
               "--tau1", "100.0", "--tau2", "400.0", "--out", "cert"])
    assert rc == 0
    rows = read_csv("cert.csv")
    header, vals = rows[0], rows[1]
    rec = dict(zip(header, vals))
    assert float(rec["dtau_theoretical_s"]) > 0.0
    assert float(rec["dtau_actual_s"]) == pytest.approx(300.0)
    assert rec["certified"] == "True"


def test_check_jacobian(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json")
    rc = main(["check-jacobian", "--config", str(cfg)])
    assert rc == 0
    # an absurd gate forces the audit-failure exit code
    rc = main(["check-jacobian", "--config", str(cfg), "--gate", "1e-30"])
    assert rc == 3


def test_recover_runs(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json")
    main(["solve", "--config", str(cfg), "--out", "sol"])
    rc = main(["recover", "--config", str(cfg), "--solution", "sol.npz"])
    assert rc == 0
    rec = dict(zip(*read_csv("recovery.csv")[:2]))
    assert float(rec["e_min"]) > 0.0
    assert float(rec["ratio"]) > 0.0


def test_bad_configs_exit_2(tmp_path):
    missing = tmp_path / "nope.json"
    assert main(["solve", "--config", str(missing)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{\"model\": {\"type\": \"circular\"}}")
    assert main(["solve", "--config", str(bad)]) == 2
    nosec = write_config(tmp_path / "nosec.json", transcription=None)
    # removing the transcription section entirely
    cfg = json.loads(nosec.read_text())
    del cfg["transcription"]
    nosec.write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(nosec)]) == 2


def test_ensemble_csv(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json")
    rc = main(["ensemble", "--config", str(cfg), "--runs", "2",
               "--out", "ens"])
    assert rc == 0
    rows = read_csv("ens.csv")
    assert rows[0][:2] == ["seed", "status"]
    assert len(rows) == 3
    assert [r[0] for r in rows[1:]] == ["0", "1"]
