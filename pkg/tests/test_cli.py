import json

import pytest

from fracdesign.cli import main
from fracdesign.experiment import ExperimentConfig
from fracdesign.state import SystemParams


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_constants(capsys):
    code, doc = run(capsys, "constants", "--hurst", "0.7")
    assert code == 0
    assert doc["kappa"] == pytest.approx(1.4965430649618323, rel=1e-12)
    assert doc["lambda"] == pytest.approx(0.8221151124344066, rel=1e-12)


def test_design_reports_energy(capsys):
    code, doc = run(capsys, "design", "--theta", "1", "--k", "2", "--hurst", "0.6", "--T", "50")
    assert code == 0 and doc["energy"] == pytest.approx(1.0, abs=1e-8)


def test_fisher_modes(capsys):
    code, doc = run(capsys, "fisher", "--mode", "asymptotic", "--theta", "1", "--k", "1", "--T", "10")
    assert code == 0 and doc["rate"] == pytest.approx(16 / 9)
    code, doc = run(capsys, "fisher", "--mode", "fractional", "--theta", "1", "--k", "2", "--T", "20")
    assert code == 0 and 0.5 < doc["rate"] < 1.0


def test_simulate_then_estimate(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    ExperimentConfig(SystemParams(1.0, 2.0, 0.6), 30.0, noise=False).save(cfg)
    rec = tmp_path / "rec.csv"
    code, doc = run(capsys, "simulate", "--config", str(cfg), "--seed", "3", "--out", str(rec))
    assert code == 0 and rec.exists() and doc["points"] > 100
    code, doc = run(capsys, "estimate", "--input", str(rec), "--bracket", "0.2,5")
    assert code == 0 and doc["estimate"] == pytest.approx(1.0, abs=1e-5)


def test_montecarlo(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    ExperimentConfig(SystemParams(1.0, 2.0, 0.6), 10.0).save(cfg)
    out = tmp_path / "mc.csv"
    code, doc = run(capsys, "montecarlo", "--config", str(cfg), "--replications", "4", "--seed", "1",
                    "--out", str(out), "--workers", "2")
    assert code == 0 and doc["summary"]["n"] == 4 and out.exists()


def test_montecarlo_abort_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    ExperimentConfig(SystemParams(1.0, 1.0, 0.6), 10.0, method="two_stage", bracket=(0.1, 0.4)).save(cfg)
    code, doc = run(capsys, "montecarlo", "--config", str(cfg), "--replications", "3",
                    "--out", str(tmp_path / "mc.csv"))
    assert code == 3 and "aborted" in doc


def test_spectral(capsys):
    code, doc = run(capsys, "spectral", "--theta", "1", "--k", "2", "--T", "10", "--n", "64", "--a", "0")
    assert code == 0
    assert doc["residual"] < 1e-10 and doc["case"] == 1
    assert doc["nu1"] <= doc["bound"]


@pytest.mark.parametrize("argv", [
    ["constants", "--hurst", "1.2"],
    ["spectral", "--theta", "1", "--k", "2", "--T", "10", "--n", "64", "--a", "-5"],
    ["estimate", "--input", "/nonexistent/rec.csv"],
    ["estimate", "--input", "x.csv", "--method", "two-stage"],
])
def test_invalid_input_exit_code(capsys, argv):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err
