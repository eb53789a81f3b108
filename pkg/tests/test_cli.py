import json
import shutil

import pytest

from livingmeta import cli
from livingmeta.ledger import Ledger, load_v1_fixture
from conftest import make_csv_export

FAST = ["--chains", "2", "--warmup", "100", "--iterations", "100"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_errors():
    assert run() == cli.EXIT_USAGE
    assert run("fit", "--bogus") == cli.EXIT_USAGE


def test_validate_and_effects(tmp_path, capsys):
    assert run("validate", "--ledger", "v1", "--out", tmp_path) == 0
    assert json.loads(capsys.readouterr().out)["n_participants"] == 3571
    assert json.loads((tmp_path / "prisma.json").read_text())["identified"] == 932
    assert run("effects", "--ledger", "v1", "--out", tmp_path) == 0
    assert len((tmp_path / "effects.csv").read_text().splitlines()) == 28
    assert (tmp_path / "study_effects.csv").read_text().startswith("study_id,g,precision\n")


def test_vcov_defaults(tmp_path):
    assert run("vcov", "--ledger", "v1", "--rho", 0.7, "--phi", 0.8, "--out", tmp_path) == 0
    rows = (tmp_path / "vcov.csv").read_text().splitlines()
    assert len(rows) == 28 and rows[0].startswith("effect_id,")


def test_invalid_ledger_exit_code(tmp_path):
    ledger = load_v1_fixture()
    ledger.studies[0].n_participants = 0
    path = tmp_path / "bad.json"
    ledger.save(path)
    assert run("validate", "--ledger", path, "--out", tmp_path) == cli.EXIT_VALIDATION


def test_gate_ai_role(tmp_path, capsys):
    assert run("gate", "--ledger", "v1", "--moderator", "ai_role", "--out", tmp_path) == 0
    assert "ineligible" in capsys.readouterr().out
    assert json.loads((tmp_path / "gate.json").read_text())["eligible"] is False
    assert run("gate", "--ledger", "v1", "--moderator", "ai_role", "--regress", "--out", tmp_path) \
        == cli.EXIT_VALIDATION


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 9\nchains = 2\nwarmup = 50\niterations = 50  # short\n"
                   "prior_mu = normal(0, 2)\nprior_heterogeneity = half_normal(1)\n")
    assert run("fit", "--ledger", "v1", "--config", cfg, "--out", tmp_path) in (0, cli.EXIT_CONVERGENCE)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["mcmc"]["master_seed"] == 9 and doc["mcmc"]["n_chains"] == 2
    assert doc["priors_text"]["mu"] == "Normal(mean=0, sd=2)"
    assert doc["model"]["prior_tau"]["family"] == "half_normal"


def test_fit_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        run("fit", "--ledger", "v1", "--seed", 42, "--out", out, *FAST)
    assert (a / "draws.csv").read_bytes() == (b / "draws.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_ingest_screen_and_versions(tmp_path, capsys):
    ledger = load_v1_fixture()
    path = tmp_path / "ledger.json"
    ledger.save(path)
    export = tmp_path / "export.csv"
    export.write_text(make_csv_export(3, start=5000, year=2026))
    assert run("ingest", "--ledger", "v1", "--input", export) == cli.EXIT_ERROR

    out = tmp_path / "out"
    assert run("version", "bump", "--ledger", path, "--out", out, "--change", "Search updated.") == 0
    assert "Version 2, 03/26" in capsys.readouterr().out
    assert run("ingest", "--ledger", path, "--input", export, "--out", out) == 0
    rid = Ledger.load(path).records[-1].record_id
    log = tmp_path / "decisions.jsonl"
    assert run("screen", "--ledger", path, "--record", rid, "--stage", "title_abstract",
               "--decision", "exclude", "--log", log, "--out", out) == 0
    assert run("screen", "--ledger", path, "--record", rid, "--stage", "title_abstract",
               "--decision", "include", "--log", log, "--out", out) == cli.EXIT_ERROR
    assert json.loads(log.read_text())["record_id"] == rid

    assert run("version", "diff", "--ledger", path, "--from", 1, "--to", 2, "--out", out) == 0
    assert run("version", "retire", "--ledger", path, "--out", out) == 0
    assert run("version", "bump", "--ledger", path, "--out", out, "--change", "x") == cli.EXIT_ERROR

    snap = next((tmp_path / "snapshots").glob("*.json"))
    snap.write_text("{}")
    assert run("version", "diff", "--ledger", path, "--from", 1, "--to", 2, "--out", out) \
        == cli.EXIT_INTEGRITY


def test_report_needs_artifacts(tmp_path):
    assert run("report", "--ledger", "v1", "--out", tmp_path) == cli.EXIT_VALIDATION


@pytest.mark.slow
def test_full_pipeline_small(tmp_path):
    out = tmp_path / "o"
    cfg = tmp_path / "run.cfg"
    cfg.write_text("rho_grid = 0, 0.9\nphi_grid = 0, 0.9\n")
    args = ["--ledger", "v1", "--seed", 3, "--out", out, "--config", cfg, *FAST]
    assert run("effects", *args) == 0
    assert run("fit", *args) in (0, cli.EXIT_CONVERGENCE)
    assert run("sensitivity", *args) == 0
    assert run("cumulative", *args) == 0
    assert run("report", *args) == 0
    text = (out / "report.md").read_text()
    assert "Version 1, 01/26" in text and "This is the first version." in text
    sens = json.loads((out / "sensitivity.json").read_text())
    assert len(sens["prior"]) == 9 and len(sens["rhophi"]) == 4
    assert len((out / "trajectory.csv").read_text().splitlines()) == 16
