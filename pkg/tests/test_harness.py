import json
import os

import numpy as np
import pytest

from socpme import cli, harness
from socpme.config import RunConfig, config_hash, parse_config
from socpme.harness import ReportError, load_manifest, path_seed, report, run_ensemble, worker_count
from socpme.observables import Trajectory

FAST = RunConfig(t_end=0.01, n=(49,), paths=3)


def _bodies(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def test_single_path_single_file(tmp_path):
    m = run_ensemble(FAST.with_overrides(paths=1), tmp_path, workers=1)
    assert [p.name for p in tmp_path.glob("*.csv")] == ["path_0000.csv"]
    assert m.entries[0].files == {"transformed": "path_0000.csv"}


def test_both_schemes_two_files(tmp_path):
    run_ensemble(FAST.with_overrides(paths=1, scheme="both"), tmp_path, workers=1)
    assert sorted(p.name for p in tmp_path.glob("*.csv")) == ["path_0000_direct.csv", "path_0000_transformed.csv"]


def test_rerun_is_byte_identical(tmp_path):
    run_ensemble(FAST, tmp_path / "a", workers=1)
    run_ensemble(FAST, tmp_path / "b", workers=1)
    a, b = _bodies(tmp_path / "a"), _bodies(tmp_path / "b")
    assert a == b and len(a) == 3


def test_outputs_independent_of_worker_count(tmp_path):
    run_ensemble(FAST, tmp_path / "serial", workers=1)
    run_ensemble(FAST, tmp_path / "pool", workers=2)
    assert _bodies(tmp_path / "serial") == _bodies(tmp_path / "pool")


def test_failed_path_is_isolated(tmp_path):
    m = run_ensemble(FAST, tmp_path, workers=1, inject_nan=[1])
    status = [e.status for e in m.entries]
    assert status == ["ok", "failed", "ok"]
    assert "PathFailure" in m.entries[1].error
    assert len(list(tmp_path.glob("*.csv"))) == 2


def test_manifest_traceability(tmp_path):
    m = run_ensemble(FAST, tmp_path, workers=1)
    loaded = load_manifest(tmp_path)
    assert loaded.config_hash == config_hash(FAST) == m.config_hash
    assert parse_config(loaded.config_text) == FAST
    listed = {f for e in loaded.entries for f in e.files.values()}
    assert listed == {p.name for p in tmp_path.glob("*.csv")}
    assert [e.seed for e in loaded.entries] == [path_seed(FAST.seed, i) for i in range(3)]
    assert len(set(e.seed for e in loaded.entries)) == 3


def test_report_zero_noise_has_zero_width(tmp_path):
    run_ensemble(FAST.with_overrides(noise_mu=(0.0,)), tmp_path, workers=1)
    row, = report(tmp_path).rows
    q = row["Z_end_quantiles"]
    assert q["min"] == q["max"] == q["median"]


def test_report_deterministic_benchmark(tmp_path):
    run_ensemble(RunConfig(t_end=0.3, noise_mu=(0.0,), paths=2), tmp_path, workers=1)
    row, = report(tmp_path).rows
    assert row["extinction_fraction"] == 1.0
    assert row["ell_estimate"] < 1e-3 * row["Z0"]


def test_report_is_recomputable_from_files(tmp_path):
    m = run_ensemble(FAST, tmp_path, workers=1)
    live = report(m)
    offline = report(tmp_path / "manifest.json")
    assert live.to_jsonl() == offline.to_jsonl()
    z_end = [Trajectory.from_csv(p).Z[-1] for p in sorted(tmp_path.glob("*.csv"))]
    assert offline.rows[0]["Z_end_quantiles"]["median"] == pytest.approx(float(np.median(z_end)), rel=0, abs=0)
    assert "median rho" in offline.table()


def test_report_errors(tmp_path):
    m = run_ensemble(FAST, tmp_path / "bad", workers=1, inject_nan=[0, 1, 2])
    with pytest.raises(ReportError):
        report(m)
    m.entries = []
    with pytest.raises(ReportError):
        report(m)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SOCPME_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("SOCPME_WORKERS", "0")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.delenv("SOCPME_WORKERS")
    assert worker_count() == (os.cpu_count() or 1)


# ---------------------------------------------------------------- CLI


def _write_cfg(tmp_path, text="[run]\nt_end = 0.01\n[grid]\nn = 49\n"):
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    return str(p)


def test_cli_check(tmp_path, capsys):
    assert cli.main(["check", "--config", _write_cfg(tmp_path)]) == 0
    assert cli.main(["check", "--config", _write_cfg(tmp_path, "[model]\nlambda = 1.5\n")]) == 1
    assert "lambda out of (0,1)" in capsys.readouterr().err


def test_cli_simulate_and_report(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SOCPME_WORKERS", "1")
    out = tmp_path / "sim"
    rc = cli.main(["simulate", "--config", _write_cfg(tmp_path), "--seed", "7", "--out", str(out)])
    assert rc == 0
    m = load_manifest(out)
    assert m.entries[0].seed == 7 and (out / "path_0000.csv").exists()
    capsys.readouterr()
    assert cli.main(["report", "--manifest", str(out), "--json"]) == 0
    row = json.loads(capsys.readouterr().out.splitlines()[0])
    assert row["n_ok"] == 1


def test_cli_ensemble_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SOCPME_WORKERS", "1")
    out = tmp_path / "ens"
    rc = cli.main(["ensemble", "--config", _write_cfg(tmp_path), "--paths", "2", "--seed", "3", "--out", str(out),
                   "--set", "model.lambda=0.01"])
    assert rc == 0
    m = load_manifest(out)
    assert len(m.entries) == 2 and m.config.lam == 0.01 and m.master_seed == 3


def test_cli_numerical_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv("SOCPME_WORKERS", "1")
    real = harness.run_ensemble
    monkeypatch.setattr(cli, "run_ensemble", lambda cfg, **kw: real(cfg, inject_nan=[0], **kw))
    rc = cli.main(["ensemble", "--config", _write_cfg(tmp_path), "--paths", "2", "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["simulate", "--config", _write_cfg(tmp_path), "--out", str(blocker / "sub")]) == 3
    assert cli.main(["check", "--config", str(tmp_path / "missing.ini")]) == 3


def test_cli_bad_override_syntax(tmp_path):
    assert cli.main(["check", "--config", _write_cfg(tmp_path), "--set", "novalue"]) == 1
