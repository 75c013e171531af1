import csv
import io
import json
import shutil
import subprocess

import numpy as np
import pytest

from conftest import config_text
from nlfrag.cli import git_blob_sha1, main, write_atomic


def write_cfg(tmp_path, name="case.cfg", **overrides):
    p = tmp_path / name
    p.write_text(config_text(**overrides))
    return p


def read_csv(path):
    rows = list(csv.reader(path.open()))
    return rows[0], np.array(rows[1:], dtype=float)


def test_run_writes_files(tmp_path):
    cfg = write_cfg(tmp_path, grid__cells=60, run__snapshots="true")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["manifest.json", "moments.csv", "snapshots.csv"]
    header, data = read_csv(out / "moments.csv")
    assert header == ["t", "mu_0", "mu_1", "mu_2", "mu_3"]
    assert data[0, 0] == 0.0 and data[-1, 0] == 0.5
    mu1 = data[:, 2]
    assert np.max(np.abs(mu1 - mu1[0])) / mu1[0] <= 1e-10
    snap_header, snaps = read_csv(out / "snapshots.csv")
    assert snap_header == ["t", "cell", "edge_lo", "edge_hi", "pivot", "density"]
    assert np.all(snaps[:, 5] >= 0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_sha1"] == git_blob_sha1(cfg.read_bytes())
    assert manifest["wall_time_s"] >= 0 and "kernel.kappa" in manifest["config"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, breakage__nu=-0.5, grid__cells=60)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b), "--threads", "4"]) == 0
    assert (a / "moments.csv").read_bytes() == (b / "moments.csv").read_bytes()


def test_full_precision_output(tmp_path):
    cfg = write_cfg(tmp_path, grid__cells=40)
    main(["run", "--config", str(cfg), "--out", str(tmp_path)])
    line = (tmp_path / "moments.csv").read_text().splitlines()[2]
    assert all(float(f"{float(v):.17g}") == float(v) for v in line.split(","))


def test_validate_passes_on_nu0(tmp_path, capsys):
    cfg = write_cfg(tmp_path, kernel__sigma1=0.5, kernel__sigma2=0.5, grid__cells=80, run__T=1,
                    run__output_every=0.1)
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["all_passed"]
    assert report["horizon"]["name"] == "T_gamma_sigma" and report["horizon"]["value"] == "inf"
    for rec in report["checks"]:
        assert {"name", "anchor", "bound", "observed", "tolerance", "verdict"} <= set(rec)
    out = capsys.readouterr().out
    assert out.startswith("T_gamma_sigma = inf")
    assert "FAIL" not in out


def test_validate_self_test_fails(tmp_path):
    cfg = write_cfg(tmp_path, kernel__sigma1=0.5, kernel__sigma2=0.5, grid__cells=60, run__T=1)
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path), "--self-test"]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["self_test"] and not report["all_passed"]


def test_validate_reports_finite_horizon(tmp_path):
    cfg = write_cfg(tmp_path, breakage__nu=-0.5, grid__cells=60)
    main(["validate", "--config", str(cfg), "--out", str(tmp_path)])
    line = json.loads((tmp_path / "report.json").read_text())["horizon"]
    assert line["regime"].startswith("finite")
    assert float(line["value"]) == pytest.approx(1.0, rel=1e-6)


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, kernel__sigma1=1.0, kernel__sigma2=1.0, breakage__nu=-1.2)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "σ₁ ≠ 1 required" in err and "(-1, 0]" in err


def test_probe_blowup_flag(tmp_path):
    cfg = write_cfg(tmp_path, breakage__nu=-0.5, grid__cells=40, run__T=2)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text(cfg.read_text() + "run.blowup_factor = 8\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--probe-blowup"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["stop_reason"] == "blowup"
    assert manifest["stop_time"] < 1.0


def constants_rows(capsys, *args):
    assert main(["constants", *args]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["name", "value", "anchor"]
    return {r[0]: float(r[1]) for r in rows[1:]}


def test_constants_command(capsys):
    rows = constants_rows(capsys, "--nu", "0", "--m", "2")
    assert rows["γ"] == 2.0
    assert rows["ϰ_2"] == pytest.approx(1 / 3, rel=1e-15)
    assert constants_rows(capsys, "--nu", "-0.4", "--sigma1", "0.5")["ν_σ₁"] == pytest.approx(-0.292893, abs=1e-6)
    assert constants_rows(capsys, "--nu", "0", "--alpha", "0.5")["L_−α"] == 4.0


def test_constants_rejects_bad_nu(capsys):
    assert main(["constants", "--nu", "-1.5"]) == 2


def test_oracle_command(tmp_path):
    cfg = write_cfg(tmp_path, breakage__nu=-0.5, grid__cells=60)
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "oracle_moments.csv")
    assert header[:2] == ["t", "mu_0"]
    mu0 = data[:, 1]
    np.testing.assert_allclose(mu0, mu0[0] / (1 - mu0[0] * data[:, 0]), rtol=1e-9)


def test_oracle_command_needs_constant_kernel(tmp_path):
    cfg = write_cfg(tmp_path, kernel__sigma2=0.5, grid__cells=40)
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_converge_command(tmp_path):
    cfg = write_cfg(tmp_path, kernel__sigma1=0.2, kernel__sigma2=0.5, grid__cells=64, run__rtol=1e-7)
    assert main(["converge", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "convergence.csv")
    assert list(data[:, 0]) == [16, 32, 64]
    assert np.all(np.diff(data[:, 1]) < 0)


def test_write_atomic_replaces(tmp_path):
    p = tmp_path / "x.txt"
    write_atomic(p, "one")
    write_atomic(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in tmp_path.iterdir()] == ["x.txt"]


def test_blob_hash_matches_git():
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


@pytest.mark.skipif(shutil.which("nlfrag") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["nlfrag", "constants", "--nu", "0", "--m", "2"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "ϰ_2,0.3333333333333333," in proc.stdout
