import csv
import filecmp

import pytest

from ricciharnack.cli import SUBCOMMANDS, main, run_experiment
from ricciharnack.config import OUT_ENV, from_dict

# fixed A: 16/32 calibration pairs are pre-asymptotic and are refused
SMALL = '[geometry]\nresolution = 32\n[flow]\nT = 0.3\ndt = 0.005\n[checks]\npairs = 10\nseed = 3\ntolerance = 5000.0\n'


@pytest.fixture()
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return str(path)


def _checks(out):
    with open(out / "checks.csv") as fh:
        return list(csv.DictReader(fh))


def test_report_runs_every_check_once(tmp_path, small_config):
    out = tmp_path / "out"
    assert main(["report", "--config", small_config, "--resolution", "64", "--out", str(out)]) == 0
    rows = _checks(out)
    keys = [(r["group"], r["name"]) for r in rows]
    assert len(keys) == len(set(keys))
    assert {r["group"] for r in rows} == {"identities", "harnack", "ratio", "localize"}
    assert all(r["status"] in ("pass", "report", "skip") for r in rows)
    summary = (out / "summary.txt").read_text()
    assert "overall: PASS" in summary and "tolerance record:" in summary


def test_outputs_deterministic(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["harnack", "--config", small_config, "--out", str(a)])
    main(["harnack", "--config", small_config, "--out", str(b)])
    csvs = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".json"))
    match, mismatch, errors = filecmp.cmpfiles(a, b, csvs, shallow=False)
    assert mismatch == [] and errors == []


def test_single_check_subcommand(tmp_path, small_config):
    out = tmp_path / "o"
    assert main(["localize", "--config", small_config, "--out", str(out)]) == 0
    assert {r["group"] for r in _checks(out)} == {"localize"}
    assert SUBCOMMANDS["verify-identities"] == ("identities",)


def test_sphere_identities_report_dR_line(tmp_path):
    cfg = from_dict(
        {
            "geometry": {"family": "sphere", "resolution": 64},
            "flow": {"T": 0.2, "dt": 0.001},
            "checks": {"select": ["identities"]},
        }
    )
    report = run_experiment(cfg, str(tmp_path))
    names = [c.name for c in report.checks]
    assert "sphere_dR_dt_2R2_over_n" in names
    assert report.passed


def test_failure_gives_nonzero_exit(tmp_path):
    # a tolerance constant far too small makes the identity checks fail
    path = tmp_path / "tight.toml"
    path.write_text(SMALL.replace("tolerance = 5000.0", "tolerance = 1e-12"))
    assert main(["verify-identities", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


def test_invalid_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[localization]\ndelta = 0.25\n")
    assert main(["report", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "1/(4n)" in capsys.readouterr().err


def test_env_output_dir_and_flags(tmp_path, monkeypatch, small_config):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["simulate", "--config", small_config, "--resolution", "16", "--seed", "5"]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()
    assert (tmp_path / "env" / "history.csv").exists()


def test_calibrate_subcommand(tmp_path, small_config, capsys):
    assert main(["calibrate", "--config", small_config, "--resolution", "64", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "calibration.json").exists()
    assert "record hash" in capsys.readouterr().out


def test_calibrate_refuses_coarse_pair(tmp_path, small_config, capsys):
    assert main(["calibrate", "--config", small_config, "--resolution", "16", "--out", str(tmp_path)]) == 3
    assert "order" in capsys.readouterr().err
