import json
import subprocess
import sys

import pytest

from stokespec import cli


def write_config(tmp_path, kind="btb", scans=8, extra=""):
    p = tmp_path / f"{kind}.toml"
    p.write_text(f'kind = "{kind}"\nseed = 5\noutput_dir = "run_{kind}"\n[scan]\nscan_count = {scans}\n{extra}')
    return p


def test_simulate_and_analyze(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["simulate", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert '"degenerate": true' in out
    run = tmp_path / "run_btb"
    assert (run / "manifest.json").exists()
    assert cli.main(["analyze", str(run)]) == 0
    assert "btb_measured" in capsys.readouterr().out
    assert cli.main(["plot", str(run / "manifest.json")]) == 0
    assert "spectra.svg" in capsys.readouterr().out


def test_sweep_overrides_kind_and_spans(tmp_path, capsys):
    cfg = write_config(tmp_path, kind="btb")
    out_dir = tmp_path / "sweep"
    assert cli.main(["sweep", str(cfg), "--spans", "1,2", "-o", str(out_dir), "--no-plots"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("distance_km,span_count,fwhm_hz")
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["scenario"] == "distance_sweep"
    assert set(summary["fits"]) == {"span001", "span002"}


@pytest.mark.parametrize(
    "argv_factory",
    [
        lambda tmp: ["simulate", str(tmp / "missing.toml")],
        lambda tmp: ["simulate", str(write_config(tmp, extra="[scan]\n"))],
        lambda tmp: ["simulate", str(write_config(tmp, extra="[noise]\nrms_amplitude = 0.9\n"))],
        lambda tmp: ["analyze", str(tmp)],
        lambda tmp: ["plot", str(tmp / "nowhere" / "manifest.json")],
        lambda tmp: ["sweep", str(write_config(tmp)), "--spans", "1,x"],
        lambda tmp: ["frobnicate"],
    ],
)
def test_validation_errors_exit_1(tmp_path, argv_factory, capsys):
    assert cli.main(argv_factory(tmp_path)) == 1


def test_empty_manifest_exits_1(tmp_path):
    m = tmp_path / "manifest.json"
    m.write_text(json.dumps({"files": []}))
    assert cli.main(["plot", str(m)]) == 1


def test_runtime_failure_exits_2(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["simulate", str(cfg)]) == 2


def test_verify_reports_pass_fail(monkeypatch, capsys):
    monkeypatch.setattr(
        cli, "verification_checks", lambda quick, seed: [("a", True, "ok"), ("b", False, "bad")]
    )
    assert cli.main(["verify", "--quick"]) == 2
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("PASS") and lines[1].startswith("FAIL")


def test_verify_quick_passes(capsys):
    assert cli.main(["verify", "--quick"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_console_script_and_worker_env(tmp_path):
    cfg = write_config(tmp_path, scans=40)
    env = {"STOKESPEC_WORKERS": "2", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "stokespec.cli", "simulate", str(cfg), "--no-plots"],
        capture_output=True, text=True, env=env, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    serial = tmp_path / "serial"
    assert cli.main(["simulate", str(cfg), "--no-plots", "-o", str(serial)]) == 0
    a = (tmp_path / "run_btb" / "spectrum_btb_measured.csv").read_bytes()
    b = (serial / "spectrum_btb_measured.csv").read_bytes()
    assert a == b
