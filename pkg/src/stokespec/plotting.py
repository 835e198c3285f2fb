"""SVG figures for a run directory, driven entirely by its manifest."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .spectral import read_fit_json, read_spectrum_csv  # noqa: E402

# fixed ids and no timestamp so reruns produce identical SVG bytes
matplotlib.rcParams["svg.hashsalt"] = "stokespec"
# keep labels as text so figures stay small and searchable
matplotlib.rcParams["svg.fonttype"] = "none"
SVG_META = {"Date": None, "Creator": "stokespec"}


class ArtifactMissingError(FileNotFoundError):
    def __init__(self, missing):
        super().__init__("missing artifacts: " + ", ".join(missing))
        self.missing = list(missing)


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def _db(x):
    return 10 * np.log10(np.maximum(x, 1e-30))


def _load_spectrum(root: Path, e: dict):
    return read_spectrum_csv(root / e["path"], e["rbw"], e["scan_count"])


def _spectrum_overlay(root, spectra, fits, carrier, spikes, path):
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for e in spectra:
        if e["role"] == "residual":
            continue
        s = _load_spectrum(root, e)
        top.plot(s.frequencies / 1e6, s.to_db() - s.to_db().max(), lw=0.8, label=e["label"])
    for label, marks in spikes.items():
        for m in marks:
            if m["detected"]:
                top.axvline(m["frequency_hz"] / 1e6, color="k", ls=":", lw=0.6)
                top.annotate(f"{label} spike", (m["frequency_hz"] / 1e6, -3), fontsize=7, rotation=90)
    top.set_ylabel("power [dB, peak = 0]")
    top.legend(fontsize=7)
    for e in spectra:
        if e["role"] != "residual":
            continue
        s = _load_spectrum(root, e)
        line, = bottom.plot(s.frequencies / 1e6, _db(s.power), lw=0.8, label=f"{e['label']} residual")
        fit = fits.get(e["label"])
        if fit is not None and fit.converged:
            bottom.plot(s.frequencies / 1e6, _db(fit.model(s.frequencies)), ls="--", color=line.get_color(), lw=1.0,
                        label=f"{e['label']} fit, FWHM {fit.fwhm / 1e6:.2f} MHz")
    bottom.set_xlabel("frequency [MHz]")
    bottom.set_ylabel("residual [dB]")
    if bottom.get_legend_handles_labels()[0]:
        bottom.legend(fontsize=7)
    if carrier is not None:
        top.set_xlim(carrier / 1e6 - 15, carrier / 1e6 + 15)
    _save(fig, path)


def _fwhm_plot(root: Path, table: Path, path: Path) -> None:
    data = np.genfromtxt(root / table, delimiter=",", names=True)
    data = np.atleast_1d(data)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(data["distance_km"], data["fwhm_hz"], "o-")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("distance [km]")
    ax.set_ylabel("pedestal FWHM [Hz]")
    ax.grid(True, which="both", lw=0.3)
    _save(fig, path)


def _load_plot(root, spectra, spikes, carrier, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for e in spectra:
        if e["role"] != "measured":
            continue
        s = _load_spectrum(root, e)
        ax.plot(s.frequencies / 1e6, s.to_db() - s.to_db().max(), lw=0.8, label=e["mode"])
        for m in spikes.get(e["label"], []):
            if m["detected"]:
                ax.plot(m["frequency_hz"] / 1e6, 0.5, "v", color="k", ms=4)
    ax.set_xlim(carrier / 1e6 - 12, carrier / 1e6 + 12)
    ax.set_xlabel("frequency [MHz]")
    ax.set_ylabel("power [dB, peak = 0]")
    ax.legend(fontsize=8)
    _save(fig, path)


def _oracle_plot(root: Path, table: str, path: Path) -> None:
    data = np.genfromtxt(root / table, delimiter=",", names=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    t = data["lag_s"] * 1e9
    ax.errorbar(t, data["empirical"], yerr=3 * data["mc_stderr"], fmt=".", ms=3, label="sphere average")
    ax.plot(t, data["predicted"], "-", label="1/2 + 1/3 C(tau)")
    ax.set_xlabel("lag [ns]")
    ax.set_ylabel("envelope")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_outputs(manifest) -> list[Path]:
    """Render the figures for a run and register them in the manifest."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "manifest.json"
    if not manifest.exists():
        raise ArtifactMissingError([str(manifest)])
    root = manifest.parent
    data = json.loads(manifest.read_text())
    files = [e for e in data.get("files", []) if e.get("kind") != "plot"]
    if not files:
        raise ValueError(f"{manifest} lists no artifacts")
    missing = [e["path"] for e in files if not (root / e["path"]).exists()]
    if missing:
        raise ArtifactMissingError(missing)

    carrier = data.get("config", {}).get("psi", {}).get("aom_frequency")
    kind = data.get("scenario")
    spectra = [e for e in files if e["kind"] == "spectrum"]
    fits = {e["label"]: read_fit_json(root / e["path"]) for e in files if e["kind"] == "fit"}
    summary_entry = next((e for e in files if e["kind"] == "summary"), None)
    summary = json.loads((root / summary_entry["path"]).read_text()) if summary_entry else {}
    spikes = {f"load_{k}": v["spikes"] for k, v in summary.get("loads", {}).items()}

    written = []
    if spectra:
        p = root / "spectra.svg"
        _spectrum_overlay(root, spectra, fits, carrier, spikes, p)
        written.append(p)
    if kind == "distance_sweep":
        table = next(e["path"] for e in files if e["path"] == "fwhm_vs_distance.csv")
        p = root / "fwhm_vs_distance.svg"
        _fwhm_plot(root, table, p)
        written.append(p)
    if kind == "load_comparison":
        p = root / "load_comparison.svg"
        _load_plot(root, spectra, spikes, carrier, p)
        written.append(p)
    if kind == "oracle_suite":
        p = root / "oracle_envelope.svg"
        _oracle_plot(root, "oracle_envelope.csv", p)
        written.append(p)

    for p in written:
        files.append({"path": p.name, "kind": "plot", "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    data["files"] = files
    manifest.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return written
