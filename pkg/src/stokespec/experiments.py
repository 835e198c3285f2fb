"""End-to-end scenarios: generate -> scan -> average -> normalize -> subtract -> fit -> report.

Every scenario writes into a scratch directory next to ``output_dir`` and is
moved into place only when it finishes, so a failed run leaves no partial
output behind.  All randomness is derived from the scenario seed and a
per-measurement label, which makes reruns byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
import tempfile
import zlib
from pathlib import Path

import numpy as np

from . import oracle
from .config import AnalysisSection, ScenarioConfig, ScenarioKind
from .nldp import LoadMode
from .psi import (
    OuSource,
    SpanSource,
    StaticSource,
    WdmSource,
    measure_am_spectrum,
    measure_spectrum,
)
from .spectral import (
    LorentzianFit,
    RfSpectrum,
    carrier_mask,
    detect_spikes,
    fit_lorentzian,
    fwhm_vs_distance,
    normalize_peak,
    pedestal_power,
    read_spectrum_csv,
    subtract_reference,
    write_fit_json,
    write_spectrum_csv,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FEW_MHZ_BAND = (1e6, 5e6)


def sub_seed(seed: int, label: str) -> int:
    """Independent, reproducible seed for one named measurement."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactWriter:
    """Writes files into a run directory and remembers them for the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.entries: list[dict] = []

    def _add(self, name: str, kind: str, **meta) -> Path:
        self.entries.append({"path": name, "kind": kind, **meta})
        return self.root / name

    def spectrum(self, name: str, s: RfSpectrum, role: str, label: str, **meta) -> None:
        path = self._add(name, "spectrum", role=role, label=label, rbw=s.rbw, scan_count=s.scan_count, **meta)
        write_spectrum_csv(s, path)

    def fit(self, name: str, fit: LorentzianFit, label: str) -> None:
        write_fit_json(fit, self._add(name, "fit", label=label))

    def json(self, name: str, payload, kind: str = "report") -> None:
        path = self._add(name, kind)
        path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")

    def table(self, name: str, header, rows, kind: str = "table") -> None:
        path = self._add(name, kind)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])

    def manifest(self, cfg: ScenarioConfig) -> Path:
        for e in self.entries:
            e["sha256"] = sha256(self.root / e["path"])
        payload = {
            "scenario": cfg.kind.value,
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "files": self.entries,
        }
        path = self.root / MANIFEST
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{x:.12e}"
    return x


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


# --------------------------------------------------------------------------
# analysis steps shared by scenarios and ``analyze``


def analyze_pair(
    measured: RfSpectrum, reference: RfSpectrum, analysis: AnalysisSection, carrier: float
) -> tuple[RfSpectrum, LorentzianFit]:
    """Peak-normalize both spectra, subtract the reference and fit the pedestal."""
    residual = subtract_reference(
        normalize_peak(measured),
        normalize_peak(reference),
        floor=analysis.clamp_floor,
        mask_width_rbw=analysis.mask_width_rbw,
        carrier=carrier,
    )
    band = (carrier - analysis.fit_half_span, carrier + analysis.fit_half_span)
    fit = fit_lorentzian(residual, band=band, log_space=False)
    return residual, fit


def _pedestal_band(cfg: ScenarioConfig) -> tuple[float, float]:
    f0 = cfg.psi.aom_frequency
    return f0 - cfg.analysis.pedestal_half_span, f0 + cfg.analysis.pedestal_half_span


def _fit_summary(fit: LorentzianFit) -> dict:
    return fit.to_record()


def _run_distance_sweep(cfg: ScenarioConfig, out: ArtifactWriter) -> dict:
    params = cfg.noise.params()
    f0 = cfg.psi.aom_frequency
    btb = measure_spectrum(StaticSource(), cfg.psi, cfg.scan, sub_seed(cfg.seed, "btb"), cfg.workers)
    out.spectrum("spectrum_btb.csv", btb, role="reference", label="btb")
    fits, per_span = [], {}
    for n in cfg.spans.span_counts:
        label = f"span{n:03d}"
        chain = cfg.spans.chain(n, params.correlation_rate)
        # common random numbers: every span count sees the same draws
        src = SpanSource(params, chain, cfg.spans.normalize_rms, draw_span_count=max(cfg.spans.span_counts))
        m = measure_spectrum(src, cfg.psi, cfg.scan, sub_seed(cfg.seed, "spans"), cfg.workers)
        residual, fit = analyze_pair(m, btb, cfg.analysis, f0)
        distance_km = n * cfg.spans.km_per_span
        out.spectrum(f"spectrum_{label}.csv", m, role="measured", label=label, reference="btb",
                     span_count=n, distance_km=distance_km)
        out.spectrum(f"residual_{label}.csv", residual, role="residual", label=label)
        out.fit(f"fit_{label}.json", fit, label=label)
        fits.append((distance_km, fit))
        per_span[label] = {"span_count": n, "distance_km": distance_km, **_fit_summary(fit)}
    table = fwhm_vs_distance(fits)
    out.table(
        "fwhm_vs_distance.csv",
        ["distance_km", "span_count", "fwhm_hz", "amplitude", "residual_rms", "converged"],
        [
            [r["distance"], int(round(r["distance"] / cfg.spans.km_per_span)), r["fwhm_hz"],
             r["amplitude"], r["residual_rms"], r["converged"]]
            for r in table.rows
        ],
    )
    longest = table.rows[-1]["fwhm_hz"]
    return {
        "fits": per_span,
        "strictly_decreasing": table.strictly_decreasing,
        "flags": table.flags,
        "longest_distance_fwhm_hz": longest,
        "longest_in_few_mhz_band": FEW_MHZ_BAND[0] <= longest <= FEW_MHZ_BAND[1],
        "per_span_fwhm_hz": params.fwhm_hz,
    }


def _run_btb(cfg: ScenarioConfig, out: ArtifactWriter) -> dict:
    f0 = cfg.psi.aom_frequency
    meas = measure_spectrum(StaticSource(), cfg.psi, cfg.scan, sub_seed(cfg.seed, "btb_measured"), cfg.workers)
    ref = measure_spectrum(StaticSource(), cfg.psi, cfg.scan, sub_seed(cfg.seed, "btb_reference"), cfg.workers)
    residual, fit = analyze_pair(meas, ref, cfg.analysis, f0)
    out.spectrum("spectrum_btb_measured.csv", meas, role="measured", label="btb_measured", reference="btb_reference")
    out.spectrum("spectrum_btb_reference.csv", ref, role="reference", label="btb_reference")
    out.spectrum("residual_btb_measured.csv", residual, role="residual", label="btb_measured")
    out.fit("fit_btb_measured.json", fit, label="btb_measured")
    # a transmission run with the configured perturbation sets the scale
    trans = measure_spectrum(OuSource(cfg.noise.params()), cfg.psi, cfg.scan,
                             sub_seed(cfg.seed, "transmission"), cfg.workers)
    trans_residual, trans_fit = analyze_pair(trans, ref, cfg.analysis, f0)
    out.spectrum("spectrum_transmission.csv", trans, role="measured", label="transmission",
                 reference="btb_reference")
    out.spectrum("residual_transmission.csv", trans_residual, role="residual", label="transmission")
    out.fit("fit_transmission.json", trans_fit, label="transmission")
    band = _pedestal_band(cfg)
    btb_power = pedestal_power(residual, band)
    trans_power = pedestal_power(trans_residual, band)
    return {
        "fit": _fit_summary(fit),
        "degenerate": fit.degenerate,
        "pedestal_power": btb_power,
        "transmission_pedestal_power": trans_power,
        "pedestal_ratio": btb_power / trans_power,
    }


def _run_am_control(cfg: ScenarioConfig, out: ArtifactWriter) -> dict:
    f0 = cfg.psi.aom_frequency
    transmitted = measure_am_spectrum(
        cfg.am.probe(perturbation=OuSource(cfg.noise.params())), cfg.psi, cfg.scan,
        sub_seed(cfg.seed, "am_transmitted"), cfg.workers,
    )
    reference = measure_am_spectrum(cfg.am.probe(), cfg.psi, cfg.scan, sub_seed(cfg.seed, "am_reference"), cfg.workers)
    out.spectrum("spectrum_am_transmitted.csv", transmitted, role="measured", label="am_transmitted",
                 reference="am_reference")
    out.spectrum("spectrum_am_reference.csv", reference, role="reference", label="am_reference")
    tn, rn = normalize_peak(transmitted), normalize_peak(reference)
    lo, hi = cfg.am.band
    sel = (tn.frequencies >= lo) & (tn.frequencies <= hi) & carrier_mask(tn, f0, cfg.analysis.mask_width_rbw)
    ratio_db = 10 * np.log10(tn.power[sel] / rn.power[sel])
    return {
        "tone_frequency_hz": transmitted.peak_frequency(),
        "band_hz": [lo, hi],
        "max_abs_pedestal_deviation_db": float(np.max(np.abs(ratio_db))),
        "mean_pedestal_deviation_db": float(np.mean(ratio_db)),
    }


def _run_load_comparison(cfg: ScenarioConfig, out: ArtifactWriter) -> dict:
    f0 = cfg.psi.aom_frequency
    band = _pedestal_band(cfg)
    btb = measure_spectrum(StaticSource(), cfg.psi, cfg.scan, sub_seed(cfg.seed, "btb"), cfg.workers)
    out.spectrum("spectrum_btb.csv", btb, role="reference", label="btb")
    btb_norm = normalize_peak(btb)
    loads = {}
    for mode in LoadMode:
        label = f"load_{mode.value}"
        src = WdmSource(cfg.wdm.spec(mode), cfg.wdm.amplitude_per_channel)
        m = measure_spectrum(src, cfg.psi, cfg.scan, sub_seed(cfg.seed, label), cfg.workers)
        mn = normalize_peak(m)
        residual = subtract_reference(mn, btb_norm, cfg.analysis.clamp_floor, cfg.analysis.mask_width_rbw, f0)
        spikes = detect_spikes(mn, 1.0 / cfg.wdm.frame_period, cfg.analysis.spike_max_order, f0,
                               cfg.analysis.spike_threshold_db)
        out.spectrum(f"spectrum_{label}.csv", m, role="measured", label=label, reference="btb", mode=mode.value)
        out.spectrum(f"residual_{label}.csv", residual, role="residual", label=label)
        loads[mode.value] = {
            "pedestal_power": pedestal_power(residual, band),
            "spikes": [
                {"offset_hz": s.offset_hz, "frequency_hz": s.frequency, "prominence_db": s.prominence_db,
                 "detected": s.detected}
                for s in spikes
            ],
            "spikes_detected": any(s.detected for s in spikes),
        }
    corr = loads["correlated"]["pedestal_power"]
    decorr = loads["decorrelated"]["pedestal_power"]
    ase = loads["ase"]["pedestal_power"]
    return {
        "loads": loads,
        "correlated_over_decorrelated": corr / decorr,
        "decorrelated_vs_ase_db": 10 * np.log10(decorr / ase),
        "channel_count": cfg.wdm.channel_count,
        "metadata": {
            "channel_spacing_ghz": cfg.wdm.channel_spacing_ghz,
            "gap_width_ghz": cfg.wdm.gap_width_ghz,
            "gap_center_thz": cfg.wdm.gap_center_thz,
        },
    }


def _run_oracle_suite(cfg: ScenarioConfig, out: ArtifactWriter) -> dict:
    oc = cfg.oracle
    fs = cfg.scan.sample_rate
    seed = sub_seed(cfg.seed, "oracle")
    sigma = oracle.ou_realization(oc.rho, oc.fwhm_hz, fs, oc.samples, seed)
    rep = oracle.mc_sphere_acf(sigma, oc.rotation_count, oc.epsilon, seed)
    out.json("oracle_report.json", rep.to_dict())
    out.table(
        "oracle_envelope.csv",
        ["lag_s", "empirical", "predicted", "mc_stderr"],
        zip(rep.lag_grid, rep.empirical_envelope, rep.predicted_envelope, rep.mc_stderr),
    )
    validity = oracle.first_order_validity(oc.rho_sweep, oc.fwhm_hz, oc.rotation_count, oc.epsilon, fs, oc.samples, seed)
    out.table("first_order_validity.csv", list(validity[0]), [list(r.values()) for r in validity])
    excl = oracle.exclusion_sensitivity(oc.epsilon_sweep, oc.rho, oc.fwhm_hz, oc.rotation_count, fs, oc.samples, seed)
    out.table("exclusion_sensitivity.csv", list(excl[0]), [list(r.values()) for r in excl])
    return {
        "passed": rep.passed,
        "max_relative_error": rep.max_relative_error,
        "baseline_coefficient": rep.baseline_coefficient,
        "fluctuation_coefficient": rep.fluctuation_coefficient,
        "rotation_count": rep.sample_count,
        "epsilon": rep.epsilon_used,
    }


RUNNERS = {
    ScenarioKind.DISTANCE_SWEEP: _run_distance_sweep,
    ScenarioKind.BTB: _run_btb,
    ScenarioKind.AM_CONTROL: _run_am_control,
    ScenarioKind.LOAD_COMPARISON: _run_load_comparison,
    ScenarioKind.ORACLE_SUITE: _run_oracle_suite,
}


def run_scenario(cfg: ScenarioConfig, plots: bool = True) -> dict:
    """Execute a scenario and return its manifest."""
    final = Path(cfg.output_dir)
    if final.exists() and any(final.iterdir()) and not (final / MANIFEST).exists():
        raise FileExistsError(f"{final} exists and is not a previous run directory")
    final.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{final.name}-", dir=final.parent))
    try:
        writer = ArtifactWriter(scratch)
        summary = RUNNERS[cfg.kind](cfg, writer)
        writer.json("summary.json", {"scenario": cfg.kind.value, "seed": cfg.seed, **summary}, kind="summary")
        writer.manifest(cfg)
        if plots:
            from .plotting import plot_outputs

            plot_outputs(scratch / MANIFEST)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(scratch, final)
    return load_manifest(final / MANIFEST)


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    data = json.loads(path.read_text())
    data["_root"] = str(path.parent)
    return data


def refresh_hashes(manifest_path: Path) -> None:
    data = json.loads(Path(manifest_path).read_text())
    root = Path(manifest_path).parent
    for e in data["files"]:
        e["sha256"] = sha256(root / e["path"])
    Path(manifest_path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def analyze_dir(run_dir) -> list[dict]:
    """Re-run normalization, subtraction and fitting on a run's stored spectra."""
    manifest = load_manifest(run_dir)
    root = Path(manifest["_root"])
    cfg_analysis = AnalysisSection(**manifest["config"]["analysis"])
    carrier = manifest["config"]["psi"]["aom_frequency"]
    spectra = {e["label"]: e for e in manifest["files"] if e["kind"] == "spectrum" and e["role"] != "residual"}
    rows = []
    for label, e in spectra.items():
        if e["role"] != "measured":
            continue
        ref = spectra[e["reference"]]
        m = read_spectrum_csv(root / e["path"], e["rbw"], e["scan_count"])
        r = read_spectrum_csv(root / ref["path"], ref["rbw"], ref["scan_count"])
        _, fit = analyze_pair(m, r, cfg_analysis, carrier)
        name = f"fit_{label}.json"
        write_fit_json(fit, root / name)
        if not any(f["path"] == name for f in manifest["files"]):
            manifest["files"].append({"path": name, "kind": "fit", "label": label})
            (root / MANIFEST).write_text(
                json.dumps({k: v for k, v in manifest.items() if k != "_root"}, indent=2, sort_keys=True) + "\n"
            )
        rows.append({"label": label, **_fit_summary(fit)})
    refresh_hashes(root / MANIFEST)
    return rows
