"""RF spectrum estimation and the pedestal analysis chain.

The estimator is a Welch average of Hann-windowed segments whose length is
chosen so that the equivalent noise bandwidth equals the requested RBW, which
makes tone powers (integrated over the line) and noise densities correct at
the same time.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import signal
from scipy.integrate import trapezoid

logger = logging.getLogger(__name__)

HANN_ENBW_BINS = 1.5
DEFAULT_OVERLAP = 0.75


class ResolutionError(ValueError):
    """Trace too short for the requested resolution bandwidth."""


class GridMismatchError(ValueError):
    """Spectra defined on different frequency grids."""


@dataclass
class BeatTrace:
    """Real photocurrent samples.

    ``envelope`` optionally carries the complex baseband beat (carrier
    removed), used to compare instrument models sample by sample.
    """

    samples: np.ndarray
    sample_rate: float
    envelope: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("beat trace contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class RfSpectrum:
    """One-sided PSD on a uniform grid.  ``mask`` marks bins usable for fitting."""

    frequencies: np.ndarray
    power: np.ndarray
    rbw: float
    scan_count: int = 1
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        if self.frequencies.shape != self.power.shape:
            raise ValueError("frequency and power arrays differ in shape")
        if np.any(self.power < 0):
            raise ValueError("PSD values must be non-negative")
        if not self.rbw > 0:
            raise ValueError("rbw must be positive")

    @property
    def df(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    @property
    def usable(self) -> np.ndarray:
        return np.ones(len(self.power), bool) if self.mask is None else self.mask

    def to_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.power)

    def peak_frequency(self) -> float:
        return float(self.frequencies[np.argmax(self.power)])

    def same_grid(self, other: "RfSpectrum") -> bool:
        return (
            self.frequencies.shape == other.frequencies.shape
            and np.allclose(self.frequencies, other.frequencies, rtol=0, atol=1e-9 * max(1.0, self.df))
            and np.isclose(self.rbw, other.rbw)
        )


@dataclass
class AcfEstimate:
    lags: np.ndarray
    values: np.ndarray


@dataclass
class LorentzianFit:
    amplitude: float
    center: float
    fwhm: float
    floor: float
    residual_rms: float
    converged: bool
    scan_count: int = 1
    degenerate: bool = False
    iterations: int = 0

    def model(self, f) -> np.ndarray:
        return lorentzian(f, self.amplitude, self.center, self.fwhm, self.floor)

    def to_record(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "center_hz": self.center,
            "fwhm_hz": self.fwhm,
            "floor": self.floor,
            "residual_rms": self.residual_rms,
            "converged": bool(self.converged),
            "scan_count": int(self.scan_count),
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LorentzianFit":
        return cls(
            amplitude=rec["amplitude"],
            center=rec["center_hz"],
            fwhm=rec["fwhm_hz"],
            floor=rec["floor"],
            residual_rms=rec["residual_rms"],
            converged=rec["converged"],
            scan_count=rec.get("scan_count", 1),
            degenerate=rec.get("degenerate", False),
        )


def lorentzian(f, amplitude, center, fwhm, floor=0.0):
    f = np.asarray(f, dtype=float)
    return amplitude / (1.0 + ((f - center) / (fwhm / 2.0)) ** 2) + floor


# --------------------------------------------------------------------------
# estimation


def segment_length(sample_rate: float, target_rbw: float) -> int:
    return int(round(HANN_ENBW_BINS * sample_rate / target_rbw))


def periodogram(trace: BeatTrace, target_rbw: float, overlap: float = DEFAULT_OVERLAP) -> RfSpectrum:
    """Welch PSD whose Hann-window ENBW equals ``target_rbw``."""
    fs = trace.sample_rate
    nperseg = segment_length(fs, target_rbw)
    if len(trace) < 2.0 * fs / target_rbw:
        raise ResolutionError(
            f"{len(trace)} samples cannot resolve {target_rbw:g} Hz at {fs:g} Hz sampling"
        )
    f, pxx = signal.welch(
        trace.samples,
        fs=fs,
        window="hann",
        nperseg=nperseg,
        noverlap=int(round(overlap * nperseg)),
        detrend=False,
        return_onesided=True,
        scaling="density",
    )
    return RfSpectrum(f, pxx, rbw=HANN_ENBW_BINS * fs / nperseg, scan_count=1)


def acf(trace: BeatTrace, max_lag: float) -> AcfEstimate:
    """Biased (1/N) autocorrelation up to ``max_lag`` seconds."""
    x = trace.samples
    n = len(x)
    if max_lag >= trace.duration / 10:
        raise ValueError("max_lag must be shorter than a tenth of the trace")
    k = int(np.floor(max_lag * trace.sample_rate))
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    spec = np.fft.rfft(x, nfft)
    full = np.fft.irfft(spec * np.conj(spec), nfft)[: k + 1] / n
    return AcfEstimate(np.arange(k + 1) / trace.sample_rate, full)


def acf_to_psd(est: AcfEstimate, frequencies, lag_window: str = "bartlett") -> np.ndarray:
    """One-sided Blackman-Tukey PSD from an autocorrelation estimate."""
    r = np.asarray(est.values, dtype=float)
    dt = est.lags[1] - est.lags[0]
    k = np.arange(len(r))
    if lag_window == "bartlett":
        w = 1.0 - k / len(r)
    elif lag_window == "hann":
        w = 0.5 * (1.0 + np.cos(np.pi * k / len(r)))
    else:
        raise ValueError(f"unknown lag window {lag_window!r}")
    f = np.asarray(frequencies, dtype=float)
    phase = 2.0 * np.pi * np.outer(f, k[1:]) * dt
    two_sided = dt * (r[0] + 2.0 * np.cos(phase) @ (w[1:] * r[1:]))
    return 2.0 * two_sided


def esa_average(scans: Sequence[RfSpectrum]) -> RfSpectrum:
    """Pointwise linear-power mean of scans on a shared grid."""
    scans = list(scans)
    if not scans:
        raise ValueError("no scans to average")
    ref = scans[0]
    total = np.zeros_like(ref.power)
    count = 0
    for s in scans:
        if not ref.same_grid(s):
            raise GridMismatchError("scans have different grids or RBW")
        total += s.power * s.scan_count
        count += s.scan_count
    return RfSpectrum(ref.frequencies, total / count, ref.rbw, scan_count=count)


def integrated_power(s: RfSpectrum) -> float:
    return float(np.sum(s.power) * s.df)


def tone_power(s: RfSpectrum, frequency: float, half_width_bins: int = 3) -> float:
    """Power of a line: PSD summed over the bins around ``frequency``."""
    i = int(np.argmin(np.abs(s.frequencies - frequency)))
    lo, hi = max(0, i - half_width_bins), min(len(s.power), i + half_width_bins + 1)
    return float(np.sum(s.power[lo:hi]) * s.df)


# --------------------------------------------------------------------------
# pedestal analysis


def normalize_peak(s: RfSpectrum) -> RfSpectrum:
    peak = float(np.max(s.power))
    if peak <= 0:
        raise ValueError("cannot normalize an all-zero spectrum")
    return RfSpectrum(s.frequencies, s.power / peak, s.rbw, s.scan_count, s.mask)


def carrier_mask(s: RfSpectrum, carrier: float | None = None, width_rbw: float = 2.0) -> np.ndarray:
    """True outside ``carrier +/- width_rbw * RBW``."""
    if carrier is None:
        carrier = s.peak_frequency()
    return np.abs(s.frequencies - carrier) > width_rbw * s.rbw


def subtract_reference(
    measured: RfSpectrum,
    btb: RfSpectrum,
    floor: float = 1e-12,
    mask_width_rbw: float = 2.0,
    carrier: float | None = None,
) -> RfSpectrum:
    """Linear-power difference ``measured - btb`` clamped at ``floor * peak``.

    The returned spectrum carries a mask excluding the carrier region.
    """
    if not measured.same_grid(btb):
        raise GridMismatchError("measured and reference spectra are on different grids")
    peak = float(np.max(measured.power))
    residual = np.maximum(measured.power - btb.power, floor * peak)
    out = RfSpectrum(measured.frequencies, residual, measured.rbw, measured.scan_count)
    if carrier is None:
        carrier = measured.peak_frequency()
    out.mask = carrier_mask(out, carrier, mask_width_rbw)
    return out


def _levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    rtol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[np.ndarray, bool, int]:
    """Damped Gauss-Newton with box projection.  Returns (params, converged, iterations)."""
    p = np.clip(np.asarray(p0, dtype=float), lower, upper)
    r = residual(p)
    cost = r @ r
    lam = 1e-3
    for it in range(1, max_iter + 1):
        jac = jacobian(p)
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        # parameters pinned at a bound with the gradient pushing outward are
        # frozen for this step, otherwise projection stalls the free ones
        free = ~(((p <= lower) & (g > 0)) | ((p >= upper) & (g < 0)))
        if not np.any(free):
            return p, True, it
        sub = np.ix_(free, free)
        improved = False
        for _ in range(30):
            step = np.zeros_like(p)
            try:
                step[free] = np.linalg.solve(jtj[sub] + lam * np.diag(diag[free]), -g[free])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = np.clip(p + step, lower, upper)
            r_trial = residual(trial)
            cost_trial = r_trial @ r_trial
            if np.isfinite(cost_trial) and cost_trial <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            # no descent direction left: at a (possibly constrained) minimum
            return p, True, it
        delta = trial - p
        p, r, cost = trial, r_trial, cost_trial
        lam = max(lam / 10.0, 1e-12)
        # parameters are O(1) after normalization; the floor keeps a centered
        # Lorentzian (offset ~ 0) from demanding sub-ulp steps
        scale = np.maximum(np.abs(p), 1e-3)
        if np.all(np.abs(delta) <= rtol * scale):
            return p, True, it
    return p, False, max_iter


def _initial_guess(f, y, df):
    n_edge = max(3, len(y) // 10)
    order = np.argsort(f)
    f, y = f[order], y[order]
    c0 = max(float(np.median(np.concatenate([y[:n_edge], y[-n_edge:]]))), 0.0)
    excess = y - c0
    # light smoothing so a single noisy bin does not set the peak
    k = max(1, min(9, len(y) // 50))
    smooth = np.convolve(excess, np.ones(k) / k, mode="same")
    a0 = max(float(np.max(smooth)), 1e-300)
    above = smooth >= a0 / 2
    pos = np.clip(excess, 0, None)
    weights = np.where(above, pos, 0.0)
    f0 = float(np.sum(weights * f) / np.sum(weights)) if np.sum(weights) > 0 else float(f[np.argmax(smooth)])
    gamma0 = max(float(np.count_nonzero(above)) * df, 2 * df)
    return np.array([a0, f0, gamma0, c0])


def fit_lorentzian(
    residual: RfSpectrum,
    mask: np.ndarray | None = None,
    band: tuple[float, float] | None = None,
    log_space: bool = False,
    min_fwhm: float | None = None,
    rtol: float = 1e-6,
    max_iter: int = 200,
) -> LorentzianFit:
    """Least-squares Lorentzian-plus-floor fit over the unmasked bins.

    Linear-power, unweighted by default; ``log_space=True`` fits dB values.
    A fit is reported degenerate (and not converged) when the amplitude is
    not resolved above the residual scatter or the width sits on a bound.
    """
    f_all, y_all = residual.frequencies, residual.power
    use = residual.usable.copy() if mask is None else np.asarray(mask, bool).copy()
    if band is not None:
        use &= (f_all >= band[0]) & (f_all <= band[1])
    if np.count_nonzero(use) < 50:
        raise ValueError("need at least 50 unmasked bins for a Lorentzian fit")
    f, y = f_all[use], y_all[use]
    df = residual.df
    fref = float(np.mean(f))
    fscale = float(np.ptp(f))
    yscale = float(np.max(np.abs(y))) or 1.0
    x = (f - fref) / fscale
    yn = y / yscale

    p0 = _initial_guess(f, y, df)
    q0 = np.array([p0[0] / yscale, (p0[1] - fref) / fscale, p0[2] / fscale, p0[3] / yscale])
    gmin = (min_fwhm if min_fwhm is not None else 2.0 * residual.rbw) / fscale
    gmax = 1.0
    q0[2] = np.clip(q0[2], gmin * 1.01, gmax * 0.99)
    lower = np.array([0.0, x.min(), gmin, 0.0])
    upper = np.array([np.inf, x.max(), gmax, np.inf])

    def model(q):
        u = (x - q[1]) / (q[2] / 2.0)
        return q[0] / (1.0 + u * u) + q[3]

    def jac_lin(q):
        a, x0, g, _ = q
        u = (x - x0) / (g / 2.0)
        d = 1.0 / (1.0 + u * u)
        return np.column_stack(
            [d, a * d * d * 2.0 * u / (g / 2.0), a * d * d * 2.0 * u * u / g, np.ones_like(x)]
        )

    if log_space:
        if np.any(yn <= 0):
            raise ValueError("log-space fit requires strictly positive power")
        ylog = np.log(yn)

        def res(q):
            return np.log(np.maximum(model(q), 1e-300)) - ylog

        def jac(q):
            return jac_lin(q) / np.maximum(model(q), 1e-300)[:, None]

    else:

        def res(q):
            return model(q) - yn

        jac = jac_lin

    q, converged, iters = _levenberg_marquardt(res, jac, q0, lower, upper, rtol=rtol, max_iter=max_iter)
    resid_rms = float(np.sqrt(np.mean((model(q) - yn) ** 2))) * yscale
    fit = LorentzianFit(
        amplitude=float(q[0] * yscale),
        center=float(q[1] * fscale + fref),
        fwhm=float(q[2] * fscale),
        floor=float(q[3] * yscale),
        residual_rms=resid_rms,
        converged=converged,
        scan_count=residual.scan_count,
        iterations=iters,
    )
    at_bound = q[2] <= gmin * (1 + 1e-6) or q[2] >= gmax * (1 - 1e-6)
    if at_bound or fit.amplitude <= 3.0 * resid_rms:
        fit.degenerate = True
        fit.converged = False
    return fit


@dataclass
class FwhmTable:
    rows: list[dict]
    flags: list[str] = field(default_factory=list)

    @property
    def strictly_decreasing(self) -> bool:
        g = [r["fwhm_hz"] for r in self.rows]
        return all(b < a for a, b in zip(g, g[1:]))


def fwhm_vs_distance(fits: Sequence[tuple[float, LorentzianFit]]) -> FwhmTable:
    """Tabulate fitted widths against distance, flagging non-monotonic trends."""
    rows = [
        {
            "distance": float(d),
            "fwhm_hz": fit.fwhm,
            "amplitude": fit.amplitude,
            "residual_rms": fit.residual_rms,
            "converged": bool(fit.converged),
        }
        for d, fit in sorted(fits, key=lambda t: t[0])
    ]
    table = FwhmTable(rows)
    if len(rows) > 1 and not table.strictly_decreasing:
        table.flags.append("non-monotonic FWHM sequence")
    if any(not r["converged"] for r in rows):
        table.flags.append("contains unconverged fits")
    return table


@dataclass
class Spike:
    order: int
    offset_hz: float
    frequency: float
    prominence_db: float
    detected: bool


def detect_spikes(
    s: RfSpectrum,
    frame_rate: float,
    max_order: int = 1,
    carrier: float | None = None,
    threshold_db: float = 6.0,
    pedestal: LorentzianFit | None = None,
) -> list[Spike]:
    """Prominence of lines at ``carrier +/- j * frame_rate`` (j = 1..max_order).

    Prominence is measured against ``pedestal`` when given, otherwise against
    the local median level between neighbouring frame lines.
    """
    if not s.rbw < frame_rate / 3:
        raise ValueError("RBW too coarse to resolve frame-rate lines")
    if carrier is None:
        carrier = s.peak_frequency()
    f, p = s.frequencies, s.power
    search = max(s.rbw / 2, s.df)
    out = []
    for j in range(1, max_order + 1):
        for sign in (-1, 1):
            target = carrier + sign * j * frame_rate
            if target < f[0] or target > f[-1]:
                continue
            dist = np.abs(f - target)
            win = dist <= search
            peak = float(np.max(p[win]))
            if pedestal is not None:
                base = float(pedestal.model(target))
            else:
                ring = (dist > 1.5 * s.rbw) & (dist <= frame_rate / 2)
                ring &= np.abs(f - carrier) > 2 * s.rbw
                base = float(np.median(p[ring]))
            prom = 10 * np.log10(peak / base) if base > 0 and peak > 0 else (np.inf if peak > 0 else 0.0)
            out.append(Spike(j, sign * j * frame_rate, target, float(prom), bool(prom > threshold_db)))
    return out


def pedestal_power(s: RfSpectrum, band: tuple[float, float], mask: np.ndarray | None = None) -> float:
    """Trapezoidal integral of the PSD over ``band``; masked bins count as zero."""
    f1, f2 = band
    if f1 < s.frequencies[0] or f2 > s.frequencies[-1] or f2 <= f1:
        raise ValueError("band outside the frequency grid")
    sel = (s.frequencies >= f1) & (s.frequencies <= f2)
    use = s.usable if mask is None else mask
    y = np.where(use, s.power, 0.0)[sel]
    return float(trapezoid(y, s.frequencies[sel]))


# --------------------------------------------------------------------------
# serialization

CSV_COLUMNS = ("freq_hz", "psd_linear", "psd_db")


def write_spectrum_csv(s: RfSpectrum, path) -> Path:
    path = Path(path)
    db = s.to_db()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for fr, lin, d in zip(s.frequencies, s.power, db):
            # 17 significant digits: stored spectra reload bit-exactly
            w.writerow([f"{fr:.6f}", f"{lin:.16e}", f"{d:.6f}"])
    return path


def read_spectrum_csv(path, rbw: float, scan_count: int = 1) -> RfSpectrum:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(float(r["freq_hz"]), float(r["psd_linear"])) for r in reader]
    arr = np.array(rows)
    return RfSpectrum(arr[:, 0], arr[:, 1], rbw=rbw, scan_count=scan_count)


def write_fit_json(fit: LorentzianFit, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fit.to_record(), indent=2, sort_keys=True) + "\n")
    return path


def read_fit_json(path) -> LorentzianFit:
    return LorentzianFit.from_record(json.loads(Path(path).read_text()))
