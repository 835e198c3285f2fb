"""Generators for the fast SOP perturbation sigma(t) around a slow base SOP.

Three scenarios are modelled phenomenologically (no fiber propagation):

* broadband unpolarized (ASE) loading -> Ornstein-Uhlenbeck tangent noise,
* multi-span accumulation -> delayed coherent sum of a per-span process,
* WDM data loading -> walk-off filtered periodic data patterns, either shared
  by all channels (correlated) or independent per channel (decorrelated).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .stokes import NORM_TOL, SopTimeSeries, as_stokes, retract, tangent_basis


class AliasingError(ValueError):
    """Requested sample rate cannot represent the process bandwidth."""


class InsufficientLengthError(ValueError):
    """Trace too short for the requested delays or frame count."""


class AmplitudeError(ValueError):
    """Perturbation too large to be retracted onto the sphere."""


class LoadConfigError(ValueError):
    """Invalid WDM load configuration."""


@dataclass(frozen=True)
class TangentNoiseParams:
    rms_amplitude: float
    correlation_rate: float

    def __post_init__(self):
        # rms 0 is accepted as the unperturbed (back-to-back) limit
        if not 0.0 <= self.rms_amplitude <= 0.3:
            raise ValueError(f"rms_amplitude must lie in [0, 0.3], got {self.rms_amplitude}")
        if not self.correlation_rate > 0:
            raise ValueError("correlation_rate must be positive")

    @property
    def fwhm_hz(self) -> float:
        """FWHM of the Lorentzian spectrum of this process."""
        return self.correlation_rate / np.pi

    @classmethod
    def from_fwhm(cls, rms_amplitude: float, fwhm_hz: float) -> "TangentNoiseParams":
        return cls(rms_amplitude, np.pi * fwhm_hz)


@dataclass(frozen=True)
class SpanChainParams:
    span_count: int
    walkoff_delay: float
    per_span_weight: float = 1.0

    def __post_init__(self):
        if self.span_count < 1:
            raise ValueError("span_count must be >= 1")
        if self.walkoff_delay < 0:
            raise ValueError("walkoff_delay must be >= 0")


class LoadMode(str, enum.Enum):
    CORRELATED = "correlated"
    DECORRELATED = "decorrelated"
    ASE = "ase"


@dataclass(frozen=True)
class WdmLoadSpec:
    channel_count: int
    mode: LoadMode = LoadMode.CORRELATED
    frame_period: float = 5e-6
    symbol_rate: float = 56e9
    chip_rate: float = 50e6
    walkoff_cutoff: float = 2e6
    channel_delay: float = 100e-9
    aligned_directions: bool = True

    def __post_init__(self):
        if self.channel_count < 1:
            raise LoadConfigError("channel_count must be >= 1")
        if not self.frame_period > 0:
            raise LoadConfigError("frame_period must be positive")
        if not self.walkoff_cutoff > 0:
            raise LoadConfigError("walkoff_cutoff must be positive")
        object.__setattr__(self, "mode", LoadMode(self.mode))

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_period

    @property
    def chips_per_frame(self) -> int:
        return int(round(self.frame_period * self.chip_rate))


@dataclass
class SopDecomposition:
    """Slow base SOP plus a tangent perturbation series."""

    base: np.ndarray
    sigma: np.ndarray
    sample_rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.base = as_stokes(self.base)
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if self.sigma.shape[1] != 3:
            raise ValueError("sigma must have shape (n, 3)")
        if np.any(np.abs(self.sigma @ self.base) > NORM_TOL):
            raise ValueError("sigma samples must be orthogonal to the base SOP")

    def __len__(self) -> int:
        return len(self.sigma)

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.sigma**2, axis=1))))

    def tangent_components(self) -> np.ndarray:
        """Coordinates of sigma in :func:`tangent_basis` of the base, shape (n, 2)."""
        e1, e2 = tangent_basis(self.base)
        return np.column_stack([self.sigma @ e1, self.sigma @ e2])

    def scaled(self, factor: float) -> "SopDecomposition":
        return SopDecomposition(self.base, self.sigma * factor, self.sample_rate, dict(self.meta))


def zero_decomposition(s0, sample_rate: float, n: int) -> SopDecomposition:
    return SopDecomposition(s0, np.zeros((n, 3)), sample_rate, {"kind": "zero"})


def _ou_component(rng, variance, a, n):
    innov = rng.standard_normal(n)
    innov[0] *= np.sqrt(variance)
    innov[1:] *= np.sqrt(variance * (1.0 - a * a))
    return lfilter([1.0], [1.0, -a], innov)


def ou_tangent_process(s0, params: TangentNoiseParams, sample_rate: float, n: int, seed) -> SopDecomposition:
    """Stationary two-component OU perturbation in the tangent plane of ``s0``.

    Each component has variance ``rho^2/2`` and autocorrelation
    ``(rho^2/2) exp(-gamma |tau|)``.  The update is the exact AR(1)
    discretization, started from the stationary law.
    """
    s0 = as_stokes(s0)
    if n < 2:
        raise ValueError("n must be >= 2")
    gamma = params.correlation_rate
    if not sample_rate > 10.0 * gamma / (2.0 * np.pi):
        raise AliasingError(
            f"sample rate {sample_rate:g} Hz too low for correlation rate {gamma:g} 1/s"
        )
    rng = np.random.default_rng(seed)
    e1, e2 = tangent_basis(s0)
    variance = params.rms_amplitude**2 / 2.0
    a = np.exp(-gamma / sample_rate)
    x1 = _ou_component(rng, variance, a, n)
    x2 = _ou_component(rng, variance, a, n)
    sigma = np.outer(x1, e1) + np.outer(x2, e2)
    meta = {"kind": "ou", "rms_amplitude": params.rms_amplitude, "correlation_rate": gamma}
    return SopDecomposition(s0, sigma, sample_rate, meta)


def ou_psd(freq, rms_amplitude: float, correlation_rate: float) -> np.ndarray:
    """One-sided PSD (per Hz) of a single OU tangent component."""
    omega = 2.0 * np.pi * np.asarray(freq, dtype=float)
    variance = rms_amplitude**2 / 2.0
    return 4.0 * variance * correlation_rate / (correlation_rate**2 + omega**2)


def span_accumulate(
    base: SopDecomposition, chain: SpanChainParams, normalize_rms: float | None = None
) -> SopDecomposition:
    """Delayed coherent sum of one perturbation over ``span_count`` spans.

    ``sigma_total(t) = w * sum_k sigma(t - k*delay)``, trimmed to the region
    where every delayed copy exists.  With ``normalize_rms`` the result is
    rescaled to that rms; otherwise amplitudes add as they fall.
    """
    step = int(round(chain.walkoff_delay * base.sample_rate))
    total_shift = (chain.span_count - 1) * step
    n = len(base)
    if total_shift >= n:
        raise InsufficientLengthError(
            f"trace of {n} samples cannot hold a total delay of {total_shift} samples"
        )
    out_len = n - total_shift
    acc = np.zeros((out_len, 3))
    for k in range(chain.span_count):
        start = total_shift - k * step
        acc += base.sigma[start : start + out_len]
    acc *= chain.per_span_weight
    if normalize_rms is not None:
        rms = np.sqrt(np.mean(np.sum(acc**2, axis=1)))
        if rms > 0:
            acc *= normalize_rms / rms
    meta = dict(base.meta)
    meta.update(span_count=chain.span_count, walkoff_delay=chain.walkoff_delay, delay_samples=step)
    return SopDecomposition(base.base, acc, base.sample_rate, meta)


def dirichlet_gain(freq, span_count: int, delay: float) -> np.ndarray:
    """Power gain |sum_k exp(-i w k delay)|^2 of the delayed coherent sum."""
    x = np.pi * np.asarray(freq, dtype=float) * delay
    num = np.sin(span_count * x)
    den = np.sin(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (num / den) ** 2
    return np.where(np.abs(den) < 1e-12, float(span_count) ** 2, g)


def _frame_samples(spec: WdmLoadSpec, sample_rate: float) -> int:
    ns = spec.frame_period * sample_rate
    if abs(ns - round(ns)) > 1e-6 * ns:
        raise LoadConfigError(
            f"frame period must span an integer number of samples (got {ns:.6f})"
        )
    return int(round(ns))


def frame_pattern(spec: WdmLoadSpec, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """One frame of a zero-mean, walk-off filtered +/-1 chip pattern."""
    ns = _frame_samples(spec, sample_rate)
    nc = spec.chips_per_frame
    chips = rng.choice([-1.0, 1.0], size=nc)
    idx = np.floor(np.arange(ns) * nc / ns).astype(int)
    raw = chips[idx]
    # circular single-pole low-pass keeps the pattern exactly periodic
    spectrum = np.fft.rfft(raw)
    f = np.fft.rfftfreq(ns, d=1.0 / sample_rate)
    spectrum /= 1.0 + 1j * f / spec.walkoff_cutoff
    spectrum[0] = 0.0
    return np.fft.irfft(spectrum, n=ns)


def _tile(frame: np.ndarray, n: int, shift: int = 0) -> np.ndarray:
    frame = np.roll(frame, shift)
    reps = -(-n // len(frame))
    return np.tile(frame, reps)[:n]


def _random_tangent(rng, e1, e2) -> np.ndarray:
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return np.cos(phi) * e1 + np.sin(phi) * e2


def wdm_perturbation(
    s0, spec: WdmLoadSpec, amplitude_per_channel, sample_rate: float, n: int, seed
) -> SopDecomposition:
    """Perturbation induced by ``spec.channel_count`` data channels.

    Channel ``m`` adds ``a_m p_m(t) u_m`` with ``p_m`` a periodic pattern
    (period ``frame_period``) and ``u_m`` a fixed tangent direction.  In
    ``CORRELATED`` mode all channels carry the same pattern; in
    ``DECORRELATED`` mode each channel has its own pattern delayed by
    ``m * channel_delay``; ``ASE`` swaps the patterns for OU noise with the
    rms of the decorrelated realization and bandwidth ``walkoff_cutoff``.
    """
    s0 = as_stokes(s0)
    if spec.walkoff_cutoff >= sample_rate / 2:
        raise LoadConfigError("walk-off cutoff above Nyquist")
    if n / sample_rate < 10 * spec.frame_period:
        raise InsufficientLengthError("need at least 10 frames to resolve the frame lines")
    m = spec.channel_count
    amps = np.broadcast_to(np.asarray(amplitude_per_channel, dtype=float), (m,))
    rng = np.random.default_rng(seed)
    e1, e2 = tangent_basis(s0)
    if spec.aligned_directions:
        shared = _random_tangent(rng, e1, e2)
        dirs = np.tile(shared, (m, 1))
    else:
        dirs = np.array([_random_tangent(rng, e1, e2) for _ in range(m)])

    meta = {"kind": "wdm", "mode": spec.mode.value, "channel_count": m}
    if spec.mode is LoadMode.CORRELATED:
        p = _tile(frame_pattern(spec, sample_rate, rng), n)
        sigma = np.outer(p, amps @ dirs)
        return SopDecomposition(s0, sigma, sample_rate, meta)

    sigma = np.zeros((n, 3))
    delay_step = int(round(spec.channel_delay * sample_rate))
    for ch in range(m):
        p = _tile(frame_pattern(spec, sample_rate, rng), n, shift=ch * delay_step)
        sigma += amps[ch] * np.outer(p, dirs[ch])
    if spec.mode is LoadMode.DECORRELATED:
        return SopDecomposition(s0, sigma, sample_rate, meta)

    rms = float(np.sqrt(np.mean(np.sum(sigma**2, axis=1))))
    params = TangentNoiseParams(rms, 2.0 * np.pi * spec.walkoff_cutoff)
    ase = ou_tangent_process(s0, params, sample_rate, n, rng)
    ase.meta.update(meta)
    return ase


def compose_probe(decomp: SopDecomposition) -> SopTimeSeries:
    """Map ``S0 + sigma(t)`` back onto the sphere sample by sample."""
    if np.any(np.linalg.norm(decomp.sigma, axis=1) >= 1.0):
        raise AmplitudeError("|sigma| must stay below 1 rad")
    return SopTimeSeries(retract(decomp.base, decomp.sigma), decomp.sample_rate)


def export_decomposition(decomp: SopDecomposition, path) -> Path:
    """Write a realization as ``.npz`` (binary) or ``.csv`` depending on suffix."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, base=decomp.base, sigma=decomp.sigma, sample_rate=decomp.sample_rate)
    elif path.suffix == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# base", *(f"{x:.17g}" for x in decomp.base), "sample_rate", f"{decomp.sample_rate:.17g}"])
            w.writerow(["t_s", "sigma1", "sigma2", "sigma3"])
            for k, row in enumerate(decomp.sigma):
                w.writerow([f"{k / decomp.sample_rate:.17g}", *(f"{x:.17g}" for x in row)])
    else:
        raise ValueError(f"unsupported trace format: {path.suffix}")
    return path


def load_decomposition(path) -> SopDecomposition:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return SopDecomposition(data["base"], data["sigma"], float(data["sample_rate"]))
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    base = np.array([float(x) for x in head[1:4]])
    sample_rate = float(head[5])
    sigma = np.array([[float(x) for x in r[1:4]] for r in rows[2:]])
    return SopDecomposition(base, sigma, sample_rate)
