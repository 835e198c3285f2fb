"""Virtual polarization scrambling interferometer and gated spectrum analyzer.

The probe is split into two arms.  Arm B is frequency shifted by the AOM and
passes a slow polarization scrambler, modelled as one Haar-random rotation
per analyzer scan.  The beat between the arms is detected and its spectrum
averaged over many scans, so that the average runs over the whole Poincare
sphere.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Protocol

import numpy as np
from scipy.special import jv

from .nldp import (
    SopDecomposition,
    SpanChainParams,
    TangentNoiseParams,
    WdmLoadSpec,
    compose_probe,
    ou_tangent_process,
    span_accumulate,
    wdm_perturbation,
    zero_decomposition,
)
from .spectral import BeatTrace, GridMismatchError, RfSpectrum, periodogram
from .stokes import SopTimeSeries, as_stokes, haar_rotation, rotation_to_su2, stokes_to_jones

logger = logging.getLogger(__name__)

WORKERS_ENV = "STOKESPEC_WORKERS"
SCAN_CHUNK = 32
# full_field_beat output / synthesize_beat output for unit-power arms
FIELD_ENVELOPE_RATIO = np.sqrt(2.0)


class ScramblerConfigError(RuntimeError):
    """Antipodal exclusion leaves no usable scrambler settings."""


@dataclass(frozen=True)
class PsiConfig:
    aom_frequency: float = 27.1e6
    static_phase: float = 0.0
    arm_power_imbalance_db: float = 0.0
    path_delay_mismatch: float = 0.0
    scrambler_rate: float = 10.0
    antipodal_epsilon: float = 0.1
    detector_noise_density: float = 1e-13

    def __post_init__(self):
        if not self.aom_frequency > 0:
            raise ValueError("aom_frequency must be positive")
        if not 0.0 <= self.antipodal_epsilon < 2.0:
            raise ValueError("antipodal_epsilon must lie in [0, 2)")
        if self.detector_noise_density < 0:
            raise ValueError("detector_noise_density must be >= 0")

    @property
    def arm_gain(self) -> float:
        return 10.0 ** (-self.arm_power_imbalance_db / 20.0)


@dataclass(frozen=True)
class ScanConfig:
    sample_rate: float = 108.4e6
    samples_per_scan: int = 10840
    scan_count: int = 512
    target_rbw: float = 30e3
    expected_pedestal_width: float = 5e6

    def validate(self, psi: PsiConfig) -> None:
        if not self.sample_rate > 2.0 * (psi.aom_frequency + self.expected_pedestal_width):
            raise ValueError("sample_rate below Nyquist for carrier plus pedestal")
        if self.samples_per_scan / self.sample_rate < 1.0 / self.target_rbw:
            raise ValueError("scan too short for the target RBW")
        if self.scan_count < 1:
            raise ValueError("scan_count must be >= 1")


# --------------------------------------------------------------------------
# beat models


def beat_amplitude(s_a, s_b) -> np.ndarray:
    """Beat amplitude sqrt(1 + S_A . S_B) (vectorized over leading axes)."""
    s_a = as_stokes(s_a)
    s_b = as_stokes(s_b)
    dot = np.clip(np.sum(s_a * s_b, axis=-1), -1.0, 1.0)
    return np.sqrt(1.0 + dot)


def _delay_samples(cfg: PsiConfig, sample_rate: float, n: int) -> int:
    d = int(round(cfg.path_delay_mismatch * sample_rate))
    if d < 0 or d >= n:
        raise ValueError(f"path delay of {d} samples does not fit a {n}-sample trace")
    return d


def detector_noise(cfg: PsiConfig, sample_rate: float, n: int, rng) -> np.ndarray:
    """White noise whose one-sided density is ``cfg.detector_noise_density``."""
    if cfg.detector_noise_density == 0 or rng is None:
        return np.zeros(n)
    return rng.standard_normal(n) * np.sqrt(cfg.detector_noise_density * sample_rate / 2.0)


def synthesize_beat(probe: SopTimeSeries, scramble: np.ndarray, cfg: PsiConfig, rng=None) -> BeatTrace:
    """Beat photocurrent ``g sqrt(1 + S(t) . R S(t-d)) cos(w_aom t + theta)``.

    The output covers samples ``d..n-1`` of the probe, where ``d`` is the
    path mismatch in samples.  Detector noise is added only if ``rng`` is
    given.
    """
    fs = probe.sample_rate
    s = probe.samples
    d = _delay_samples(cfg, fs, len(s))
    s_a = s[d:]
    s_b = s[: len(s) - d] @ np.asarray(scramble).T
    t = np.arange(d, len(s)) / fs
    env = cfg.arm_gain * beat_amplitude(s_a, s_b) * np.exp(1j * cfg.static_phase)
    carrier = np.exp(2j * np.pi * cfg.aom_frequency * t)
    samples = np.real(env * carrier) + detector_noise(cfg, fs, len(t), rng)
    return BeatTrace(samples, fs, envelope=env)


def full_field_beat(
    probe: SopTimeSeries, common_phase, scramble: np.ndarray, cfg: PsiConfig
) -> BeatTrace:
    """Field-level interferometer: sum both arms' Jones fields and square-detect.

    ``common_phase`` is the polarization-independent optical phase applied
    identically to both arms (``None`` for zero).  The DC terms are removed
    so only the beat remains; the envelope is returned alongside.
    """
    fs = probe.sample_rate
    s = probe.samples
    n = len(s)
    d = _delay_samples(cfg, fs, n)
    phi = np.zeros(n) if common_phase is None else np.asarray(common_phase, dtype=float)
    if phi.shape != (n,):
        raise ValueError("common_phase must match the probe length")
    jones = stokes_to_jones(s)
    u = rotation_to_su2(scramble)
    t = np.arange(d, n) / fs
    e_a = jones[d:] * np.exp(1j * phi[d:])[:, None]
    e_b = (jones[: n - d] @ u.T) * np.exp(1j * phi[: n - d])[:, None]
    e_b *= (cfg.arm_gain * np.exp(-1j * (2 * np.pi * cfg.aom_frequency * t + cfg.static_phase)))[:, None]
    total = e_a + e_b
    intensity = np.sum(np.abs(total) ** 2, axis=1)
    dc = np.sum(np.abs(e_a) ** 2, axis=1) + np.sum(np.abs(e_b) ** 2, axis=1)
    # E_A^H E_B = c exp(-i w t)  =>  2 Re(...) = Re(2 conj(c) exp(i w t))
    c = np.sum(np.conj(e_a) * e_b, axis=1) * np.exp(2j * np.pi * cfg.aom_frequency * t)
    return BeatTrace(intensity - dc, fs, envelope=2.0 * np.conj(c))


# --------------------------------------------------------------------------
# perturbation sources (one fresh realization per scan)


class SigmaSource(Protocol):
    base: np.ndarray

    def realize(self, n: int, sample_rate: float, rng: np.random.Generator) -> SopDecomposition: ...


@dataclass(frozen=True)
class StaticSource:
    """Unperturbed probe (back-to-back reference)."""

    base: tuple = (0.0, 0.0, 1.0)

    def realize(self, n, sample_rate, rng):
        return zero_decomposition(self.base, sample_rate, n)


@dataclass(frozen=True)
class OuSource:
    params: TangentNoiseParams
    base: tuple = (0.0, 0.0, 1.0)

    def realize(self, n, sample_rate, rng):
        return ou_tangent_process(self.base, self.params, sample_rate, n, rng)


@dataclass(frozen=True)
class SpanSource:
    """OU per-span process summed over a chain of spans.

    ``draw_span_count`` fixes the length of the underlying OU draw so that
    sources with different span counts but the same seed share the
    realization (the newest copy is always the last ``n`` samples).  A sweep
    over span counts then differs only through the accumulation itself.
    """

    params: TangentNoiseParams
    chain: SpanChainParams
    normalize_rms: float | None = None
    base: tuple = (0.0, 0.0, 1.0)
    draw_span_count: int | None = None

    def realize(self, n, sample_rate, rng):
        step = int(round(self.chain.walkoff_delay * sample_rate))
        extra = (self.chain.span_count - 1) * step
        drawn = max(self.draw_span_count or 0, self.chain.span_count)
        raw = ou_tangent_process(self.base, self.params, sample_rate, n + (drawn - 1) * step, rng)
        raw = SopDecomposition(raw.base, raw.sigma[len(raw) - n - extra :], sample_rate, raw.meta)
        return span_accumulate(raw, self.chain, self.normalize_rms)


@dataclass(frozen=True)
class WdmSource:
    spec: WdmLoadSpec
    amplitude_per_channel: float
    base: tuple = (0.0, 0.0, 1.0)

    def realize(self, n, sample_rate, rng):
        return wdm_perturbation(self.base, self.spec, self.amplitude_per_channel, sample_rate, n, rng)


# --------------------------------------------------------------------------
# scans


def scan_rng(seed: int, scan_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(scan_index)]))


def draw_scrambler(s0, epsilon: float, rng: np.random.Generator, max_draws: int = 10_000):
    """Haar rotation with ``1 + S0 . R S0 >= epsilon``.

    Returns ``(rotation, rejected_draws)``.
    """
    s0 = as_stokes(s0)
    for rejected in range(max_draws):
        r = haar_rotation(rng)
        if 1.0 + s0 @ r @ s0 >= epsilon:
            return r, rejected
    raise ScramblerConfigError(
        f"no scrambler setting outside the antipodal cap after {max_draws} draws (epsilon={epsilon})"
    )


def run_scan(source: SigmaSource, cfg: PsiConfig, scan: ScanConfig, scan_index: int, seed: int) -> RfSpectrum:
    """One analyzer scan: fresh scrambler setting, fresh perturbation, periodogram."""
    rng = scan_rng(seed, scan_index)
    base = as_stokes(source.base)
    rotation, _ = draw_scrambler(base, cfg.antipodal_epsilon, rng)
    delay = int(round(cfg.path_delay_mismatch * scan.sample_rate))
    decomp = source.realize(scan.samples_per_scan + delay, scan.sample_rate, rng)
    probe = compose_probe(decomp)
    trace = synthesize_beat(probe, rotation, cfg, rng=rng)
    return periodogram(trace, scan.target_rbw)


def am_probe_trace(
    mod_frequency: float,
    mod_depth: float,
    cfg: PsiConfig,
    scan: ScanConfig,
    rng=None,
    spur_offsets=(),
    spur_level_db: float = -50.0,
    probe: SopTimeSeries | None = None,
) -> BeatTrace:
    """Direct detection of a null-biased, sinusoidally driven Mach-Zehnder probe.

    One interferometer arm is blocked, so only the intensity
    ``sin^2(m sin(2 pi f_m t))`` reaches the detector; its dominant tone sits
    at ``2 f_m``.  If ``probe`` is given the field carries that SOP series,
    which a polarization-blind detector cannot see.  ``spur_offsets`` inject
    control-loop tones ``spur_level_db`` below the main tone at
    ``2 f_m + offset``.
    """
    fs = scan.sample_rate
    n = scan.samples_per_scan
    t = np.arange(n) / fs
    field_amp = np.sin(mod_depth * np.sin(2 * np.pi * mod_frequency * t))
    if probe is not None:
        jones = stokes_to_jones(probe.samples[:n])
        intensity = np.sum(np.abs(field_amp[:, None] * jones) ** 2, axis=1)
    else:
        intensity = field_amp**2
    intensity = intensity - np.mean(intensity)
    main = abs(jv(2, 2 * mod_depth))
    spur_amp = main * 10.0 ** (spur_level_db / 20.0)
    for off in spur_offsets:
        intensity = intensity + spur_amp * np.cos(2 * np.pi * (2 * mod_frequency + off) * t)
    return BeatTrace(intensity + detector_noise(cfg, fs, n, rng), fs)


@dataclass(frozen=True)
class AmProbe:
    mod_frequency: float = 13.55e6
    mod_depth: float = 0.3
    spur_offsets: tuple = ()
    spur_level_db: float = -50.0
    perturbation: SigmaSource | None = None


def run_am_scan(am: AmProbe, cfg: PsiConfig, scan: ScanConfig, scan_index: int, seed: int) -> RfSpectrum:
    rng = scan_rng(seed, scan_index)
    probe = None
    if am.perturbation is not None:
        probe = compose_probe(am.perturbation.realize(scan.samples_per_scan, scan.sample_rate, rng))
    trace = am_probe_trace(
        am.mod_frequency, am.mod_depth, cfg, scan, rng, am.spur_offsets, am.spur_level_db, probe
    )
    return periodogram(trace, scan.target_rbw)


def _scan_chunk(scan_fn: Callable, start: int, stop: int) -> tuple[np.ndarray, np.ndarray, float]:
    first = scan_fn(start)
    total = first.power.copy()
    for k in range(start + 1, stop):
        total += scan_fn(k).power
    return first.frequencies, total, first.rbw


def resolve_workers(workers: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(workers or 1))


def average_scans(scan_fn: Callable[[int], RfSpectrum], scan_count: int, workers: int | None = 1) -> RfSpectrum:
    """ESA scan averaging with a summation order independent of ``workers``.

    Scans are grouped into fixed chunks; chunk sums are combined in index
    order, so serial and parallel runs give bit-identical spectra.
    """
    bounds = [(a, min(a + SCAN_CHUNK, scan_count)) for a in range(0, scan_count, SCAN_CHUNK)]
    workers = resolve_workers(workers)
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_scan_chunk, [scan_fn] * len(bounds), *zip(*bounds)))
    else:
        parts = [_scan_chunk(scan_fn, a, b) for a, b in bounds]
    freqs, total, rbw = parts[0]
    total = total.copy()
    for f, part, r in parts[1:]:
        if f.shape != freqs.shape or not np.isclose(r, rbw):
            raise GridMismatchError("scan chunks disagree on the frequency grid")
        total += part
    return RfSpectrum(freqs, total / scan_count, rbw, scan_count=scan_count)


def measure_spectrum(
    source: SigmaSource, cfg: PsiConfig, scan: ScanConfig, seed: int, workers: int | None = 1
) -> RfSpectrum:
    """Scan-averaged PSI spectrum of a probe perturbed by ``source``."""
    scan.validate(cfg)
    return average_scans(partial(run_scan, source, cfg, scan, seed=seed), scan.scan_count, workers)


def measure_am_spectrum(
    am: AmProbe, cfg: PsiConfig, scan: ScanConfig, seed: int, workers: int | None = 1
) -> RfSpectrum:
    """Scan-averaged spectrum of the AM control probe (arm A blocked)."""
    return average_scans(partial(run_am_scan, am, cfg, scan, seed=seed), scan.scan_count, workers)
