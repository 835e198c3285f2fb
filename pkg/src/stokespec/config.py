"""Scenario configuration: one TOML file with a section per parameter block.

Example::

    kind = "distance_sweep"
    seed = 1234
    output_dir = "runs/sweep"

    [scan]
    scan_count = 512

    [spans]
    span_counts = [1, 2, 5, 10, 20]

Unknown keys are rejected and every validation message carries the dotted
path of the offending field.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .nldp import LoadMode, SpanChainParams, TangentNoiseParams, WdmLoadSpec
from .psi import AmProbe, PsiConfig, ScanConfig


class ConfigError(ValueError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ScenarioKind(str, enum.Enum):
    DISTANCE_SWEEP = "distance_sweep"
    BTB = "btb"
    AM_CONTROL = "am_control"
    LOAD_COMPARISON = "load_comparison"
    ORACLE_SUITE = "oracle_suite"


@dataclass
class NoiseSection:
    rms_amplitude: float = 0.05
    # per-span Lorentzian width; 0.2 / gamma is then exactly 2 samples at 108.4 MHz
    fwhm_hz: float = 3.45e6

    def params(self) -> TangentNoiseParams:
        return TangentNoiseParams.from_fwhm(self.rms_amplitude, self.fwhm_hz)


@dataclass
class SpanSection:
    span_counts: list = field(default_factory=lambda: [1, 2, 5, 10, 20])
    walkoff_delay_factor: float = 0.2
    per_span_weight: float = 1.0
    normalize_rms: float | None = 0.05
    km_per_span: float = 50.0

    def chain(self, span_count: int, correlation_rate: float) -> SpanChainParams:
        return SpanChainParams(span_count, self.walkoff_delay_factor / correlation_rate, self.per_span_weight)


@dataclass
class WdmSection:
    channel_count: int = 10
    frame_period: float = 5e-6
    symbol_rate: float = 56e9
    chip_rate: float = 50e6
    walkoff_cutoff: float = 2e6
    channel_delay: float = 100e-9
    aligned_directions: bool = True
    amplitude_per_channel: float = 0.02
    # recorded as metadata only
    channel_spacing_ghz: float = 62.5
    gap_width_ghz: float = 125.0
    gap_center_thz: float = 193.9

    def spec(self, mode) -> WdmLoadSpec:
        return WdmLoadSpec(
            channel_count=self.channel_count,
            mode=LoadMode(mode),
            frame_period=self.frame_period,
            symbol_rate=self.symbol_rate,
            chip_rate=self.chip_rate,
            walkoff_cutoff=self.walkoff_cutoff,
            channel_delay=self.channel_delay,
            aligned_directions=self.aligned_directions,
        )


@dataclass
class AmSection:
    mod_frequency: float = 13.55e6
    mod_depth: float = 0.3
    spur_offsets: list = field(default_factory=list)
    spur_level_db: float = -50.0
    band: list = field(default_factory=lambda: [26e6, 28.2e6])

    def probe(self, perturbation=None) -> AmProbe:
        return AmProbe(self.mod_frequency, self.mod_depth, tuple(self.spur_offsets), self.spur_level_db, perturbation)


@dataclass
class AnalysisSection:
    fit_half_span: float = 10e6
    pedestal_half_span: float = 10e6
    mask_width_rbw: float = 2.0
    clamp_floor: float = 1e-12
    spike_threshold_db: float = 6.0
    spike_max_order: int = 1
    log_space_refit: bool = False


@dataclass
class OracleSection:
    rotation_count: int = 100_000
    rho: float = 0.05
    fwhm_hz: float = 2e6
    epsilon: float = 0.1
    samples: int = 1024
    rho_sweep: list = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.2])
    epsilon_sweep: list = field(default_factory=lambda: [0.0, 0.1, 0.25, 0.5])


@dataclass
class ScenarioConfig:
    kind: ScenarioKind
    seed: int
    output_dir: Path
    workers: int = 1
    psi: PsiConfig = field(default_factory=PsiConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    noise: NoiseSection = field(default_factory=NoiseSection)
    spans: SpanSection = field(default_factory=SpanSection)
    wdm: WdmSection = field(default_factory=WdmSection)
    am: AmSection = field(default_factory=AmSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    oracle: OracleSection = field(default_factory=OracleSection)

    def to_dict(self) -> dict:
        def plain(v):
            if dataclasses.is_dataclass(v):
                return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
            if isinstance(v, enum.Enum):
                return v.value
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        return plain(self)


SECTIONS = {
    "psi": PsiConfig,
    "scan": ScanConfig,
    "noise": NoiseSection,
    "spans": SpanSection,
    "wdm": WdmSection,
    "am": AmSection,
    "analysis": AnalysisSection,
    "oracle": OracleSection,
}


def _build_section(name: str, cls, data) -> object:
    if not isinstance(data, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    for key, value in data.items():
        default = known[key].default
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key}", f"expected a number, got {value!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def config_from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    data = dict(data)
    if "seed" not in data:
        raise ConfigError("seed", "a seed is mandatory")
    seed = data.pop("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    try:
        kind = ScenarioKind(data.pop("kind"))
    except KeyError:
        raise ConfigError("kind", "missing scenario kind") from None
    except ValueError as exc:
        raise ConfigError("kind", str(exc)) from None
    out = data.pop("output_dir", f"runs/{kind.value}")
    out = Path(out)
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    workers = data.pop("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers", "must be a positive integer")
    sections = {}
    for key, value in data.items():
        if key not in SECTIONS:
            raise ConfigError(key, "unknown section")
        sections[key] = _build_section(key, SECTIONS[key], value)
    cfg = ScenarioConfig(kind=kind, seed=seed, output_dir=out, workers=workers, **sections)
    validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def validate(cfg: ScenarioConfig) -> None:
    """Cross-field checks; raises :class:`ConfigError`."""
    try:
        cfg.scan.validate(cfg.psi)
    except ValueError as exc:
        raise ConfigError("scan", str(exc)) from exc
    try:
        cfg.noise.params()
    except ValueError as exc:
        raise ConfigError("noise", str(exc)) from exc
    counts = cfg.spans.span_counts
    if not counts or any(isinstance(n, bool) or not isinstance(n, int) or n < 1 for n in counts):
        raise ConfigError("spans.span_counts", "must be a non-empty list of positive integers")
    if cfg.spans.normalize_rms is not None and not 0 < cfg.spans.normalize_rms <= 0.3:
        raise ConfigError("spans.normalize_rms", "must lie in (0, 0.3]")
    try:
        cfg.wdm.spec(LoadMode.CORRELATED)
    except ValueError as exc:
        raise ConfigError("wdm", str(exc)) from exc
    nyq = cfg.scan.sample_rate / 2
    if cfg.wdm.walkoff_cutoff >= nyq:
        raise ConfigError("wdm.walkoff_cutoff", "above Nyquist")
    if cfg.analysis.fit_half_span <= 0 or cfg.psi.aom_frequency + cfg.analysis.fit_half_span > nyq:
        raise ConfigError("analysis.fit_half_span", "fit band must lie between 0 Hz and Nyquist")
    if cfg.psi.aom_frequency + cfg.analysis.pedestal_half_span > nyq:
        raise ConfigError("analysis.pedestal_half_span", "pedestal band exceeds Nyquist")
    if not 0.0 <= cfg.oracle.epsilon < 2.0:
        raise ConfigError("oracle.epsilon", "must lie in [0, 2)")
    if cfg.oracle.rotation_count < 2:
        raise ConfigError("oracle.rotation_count", "must be >= 2")
    if len(cfg.am.band) != 2 or cfg.am.band[0] >= cfg.am.band[1]:
        raise ConfigError("am.band", "expected [f_low, f_high]")
