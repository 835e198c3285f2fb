"""Simulation and analysis toolkit for polarization-scrambling interferometry.

Modules
-------
stokes      Stokes/Jones algebra, Haar rotations, tangent-plane geometry.
nldp        SOP perturbation processes (OU, span chains, WDM loads).
psi         Interferometer model, analyzer scans and scan averaging.
spectral    PSD estimation, reference subtraction, Lorentzian fitting.
oracle      Monte Carlo sphere averaging of the beat product.
experiments End-to-end scenarios and artifact manifests.
"""

from .stokes import JonesField, SopTimeSeries, haar_rotation, jones_to_stokes, stokes_to_jones
from .nldp import LoadMode, SopDecomposition, SpanChainParams, TangentNoiseParams, WdmLoadSpec
from .psi import PsiConfig, ScanConfig, full_field_beat, measure_spectrum, synthesize_beat
from .spectral import LorentzianFit, RfSpectrum, fit_lorentzian, periodogram
from .oracle import OracleReport, mc_sphere_acf

__version__ = "0.1.0"

__all__ = [
    "JonesField",
    "SopTimeSeries",
    "haar_rotation",
    "jones_to_stokes",
    "stokes_to_jones",
    "LoadMode",
    "SopDecomposition",
    "SpanChainParams",
    "TangentNoiseParams",
    "WdmLoadSpec",
    "PsiConfig",
    "ScanConfig",
    "full_field_beat",
    "measure_spectrum",
    "synthesize_beat",
    "LorentzianFit",
    "RfSpectrum",
    "fit_lorentzian",
    "periodogram",
    "OracleReport",
    "mc_sphere_acf",
]
