import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, signal

from stokespec.spectral import (
    CSV_COLUMNS,
    AcfEstimate,
    BeatTrace,
    GridMismatchError,
    LorentzianFit,
    ResolutionError,
    RfSpectrum,
    acf,
    acf_to_psd,
    carrier_mask,
    detect_spikes,
    esa_average,
    fit_lorentzian,
    fwhm_vs_distance,
    integrated_power,
    lorentzian,
    normalize_peak,
    pedestal_power,
    periodogram,
    read_fit_json,
    read_spectrum_csv,
    segment_length,
    subtract_reference,
    tone_power,
    write_fit_json,
    write_spectrum_csv,
)

FS = 108.4e6
RBW = 30e3
F = np.arange(0, 54.2e6, 20e3)


def spectrum(power, rbw=RBW, **kw):
    return RfSpectrum(F[: len(power)], power, rbw, **kw)


def test_segment_length_sets_rbw():
    n = segment_length(FS, RBW)
    assert n == 5420
    # ENBW of a periodic Hann window is 1.5 bins
    w = signal.get_window("hann", n)
    enbw = FS * np.sum(w**2) / np.sum(w) ** 2
    assert enbw == pytest.approx(RBW, rel=1e-3)


def test_periodogram_resolution_guard():
    with pytest.raises(ResolutionError):
        periodogram(BeatTrace(np.zeros(5000), FS), RBW)


def test_pure_tone_power():
    t = np.arange(200_000) / FS
    for f0, amp in ((27.1e6, 0.7), (13.37e6, 2.0)):
        s = periodogram(BeatTrace(amp * np.cos(2 * np.pi * f0 * t + 0.4), FS), RBW)
        assert 10 * np.log10(tone_power(s, f0) / (amp**2 / 2)) == pytest.approx(0.0, abs=0.1)


def test_white_noise_density_and_parseval(rng):
    sigma = 0.3
    x = rng.normal(0, sigma, 1_000_000)
    s = periodogram(BeatTrace(x, FS), RBW)
    assert 10 * np.log10(np.mean(s.power[1:-1]) / (2 * sigma**2 / FS)) == pytest.approx(0.0, abs=0.2)
    assert integrated_power(s) == pytest.approx(np.mean(x**2), rel=0.005)


def test_biased_acf(rng):
    x = rng.normal(size=50_000)
    est = acf(BeatTrace(x, FS), 100 / FS)
    assert est.values[0] == pytest.approx(np.mean(x**2))
    assert est.values[3] == pytest.approx(np.sum(x[:-3] * x[3:]) / len(x))
    with pytest.raises(ValueError):
        acf(BeatTrace(x, FS), 0.5 * len(x) / FS)


def test_wiener_khinchin_on_ou(rng):
    gamma = 2 * np.pi * 1e6
    a = np.exp(-gamma / FS)
    x = signal.lfilter([1.0], [1.0, -a], rng.normal(size=1_000_000) * np.sqrt(1 - a * a))
    tr = BeatTrace(x, FS)
    s = periodogram(tr, RBW)
    sel = (s.frequencies > 1e5) & (s.frequencies < 1e7)
    bt = acf_to_psd(acf(tr, 10e-6), s.frequencies[sel])
    assert np.max(np.abs(10 * np.log10(bt / s.power[sel]))) < 1.0


def test_acf_to_psd_of_delta_is_flat():
    est = AcfEstimate(np.arange(10) / FS, np.r_[1.0, np.zeros(9)])
    np.testing.assert_allclose(acf_to_psd(est, [0, 1e6, 3e7]), 2 / FS)
    with pytest.raises(ValueError):
        acf_to_psd(est, [0.0], lag_window="boxcar")


def test_esa_average_weights_by_scan_count():
    a = spectrum(np.ones(10), scan_count=1)
    b = spectrum(4 * np.ones(10), scan_count=3)
    avg = esa_average([a, b])
    np.testing.assert_allclose(avg.power, 3.25)
    assert avg.scan_count == 4
    with pytest.raises(GridMismatchError):
        esa_average([a, spectrum(np.ones(10), rbw=2 * RBW)])
    with pytest.raises(ValueError):
        esa_average([])


def test_normalize_peak():
    s = normalize_peak(spectrum(np.r_[1.0, 5.0, 2.0]))
    assert s.power.max() == 1.0
    with pytest.raises(ValueError):
        normalize_peak(spectrum(np.zeros(3)))


def test_subtract_reference_clamps_and_masks():
    p = np.full(200, 1e-6)
    p[100] = 1.0
    s = spectrum(p)
    res = subtract_reference(s, s, floor=1e-12)
    np.testing.assert_allclose(res.power, 1e-12)
    assert not res.usable[100] and res.usable[0]
    assert np.count_nonzero(~res.usable) == np.count_nonzero(np.abs(F[:200] - F[100]) <= 2 * RBW)
    with pytest.raises(GridMismatchError):
        subtract_reference(s, spectrum(p[:-1]))


def test_carrier_mask_width():
    s = spectrum(np.ones(100))
    m = carrier_mask(s, F[50], 2.0)
    assert np.count_nonzero(~m) == 7  # +/- 60 kHz on a 20 kHz grid


def lorentz_spectrum(a=1e-5, f0=27.1e6, w=2e6, c=1e-9, noise=0.0, seed=0):
    f = F[(F > 10e6) & (F < 45e6)]
    y = lorentzian(f, a, f0, w, c)
    if noise:
        y = y * np.random.default_rng(seed).gamma(1 / noise**2, noise**2, size=len(y))
    return RfSpectrum(f, y, RBW)


def test_fit_recovers_exact_lorentzian():
    fit = fit_lorentzian(lorentz_spectrum())
    assert fit.converged and not fit.degenerate
    assert fit.fwhm == pytest.approx(2e6, rel=1e-6)
    assert fit.center == pytest.approx(27.1e6, rel=1e-9)
    assert fit.amplitude == pytest.approx(1e-5, rel=1e-6)
    assert fit.floor == pytest.approx(1e-9, rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3e6, 6e6), st.floats(20e6, 34e6), st.floats(1e-7, 1e-3))
def test_fit_recovers_random_lorentzians(w, f0, a):
    fit = fit_lorentzian(lorentz_spectrum(a, f0, w, c=a * 1e-3))
    assert fit.converged
    assert fit.fwhm == pytest.approx(w, rel=1e-4)
    assert fit.center == pytest.approx(f0, abs=1.0)


def test_fit_agrees_with_scipy_on_noisy_data():
    s = lorentz_spectrum(noise=0.1, seed=3)
    fit = fit_lorentzian(s)
    p, _ = optimize.curve_fit(lorentzian, s.frequencies, s.power, p0=[1e-5, 27e6, 1.5e6, 0.0])
    assert fit.fwhm == pytest.approx(p[2], rel=1e-4)
    assert fit.amplitude == pytest.approx(p[0], rel=1e-4)


def test_log_space_fit():
    fit = fit_lorentzian(lorentz_spectrum(noise=0.05, seed=1), log_space=True)
    assert fit.fwhm == pytest.approx(2e6, rel=0.03)


def test_flat_spectrum_is_degenerate(rng):
    s = RfSpectrum(F[:1000], 1e-9 * rng.gamma(100, 0.01, 1000), RBW)
    fit = fit_lorentzian(s)
    assert fit.degenerate and not fit.converged


def test_fit_band_and_mask():
    s = lorentz_spectrum()
    with pytest.raises(ValueError):
        fit_lorentzian(s, band=(27e6, 27.5e6))
    mask = np.abs(s.frequencies - 27.1e6) > 1e5
    fit = fit_lorentzian(s, mask=mask)
    assert fit.fwhm == pytest.approx(2e6, rel=1e-6)


def fit_with(w, converged=True):
    return LorentzianFit(1.0, 27.1e6, w, 0.0, 0.0, converged)


def test_fwhm_table_flags():
    good = fwhm_vs_distance([(100, fit_with(3e6)), (50, fit_with(4e6)), (200, fit_with(2e6))])
    assert good.strictly_decreasing and not good.flags
    assert [r["distance"] for r in good.rows] == [50, 100, 200]
    bad = fwhm_vs_distance([(50, fit_with(3e6)), (100, fit_with(3e6, converged=False))])
    assert not bad.strictly_decreasing
    assert len(bad.flags) == 2


def comb(prominence_db=20.0, frame_rate=200e3, carrier=27.1e6):
    p = np.full(len(F), 1e-6)
    p[np.argmin(np.abs(F - carrier))] = 1.0
    for sign in (-1, 1):
        p[np.argmin(np.abs(F - carrier - sign * frame_rate))] = 1e-6 * 10 ** (prominence_db / 10)
    return RfSpectrum(F, p, RBW)


def test_spikes_detected_with_prominence():
    spikes = detect_spikes(comb(20.0), 200e3, carrier=27.1e6)
    assert len(spikes) == 2
    assert all(s.detected for s in spikes)
    np.testing.assert_allclose([s.prominence_db for s in spikes], 20.0, atol=1e-9)
    assert {round(s.offset_hz) for s in spikes} == {-200_000, 200_000}


def test_no_spikes_on_smooth_pedestal():
    spikes = detect_spikes(comb(0.0), 200e3, carrier=27.1e6)
    assert not any(s.detected for s in spikes)


def test_spike_detection_needs_resolution():
    with pytest.raises(ValueError):
        detect_spikes(comb(), 50e3, carrier=27.1e6)


def test_pedestal_power_closed_form():
    s = spectrum(np.full(1000, 2.0))
    assert pedestal_power(s, (1e6, 5e6)) == pytest.approx(8e6)
    with pytest.raises(ValueError):
        pedestal_power(s, (1e6, 1e9))


def test_spectrum_csv_round_trip(tmp_path):
    s = lorentz_spectrum()
    path = write_spectrum_csv(s, tmp_path / "s.csv")
    with path.open() as fh:
        assert tuple(next(csv.reader(fh))) == CSV_COLUMNS
    back = read_spectrum_csv(path, s.rbw)
    np.testing.assert_allclose(back.power, s.power, rtol=1e-11)
    np.testing.assert_allclose(back.frequencies, s.frequencies, atol=1e-6)


def test_fit_json_round_trip(tmp_path):
    fit = fit_lorentzian(lorentz_spectrum())
    path = write_fit_json(fit, tmp_path / "f.json")
    rec = json.loads(path.read_text())
    for key in ("amplitude", "center_hz", "fwhm_hz", "floor", "residual_rms", "converged", "scan_count"):
        assert key in rec
    back = read_fit_json(path)
    assert back.fwhm == fit.fwhm and back.converged == fit.converged
