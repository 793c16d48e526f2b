import configparser

import numpy as np
import pytest
from scipy import fft, stats

from lloqkd.channel import (ChannelParams, DetectorModel, adc_sample, detector_response, eta_at,
                            make_measurement_set, one_pole_coefficient, propagate, wiener_phase)
from lloqkd.core import DomainError, NoiseBudget, SampleFrame, Unit
from lloqkd.snu import snu_calibrate
from lloqkd.tx import ModulationConfig


def _snu(x, fid=0):
    return SampleFrame(np.asarray(x, complex), 1e9, Unit.SNU_NORMALIZED, fid)


def test_eta_at_100km():
    assert ChannelParams().eta == pytest.approx(0.0284, abs=5e-5)
    assert eta_at(0, 0.146, 0.82) == pytest.approx(0.82)


def test_identity_channel_returns_real_part():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000) + 1j * rng.normal(size=1000)
    ch = ChannelParams(length_km=0, coupling_transmittance=1.0, linewidth_tx_hz=0, linewidth_rx_hz=0,
                       freq_offset_hz=0)
    det = DetectorModel(tau=1.0, t_noise=0.0, bandwidth_hz=None)
    # switch the vacuum off by zeroing shot noise: subtract a vacuum-only run with the same seed
    y, tr = propagate(_snu(x), ch, det, seed=3, theta0=0.0)
    v, _ = propagate(_snu(np.zeros(1000)), ch, det, seed=3, theta0=0.0)
    assert np.allclose(y.samples.real - v.samples.real, x.real, atol=1e-12)
    assert np.all(tr.theta == 0)


def test_vacuum_variance():
    det = DetectorModel()
    y, _ = propagate(_snu(np.zeros(2_000_000)), ChannelParams(), det, seed=1)
    n = y.samples.size
    target = 1 + det.t_noise / 2
    assert abs(np.var(y.samples.real, ddof=1) - target) < 5 * target * np.sqrt(2 / n) + 1e-3


def test_vacuum_variance_flat_response_tight():
    det = DetectorModel(bandwidth_hz=None)
    y, _ = propagate(_snu(np.zeros(2_000_000)), ChannelParams(), det, seed=2)
    n = y.samples.size
    target = 1 + det.t_noise / 2
    assert abs(np.var(y.samples.real, ddof=1) - target) < 5 * target * np.sqrt(2 / n)


def test_propagate_requires_snu():
    with pytest.raises(DomainError):
        propagate(SampleFrame(np.zeros(4), 1e9, Unit.ADC_COUNTS), ChannelParams(), DetectorModel(), 0)


def test_wiener_increments():
    tr = wiener_phase(10 ** 7, 200.0, 1e9, seed=4)
    d = np.diff(tr.theta)
    target = 2 * np.pi * 200 * 1e-9
    n = d.size
    assert abs(np.var(d, ddof=1) - target) < 5 * target * np.sqrt(2 / n)
    # whiteness: first ten lag autocorrelations within 5/sqrt(n)
    dc = d - d.mean()
    for lag in range(1, 11):
        rho = np.dot(dc[:-lag], dc[lag:]) / np.dot(dc, dc)
        assert abs(rho) < 5 / np.sqrt(n)
    assert np.array_equal(tr.theta[:100], wiener_phase(100, 200.0, 1e9, seed=4).theta)
    assert not np.array_equal(tr.theta[:100], wiener_phase(100, 200.0, 1e9, seed=5).theta)
    assert np.all(wiener_phase(50, 0.0, 1e9, seed=1, theta0=0.3).theta == 0.3)
    with pytest.raises(DomainError):
        wiener_phase(10, -1.0, 1e9, seed=1)


def test_detector_response_bandwidth():
    n = 1 << 16
    H = detector_response(n, 1e9, 3.65e8)
    f = fft.rfftfreq(n, 1e-9)
    k = np.argmin(np.abs(f - 3.65e8))
    assert np.abs(H[k]) ** 2 / np.abs(H[0]) ** 2 == pytest.approx(0.5, abs=2e-3)
    w = np.full(f.size, 2.0)
    w[0] = w[-1] = 1
    assert np.sum(w * np.abs(H) ** 2) / n == pytest.approx(1.0)
    a = one_pole_coefficient(3.65e8, 1e9)
    assert 0 < a < 1


def test_transmittance_law():
    # signal power through the channel, noise-corrected, equals eta*tau; carrier-only input
    ch = ChannelParams(linewidth_tx_hz=0, linewidth_rx_hz=0, freq_offset_hz=0)
    det = DetectorModel(bandwidth_hz=None)
    n = 200_000
    t = np.arange(n) * 1e-9
    amp = 10.0
    ratios = []
    for k in range(100):
        x = amp * np.exp(2j * np.pi * 1e8 * t)
        y, _ = propagate(_snu(x, k), ch, det, seed=k, theta0=0.0)
        ratios.append((np.mean(y.samples.real ** 2) - (1 + det.t_noise / 2)) / (amp ** 2 / 2))
    ratios = np.array(ratios)
    se = ratios.std(ddof=1) / np.sqrt(ratios.size)
    assert abs(ratios.mean() - ch.eta * det.tau) < 5 * se + 1e-12


def test_measurement_set_clearance_and_calibration(tmp_path):
    mod = ModulationConfig()
    det = DetectorModel()
    ms = make_measurement_set(mod, ChannelParams(), det, n_frames=1, samples_per_frame=400_000,
                              seed=3, n_calib_frames=2)
    assert all(f.unit == Unit.ADC_COUNTS for f in ms.signal_frames + ms.vacuum_frames + ms.electronic_frames)
    cal = snu_calibrate(ms.vacuum_frames, ms.electronic_frames)
    assert cal.clearance_db == pytest.approx(15.0, abs=1.0)
    # configured scale: counts per shot-noise standard deviation, squared
    assert cal.snu_scale == pytest.approx(det.adc_counts_per_snu ** 2, rel=0.01)
    ms.write(tmp_path)
    cp = configparser.ConfigParser()
    cp.read(tmp_path / "manifest.ini")
    assert float(cp["channel"]["eta"]) == pytest.approx(ChannelParams().eta)
    assert (tmp_path / "signal_00000.cvqf").exists()


def test_measurement_set_without_electronic_noise():
    ms = make_measurement_set(ModulationConfig(), ChannelParams(), DetectorModel(), n_frames=1,
                              samples_per_frame=100_000, seed=3, n_calib_frames=1, electronic_noise=False)
    from lloqkd.snu import frame_variance

    assert frame_variance(ms.electronic_frames[0]) == 0
    cal = snu_calibrate(ms.vacuum_frames, ms.electronic_frames)
    assert np.isinf(cal.clearance_db)


def test_adc_sampling_clips():
    det = DetectorModel(adc_bits=8, adc_counts_per_snu=100.0)
    q, clips = adc_sample(_snu(np.array([0.0, 0.5, 3.0, -3.0])), det)
    assert clips == 2
    assert q.samples.real.tolist() == [0.0, 50.0, 127.0, -128.0]


def test_injected_noise_adds_to_variance():
    ch = ChannelParams(xi_injected=NoiseBudget(xi_rin=0.1, xi_other=0.1))
    det = DetectorModel(bandwidth_hz=None, t_noise=0.0)
    y, _ = propagate(_snu(np.zeros(1_000_000)), ch, det, seed=9)
    assert np.var(y.samples.real) == pytest.approx(1.1, rel=0.01)
