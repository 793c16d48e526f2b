"""Frame-level symbol recovery for Bob."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft

from ..core import SampleFrame, SymbolFrame, SyncError, Unit
from ..tx import RRC_SPAN, ModulationConfig, rrc_taps, shape_symbols
from .carrier import (PhaseTrackState, analytic_band, freq_offset_fit, initial_phase,
                      ukf_phase_track)
from .whitening import WhiteningFilter


@dataclass
class RxConfig:
    nominal_offset_hz: float = 2.3e8
    search_hz: float = 2e7
    pilot_bw_hz: float = 1e6  # frequency fit band
    # The tracker sees a wider band: a pre-filter narrower than the UKF loop
    # bandwidth would hide fast phase wander the quantum symbols still carry.
    ukf_bw_hz: float = 16e6
    linewidth_hz: float = 200.0  # sets the UKF process variance
    sigma_params: tuple = (1e-3, 2.0, 0.0)
    noise_per_sample: float | None = None  # SNU variance of the real photocurrent; None: 1 + t/2
    t_noise: float = 62.72e-3
    smooth: bool = True
    sync_ref_symbols: int = 10_000
    sync_threshold: float = 30.0  # correlation peak power over median
    band_margin_hz: float = 5e6


@dataclass
class FrameReport:
    frame_id: int
    freq_offset_hz: float
    delay: float
    v_rpn: float
    sync_ok: bool
    phase0: float = 0.0
    peak_ratio: float = 0.0


def fold_decimate(Y: np.ndarray, sps: int) -> np.ndarray:
    """Time-domain decimation by ``sps`` carried out on a full-length spectrum."""
    n = Y.size
    return fft.ifft(Y.reshape(sps, n // sps).sum(axis=0)) / sps


@dataclass
class CarrierEstimate:
    """Carrier phase relative to the nominal pilot line: Phi(t) = 2*pi*f_pilot*t + theta(t)."""

    theta: np.ndarray
    freq_offset_hz: float
    v_rpn: float


def estimate_carrier(Xw: np.ndarray, n: int, cfg: ModulationConfig, rx: RxConfig,
                     frame_id: int = 0) -> CarrierEstimate:
    fs = cfg.sample_rate_hz
    f = fft.rfftfreq(n, 1 / fs)
    centre = cfg.pilot_freq_hz + rx.nominal_offset_hz
    win = np.flatnonzero(np.abs(f - centre) <= rx.search_hz)
    f_line = f[win[np.argmax(np.abs(Xw[win]))]]
    pil = analytic_band(Xw, n, f_line - rx.pilot_bw_hz / 2, f_line + rx.pilot_bw_hz / 2, fs)
    f_hat = freq_offset_fit(SampleFrame(pil, fs, Unit.SNU_NORMALIZED, frame_id))
    t = np.arange(n) / fs
    wide = analytic_band(Xw, n, f_line - rx.ukf_bw_hz / 2, f_line + rx.ukf_bw_hz / 2, fs)
    bb = wide * np.exp(-2j * np.pi * f_hat * t)
    sig2 = rx.noise_per_sample if rx.noise_per_sample is not None else 1 + rx.t_noise / 2
    r = 2 * sig2  # white-equivalent variance per component of the analytic pilot
    a2 = np.mean(np.abs(bb) ** 2) - 2 * r * rx.ukf_bw_hz / fs
    frame = SampleFrame(bb, fs, Unit.SNU_NORMALIZED, frame_id)
    st = PhaseTrackState.from_link(rx.linewidth_hz, fs, r, amplitude=float(np.sqrt(max(a2, 1e-30))),
                                   theta_hat=initial_phase(frame), p_cov=1.0,
                                   sigma_params=rx.sigma_params)
    psi, rpn = ukf_phase_track(frame, st, smooth=rx.smooth)
    theta = psi + 2 * np.pi * (f_hat - cfg.pilot_freq_hz) * t
    # Wiener phase above the tracker band never reaches the filter
    v_rpn = rpn.v_rpn + 2 * rx.linewidth_hz / (np.pi * rx.ukf_bw_hz)
    return CarrierEstimate(theta, f_hat - cfg.pilot_freq_hz, v_rpn)


def reference_waveform(tx_reference: np.ndarray, n_symbols: int, cfg: ModulationConfig) -> np.ndarray:
    ref = np.zeros(n_symbols, complex)
    ref[: tx_reference.size] = tx_reference
    return shape_symbols(ref, cfg.sps, rrc_taps(cfg.rrc_rolloff, RRC_SPAN, cfg.sps))


def find_delay(B: np.ndarray, R: np.ndarray) -> tuple[float, float, float]:
    """Cyclic cross-correlation peak: (delay with parabolic refinement, phase, peak/median)."""
    c = fft.ifft(B * np.conj(R))
    mag = np.abs(c)
    d = int(np.argmax(mag))
    n = c.size
    y0, y1, y2 = mag[(d - 1) % n], mag[d], mag[(d + 1) % n]
    den = y0 - 2 * y1 + y2
    frac = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    delay = d if d <= n // 2 else d - n
    ratio = float(y1 ** 2 / np.median(mag ** 2))
    return delay + frac, float(np.angle(c[d])), ratio


def recover_symbols(frame: SampleFrame, wf: WhiteningFilter | None, cfg: ModulationConfig,
                    tx_reference: SymbolFrame | np.ndarray, rx: RxConfig | None = None, *,
                    carrier_theta: np.ndarray | None = None, delay: float | None = None,
                    return_report: bool = False):
    """Whiten, track the carrier, synchronise and matched-filter one frame.

    ``frame`` is a real photocurrent in SNU.  ``tx_reference`` holds the
    leading public symbols used for timing and the residual constant phase.
    ``carrier_theta`` replaces the pilot-based phase estimate (oracle
    tests); ``delay`` skips the timing search (pooled estimates).
    Output symbols are scaled so that shot noise is 1 per quadrature.
    """
    rx = rx or RxConfig()
    fs = cfg.sample_rate_hz
    sps = cfg.sps
    x = frame.samples.real
    n = x.size
    if n % sps:
        raise ValueError("frame length must be a multiple of samples per symbol")
    X = fft.rfft(x)
    Xw = wf.apply_rfft(X, n) if wf is not None else X
    if carrier_theta is None:
        car = estimate_carrier(Xw, n, cfg, rx, frame.frame_id)
        theta, f_off, v_rpn = car.theta, car.freq_offset_hz, car.v_rpn
    else:
        theta, f_off, v_rpn = carrier_theta, float("nan"), float("nan")
    t = np.arange(n) / fs
    lo, hi = cfg.band_hz
    off = rx.nominal_offset_hz if not np.isfinite(f_off) else f_off
    a = analytic_band(Xw, n, lo + off - rx.band_margin_hz, hi + off + rx.band_margin_hz, fs)
    a *= np.exp(-1j * (2 * np.pi * cfg.signal_center_hz * t + theta))
    B = fft.fft(a)
    del a
    ref_syms = tx_reference.symbols if isinstance(tx_reference, SymbolFrame) else np.asarray(tx_reference)
    ref_syms = ref_syms[: rx.sync_ref_symbols]
    R = fft.fft(reference_waveform(ref_syms, n // sps, cfg))
    d_est, phase0, ratio = find_delay(B, R)
    if ratio < rx.sync_threshold:
        raise SyncError(f"correlation peak ratio {ratio:.1f} below threshold", frame.frame_id)
    if delay is None:
        delay = d_est
    else:
        # keep the phase reading at the imposed delay
        c = fft.ifft(B * np.conj(R))
        phase0 = float(np.angle(c[int(round(delay)) % n]))
    k = fft.fftfreq(n) * n
    taps = rrc_taps(cfg.rrc_rolloff, RRC_SPAN, sps)
    kern = np.zeros(n)
    c0 = (taps.size - 1) // 2
    kern[(np.arange(taps.size) - c0) % n] = taps
    Y = B * np.exp(2j * np.pi * k * delay / n) * fft.fft(kern)
    y = fold_decimate(Y, sps) * np.exp(-1j * phase0) / np.sqrt(2)
    out = SymbolFrame(y, cfg.baud_rate_hz, frame.frame_id)
    if return_report:
        return out, FrameReport(frame.frame_id, f_off, float(delay), v_rpn, True, phase0, ratio)
    return out


def write_dsp_report(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "freq_offset_hz", "delay", "v_rpn", "sync_ok"])
        for r in reports:
            w.writerow([r.frame_id, f"{r.freq_offset_hz:.3f}", f"{r.delay:.4f}", f"{r.v_rpn:.6e}", int(r.sync_ok)])
