"""Pilot-aided carrier recovery: band selection, frequency fit, UKF phase tracking."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numba as nb
import numpy as np
from scipy import fft
from scipy.optimize import brentq

from ..core import ConfigError, EstimationError, SampleFrame, TrackingError

# rms per-sample phase step above which the pilot is treated as absent
UNWRAP_STEP_LIMIT = 0.5


def analytic_band(X: np.ndarray, n: int, f_lo: float, f_hi: float, fs: float) -> np.ndarray:
    """Analytic signal restricted to [f_lo, f_hi] from the rfft ``X`` of a real frame.

    Equivalent to an ideal band-pass followed by a Hilbert transform.
    """
    f = fft.rfftfreq(n, 1 / fs)
    Y = np.zeros(n, complex)
    sel = (f >= f_lo) & (f <= f_hi)
    Y[: f.size][sel] = 2 * X[sel]
    if n % 2 == 0 and sel[-1]:
        Y[n // 2] = X[-1]
    if sel[0]:
        Y[0] = X[0]
    return fft.ifft(Y)


def pilot_extract(frame: SampleFrame, pilot_freq_hz: float, bw_hz: float = 1e6,
                  guard_band: tuple[float, float] | None = None) -> SampleFrame:
    """Complex analytic pilot from a real frame (1 MHz brick-wall band by default).

    ``guard_band`` is an optional (lo, hi) quantum band the pilot filter must
    not touch.
    """
    fs = frame.sample_rate_hz
    lo, hi = pilot_freq_hz - bw_hz / 2, pilot_freq_hz + bw_hz / 2
    if not (0 < lo and hi < fs / 2):
        raise ConfigError("pilot band must lie inside (0, fs/2)")
    if guard_band is not None and lo < guard_band[1] and hi > guard_band[0]:
        raise ConfigError("pilot filter overlaps the signal band")
    x = frame.samples.real
    return frame.replace(analytic_band(fft.rfft(x), x.size, lo, hi, fs))


def strongest_line(frame: SampleFrame, f_lo: float, f_hi: float) -> float:
    """Frequency of the largest periodogram bin of a real frame inside [f_lo, f_hi]."""
    x = frame.samples.real
    X = np.abs(fft.rfft(x))
    f = fft.rfftfreq(x.size, 1 / frame.sample_rate_hz)
    sel = np.flatnonzero((f >= f_lo) & (f <= f_hi))
    if sel.size == 0:
        raise ConfigError("search window holds no frequency bins")
    return float(f[sel[np.argmax(X[sel])]])


def freq_offset_fit(pilot: SampleFrame) -> float:
    """Pilot frequency in Hz as the maximum of the periodogram.

    The coarse FFT peak is refined within one bin by a root search on the
    derivative of ``|sum p(t) exp(-2j pi f t)|**2``, evaluated on block sums
    (the residual rotation inside a block is at most 2 pi / 4096).  Unlike a
    slope fit to the unwrapped phase this cannot pick up 2 pi slips.
    """
    p = pilot.samples
    n = p.size
    fs = pilot.sample_rate_hz
    if n < 2:
        raise EstimationError("pilot too short for a frequency fit")
    P = np.abs(fft.fft(p))
    k = int(np.argmax(P))
    f0 = fft.fftfreq(n, 1 / fs)[k]
    t = np.arange(n) / fs
    q = p * np.exp(-2j * np.pi * f0 * t)
    dph = np.angle(q[1:] * np.conj(q[:-1]))
    if np.sqrt(np.mean(dph ** 2)) > UNWRAP_STEP_LIMIT:
        raise EstimationError(f"pilot phase too noisy (rms step {np.sqrt(np.mean(dph ** 2)):.3f} rad)")
    L = max(1, n // 4096)
    m = -(-n // L)
    Q = np.pad(q, (0, m * L - n)).reshape(m, L).sum(axis=1)
    tm = (np.arange(m) * L + (L - 1) / 2) / fs
    tm -= tm.mean()

    def slope(d):
        e = Q * np.exp(-2j * np.pi * d * tm)
        return float(np.real(np.conj(e.sum()) * np.sum(-2j * np.pi * tm * e)))

    bin_hz = fs / n
    grid = np.linspace(-bin_hz, bin_hz, 41)
    mag = np.abs(np.exp(-2j * np.pi * np.outer(grid, tm)) @ Q)
    i = int(np.argmax(mag))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    d = grid[i]
    if slope(lo) > 0 > slope(hi):
        d = brentq(slope, lo, hi, xtol=1e-12 * bin_hz, rtol=4 * np.finfo(float).eps)
    return float(f0 + d)


@dataclass
class PhaseTrackState:
    theta_hat: float = 0.0
    p_cov: float = 1.0
    process_var_q: float = 0.0
    meas_var_r: float = 1.0
    sigma_params: tuple = (1e-3, 2.0, 0.0)
    amplitude: float | None = None
    p_ceiling: float = 10.0

    def __post_init__(self):
        if not self.p_cov > 0:
            raise ValueError("p_cov must be positive")

    @classmethod
    def from_link(cls, linewidth_hz: float, sample_rate_hz: float, noise_psd_per_sample: float,
                  **kw) -> "PhaseTrackState":
        """q from the combined linewidth, r as the white per-sample noise of each component."""
        return cls(process_var_q=2 * np.pi * linewidth_hz / sample_rate_hz,
                   meas_var_r=noise_psd_per_sample, **kw)


@dataclass
class RpnEstimate:
    v_rpn: float
    source: str = "filter"

    def __post_init__(self):
        if self.v_rpn < 0:
            raise ValueError("v_rpn must be non-negative")


@nb.njit(cache=True)
def _ukf_scalar(yr, yi, A, q, r, m0, P0, alpha, beta, kappa, p_ceiling, m_out, P_out, Pp_out):
    n = yr.size
    L = 1.0
    lam = alpha * alpha * (L + kappa) - L
    c = L + lam
    wm0 = lam / c
    wc0 = wm0 + (1.0 - alpha * alpha + beta)
    wi = 0.5 / c
    m = m0
    P = P0
    for k in range(n):
        # predict: random walk
        Pp = P + q
        mp = m
        s = np.sqrt(c * Pp)
        x0 = mp
        x1 = mp + s
        x2 = mp - s
        # measurement sigma points (A cos, A sin)
        z0r = A * np.cos(x0)
        z0i = A * np.sin(x0)
        z1r = A * np.cos(x1)
        z1i = A * np.sin(x1)
        z2r = A * np.cos(x2)
        z2i = A * np.sin(x2)
        zr = wm0 * z0r + wi * (z1r + z2r)
        zi = wm0 * z0i + wi * (z1i + z2i)
        d0r, d0i = z0r - zr, z0i - zi
        d1r, d1i = z1r - zr, z1i - zi
        d2r, d2i = z2r - zr, z2i - zi
        Srr = wc0 * d0r * d0r + wi * (d1r * d1r + d2r * d2r) + r
        Sii = wc0 * d0i * d0i + wi * (d1i * d1i + d2i * d2i) + r
        Sri = wc0 * d0r * d0i + wi * (d1r * d1i + d2r * d2i)
        Cr = wi * (s * d1r - s * d2r)
        Ci = wi * (s * d1i - s * d2i)
        det = Srr * Sii - Sri * Sri
        # K = C S^-1
        Kr = (Cr * Sii - Ci * Sri) / det
        Ki = (Ci * Srr - Cr * Sri) / det
        er = yr[k] - zr
        ei = yi[k] - zi
        m = mp + Kr * er + Ki * ei
        P = Pp - (Kr * Cr + Ki * Ci)
        if P <= 0.0 or P > p_ceiling or not np.isfinite(m):
            return k
        m_out[k] = m
        P_out[k] = P
        Pp_out[k] = Pp
    return -1


@nb.njit(cache=True)
def _rts_random_walk(m, P, Pp):
    n = m.size
    ms = m.copy()
    Ps = P.copy()
    for k in range(n - 2, -1, -1):
        G = P[k] / Pp[k + 1]
        ms[k] = m[k] + G * (ms[k + 1] - m[k])
        Ps[k] = P[k] + G * G * (Ps[k + 1] - Pp[k + 1])
    return ms, Ps


def ukf_phase_track(pilot_baseband: SampleFrame, init: PhaseTrackState,
                    smooth: bool = True) -> tuple[np.ndarray, RpnEstimate]:
    """Track the phase of a baseband pilot A*exp(i*theta) + noise.

    The filter runs left to right over every sample; with ``smooth`` a
    Rauch-Tung-Striebel pass over the stored filter moments follows (the
    state model is linear, so the backward pass is exact).  The returned
    V_RPN is the mean posterior variance, i.e. the filter's own estimate of
    the residual phase-error variance.
    """
    y = pilot_baseband.samples
    A = init.amplitude
    if A is None:
        # in-band noise is small next to the pilot at useful SNR
        A = float(np.sqrt(np.mean(np.abs(y) ** 2)))
    n = y.size
    m = np.empty(n)
    P = np.empty(n)
    Pp = np.empty(n)
    m0 = init.theta_hat
    alpha, beta, kappa = init.sigma_params
    q = max(init.process_var_q, 1e-18)
    fail = _ukf_scalar(np.ascontiguousarray(y.real), np.ascontiguousarray(y.imag), A, q,
                       init.meas_var_r, m0, init.p_cov, alpha, beta, kappa, init.p_ceiling, m, P, Pp)
    if fail >= 0:
        raise TrackingError(f"UKF diverged at sample {fail}", pilot_baseband.frame_id)
    if smooth:
        m, P = _rts_random_walk(m, P, Pp)
    return m, RpnEstimate(float(np.mean(P)), "filter")


def initial_phase(pilot_baseband: SampleFrame, n: int = 1000) -> float:
    return float(np.angle(np.sum(pilot_baseband.samples[:n])))


def hilbert_phase(pilot_baseband: SampleFrame) -> np.ndarray:
    """Raw per-sample phase of the analytic pilot (reference estimator)."""
    return np.unwrap(np.angle(pilot_baseband.samples))


def phase_error_variance(theta_hat: np.ndarray, theta_true: np.ndarray) -> float:
    """Variance of the wrapped difference after removing its common offset."""
    d = np.angle(np.exp(1j * (theta_hat - theta_true)))
    return float(np.var(d))
