"""Static equaliser estimated from vacuum-noise acquisitions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import fft, signal

from ..core import EstimationError, SampleFrame

FLOOR = 1e-6


@dataclass
class WhiteningFilter:
    """Inverse receiver response on an rfft grid of ``nfft`` points.

    The response is rebuilt as a minimum-phase filter from the averaged
    vacuum PSD, so the phase distortion of a minimum-phase front end is
    removed together with its magnitude.  Scaling keeps the mean vacuum
    power unchanged.
    """

    freq_response_inverse: np.ndarray
    n_frames_averaged: int
    sample_rate_hz: float

    @property
    def nfft(self) -> int:
        return 2 * (self.freq_response_inverse.size - 1)

    def response_for(self, n: int) -> np.ndarray:
        """Interpolate the inverse response onto the rfft grid of length ``n``."""
        if n == self.nfft:
            return self.freq_response_inverse
        f_src = np.linspace(0.0, 0.5, self.freq_response_inverse.size)
        f_dst = fft.rfftfreq(n)
        mag = np.interp(f_dst, f_src, np.log(np.abs(self.freq_response_inverse)))
        ph = np.interp(f_dst, f_src, np.unwrap(np.angle(self.freq_response_inverse)))
        return np.exp(mag + 1j * ph)

    def apply_rfft(self, X: np.ndarray, n: int) -> np.ndarray:
        return X * self.response_for(n)

    def apply(self, frame: SampleFrame) -> SampleFrame:
        x = frame.samples.real
        y = fft.irfft(self.apply_rfft(fft.rfft(x), x.size), n=x.size)
        return frame.replace(y)


def averaged_psd(frames: Sequence[SampleFrame], nperseg: int) -> np.ndarray:
    acc = None
    for f in frames:
        _, p = signal.welch(f.samples.real, nperseg=nperseg, window="hann",
                            return_onesided=True, detrend=False)
        acc = p if acc is None else acc + p
    return acc / len(frames)


def min_phase_from_magnitude(mag: np.ndarray) -> np.ndarray:
    """Minimum-phase spectrum (rfft grid) with the given magnitude (folded cepstrum)."""
    n = 2 * (mag.size - 1)
    c = fft.irfft(np.log(mag), n=n)
    fold = np.zeros(n)
    fold[0] = c[0]
    fold[1:n // 2] = 2 * c[1:n // 2]
    fold[n // 2] = c[n // 2]
    return np.exp(fft.rfft(fold))


def whitening_estimate(vacuum_frames: Sequence[SampleFrame], n_avg: int = 1000,
                       nperseg: int = 1024) -> WhiteningFilter:
    """Estimate the inverse front-end response from ``n_avg`` vacuum frames."""
    if n_avg < 2:
        raise EstimationError("whitening needs at least two averaged frames")
    if len(vacuum_frames) < n_avg:
        raise EstimationError(f"whitening needs {n_avg} vacuum frames, got {len(vacuum_frames)}")
    frames = list(vacuum_frames)[:n_avg]
    fs = frames[0].sample_rate_hz
    nperseg = min(nperseg, frames[0].samples.size)
    nperseg -= nperseg % 2
    psd = averaged_psd(frames, nperseg)
    psd = np.maximum(psd, FLOOR * psd.max())
    inv = min_phase_from_magnitude(1.0 / np.sqrt(psd))
    # unit mean noise-power gain: mean(|W|^2 * psd) == mean(psd)
    w = np.full(psd.size, 2.0)
    w[0] = w[-1] = 1.0
    gain = np.sum(w * np.abs(inv) ** 2 * psd) / np.sum(w * psd)
    return WhiteningFilter(inv / np.sqrt(gain), n_avg, fs)


def flat_filter(nfft: int, fs: float) -> WhiteningFilter:
    return WhiteningFilter(np.ones(nfft // 2 + 1, complex), 0, fs)
