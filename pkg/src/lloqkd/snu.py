"""Shot-noise calibration, QRNG stand-in and the binary frame format."""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .core import CalibrationError, DomainError, FormatError, SampleFrame, Unit, CalibrationRecord

MAGIC = b"CVQF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def frame_variance(frame: SampleFrame) -> float:
    """Unbiased per-quadrature variance.

    ADC frames carry a real photocurrent (imaginary part identically zero);
    for genuinely complex frames the two quadrature variances are averaged.
    """
    s = frame.samples
    if not np.any(s.imag):
        return float(np.var(s.real, ddof=1))
    return 0.5 * float(np.var(s.real, ddof=1) + np.var(s.imag, ddof=1))


def snu_calibrate(vacuum_frames: Sequence[SampleFrame],
                  electronic_frames: Sequence[SampleFrame]) -> CalibrationRecord:
    if not vacuum_frames or not electronic_frames:
        raise CalibrationError("calibration needs vacuum and electronic frames")
    for f in (*vacuum_frames, *electronic_frames):
        if f.unit != Unit.ADC_COUNTS:
            raise CalibrationError(f"frame {f.frame_id} is not in ADC counts")
    v_vac = float(np.mean([frame_variance(f) for f in vacuum_frames]))
    v_el = float(np.mean([frame_variance(f) for f in electronic_frames]))
    return calibration_from_variances(v_vac, v_el)


def calibration_from_variances(v_vac: float, v_el: float) -> CalibrationRecord:
    if v_el < 0 or v_vac - v_el <= 0:
        raise CalibrationError(
            f"vacuum variance {v_vac:.6g} does not exceed electronic variance {v_el:.6g}")
    return CalibrationRecord(vacuum_variance=v_vac, electronic_variance=v_el)


def to_snu(frame: SampleFrame, cal: CalibrationRecord) -> SampleFrame:
    """Rescale ADC counts so that pure shot noise has unit variance.

    Electronic noise stays in the data; its level in SNU is
    ``cal.electronic_snu``.
    """
    if frame.unit == Unit.SNU_NORMALIZED:
        return frame
    return frame.replace(frame.samples / np.sqrt(cal.snu_scale), unit=Unit.SNU_NORMALIZED)


# -- QRNG stand-in ----------------------------------------------------------

def uniform_words(count: int, seed: int, stream: int = 0) -> np.ndarray:
    """64-bit words from a counter-based generator keyed by (seed, stream)."""
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    return bg.random_raw(count).astype(np.uint64)


def gaussian_from_uniform(uniform_words, variance: float) -> np.ndarray:
    """Inverse-CDF map from raw unsigned words to N(0, variance).

    At most the top 52 bits of each word are used so the open-interval
    midpoint grid (k + 1/2) / 2**b is exact in float64 and never touches 0 or 1.
    """
    if not variance > 0:
        raise DomainError("variance must be positive")
    w = np.asarray(uniform_words)
    if w.size == 0:
        return np.zeros(0)
    if not np.issubdtype(w.dtype, np.unsignedinteger):
        if np.any(w < 0):
            raise DomainError("uniform words must be non-negative integers")
        w = w.astype(np.uint64)
    bits = w.dtype.itemsize * 8
    keep = min(bits, 52)
    top = (w.astype(np.uint64) >> np.uint64(bits - keep)).astype(np.float64)
    u = (top + 0.5) * 2.0 ** -keep
    return ndtri(u) * np.sqrt(variance)


def gaussian_stream(count: int, variance: float, seed: int, stream: int = 0) -> np.ndarray:
    return gaussian_from_uniform(uniform_words(count, seed, stream), variance)


# -- frame files --------------------------------------------------------------

def write_frame(frame: SampleFrame, path) -> None:
    """Write a frame; samples are stored as little-endian float32 pairs."""
    rate_khz = frame.sample_rate_hz / 1e3
    if rate_khz != int(rate_khz) or not 0 < rate_khz < 2 ** 32:
        raise FormatError("sample rate must be a whole number of kHz below 2**32")
    n = frame.samples.size
    if n >= 2 ** 32:
        raise FormatError("frame too long for the u32 sample count")
    payload = np.empty(2 * n, dtype="<f4")
    payload[0::2] = frame.samples.real
    payload[1::2] = frame.samples.imag
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, int(frame.unit), n, int(rate_khz)))
        payload.tofile(f)


def read_frame(path, frame_id: int = 0) -> SampleFrame:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, unit, count, rate_khz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if unit not in (0, 1):
        raise FormatError(f"{path}: unknown unit code {unit}")
    if count == 0 or rate_khz == 0:
        raise FormatError(f"{path}: empty frame or zero sample rate")
    if len(raw) != _HEADER.size + 8 * count:
        raise FormatError(f"{path}: payload holds {len(raw) - _HEADER.size} bytes, expected {8 * count}")
    iq = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return SampleFrame(iq[0::2] + 1j * iq[1::2], rate_khz * 1e3, Unit(unit), frame_id)


def frame_io_roundtrip(frame: SampleFrame, path) -> SampleFrame:
    write_frame(frame, path)
    return read_frame(path, frame.frame_id)
