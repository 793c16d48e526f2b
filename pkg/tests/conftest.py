import numpy as np
import pytest
from scipy import fft

from lloqkd.channel import ChannelParams, DetectorModel, propagate
from lloqkd.core import SampleFrame, Unit


def bandlimited_noise(n, var, bw, fs, rng):
    """Complex white noise of per-component variance ``var`` (full band) restricted to |f| <= bw/2."""
    v = rng.normal(0, np.sqrt(var), n) + 1j * rng.normal(0, np.sqrt(var), n)
    V = fft.fft(v)
    V[np.abs(fft.fftfreq(n, 1 / fs)) > bw / 2] = 0
    return fft.ifft(V)


def vacuum_frames(n_frames, n, det, seed, first_id=0, ch=None):
    ch = ch or ChannelParams()
    zero = np.zeros(n)
    return [propagate(SampleFrame(zero, 1e9, Unit.SNU_NORMALIZED, first_id + k), ch, det, seed,
                      signal_on=False)[0] for k in range(n_frames)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class _Criterion:
    """Records one acceptance line; an exception inside the block counts as a failure."""

    def __init__(self, number: int):
        self.number = number
        self.detail = ""
        self.ok = False

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and not self.detail:
            self.detail = f"{exc_type.__name__}: {exc}"
        ok = self.ok and exc_type is None
        _ACCEPTANCE[self.number] = (ok, self.detail)
        print(f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {self.detail}")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
