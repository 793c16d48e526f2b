"""Alice's waveform synthesis: Gaussian symbols, RRC shaping, SSB shift, pilot, DAC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

from .core import ConfigError, DomainError, SampleFrame, SymbolFrame, Unit
from .snu import gaussian_stream

RRC_SPAN = 20


@dataclass
class ModulationConfig:
    v_mod: float = 8.41
    baud_rate_hz: float = 1e8
    sample_rate_hz: float = 1e9
    rrc_rolloff: float = 0.2
    signal_center_hz: float = 1e8
    pilot_freq_hz: float = 1.8e8
    # absolute pilot amplitude in waveform units; None derives it from pilot_power_db
    pilot_amplitude: float | None = None
    pilot_power_db: float = 20.0
    dac_bits: int = 16

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.rrc_rolloff <= 1:
            raise ConfigError("rrc_rolloff must lie in (0, 1]")
        if self.v_mod < 0:
            raise ConfigError("v_mod must be non-negative")
        ratio = self.sample_rate_hz / self.baud_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 2:
            raise ConfigError("sample rate must be an integer multiple (>= 2) of the baud rate")
        edge = self.signal_center_hz + (1 + self.rrc_rolloff) * self.baud_rate_hz / 2
        if not self.pilot_freq_hz > edge:
            raise ConfigError(f"pilot at {self.pilot_freq_hz:g} Hz overlaps the signal band ending at {edge:g} Hz")
        if not 4 <= self.dac_bits <= 24:
            raise ConfigError("dac_bits must lie in [4, 24]")

    @property
    def sps(self) -> int:
        return int(round(self.sample_rate_hz / self.baud_rate_hz))

    @property
    def signal_power(self) -> float:
        """Mean |s|^2 per sample of the shaped quantum band."""
        return self.v_mod / self.sps

    @property
    def pilot_amp(self) -> float:
        if self.pilot_amplitude is not None:
            return self.pilot_amplitude
        return float(np.sqrt(self.signal_power * 10 ** (self.pilot_power_db / 10)))

    @property
    def band_hz(self) -> tuple[float, float]:
        half = (1 + self.rrc_rolloff) * self.baud_rate_hz / 2
        return self.signal_center_hz - half, self.signal_center_hz + half


def generate_symbols(count: int, cfg: ModulationConfig, seed: int, frame_id: int = 0) -> SymbolFrame:
    """Complex Gaussian symbols with Var(x) + Var(p) = v_mod."""
    if count <= 0:
        raise DomainError("count must be positive")
    if cfg.v_mod == 0:
        return SymbolFrame(np.zeros(count, complex), cfg.baud_rate_hz, frame_id)
    x = gaussian_stream(count, cfg.v_mod / 2, seed, 2 * frame_id)
    p = gaussian_stream(count, cfg.v_mod / 2, seed, 2 * frame_id + 1)
    return SymbolFrame(x + 1j * p, cfg.baud_rate_hz, frame_id)


def rrc_taps(rolloff: float, span_symbols: int = RRC_SPAN, samples_per_symbol: int = 10) -> np.ndarray:
    """Root-raised-cosine impulse response, unit energy, exactly symmetric.

    Length is ``span_symbols * samples_per_symbol + 1`` so that the peak sits
    on a sample.
    """
    if not 0 < rolloff <= 1:
        raise DomainError("rolloff must lie in (0, 1]")
    if span_symbols < 8 or samples_per_symbol < 2:
        raise DomainError("need span >= 8 symbols and >= 2 samples per symbol")
    N = span_symbols * samples_per_symbol + 1
    t = (np.arange(N) - (N - 1) / 2) / samples_per_symbol
    b = rolloff
    h = np.empty(N)
    at_zero = np.isclose(t, 0.0)
    at_sing = np.isclose(np.abs(4 * b * t), 1.0)
    reg = ~(at_zero | at_sing)
    tr = t[reg]
    h[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[at_zero] = 1 - b + 4 * b / np.pi
    h[at_sing] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                   + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    h = 0.5 * (h + h[::-1])
    return h / np.sqrt(np.sum(h ** 2))


def circular_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase circular convolution with a centred odd-length kernel."""
    L = x.size
    k = np.zeros(L)
    c = (taps.size - 1) // 2
    idx = (np.arange(taps.size) - c) % L
    np.add.at(k, idx, taps)
    return fft.ifft(fft.fft(x) * fft.fft(k))


def shape_symbols(symbols: np.ndarray, sps: int, taps: np.ndarray) -> np.ndarray:
    up = np.zeros(symbols.size * sps, complex)
    up[::sps] = symbols
    return circular_filter(up, taps)


def synthesize_waveform(symbols: SymbolFrame, cfg: ModulationConfig) -> SampleFrame:
    """Periodic complex waveform: one DAC memory loop of the symbol frame."""
    cfg.validate()
    sps = cfg.sps
    base = shape_symbols(symbols.symbols, sps, rrc_taps(cfg.rrc_rolloff, RRC_SPAN, sps))
    t = np.arange(base.size) / cfg.sample_rate_hz
    wave = base * np.exp(2j * np.pi * cfg.signal_center_hz * t)
    amp = cfg.pilot_amp
    if amp:
        wave += amp * np.exp(2j * np.pi * cfg.pilot_freq_hz * t)
    return SampleFrame(wave, cfg.sample_rate_hz, Unit.SNU_NORMALIZED, symbols.frame_id)


@dataclass(frozen=True)
class DacReport:
    step: float
    clip_count: int
    noise_variance: float  # per real component, frame units (step**2 / 12)

    @property
    def xi_quant_input(self) -> float:
        """Excess noise the quantizer adds to Alice's quadratures (SNU, channel input)."""
        return self.noise_variance


def dac_quantize(frame: SampleFrame, bits: int, full_scale: float) -> tuple[SampleFrame, DacReport]:
    """Two's-complement uniform quantizer applied to I and Q separately.

    Levels are k * step, step = full_scale / 2**(bits-1), k in
    [-2**(bits-1), 2**(bits-1) - 1]; zero is a level.
    """
    if not 4 <= bits <= 24:
        raise DomainError("bits must lie in [4, 24]")
    if not full_scale > 0:
        raise DomainError("full_scale must be positive")
    step = full_scale / 2 ** (bits - 1)
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    out = []
    clips = 0
    for comp in (frame.samples.real, frame.samples.imag):
        k = np.round(comp / step)
        clips += int(np.count_nonzero((k < lo) | (k > hi)))
        out.append(np.clip(k, lo, hi) * step)
    q = frame.replace(out[0] + 1j * out[1])
    return q, DacReport(step=step, clip_count=clips, noise_variance=step ** 2 / 12)
