"""Fiber, lasers and detector between Alice's DAC and Bob's ADC.

The detector produces one real RF-heterodyne photocurrent per sample,
normalised so that shot noise alone has unit variance per sample.  After
Bob's downconversion and matched filtering this becomes unit shot noise per
quadrature, with the signal quadratures scaled by sqrt(eta * tau / 2).
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft

from .core import DomainError, NoiseBudget, SampleFrame, SymbolFrame, Unit, rng_for
from .tx import ModulationConfig, generate_symbols, synthesize_waveform

# stream ids for rng_for(seed, frame_id, stream)
_S_PHASE, _S_SHOT, _S_ELEC, _S_XI, _S_SYMB = 1, 2, 3, 4, 5


@dataclass
class ChannelParams:
    length_km: float = 100.0
    atten_db_per_km: float = 0.146
    coupling_transmittance: float = 0.82
    linewidth_tx_hz: float = 100.0
    linewidth_rx_hz: float = 100.0
    freq_offset_hz: float = 2.3e8
    delay_samples: int = 0
    xi_injected: NoiseBudget = field(default_factory=NoiseBudget)

    def __post_init__(self):
        if self.length_km < 0 or self.atten_db_per_km < 0:
            raise DomainError("length and attenuation must be non-negative")
        if not 0 < self.coupling_transmittance <= 1:
            raise DomainError("coupling transmittance must lie in (0, 1]")
        if self.linewidth_tx_hz < 0 or self.linewidth_rx_hz < 0:
            raise DomainError("linewidths must be non-negative")

    @property
    def eta(self) -> float:
        return eta_at(self.length_km, self.atten_db_per_km, self.coupling_transmittance)

    @property
    def combined_linewidth_hz(self) -> float:
        return self.linewidth_tx_hz + self.linewidth_rx_hz


def eta_at(length_km, atten_db_per_km=0.146, coupling=0.82):
    return coupling * 10 ** (-atten_db_per_km * np.asarray(length_km) / 10)


@dataclass
class DetectorModel:
    tau: float = 0.68
    t_noise: float = 62.72e-3
    bandwidth_hz: float | None = 3.65e8  # None: flat response
    adc_bits: int = 16
    adc_counts_per_snu: float = 200.0  # ADC counts per sqrt(shot-noise variance)

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise DomainError("tau must lie in (0, 1]")
        if self.t_noise < 0:
            raise DomainError("t_noise must be non-negative")


@dataclass
class PhaseTrace:
    theta: np.ndarray
    wiener: np.ndarray | None = None

    def __len__(self):
        return self.theta.size


def wiener_phase(n: int, combined_linewidth_hz: float, sample_rate_hz: float, seed,
                 theta0: float = 0.0, frame_id: int = 0) -> PhaseTrace:
    """Random walk with N(0, 2*pi*dnu/fs) increments; theta[0] = theta0."""
    if n <= 0:
        raise DomainError("n must be positive")
    if combined_linewidth_hz < 0:
        raise DomainError("linewidth must be non-negative")
    if combined_linewidth_hz == 0:
        w = np.full(n, float(theta0))
        return PhaseTrace(w, w)
    step = np.sqrt(2 * np.pi * combined_linewidth_hz / sample_rate_hz)
    inc = rng_for(seed, frame_id, _S_PHASE).normal(0.0, step, n - 1)
    w = np.empty(n)
    w[0] = theta0
    np.cumsum(inc, out=w[1:])
    w[1:] += theta0
    return PhaseTrace(w, w)


def one_pole_coefficient(bandwidth_hz: float, sample_rate_hz: float) -> float:
    """Pole a of (1-a)/(1-a z^-1) placing the -3 dB point at ``bandwidth_hz``."""
    c = np.cos(2 * np.pi * bandwidth_hz / sample_rate_hz)
    # (1-a)^2 / (1 - 2ac + a^2) = 1/2  ->  a^2 - 2(2-c)a + 1 = 0
    b = 2 - c
    return float(b - np.sqrt(b * b - 1))


def detector_response(n: int, sample_rate_hz: float, bandwidth_hz: float | None) -> np.ndarray:
    """Causal one-pole IIR on the rfft grid, scaled to unit mean noise-power gain.

    Being a genuine discrete-time minimum-phase filter, it is exactly
    invertible from its power spectrum.
    """
    f = fft.rfftfreq(n)
    if bandwidth_hz is None:
        return np.ones(f.size, complex)
    if not 0 < bandwidth_hz < sample_rate_hz / 2:
        raise DomainError("detector bandwidth must lie inside (0, fs/2)")
    a = one_pole_coefficient(bandwidth_hz, sample_rate_hz)
    H = (1 - a) / (1 - a * np.exp(-2j * np.pi * f))
    w = np.full(f.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    gain = np.sum(w * np.abs(H) ** 2) / n
    return H / np.sqrt(gain)


def apply_response(x: np.ndarray, H: np.ndarray) -> np.ndarray:
    return fft.irfft(fft.rfft(x) * H, n=x.size)


def propagate(frame: SampleFrame, ch: ChannelParams, det: DetectorModel, seed,
              theta0: float | None = None, t0: float = 0.0,
              signal_on: bool = True) -> tuple[SampleFrame, PhaseTrace]:
    """Real photocurrent (SNU per sample) for one frame of Alice's waveform.

    ``theta0`` is the Wiener phase at the first sample (uniform random when
    omitted) and ``t0`` the absolute start time, so consecutive frames can
    share one continuous phase history.
    """
    if frame.unit != Unit.SNU_NORMALIZED:
        raise DomainError("propagate expects an SNU-normalised transmit frame")
    n = frame.samples.size
    fs = frame.sample_rate_hz
    fid = frame.frame_id
    if theta0 is None:
        theta0 = rng_for(seed, fid, _S_PHASE, 1).uniform(0, 2 * np.pi)
    w = wiener_phase(n, ch.combined_linewidth_hz, fs, seed, theta0, fid).theta
    t = t0 + np.arange(n) / fs
    theta = w + 2 * np.pi * ch.freq_offset_hz * t
    out = np.zeros(n)
    if signal_on:
        s = np.roll(frame.samples, ch.delay_samples)
        out += np.sqrt(ch.eta * det.tau) * np.real(s * np.exp(1j * theta))
    out += shot_and_excess(n, ch, det, seed, fid)
    if det.bandwidth_hz is not None:
        out = apply_response(out, detector_response(n, fs, det.bandwidth_hz))
    return SampleFrame(out, fs, Unit.SNU_NORMALIZED, fid), PhaseTrace(theta, w)


def shot_and_excess(n, ch: ChannelParams, det: DetectorModel, seed, frame_id) -> np.ndarray:
    # per-sample variance v becomes v per quadrature after Bob's demodulation
    x = rng_for(seed, frame_id, _S_SHOT).standard_normal(n)
    if det.t_noise > 0:
        x += rng_for(seed, frame_id, _S_ELEC).normal(0.0, np.sqrt(det.t_noise / 2), n)
    xi = ch.xi_injected.total()
    if xi > 0:
        x += rng_for(seed, frame_id, _S_XI).normal(0.0, np.sqrt(xi / 2), n)
    return x


def electronic_only(n, fs, det: DetectorModel, seed, frame_id) -> SampleFrame:
    x = rng_for(seed, frame_id, _S_ELEC, 1).normal(0.0, np.sqrt(det.t_noise / 2), n) if det.t_noise > 0 else np.zeros(n)
    if det.bandwidth_hz is not None:
        x = apply_response(x, detector_response(n, fs, det.bandwidth_hz))
    return SampleFrame(x, fs, Unit.SNU_NORMALIZED, frame_id)


def adc_sample(frame: SampleFrame, det: DetectorModel) -> tuple[SampleFrame, int]:
    """Quantise an SNU photocurrent to integer ADC counts; returns clip count."""
    lo, hi = -(2 ** (det.adc_bits - 1)), 2 ** (det.adc_bits - 1) - 1
    k = np.round(frame.samples.real * det.adc_counts_per_snu)
    clips = int(np.count_nonzero((k < lo) | (k > hi)))
    return frame.replace(np.clip(k, lo, hi), unit=Unit.ADC_COUNTS), clips


@dataclass
class MeasurementSet:
    signal_frames: list
    vacuum_frames: list
    electronic_frames: list
    tx_symbols: list
    phase_traces: list
    manifest: dict

    def write(self, directory) -> None:
        from .snu import write_frame

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for kind in ("signal", "vacuum", "electronic"):
            for f in getattr(self, f"{kind}_frames"):
                write_frame(f, d / f"{kind}_{f.frame_id:05d}.cvqf")
        cp = configparser.ConfigParser()
        for sec, vals in self.manifest.items():
            cp[sec] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in vals.items()}
        with open(d / "manifest.ini", "w") as fh:
            cp.write(fh)


def make_measurement_set(mod: ModulationConfig, ch: ChannelParams, det: DetectorModel, *,
                         n_frames: int, samples_per_frame: int, seed: int,
                         n_calib_frames: int | None = None,
                         electronic_noise: bool = True) -> MeasurementSet:
    """Signal, vacuum and electronic-noise acquisitions, all in ADC counts.

    Signal frames form one contiguous acquisition (continuous laser phase);
    each carries a fresh symbol block played cyclically by the DAC.
    """
    sps = mod.sps
    if samples_per_frame % sps:
        raise DomainError("samples_per_frame must be a multiple of samples per symbol")
    n_cal = n_frames if n_calib_frames is None else n_calib_frames
    fs = mod.sample_rate_hz
    det_el = det if electronic_noise else DetectorModel(det.tau, 0.0, det.bandwidth_hz, det.adc_bits, det.adc_counts_per_snu)
    sig, txs, traces = [], [], []
    clips = 0
    theta = rng_for(seed, 0, _S_PHASE, 1).uniform(0, 2 * np.pi)
    dt = samples_per_frame / fs
    for k in range(n_frames):
        sym = generate_symbols(samples_per_frame // sps, mod, seed, frame_id=k)
        wave = synthesize_waveform(sym, mod)
        rx, tr = propagate(wave, ch, det_el, seed, theta0=theta, t0=k * dt)
        # next frame continues the random walk from the last sample
        theta = tr.wiener[-1] + rng_for(seed, k, _S_PHASE, 2).normal(
            0.0, np.sqrt(2 * np.pi * ch.combined_linewidth_hz / fs))
        q, c = adc_sample(rx, det)
        clips += c
        sig.append(q)
        txs.append(sym)
        traces.append(tr)
    vac, el = [], []
    blank = SampleFrame(np.zeros(samples_per_frame), fs, Unit.SNU_NORMALIZED)
    for k in range(n_cal):
        fid = 100000 + k
        b = SampleFrame(blank.samples, fs, Unit.SNU_NORMALIZED, fid)
        v, _ = propagate(b, ch, det_el, seed, theta0=0.0, signal_on=False)
        vac.append(adc_sample(v, det)[0])
        if electronic_noise:
            el.append(adc_sample(electronic_only(samples_per_frame, fs, det, seed, fid), det)[0])
        else:
            el.append(SampleFrame(np.zeros(samples_per_frame), fs, Unit.ADC_COUNTS, fid))
    manifest = {
        "seeds": {"seed": seed},
        "modulation": {k: v for k, v in asdict(mod).items() if v is not None},
        "channel": {**{k: v for k, v in asdict(ch).items() if k != "xi_injected"},
                    "eta": float(ch.eta),
                    **{f"xi_{k[3:]}" if not k.startswith("xi_") else k: v
                       for k, v in ch.xi_injected.as_dict().items()}},
        "detector": {k: v for k, v in asdict(det_el).items() if v is not None},
        "acquisition": {"n_frames": n_frames, "samples_per_frame": samples_per_frame,
                        "n_calib_frames": n_cal, "adc_clips": clips},
    }
    return MeasurementSet(sig, vac, el, txs, traces, manifest)
