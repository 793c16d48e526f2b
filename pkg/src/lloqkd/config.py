"""Run configuration: INI sections mapped onto the module dataclasses, plus presets."""
from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .channel import ChannelParams, DetectorModel
from .core import ConfigError, NoiseBudget
from .estimation import DELTA_FAIL
from .rx.recover import RxConfig
from .security import SecurityParams
from .tx import ModulationConfig


@dataclass
class EstimationConfig:
    delta_fail: float = DELTA_FAIL
    # symbol count used for the projected finite-size rate (full-length acquisition)
    n_project: float = 9.5e8


@dataclass
class SecurityConfig:
    beta: float = 0.925
    fer: float = 0.59
    n_block: float = 0.0  # 0: n_used * (1 - fer)
    baud_hz: float = 1e8
    rate_source: str = "projected"  # projected | measured

    def params(self, delta_fail: float) -> SecurityParams:
        return SecurityParams(beta=self.beta, fer=self.fer,
                              n_block=int(self.n_block) if self.n_block > 0 else None,
                              delta_fail=delta_fail, baud_hz=self.baud_hz)


@dataclass
class ReconConfig:
    enabled: bool = True
    dimension: int = 8
    block_len: int = 20000
    code_seed: int = 1
    max_iters: int = 300
    max_blocks: int = 20
    beta_target: float = 0.65  # rate adaptation target; punctured words decode near 0.7-0.8


@dataclass
class RunSection:
    seed: int = 1
    n_frames: int = 4
    samples_per_frame: int = 1_000_000
    n_calib_frames: int = 4
    whitening_frames: int = 4
    whitening_nperseg: int = 1024
    electronic_noise: bool = True
    workers: int = 1


@dataclass
class RunConfig:
    tx: ModulationConfig = field(default_factory=ModulationConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    noise: NoiseBudget = field(default_factory=lambda: NoiseBudget(xi_other=0.212e-3))
    detector: DetectorModel = field(default_factory=DetectorModel)
    rx: RxConfig = field(default_factory=RxConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    security: SecurityConfig = field(default_factory=SecurityConfig)
    reconciliation: ReconConfig = field(default_factory=ReconConfig)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.sync()

    def sync(self) -> "RunConfig":
        """Propagate shared values between sections."""
        self.channel.xi_injected = self.noise
        self.rx.t_noise = self.detector.t_noise
        self.rx.nominal_offset_hz = self.channel.freq_offset_hz
        return self

    def validate(self) -> "RunConfig":
        """Cross-module consistency checks, run before any simulation."""
        self.sync()
        self.tx.validate()
        fs = self.tx.sample_rate_hz
        lo, hi = self.tx.band_hz
        off = self.channel.freq_offset_hz
        pil = self.tx.pilot_freq_hz + off
        if not (0 < lo + off and hi + off < fs / 2):
            raise ConfigError("shifted quantum band must lie inside (0, fs/2)")
        if not 0 < pil < fs / 2:
            raise ConfigError("shifted pilot must lie inside (0, fs/2)")
        half = max(self.rx.pilot_bw_hz, self.rx.ukf_bw_hz) / 2
        if pil - half < hi + off + self.rx.band_margin_hz and pil + half > lo + off - self.rx.band_margin_hz:
            raise ConfigError("pilot band overlaps the quantum band")
        if not (0 < pil - half and pil + half < fs / 2):
            raise ConfigError("pilot band must lie inside (0, fs/2)")
        if self.run.samples_per_frame % self.tx.sps:
            raise ConfigError("samples_per_frame must be a multiple of samples per symbol")
        if self.run.samples_per_frame // self.tx.sps < self.rx.sync_ref_symbols:
            raise ConfigError("frame shorter than the synchronisation reference")
        if self.run.whitening_frames > self.run.n_calib_frames:
            raise ConfigError("whitening_frames exceeds n_calib_frames")
        if self.security.rate_source not in ("projected", "measured"):
            raise ConfigError("rate_source must be 'projected' or 'measured'")
        if self.reconciliation.dimension not in (1, 2, 4, 8):
            raise ConfigError("reconciliation dimension must be 1, 2, 4 or 8")
        if not 0 < self.channel.eta <= 1:
            raise ConfigError("channel transmittance out of range")
        return self


SECTIONS = [f.name for f in fields(RunConfig)]


def _coerce(value: str, typ, name: str):
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value.strip().lower() in ("", "none"):
            return None
        typ = next(a for a in args if a is not type(None))
    try:
        if typ is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(float(value)) if "e" in value.lower() else int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return value.strip()
        if typ is tuple or typing.get_origin(typ) is tuple:
            return tuple(float(x) for x in value.replace("(", "").replace(")", "").split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    raise ConfigError(f"unsupported type for {name}")


def _hints(cls):
    return typing.get_type_hints(cls)


def apply_ini(cfg: RunConfig, text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        obj = getattr(cfg, sec)
        hints = _hints(type(obj))
        for key, raw in cp[sec].items():
            if key not in hints or key.startswith("_"):
                raise ConfigError(f"unknown key {sec}.{key}")
            setattr(obj, key, _coerce(raw, hints[key], f"{sec}.{key}"))
    return cfg.sync()


def load_config(path=None, preset: str | None = None, overrides: str | None = None) -> RunConfig:
    cfg = make_preset(preset or "table1")
    if path is not None:
        apply_ini(cfg, Path(path).read_text())
    if overrides:
        apply_ini(cfg, overrides)
    return cfg.validate()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return "none" if v is None else str(v)


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        cp[sec] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)
                   if not f.name.startswith("_") and not isinstance(getattr(obj, f.name), NoiseBudget)}
    import io

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


PRESETS = ("table1", "quick", "lossless", "noisy")


def make_preset(name: str) -> RunConfig:
    """``table1``: 100 km link at the reported operating point.
    ``quick``: same link, short frames for CI.  ``lossless``: back-to-back,
    no injected noise.  ``noisy``: excess noise far beyond any positive rate.
    """
    cfg = RunConfig()
    if name == "table1":
        return cfg
    if name == "quick":
        cfg.run = RunSection(n_frames=2, samples_per_frame=200_000, n_calib_frames=2, whitening_frames=2)
        cfg.reconciliation.max_blocks = 4
        return cfg
    if name == "lossless":
        cfg.channel.length_km = 0.0
        cfg.channel.coupling_transmittance = 1.0
        cfg.noise = NoiseBudget()
        cfg.run = RunSection(n_frames=2, samples_per_frame=200_000, n_calib_frames=2, whitening_frames=2)
        cfg.reconciliation.max_blocks = 4
        return cfg.sync()
    if name == "noisy":
        cfg.noise = NoiseBudget(xi_other=0.5)
        cfg.run = RunSection(n_frames=2, samples_per_frame=200_000, n_calib_frames=2, whitening_frames=2)
        cfg.reconciliation.max_blocks = 2
        return cfg.sync()
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def replace_section(cfg: RunConfig, section: str, **changes) -> RunConfig:
    """Copy of ``cfg`` with fields of one section replaced."""
    new = dataclasses.replace(cfg, **{s: dataclasses.replace(getattr(cfg, s)) for s in SECTIONS})
    setattr(new, section, dataclasses.replace(getattr(new, section), **changes))
    return new.sync()
