"""Shared domain types and error classes.

Unit convention: after calibration the vacuum (shot) noise of one quadrature
is 1.  ``v_mod`` always means the variance of the full coherent-state
ensemble, Var(x) + Var(p); each quadrature carries ``v_mod / 2``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields

import numpy as np


class QkdError(Exception):
    """Base class for pipeline errors."""


class ConfigError(QkdError):
    pass


class DomainError(QkdError, ValueError):
    pass


class FormatError(QkdError):
    pass


class CalibrationError(QkdError):
    pass


class EstimationError(QkdError):
    pass


class TrackingError(QkdError):
    def __init__(self, message, frame_id=None):
        super().__init__(message if frame_id is None else f"frame {frame_id}: {message}")
        self.frame_id = frame_id


class SyncError(QkdError):
    def __init__(self, message, frame_id=None):
        super().__init__(message if frame_id is None else f"frame {frame_id}: {message}")
        self.frame_id = frame_id


class Unit(enum.IntEnum):
    ADC_COUNTS = 0
    SNU_NORMALIZED = 1


@dataclass
class SampleFrame:
    samples: np.ndarray
    sample_rate_hz: float = 1e9
    unit: Unit = Unit.ADC_COUNTS
    frame_id: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        self.unit = Unit(self.unit)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DomainError("a frame needs a non-empty 1-D sample array")
        if not self.sample_rate_hz > 0:
            raise DomainError("sample rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_hz

    def replace(self, samples, unit=None) -> "SampleFrame":
        return SampleFrame(samples, self.sample_rate_hz, self.unit if unit is None else unit, self.frame_id)


@dataclass
class SymbolFrame:
    symbols: np.ndarray
    baud_rate_hz: float = 1e8
    frame_id: int = 0

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.complex128).ravel()

    def __len__(self):
        return self.symbols.size

    @property
    def x(self):
        return self.symbols.real

    @property
    def p(self):
        return self.symbols.imag


@dataclass(frozen=True)
class CalibrationRecord:
    vacuum_variance: float
    electronic_variance: float

    @property
    def snu_scale(self) -> float:
        return self.vacuum_variance - self.electronic_variance

    @property
    def clearance_db(self) -> float:
        if self.electronic_variance == 0:
            return math.inf
        return 10.0 * math.log10(self.vacuum_variance / self.electronic_variance)

    @property
    def electronic_snu(self) -> float:
        """Electronic noise relative to shot noise (per real sample)."""
        return self.electronic_variance / self.snu_scale


@dataclass
class NoiseBudget:
    """Additive excess-noise contributions in SNU."""

    xi_rin: float = 0.0
    xi_mod: float = 0.0
    xi_quant: float = 0.0
    xi_ram: float = 0.0
    xi_rpn: float = 0.0
    xi_other: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"{f.name} must be non-negative")

    def total(self) -> float:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def unbiased_var(a, axis=None) -> float:
    """Per-quadrature style sample variance with the n-1 denominator."""
    return np.var(a, axis=axis, ddof=1)


def rng_for(seed: int, *ids: int) -> np.random.Generator:
    """Independent counter-based stream for (seed, ids...)."""
    key = np.random.SeedSequence([int(seed), *map(int, ids)]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
