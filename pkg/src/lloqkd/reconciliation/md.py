"""Multidimensional reconciliation over the normed division algebras R, C, H, O.

Bob normalises a block of ``d`` real samples, ``y' = y/|y|``, draws ``d``
random bits and publishes the unit element ``m`` with ``m * y' = s`` where
``s`` has entries ``(1 - 2b)/sqrt(d)``.  Alice applies the same left
multiplication to her normalised data and obtains a noisy copy of ``s``.
All routines accept stacked blocks with shape ``(..., d)``.
"""
from __future__ import annotations

import numpy as np

from ..core import DomainError

DIMENSIONS = (1, 2, 4, 8)


def _check_d(d: int) -> None:
    if d not in DIMENSIONS:
        raise DomainError(f"dimension must be one of {DIMENSIONS}, got {d}")


def conj(a: np.ndarray) -> np.ndarray:
    out = -np.asarray(a, dtype=float)
    out[..., 0] *= -1
    return out


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson product (a1, a2)(b1, b2) = (a1 b1 - conj(b2) a2, b2 a1 + a2 conj(b1))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a.shape[-1]
    if d == 1:
        return a * b
    h = d // 2
    a1, a2 = a[..., :h], a[..., h:]
    b1, b2 = b[..., :h], b[..., h:]
    return np.concatenate([mul(a1, b1) - mul(conj(b2), a2),
                           mul(b2, a1) + mul(a2, conj(b1))], axis=-1)


def left_matrix(m: np.ndarray) -> np.ndarray:
    """Matrix M(m) with M(m) @ z = m * z."""
    m = np.asarray(m, dtype=float)
    d = m.shape[-1]
    _check_d(d)
    basis = np.eye(d)
    cols = mul(np.broadcast_to(m[..., None, :], m.shape[:-1] + (d, d)), basis)
    return np.swapaxes(cols, -1, -2)


def bits_to_points(bits: np.ndarray, d: int) -> np.ndarray:
    _check_d(d)
    b = np.asarray(bits).reshape(-1, d)
    return (1.0 - 2.0 * b) / np.sqrt(d)


def md_map(y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Unit element ``m`` with ``m * (y/|y|) = s`` (``s`` on the unit sphere)."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    _check_d(y.shape[-1])
    if s.shape != y.shape:
        raise DomainError("y and s must have the same shape")
    norm = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DomainError("zero-norm block cannot be mapped")
    # (s conj(y')) y' = s |y'|^2 holds in every alternative algebra
    return mul(s, conj(y / norm))


def md_apply(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Alice's side: ``m * (x/|x|)``."""
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DomainError("zero-norm block cannot be mapped")
    return mul(m, x / norm)


def md_demap(x: np.ndarray, m: np.ndarray, noise_var: float, gain: float = 1.0,
             y_norm: np.ndarray | float | None = None) -> np.ndarray:
    """Bit LLRs (positive favours 0) for Bob's bits from Alice's ``x`` and the public ``m``.

    Model per dimension: y = gain * x + z with Var(z) = ``noise_var``.  Bob's
    block norm is taken from ``y_norm`` when disclosed, otherwise from its
    expected value given ``x``.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    _check_d(d)
    u = md_apply(m, x)
    xn = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.isinf(noise_var):
        return np.zeros_like(u)
    if noise_var <= 0:
        raise DomainError("noise_var must be positive")
    if y_norm is None:
        yn = np.sqrt(gain ** 2 * xn ** 2 + d * noise_var)
    else:
        yn = np.broadcast_to(np.asarray(y_norm, dtype=float).reshape(-1, 1) if np.ndim(y_norm) else y_norm,
                             xn.shape)
    return 2 * gain * xn * yn * u / (np.sqrt(d) * noise_var)


def llr_capacity(llr: np.ndarray, bits: np.ndarray) -> float:
    """Empirical mutual information (bits per channel use) of a consistent LLR stream."""
    sgn = 1.0 - 2.0 * np.asarray(bits, dtype=float).ravel()
    L = np.asarray(llr, dtype=float).ravel() * sgn
    return float(1.0 - np.mean(np.logaddexp(0.0, -L)) / np.log(2))
