"""Reverse reconciliation sessions, rate adaptation, and privacy amplification."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft

from ..core import ConfigError, DomainError, FormatError, rng_for
from .ldpc import LdpcCode, bp_decode
from .md import bits_to_points, md_demap, md_map


def gaussian_capacity(snr: float) -> float:
    """Shannon capacity (bits per real dimension) of the AWGN channel."""
    return 0.5 * float(np.log2(1 + snr))


def max_rate(code: LdpcCode) -> float:
    """Effective rate with every puncturable position punctured."""
    left = code.block_len - int(code.puncturable.sum())
    return code.n_info / left if left > 0 else float("inf")


def puncture_to_rate(code: LdpcCode, rate: float, seed: int = 0) -> LdpcCode:
    """Puncture random puncturable positions so that k/(n - p) is as close to ``rate`` as possible
    without exceeding it."""
    k, n = code.n_info, code.block_len
    base = k / n
    if rate < base - 1e-12:
        raise ConfigError(f"target rate {rate:.5f} below base rate {base:.5f}")
    pool = np.flatnonzero(code.puncturable)
    r_max = max_rate(code)
    if rate > r_max + 1e-12:
        raise ConfigError(f"target rate {rate:.5f} above maximum supported {r_max:.5f}")
    p = int(np.floor(n - k / rate + 1e-9))
    p = min(max(p, 0), pool.size)
    mask = np.zeros(n, bool)
    if p:
        rng = rng_for(seed, 0x9C7)
        mask[rng.choice(pool, size=p, replace=False)] = True
    return code.with_punctures(mask)


def rate_adapt(code: LdpcCode, target_snr: float, beta_target: float = 0.925,
               seed: int = 0) -> LdpcCode:
    """Raise the effective rate toward ``beta_target`` times the capacity at ``target_snr``.

    Codes already at or above that rate are returned unchanged.
    """
    rate = beta_target * gaussian_capacity(target_snr)
    if rate <= code.n_info / code.block_len:
        return code.with_punctures(np.zeros(code.block_len, bool))
    return puncture_to_rate(code, rate, seed)


# -- privacy amplification ----------------------------------------------------

def toeplitz_extract(bits, seed_bits, out_len: int) -> np.ndarray:
    """Toeplitz hash ``T @ bits`` over GF(2), with ``T[i, j] = seed[i - j + n - 1]``.

    ``seed_bits`` has length ``n + out_len - 1``; the product is computed as a
    real FFT convolution whose integer entries are reduced mod 2.
    """
    b = np.asarray(bits, dtype=np.uint8).ravel()
    s = np.asarray(seed_bits, dtype=np.uint8).ravel()
    n = b.size
    if out_len > n:
        raise DomainError("output longer than input")
    if out_len < 0:
        raise DomainError("negative output length")
    if s.size != n + out_len - 1:
        raise DomainError(f"seed must have {n + out_len - 1} bits, got {s.size}")
    if out_len == 0:
        return np.zeros(0, np.uint8)
    L = fft.next_fast_len(s.size + n - 1, real=True)
    conv = fft.irfft(fft.rfft(s.astype(float), L) * fft.rfft(b.astype(float), L), L)
    full = np.rint(conv[n - 1: n - 1 + out_len]).astype(np.int64)
    return (full & 1).astype(np.uint8)


def toeplitz_naive(bits, seed_bits, out_len: int) -> np.ndarray:
    """Explicit matrix product, for checking."""
    b = np.asarray(bits, dtype=np.int64)
    s = np.asarray(seed_bits, dtype=np.int64)
    n = b.size
    T = np.array([[s[i - j + n - 1] for j in range(n)] for i in range(out_len)], dtype=np.int64)
    return (T.reshape(out_len, n) @ b % 2).astype(np.uint8)


# -- sessions -----------------------------------------------------------------

@dataclass
class BlockResult:
    converged: bool
    iterations: int
    agree: bool


@dataclass
class ReconSession:
    """Transcript and outcome of reverse reconciliation over many code blocks."""

    d: int = 8
    seed: int = 0
    syndromes: list = field(default_factory=list)
    llr_stream: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    bob_words: list = field(default_factory=list)
    alice_words: list = field(default_factory=list)
    effective_rate: float = float("nan")
    snr: float = float("nan")
    beta: float = float("nan")
    fer: float = float("nan")

    def __post_init__(self):
        if self.d not in (1, 2, 4, 8):
            raise DomainError("d must be 1, 2, 4 or 8")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def key_bits(self) -> np.ndarray:
        """Bob's words of every converged block, concatenated."""
        good = [w for w, b in zip(self.bob_words, self.blocks) if b.converged]
        return np.concatenate(good) if good else np.zeros(0, np.uint8)


def reconcile(code: LdpcCode, x: np.ndarray, y: np.ndarray, gain: float, noise_var: float,
              d: int = 8, seed: int = 0, max_iters: int = 500, keep_llrs: bool = False,
              disclose_norm: bool = True) -> ReconSession:
    """Reverse reconciliation of real samples: Bob holds ``y``, Alice ``x``.

    Model: ``y = gain * x + z`` with ``Var(z) = noise_var``.  Each code block
    consumes ``n - p`` samples, rounded up to whole MD blocks; the spare bits
    of the last MD block are random filler.  Punctured bits are random and
    never leave Bob.
    """
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    if x.shape != y.shape:
        raise DomainError("x and y differ in length")
    n = code.block_len
    tx_pos = np.flatnonzero(~code.punct_pattern)
    n_tx = tx_pos.size
    per_block = -(-n_tx // d) * d
    n_blocks = x.size // per_block
    if n_blocks == 0:
        raise DomainError(f"need at least {per_block} samples for one block")
    sess = ReconSession(d=d, seed=seed, effective_rate=code.effective_rate)
    for b in range(n_blocks):
        rng = rng_for(seed, 0xB0B, b)
        xs = x[b * per_block:(b + 1) * per_block].reshape(-1, d)
        ys = y[b * per_block:(b + 1) * per_block].reshape(-1, d)
        word = rng.integers(0, 2, n, dtype=np.uint8)
        filler = rng.integers(0, 2, per_block - n_tx, dtype=np.uint8)
        sent = np.concatenate([word[tx_pos], filler])
        m = md_map(ys, bits_to_points(sent, d))
        syn = code.syndrome(word)
        yn = np.linalg.norm(ys, axis=-1) if disclose_norm else None
        L = md_demap(xs, m, noise_var, gain, yn).ravel()
        llr = np.zeros(n)
        llr[tx_pos] = L[:n_tx]
        dec, ok, it = bp_decode(code, llr, syn, max_iters)
        agree = bool(np.array_equal(dec, word))
        sess.syndromes.append(syn)
        sess.bob_words.append(word)
        sess.alice_words.append(dec)
        if keep_llrs:
            sess.llr_stream.append(llr)
        sess.blocks.append(BlockResult(ok, it, agree))
    sess.snr = gain ** 2 * float(np.var(x)) / noise_var
    sess.beta, sess.fer = measure_beta_fer(sess)
    return sess


def measure_beta_fer(session: ReconSession) -> tuple[float, float]:
    """beta = effective rate over the Gaussian capacity at the session SNR; fer = failed / total."""
    if session.n_blocks == 0:
        raise DomainError("session holds no blocks")
    fails = sum(1 for b in session.blocks if not b.converged)
    cap = gaussian_capacity(session.snr)
    beta = session.effective_rate / cap if cap > 0 else float("inf")
    return beta, fails / session.n_blocks


def simulate_channel(snr: float, n: int, seed: int = 0, d: int = 8) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Unit-variance Gaussian x and y = x + z at the given SNR: (x, y, gain, noise_var)."""
    rng = rng_for(seed, 0xC4A)
    x = rng.standard_normal(n)
    nv = 1.0 / snr
    return x, x + rng.normal(0.0, np.sqrt(nv), n), 1.0, nv


# -- transcripts ----------------------------------------------------------------

_TR_MAGIC = b"CVQR"
_TR_HEAD = "<4sHHIIIQ"


def write_transcript(session: ReconSession, path, n_checks: int) -> None:
    """Binary transcript: header, then per block a status byte and the packed syndrome."""
    with open(path, "wb") as fh:
        fh.write(struct.pack(_TR_HEAD, _TR_MAGIC, 1, session.d, session.n_blocks, n_checks,
                             0, session.seed & (2 ** 64 - 1)))
        for syn, blk in zip(session.syndromes, session.blocks):
            fh.write(bytes([int(blk.converged) | (int(blk.agree) << 1)]))
            fh.write(np.packbits(syn).tobytes())


def read_transcript(path) -> dict:
    raw = Path(path).read_bytes()
    hs = struct.calcsize(_TR_HEAD)
    if len(raw) < hs:
        raise FormatError("transcript truncated")
    magic, ver, d, nb, m, _, seed = struct.unpack(_TR_HEAD, raw[:hs])
    if magic != _TR_MAGIC or ver != 1:
        raise FormatError("not a reconciliation transcript")
    step = 1 + (m + 7) // 8
    if len(raw) != hs + nb * step:
        raise FormatError("transcript size mismatch")
    syns, flags = [], []
    for b in range(nb):
        off = hs + b * step
        flags.append(raw[off])
        syns.append(np.unpackbits(np.frombuffer(raw[off + 1: off + step], np.uint8))[:m])
    return {"d": d, "seed": seed, "syndromes": syns,
            "converged": [bool(f & 1) for f in flags], "agree": [bool(f & 2) for f in flags]}
