"""Multi-edge-type LDPC codes: construction, GF(2) utilities, sum-product decoding.

Codes are used in syndrome form.  Bob's reconciled bits are an arbitrary
length-``n`` word ``c``; he publishes ``H @ c`` and Alice recovers ``c`` from
her soft information with belief propagation constrained to that syndrome.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numba as nb
import numpy as np
import scipy.sparse as sp

from ..core import ConfigError, FormatError


@dataclass(frozen=True)
class NodeType:
    """One row of a multi-edge-type degree table.

    ``fraction`` is relative to the number of variable nodes for both node
    kinds (the usual MET normalisation); ``degrees[e]`` is the number of
    type-``e`` edge sockets carried by each node of this type.
    """

    fraction: float
    degrees: tuple[int, ...]


@dataclass(frozen=True)
class DegreeTable:
    variables: tuple[NodeType, ...]
    checks: tuple[NodeType, ...]
    name: str = "met"

    @property
    def n_edge_types(self) -> int:
        return len(self.variables[0].degrees)

    def design_rate(self) -> float:
        return 1.0 - sum(c.fraction for c in self.checks) / sum(v.fraction for v in self.variables)

    def edges_per_variable(self) -> np.ndarray:
        v = np.array([t.degrees for t in self.variables], dtype=float)
        f = np.array([t.fraction for t in self.variables])
        return f @ v


# Low-rate three-edge-type ensemble: a rate-1/2 LDPC core (edge type 0)
# over 10% of the bits, each core bit also feeding 18 extension checks
# (edge type 1), and 90% degree-one bits, one per extension check (edge
# type 2).  Each extension check sees two core bits.  Degrees were picked
# by a Gaussian-approximation EXIT search over this family; the asymptotic
# threshold sits near SNR 0.078.
RATE_005_TABLE = DegreeTable(
    name="met-r0.05",
    variables=(
        NodeType(0.05, (2, 18, 0)),
        NodeType(0.05, (3, 18, 0)),
        NodeType(0.90, (0, 0, 1)),
    ),
    checks=(
        NodeType(0.05, (5, 0, 0)),
        NodeType(0.90, (0, 2, 1)),
    ),
)


def _counts(fractions, n: int) -> np.ndarray:
    raw = np.asarray(fractions, dtype=float) * n
    counts = np.floor(raw).astype(np.int64)
    # largest-remainder rounding keeps the total equal to round(sum)
    short = int(round(raw.sum())) - int(counts.sum())
    if short > 0:
        counts[np.argsort(raw - counts)[::-1][:short]] += 1
    return counts


@dataclass
class LdpcCode:
    """Sparse parity-check code with an optional puncturing pattern.

    ``punct_pattern`` marks bits that are never sent over the channel (their
    LLR is forced to zero); ``puncturable`` marks the positions rate
    adaptation may draw from.
    """

    H: sp.csr_matrix
    rank: int
    punct_pattern: np.ndarray
    puncturable: np.ndarray
    table: DegreeTable | None = None
    _graph: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def block_len(self) -> int:
        return self.H.shape[1]

    @property
    def n_checks(self) -> int:
        return self.H.shape[0]

    @property
    def n_info(self) -> int:
        return self.block_len - self.rank

    @property
    def code_rate(self) -> float:
        return 1.0 - self.rank / self.block_len

    @property
    def n_punctured(self) -> int:
        return int(self.punct_pattern.sum())

    @property
    def effective_rate(self) -> float:
        """Key bits per transmitted bit, k / (n - p)."""
        return self.n_info / (self.block_len - self.n_punctured)

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        return (self.H @ np.asarray(bits, dtype=np.int64) % 2).astype(np.uint8)

    def graph(self):
        if self._graph is None:
            self._graph = _tanner_arrays(self.H)
        return self._graph

    def with_punctures(self, mask: np.ndarray) -> "LdpcCode":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.block_len,):
            raise ConfigError("puncture mask length does not match block length")
        if np.any(mask & ~self.puncturable):
            raise ConfigError("puncture mask touches non-puncturable positions")
        return replace(self, punct_pattern=mask.copy(), _graph=self._graph)


def gf2_rank(H: sp.spmatrix) -> int:
    """Rank over GF(2).

    Rows holding a column nobody else touches are peeled first (they are
    independent of everything), the rest goes through packed dense
    elimination.
    """
    H = sp.csr_matrix(H, dtype=np.uint8)
    H.data %= 2
    H.eliminate_zeros()
    rows_alive = np.ones(H.shape[0], dtype=bool)
    peeled = 0
    while True:
        alive = np.flatnonzero(rows_alive)
        Hc = H[alive].tocsc()
        singles = np.flatnonzero(np.diff(Hc.indptr) == 1)
        if singles.size == 0:
            break
        owner = np.unique(alive[Hc.indices[Hc.indptr[singles]]])
        peeled += owner.size
        rows_alive[owner] = False
    rest = H[rows_alive]
    cols = np.flatnonzero(np.diff(rest.tocsc().indptr) > 0)
    if rest.shape[0] == 0 or cols.size == 0:
        return peeled
    dense = rest[:, cols].toarray().astype(bool)
    return peeled + _dense_rank(dense)


def _dense_rank(M: np.ndarray) -> int:
    packed = np.packbits(M, axis=1).view(np.uint8)
    pad = (-packed.shape[1]) % 8
    if pad:
        packed = np.hstack([packed, np.zeros((packed.shape[0], pad), np.uint8)])
    words = packed.view(np.uint64)
    return int(_elim_words(words.copy(), M.shape[1]))


@nb.njit(cache=True)
def _elim_words(W, ncols):
    nrows, nw = W.shape
    rank = 0
    for c in range(ncols):
        if rank == nrows:
            break
        w = c // 64
        # packbits is big-endian within bytes; viewed as little-endian uint64
        byte = (c % 64) // 8
        bit = 7 - (c % 8)
        mask = np.uint64(1) << np.uint64(byte * 8 + bit)
        piv = -1
        for r in range(rank, nrows):
            if W[r, w] & mask:
                piv = r
                break
        if piv < 0:
            continue
        if piv != rank:
            for k in range(nw):
                tmp = W[piv, k]
                W[piv, k] = W[rank, k]
                W[rank, k] = tmp
        for r in range(nrows):
            if r != rank and (W[r, w] & mask):
                for k in range(w, nw):
                    W[r, k] ^= W[rank, k]
        rank += 1
    return rank


def build_met_code(table: DegreeTable, n: int, seed: int = 0,
                   puncturable_types: tuple[int, ...] | None = None) -> LdpcCode:
    """Random socket-matching construction of a MET code of length ``n``.

    Check-side socket counts are nudged to match the variable side for each
    edge type; parallel edges are dropped.  ``puncturable_types`` indexes
    ``table.variables``; by default the degree-one variable types are
    puncturable.
    """
    rng = np.random.default_rng(seed)
    vcounts = _counts([v.fraction for v in table.variables], n)
    if vcounts.sum() != n:
        raise ConfigError("variable fractions must sum to 1")
    ccounts = _counts([c.fraction for c in table.checks], n)
    n_chk = int(ccounts.sum())
    vdeg = np.repeat(np.array([v.degrees for v in table.variables], dtype=np.int64), vcounts, axis=0)
    cdeg = np.repeat(np.array([c.degrees for c in table.checks], dtype=np.int64), ccounts, axis=0)

    rows, cols = [], []
    for e in range(table.n_edge_types):
        need = int(vdeg[:, e].sum())
        have = int(cdeg[:, e].sum())
        carriers = np.flatnonzero(cdeg[:, e] > 0)
        if need and carriers.size == 0:
            raise ConfigError(f"edge type {e} has no check sockets")
        # spread the mismatch over random carriers of this edge type
        while have != need:
            step = 1 if need > have else -1
            k = min(abs(need - have), carriers.size)
            pick = rng.choice(carriers, size=k, replace=False)
            if step < 0:
                pick = pick[cdeg[pick, e] > 1]
                if pick.size == 0:
                    raise ConfigError(f"cannot balance edge type {e}")
            cdeg[pick, e] += step
            have += step * pick.size
        vs = np.repeat(np.arange(n), vdeg[:, e])
        cs = np.repeat(np.arange(n_chk), cdeg[:, e])
        rows.append(cs)
        cols.append(rng.permutation(vs))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    H = sp.csr_matrix((np.ones(r.size, np.uint8), (r, c)), shape=(n_chk, n))
    H.data[:] = 1  # collapse parallel edges
    H.eliminate_zeros()
    H.sort_indices()

    if puncturable_types is None:
        puncturable_types = tuple(i for i, v in enumerate(table.variables) if sum(v.degrees) == 1)
    type_of = np.repeat(np.arange(len(table.variables)), vcounts)
    puncturable = np.isin(type_of, puncturable_types)
    return LdpcCode(H=H, rank=gf2_rank(H), punct_pattern=np.zeros(n, bool),
                    puncturable=puncturable, table=table)


def code_from_matrix(H, puncturable=None) -> LdpcCode:
    H = sp.csr_matrix(H, dtype=np.uint8)
    n = H.shape[1]
    if puncturable is None:
        puncturable = np.asarray(H.sum(axis=0)).ravel() == 1
    return LdpcCode(H=H, rank=gf2_rank(H), punct_pattern=np.zeros(n, bool),
                    puncturable=np.asarray(puncturable, bool))


# -- coordinate text format -------------------------------------------------

def write_code(code: LdpcCode, path) -> None:
    """``n m rate`` header then one ``row col`` pair per line; a trailing
    ``# puncturable`` section lists puncturable columns."""
    H = code.H.tocoo()
    order = np.lexsort((H.col, H.row))
    with open(path, "w") as f:
        f.write(f"{code.block_len} {code.n_checks} {code.code_rate:.12g}\n")
        for r, c in zip(H.row[order], H.col[order]):
            f.write(f"{r} {c}\n")
        f.write("# puncturable\n")
        for c in np.flatnonzero(code.puncturable):
            f.write(f"{c}\n")


def read_code(path) -> LdpcCode:
    lines = Path(path).read_text().splitlines()
    try:
        n, m, rate = lines[0].split()
        n, m, rate = int(n), int(m), float(rate)
        split = lines.index("# puncturable") if "# puncturable" in lines else len(lines)
        pairs = np.array([ln.split() for ln in lines[1:split]], dtype=np.int64).reshape(-1, 2)
        punct_cols = np.array([int(x) for x in lines[split + 1:]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed code file {path}: {exc}") from exc
    if pairs.size and (pairs[:, 0].max() >= m or pairs[:, 1].max() >= n):
        raise FormatError("coordinate outside declared matrix shape")
    H = sp.csr_matrix((np.ones(len(pairs), np.uint8), (pairs[:, 0], pairs[:, 1])), shape=(m, n))
    puncturable = np.zeros(n, bool)
    puncturable[punct_cols] = True
    code = code_from_matrix(H, puncturable)
    if abs(code.code_rate - rate) > 1e-9:
        raise FormatError(f"declared rate {rate} != matrix rate {code.code_rate}")
    return code


# -- belief propagation -------------------------------------------------------

def _tanner_arrays(H: sp.csr_matrix):
    H = sp.csr_matrix(H)
    H.sort_indices()
    chk_ptr = H.indptr.astype(np.int64)
    edge_var = H.indices.astype(np.int64)
    # var-major view: for each variable, the check-ordered edge ids
    order = np.argsort(edge_var, kind="stable")
    var_ptr = np.zeros(H.shape[1] + 1, np.int64)
    np.add.at(var_ptr, edge_var + 1, 1)
    var_ptr = np.cumsum(var_ptr)
    return chk_ptr, edge_var, var_ptr, order.astype(np.int64)


_TANH_CLIP = 1.0 - 1e-15


@nb.njit(cache=True)
def _bp(llr, syn, chk_ptr, edge_var, var_ptr, var_edges, max_iters, bits):
    m = chk_ptr.size - 1
    n = var_ptr.size - 1
    E = edge_var.size
    dmax = 0
    for j in range(m):
        dmax = max(dmax, chk_ptr[j + 1] - chk_ptr[j])
    v2c = np.empty(E)  # holds tanh(L/2) of variable-to-check messages
    c2v = np.zeros(E)
    fwd = np.empty(dmax + 1)
    for e in range(E):
        v2c[e] = np.tanh(0.5 * llr[edge_var[e]])
    for it in range(1, max_iters + 1):
        for j in range(m):
            a = chk_ptr[j]
            d = chk_ptr[j + 1] - a
            # leave-one-out products via a forward pass and a running suffix
            fwd[0] = 1.0 - 2.0 * syn[j]
            for k in range(d):
                fwd[k + 1] = fwd[k] * v2c[a + k]
            suf = 1.0
            for k in range(d - 1, -1, -1):
                p = fwd[k] * suf
                if p > _TANH_CLIP:
                    p = _TANH_CLIP
                elif p < -_TANH_CLIP:
                    p = -_TANH_CLIP
                c2v[a + k] = 2.0 * np.arctanh(p)
                suf *= v2c[a + k]
        for i in range(n):
            tot = llr[i]
            for k in range(var_ptr[i], var_ptr[i + 1]):
                tot += c2v[var_edges[k]]
            bits[i] = 1 if tot < 0 else 0
            for k in range(var_ptr[i], var_ptr[i + 1]):
                e = var_edges[k]
                v2c[e] = np.tanh(0.5 * (tot - c2v[e]))
        ok = True
        for j in range(m):
            acc = syn[j]
            for e in range(chk_ptr[j], chk_ptr[j + 1]):
                acc ^= bits[edge_var[e]]
            if acc:
                ok = False
                break
        if ok:
            return it, True
    return max_iters, False


def bp_decode(code: LdpcCode, llrs, syndrome=None, max_iters: int = 500):
    """Sum-product decoding toward ``syndrome`` (all-zero if omitted).

    Returns ``(bits, converged, iterations)``.  LLR sign convention: positive
    favours bit 0.  Punctured positions are zeroed here regardless of input.
    """
    llr = np.array(llrs, dtype=np.float64)
    if llr.shape != (code.block_len,):
        raise ValueError(f"expected {code.block_len} LLRs, got {llr.shape}")
    llr[code.punct_pattern] = 0.0
    syn = np.zeros(code.n_checks, np.uint8) if syndrome is None else np.asarray(syndrome, np.uint8)
    bits = np.zeros(code.block_len, np.uint8)
    if not np.any(llr):
        # no channel information: refuse to report the trivial word as a decode
        return bits, False, 0
    chk_ptr, edge_var, var_ptr, var_edges = code.graph()
    iters, ok = _bp(llr, syn, chk_ptr, edge_var, var_ptr, var_edges, int(max_iters), bits)
    return bits, bool(ok), int(iters)
