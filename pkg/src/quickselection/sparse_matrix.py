"""Compressed sparse weight storage and the handful of kernels training needs.

A :class:`SparseWeights` keeps only the existing connections of one layer as
three parallel arrays ``(rows, cols, values)``, always sorted row-major so
that they double as the ``indices``/``data`` arrays of a CSR matrix.  The CSR
view shares memory with ``values``: updating weights in place is visible to
the products without rebuilding anything.  The structure itself changes only
when the topology is evolved, after which :meth:`SparseWeights.compress` is
called once.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
import scipy.sparse as sp

DEFAULT_INIT_SCALE = 0.1

SPWT_MAGIC = b"SPWT"
SPWT_VERSION = 1
_SPWT_HEADER = struct.Struct("<4sHIIQ")
_TRIPLET = np.dtype([("row", "<u4"), ("col", "<u4"), ("weight", "<f4")])

# entries gathered per chunk in the batched gradient kernel
_GRAD_CHUNK = 1 << 21


def as_rng(seed) -> np.random.Generator:
    """Accept a seed, a ``Generator`` or ``None`` and return a ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class SparseWeights:
    n_in: int
    n_out: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError(f"dimensions must be positive, got {self.n_in}x{self.n_out}")
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.values.shape) or self.rows.ndim != 1:
            raise ValueError("rows, cols and values must be 1-D arrays of equal length")
        if self.nnz:
            if self.rows.min() < 0 or self.rows.max() >= self.n_in:
                raise ValueError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n_out:
                raise ValueError("column index out of range")
        self.compress()

    @classmethod
    def empty(cls, n_in: int, n_out: int) -> SparseWeights:
        z = np.zeros(0)
        return cls(n_in, n_out, z.astype(np.int64), z.astype(np.int64), z)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> SparseWeights:
        """Every nonzero cell of ``dense`` becomes a connection."""
        dense = np.asarray(dense, dtype=np.float64)
        r, c = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], r, c, dense[r, c])

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_in, self.n_out

    @property
    def density(self) -> float:
        return self.nnz / (self.n_in * self.n_out)

    def linear_index(self) -> np.ndarray:
        return self.rows * self.n_out + self.cols

    def compress(self) -> None:
        """Sort entries row-major, reject duplicates and rebuild the CSR view."""
        lin = self.linear_index()
        if lin.size > 1 and np.any(lin[1:] <= lin[:-1]):
            order = np.argsort(lin, kind="stable")
            lin = lin[order]
            if np.any(lin[1:] == lin[:-1]):
                raise ValueError("duplicate (row, col) entries")
            self.rows = self.rows[order]
            self.cols = self.cols[order]
            self.values = self.values[order]
        indptr = np.zeros(self.n_in + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.rows, minlength=self.n_in), out=indptr[1:])
        # shares self.values; in-place updates need no rebuild
        self._csr = sp.csr_matrix((self.values, self.cols, indptr), shape=self.shape, copy=False)

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def copy(self) -> SparseWeights:
        return SparseWeights(self.n_in, self.n_out, self.rows.copy(), self.cols.copy(),
                             self.values.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseWeights):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.values, other.values))

    # -- binary chunk ------------------------------------------------------

    def write_chunk(self, fh: BinaryIO) -> None:
        fh.write(_SPWT_HEADER.pack(SPWT_MAGIC, SPWT_VERSION, self.n_in, self.n_out, self.nnz))
        trip = np.empty(self.nnz, dtype=_TRIPLET)
        trip["row"] = self.rows
        trip["col"] = self.cols
        trip["weight"] = self.values
        fh.write(trip.tobytes())

    @classmethod
    def read_chunk(cls, fh: BinaryIO) -> SparseWeights:
        head = fh.read(_SPWT_HEADER.size)
        if len(head) != _SPWT_HEADER.size:
            raise ValueError("truncated SPWT header")
        magic, version, n_in, n_out, nnz = _SPWT_HEADER.unpack(head)
        if magic != SPWT_MAGIC:
            raise ValueError(f"bad chunk magic {magic!r}")
        if version != SPWT_VERSION:
            raise ValueError(f"unsupported SPWT version {version}")
        body = fh.read(nnz * _TRIPLET.itemsize)
        if len(body) != nnz * _TRIPLET.itemsize:
            raise ValueError("truncated SPWT body")
        trip = np.frombuffer(body, dtype=_TRIPLET)
        return cls(n_in, n_out, trip["row"].astype(np.int64), trip["col"].astype(np.int64),
                   trip["weight"].astype(np.float64))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write_chunk(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> SparseWeights:
        return cls.read_chunk(io.BytesIO(data))


def connection_probability(n_in: int, n_out: int, epsilon: float) -> float:
    """Erdős–Rényi connection probability, saturating at 1."""
    return min(1.0, epsilon * (n_in + n_out) / (n_in * n_out))


def expected_density_with_replacement(n_in: int, n_out: int, epsilon: float) -> float:
    """Density left when ``p * n_in * n_out`` positions are drawn with
    replacement and duplicates merge, i.e. roughly ``1 - exp(-p)``.

    Reference density tables for this family of models match this figure
    rather than ``p`` itself, so it is reported next to the analytic value.
    """
    cells = n_in * n_out
    draws = connection_probability(n_in, n_out, epsilon) * cells
    return float(-np.expm1(draws * np.log1p(-1.0 / cells))) if cells > 1 else 1.0


def erdos_renyi_init(n_in: int, n_out: int, epsilon: float, rng_seed=None,
                     init_scale: float = DEFAULT_INIT_SCALE) -> SparseWeights:
    """Sample a bipartite Erdős–Rényi layer.

    Every one of the ``n_in * n_out`` cells is present independently with
    probability :func:`connection_probability`.  The number of connections is
    drawn from the matching binomial and the positions uniformly without
    replacement, which is the same distribution without touching every cell.
    Weights are ``N(0, init_scale**2)``.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"dimensions must be positive, got {n_in}x{n_out}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    rng = as_rng(rng_seed)
    cells = n_in * n_out
    p = connection_probability(n_in, n_out, epsilon)
    n = cells if p >= 1.0 else int(rng.binomial(cells, p))
    lin = np.sort(rng.choice(cells, size=n, replace=False)) if n < cells else np.arange(cells)
    values = rng.normal(0.0, init_scale, size=n)
    return SparseWeights(n_in, n_out, lin // n_out, lin % n_out, values)


def _check_input(w: SparseWeights, x: np.ndarray, dim: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise ValueError(f"{name} has trailing dimension {x.shape[-1] if x.ndim else 0}, "
                         f"expected {dim}")
    return x


def spmv_forward(w: SparseWeights, x: np.ndarray) -> np.ndarray:
    """``x @ W`` for a vector of length ``n_in`` or a batch ``(B, n_in)``."""
    x = _check_input(w, x, w.n_in, "x")
    # (W^T x^T)^T keeps the sparse operand on the left
    return np.asarray(w.csr.T @ x.T).T


def spmv_transpose(w: SparseWeights, delta: np.ndarray) -> np.ndarray:
    """``delta @ W.T`` for a vector of length ``n_out`` or a batch ``(B, n_out)``."""
    delta = _check_input(w, delta, w.n_out, "delta")
    return np.asarray(w.csr @ delta.T).T


def accumulate_gradients(w: SparseWeights, upstream: np.ndarray, x: np.ndarray,
                         grad_buffer: np.ndarray) -> np.ndarray:
    """Add ``upstream[col] * x[row]`` to each entry's gradient, in place.

    Only existing connections get a gradient.  Batched inputs ``(B, n_out)``
    and ``(B, n_in)`` are summed over the batch axis.
    """
    upstream = _check_input(w, upstream, w.n_out, "upstream")
    x = _check_input(w, x, w.n_in, "x")
    if grad_buffer.shape != (w.nnz,):
        raise ValueError(f"gradient buffer has shape {grad_buffer.shape}, expected ({w.nnz},)")
    if upstream.ndim == 1:
        grad_buffer += upstream[w.cols] * x[w.rows]
        return grad_buffer
    step = max(1, _GRAD_CHUNK // max(1, x.shape[0]))
    for lo in range(0, w.nnz, step):
        hi = min(lo + step, w.nnz)
        grad_buffer[lo:hi] += np.einsum("bi,bi->i", x[:, w.rows[lo:hi]], upstream[:, w.cols[lo:hi]])
    return grad_buffer


def magnitude_partition(w: SparseWeights, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """Split entry indices into (removed, survivors) by the signed-magnitude rule.

    Removed are the ``floor(zeta * P)`` smallest positive weights and the
    ``floor(zeta * N)`` negative weights closest to zero.  Ties go to the lower
    entry index.  Exact zeros belong to neither class and always survive.
    """
    if not 0 <= zeta < 1:
        raise ValueError(f"zeta must lie in [0, 1), got {zeta}")
    vals = w.values
    pos = np.flatnonzero(vals > 0)
    neg = np.flatnonzero(vals < 0)
    n_pos = int(np.floor(zeta * pos.size))
    n_neg = int(np.floor(zeta * neg.size))
    drop_pos = pos[np.argsort(vals[pos], kind="stable")[:n_pos]]
    drop_neg = neg[np.argsort(-vals[neg], kind="stable")[:n_neg]]
    removed = np.sort(np.concatenate([drop_pos, drop_neg]))
    keep = np.ones(w.nnz, dtype=bool)
    keep[removed] = False
    return removed, np.flatnonzero(keep)


def remove_entries(w: SparseWeights, removed: np.ndarray) -> SparseWeights:
    keep = np.ones(w.nnz, dtype=bool)
    keep[removed] = False
    return SparseWeights(w.n_in, w.n_out, w.rows[keep], w.cols[keep], w.values[keep])


def _sample_absent(occupied: np.ndarray, cells: int, n_new: int,
                   rng: np.random.Generator) -> np.ndarray:
    free = cells - occupied.size
    if free < 4 * n_new or free < cells // 4:
        # dense regime: enumerate the holes instead of rejecting
        holes = np.setdiff1d(np.arange(cells), occupied, assume_unique=True)
        return rng.choice(holes, size=n_new, replace=False)
    taken = set(occupied.tolist())
    picked: list[int] = []
    while len(picked) < n_new:
        for c in rng.integers(0, cells, size=2 * (n_new - len(picked)) + 8).tolist():
            if c not in taken:
                taken.add(c)
                picked.append(c)
                if len(picked) == n_new:
                    break
    return np.asarray(picked, dtype=np.int64)


def random_regrow(w: SparseWeights, n_new: int, rng_seed=None,
                  scale: float = 1.0) -> tuple[SparseWeights, np.ndarray]:
    """Add ``n_new`` connections at uniformly chosen empty cells.

    New weights are ``N(0, scale**2)``, standard normal by default.

    Returns the grown matrix and the linear indices (``row * n_out + col``) of
    the new cells, in draw order.
    """
    cells = w.n_in * w.n_out
    if n_new < 0:
        raise ValueError("n_new must be non-negative")
    if n_new and w.nnz >= cells:
        raise ValueError("matrix is already full")
    if n_new > cells - w.nnz:
        raise ValueError(f"cannot add {n_new} entries, only {cells - w.nnz} cells free")
    if n_new == 0:
        return w.copy(), np.zeros(0, dtype=np.int64)
    rng = as_rng(rng_seed)
    new = _sample_absent(w.linear_index(), cells, n_new, rng)
    values = scale * rng.standard_normal(n_new)
    grown = SparseWeights(w.n_in, w.n_out,
                          np.concatenate([w.rows, new // w.n_out]),
                          np.concatenate([w.cols, new % w.n_out]),
                          np.concatenate([w.values, values]))
    return grown, new
