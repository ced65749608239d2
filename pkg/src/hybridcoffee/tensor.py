"""Sparse third-order tensors, unfoldings and n-mode products.

Modes are numbered 1, 2, 3 (users, items, feedback). Unfoldings follow
the convention where the lower-numbered remaining mode varies fastest
along the columns, so ``unfold(T, 1)[u, i + N * f] == T[u, i, f]``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse

from .errors import (
    DuplicateEntry,
    IndexOutOfRange,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    TooLargeForDense,
)

DENSE_LIMIT = 10**7
DEFAULT_CHUNK = 1 << 16

# (row mode, Bp mode, Bq mode) for the Kronecker-free contraction, 0-based
_CONTRACTION_MODES = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}


def _frozen(arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SparseTensor3:
    """Coordinate-format tensor with entries sorted by (u, i, f)."""

    shape: tuple
    u: np.ndarray
    i: np.ndarray
    f: np.ndarray
    v: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.v.shape[0])

    def __len__(self):
        return self.nnz

    def index(self, mode: int) -> np.ndarray:
        return (self.u, self.i, self.f)[mode - 1]

    def entries(self):
        """Iterate over ``(u, i, f, v)`` records in canonical order."""
        for rec in zip(self.u.tolist(), self.i.tolist(), self.f.tolist(), self.v.tolist()):
            yield rec

    def to_dense(self) -> np.ndarray:
        if math.prod(self.shape) > DENSE_LIMIT:
            raise TooLargeForDense(f"tensor of shape {self.shape} is too large to densify")
        out = np.zeros(self.shape)
        out[self.u, self.i, self.f] = self.v
        return out

    def __add__(self, other):
        if not isinstance(other, SparseTensor3) or other.shape != self.shape:
            return NotImplemented
        return from_arrays(
            np.concatenate([self.u, other.u]),
            np.concatenate([self.i, other.i]),
            np.concatenate([self.f, other.f]),
            np.concatenate([self.v, other.v]),
            self.shape,
            duplicate_policy="sum",
        )

    def equals(self, other) -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.i, other.i)
            and np.array_equal(self.f, other.f)
            and np.array_equal(self.v, other.v)
        )


def from_arrays(u, i, f, v, shape, duplicate_policy: str = "error") -> SparseTensor3:
    """Build a tensor from parallel index/value arrays."""
    if duplicate_policy not in ("error", "keep_last", "sum"):
        raise ValueError(f"unknown duplicate policy {duplicate_policy!r}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s < 0 for s in shape):
        raise ShapeMismatch(f"invalid tensor shape {shape}")
    u = np.asarray(u, dtype=np.int64).ravel()
    i = np.asarray(i, dtype=np.int64).ravel()
    f = np.asarray(f, dtype=np.int64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if not (u.shape == i.shape == f.shape == v.shape):
        raise ShapeMismatch("index and value arrays differ in length")
    for name, idx, size in (("u", u, shape[0]), ("i", i, shape[1]), ("f", f, shape[2])):
        if idx.size and (idx.min() < 0 or idx.max() >= size):
            raise IndexOutOfRange(f"index {name} outside [0, {size})")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("tensor values must be finite")

    order = np.lexsort((f, i, u))  # stable: equal keys keep input order
    u, i, f, v = u[order], i[order], f[order], v[order]
    if u.size > 1:
        same = (u[1:] == u[:-1]) & (i[1:] == i[:-1]) & (f[1:] == f[:-1])
        if same.any():
            if duplicate_policy == "error":
                k = int(np.argmax(same))
                raise DuplicateEntry(f"duplicate entry at {(int(u[k]), int(i[k]), int(f[k]))}")
            starts = np.flatnonzero(np.concatenate([[True], ~same]))
            if duplicate_policy == "sum":
                v = np.add.reduceat(v, starts)
            else:
                ends = np.concatenate([starts[1:], [u.size]]) - 1
                v = v[ends]
            u, i, f = u[starts], i[starts], f[starts]
    return SparseTensor3(shape, _frozen(u, np.int64), _frozen(i, np.int64),
                         _frozen(f, np.int64), _frozen(v, np.float64))


def build_tensor(triplets, shape, duplicate_policy: str = "error") -> SparseTensor3:
    """Build a tensor from an iterable of ``(u, i, f, v)`` records."""
    rows = list(triplets)
    if not rows:
        empty = np.empty(0)
        return from_arrays(empty, empty, empty, empty, shape, duplicate_policy)
    u, i, f, v = zip(*rows)
    return from_arrays(u, i, f, v, shape, duplicate_policy)


def _contract_chunk(rows, pidx, qidx, vals, Bp, Bq, n_rows):
    c = vals.shape[0]
    kron = (vals[:, None, None] * Bq[qidx][:, :, None] * Bp[pidx][:, None, :]).reshape(c, -1)
    scatter = scipy.sparse.csr_matrix(
        (np.ones(c), (rows, np.arange(c))), shape=(n_rows, c)
    )
    return np.asarray(scatter @ kron)


def unfold_contract(A: SparseTensor3, mode: int, Bp, Bq, *, chunk_size: int = DEFAULT_CHUNK,
                    threads: int = 1) -> np.ndarray:
    """Compute ``A_(mode) @ kron(Bq, Bp)`` without forming the Kronecker product.

    For mode 1, ``Bp`` is indexed by items and ``Bq`` by feedback; for
    mode 2 by users and feedback; for mode 3 by users and items. Column
    ``q * cols(Bp) + p`` of the result pairs column ``q`` of ``Bq`` with
    column ``p`` of ``Bp``.

    Entries are processed in fixed-size chunks whose partial results are
    added in chunk order, so the output does not depend on ``threads``.
    """
    if mode not in _CONTRACTION_MODES:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    Bp = np.asarray(Bp, dtype=np.float64)
    Bq = np.asarray(Bq, dtype=np.float64)
    rmode, pmode, qmode = _CONTRACTION_MODES[mode]
    if Bp.ndim != 2 or Bp.shape[0] != A.shape[pmode]:
        raise ShapeMismatch(f"Bp must have {A.shape[pmode]} rows, got shape {Bp.shape}")
    if Bq.ndim != 2 or Bq.shape[0] != A.shape[qmode]:
        raise ShapeMismatch(f"Bq must have {A.shape[qmode]} rows, got shape {Bq.shape}")

    idx = (A.u, A.i, A.f)
    rows, pidx, qidx = idx[rmode], idx[pmode], idx[qmode]
    n_rows = A.shape[rmode]
    out = np.zeros((n_rows, Bq.shape[1] * Bp.shape[1]))
    bounds = [(s, min(s + chunk_size, A.nnz)) for s in range(0, A.nnz, chunk_size)]

    def work(b):
        s, e = b
        return _contract_chunk(rows[s:e], pidx[s:e], qidx[s:e], A.v[s:e], Bp, Bq, n_rows)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = pool.map(work, bounds)
            for part in partials:
                out += part
    else:
        for b in bounds:
            out += work(b)
    return out


def unfold(T, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of a dense tensor."""
    T = np.asarray(T)
    return np.reshape(np.moveaxis(T, mode - 1, 0), (T.shape[mode - 1], -1), order="F")


def fold(M, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(shape)
    moved = (shape[mode - 1],) + tuple(s for k, s in enumerate(shape) if k != mode - 1)
    return np.moveaxis(np.reshape(np.asarray(M), moved, order="F"), 0, mode - 1)


def n_mode_product(T, mode: int, X) -> np.ndarray:
    """Dense n-mode product ``T x_mode X`` (contracts ``T``'s mode with X's columns)."""
    T = np.asarray(T, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if mode not in (1, 2, 3) or T.ndim != 3:
        raise ValueError("n_mode_product expects a third-order tensor and mode in {1, 2, 3}")
    if X.ndim != 2 or X.shape[1] != T.shape[mode - 1]:
        raise ShapeMismatch(f"matrix {X.shape} does not conform to mode {mode} of {T.shape}")
    return np.moveaxis(np.tensordot(X, T, axes=(1, mode - 1)), 0, mode - 1)


n_mode_product_dense = n_mode_product


def reconstruct_dense(model) -> np.ndarray:
    """Dense original-space approximation ``G x1 U x2 V x3 W`` of a trained model."""
    shape = (model.U.shape[0], model.V.shape[0], model.W.shape[0])
    if math.prod(shape) > DENSE_LIMIT:
        raise TooLargeForDense(f"reconstruction of shape {shape} is too large")
    out = n_mode_product(model.core, 1, model.U)
    out = n_mode_product(out, 2, model.V)
    return n_mode_product(out, 3, model.W)


def frobenius_norm(T) -> float:
    if isinstance(T, SparseTensor3):
        vals = T.v
    else:
        vals = np.asarray(T, dtype=np.float64).ravel()
    return math.sqrt(math.fsum((vals * vals).tolist()))


def write_tensor(path, A: SparseTensor3) -> None:
    """Write ``A`` as ``u<TAB>i<TAB>f<TAB>v`` lines under a ``#shape`` header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#shape {} {} {}\n".format(*A.shape))
        for u, i, f, v in A.entries():
            fh.write(f"{u}\t{i}\t{f}\t{v!r}\n")


def read_tensor(path, duplicate_policy: str = "error") -> SparseTensor3:
    shape = None
    rows = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "shape":
                    try:
                        shape = tuple(int(p) for p in parts[1:4])
                    except ValueError:
                        raise ParseError("malformed shape header", lineno) from None
                    if len(shape) != 3:
                        raise ParseError("shape header needs three sizes", lineno)
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
            except ValueError:
                raise ParseError("non-numeric field", lineno) from None
    if shape is None:
        raise ParseError("missing '#shape M N F' header")
    return build_tensor(rows, shape, duplicate_policy)
