"""Side-information similarity matrices and their Cholesky factors.

A similarity matrix is used in the weighted form ``I + weight * S0``
where ``S0`` is symmetric, zero-diagonal and valued in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse

from .errors import EmptyList, ParseError, ShapeMismatch, TooLargeForDense, UnknownField
from .linalg import CholeskyFactor, cholesky_spd, solve_lower_transposed

MAX_SIMILARITY_DIM = 50_000
MEASURES = ("jaccard", "cosine_binary")


@dataclass
class FeatureTable:
    """Per-entity token sets, one list of sets per field."""

    entity_count: int
    fields: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, entity_count, records):
        """Build from ``(entity_index, field, token)`` records."""
        table = cls(int(entity_count))
        for entity, name, token in records:
            entity = int(entity)
            if not 0 <= entity < table.entity_count:
                raise IndexError(f"entity {entity} outside [0, {table.entity_count})")
            sets = table.fields.setdefault(name, [set() for _ in range(table.entity_count)])
            sets[entity].add(token)
        return table

    def field_names(self):
        return sorted(self.fields)


def _incidence(sets):
    vocab = {tok: k for k, tok in enumerate(sorted(set().union(*sets)))} if sets else {}
    rows, cols = [], []
    for e, toks in enumerate(sets):
        for tok in toks:
            rows.append(e)
            cols.append(vocab[tok])
    X = scipy.sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(sets), max(len(vocab), 1))
    )
    return X


def field_similarity(features: FeatureTable, field_name: str, measure: str = "jaccard") -> np.ndarray:
    """Pairwise similarity of entities' token sets for one field.

    Entities with no tokens get zero similarity to everything.
    """
    if field_name not in features.fields:
        raise UnknownField(field_name)
    if measure not in MEASURES:
        raise ValueError(f"unknown similarity measure {measure!r}")
    n = features.entity_count
    if n > MAX_SIMILARITY_DIM:
        raise TooLargeForDense(f"{n} entities exceed the similarity limit {MAX_SIMILARITY_DIM}")
    X = _incidence(features.fields[field_name])
    inter = np.asarray((X @ X.T).todense(), dtype=np.float64)
    sizes = np.asarray(X.sum(axis=1)).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        if measure == "jaccard":
            denom = sizes[:, None] + sizes[None, :] - inter
        else:
            denom = np.sqrt(np.outer(sizes, sizes))
        S = np.where(denom > 0, inter / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(S, 0.0)
    np.clip(S, 0.0, 1.0, out=S)
    return S


def blend_fields(matrices) -> np.ndarray:
    """Elementwise mean of per-field similarity matrices."""
    matrices = list(matrices)
    if not matrices:
        raise EmptyList("no similarity matrices to blend")
    shape = np.shape(matrices[0])
    if any(np.shape(m) != shape for m in matrices):
        raise ShapeMismatch("similarity matrices differ in shape")
    return np.sum(matrices, axis=0) / len(matrices)


def sparsify(S0, threshold: float) -> np.ndarray:
    """Zero out entries below ``threshold`` (0 disables)."""
    if threshold <= 0:
        return S0
    return np.where(S0 >= threshold, S0, 0.0)


def feature_similarity(features: FeatureTable, measure: str = "jaccard", fields=None,
                       threshold: float = 0.0) -> np.ndarray:
    """Blend of all (or the selected) field similarities."""
    names = features.field_names() if fields is None else list(fields)
    blended = blend_fields([field_similarity(features, name, measure) for name in names])
    return sparsify(blended, threshold)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """``I + weight * S0`` together with its lower Cholesky factor.

    ``S0 is None`` stands for the zero matrix and ``chol is None`` for an
    identity factor; neither is materialized for identity similarities.
    """

    dim: int
    weight: float = 0.0
    S0: np.ndarray | None = None
    chol: CholeskyFactor | None = None

    @property
    def is_identity(self) -> bool:
        return self.chol is None

    @property
    def applied_jitter(self) -> float:
        return 0.0 if self.chol is None else self.chol.jitter

    @property
    def L(self) -> np.ndarray:
        return np.eye(self.dim) if self.chol is None else self.chol.L

    def dense(self) -> np.ndarray:
        """The SPD matrix actually factored, jitter included."""
        if self.S0 is None and self.chol is not None:
            # loaded from a container: only the factor was stored
            return self.chol.L @ self.chol.L.T
        out = np.eye(self.dim) * (1.0 + self.applied_jitter)
        if self.S0 is not None and self.weight:
            out = out + self.weight * self.S0
        return out

    def mul_L(self, X) -> np.ndarray:
        """``L @ X``."""
        X = np.asarray(X, dtype=np.float64)
        return X.copy() if self.chol is None else self.chol.L @ X

    def mul_LT(self, X) -> np.ndarray:
        """``L.T @ X``."""
        X = np.asarray(X, dtype=np.float64)
        return X.copy() if self.chol is None else self.chol.L.T @ X

    def solve_LT(self, X) -> np.ndarray:
        """``inv(L.T) @ X``."""
        X = np.asarray(X, dtype=np.float64)
        return X.copy() if self.chol is None else solve_lower_transposed(self.chol, X)


def identity(dim: int) -> SimilarityMatrix:
    """Similarity for entities without side information."""
    return SimilarityMatrix(int(dim))


def assemble(S0, weight: float, max_dim: int = MAX_SIMILARITY_DIM) -> SimilarityMatrix:
    """Factor ``I + weight * S0``; a zero weight short-circuits to the identity."""
    weight = float(weight)
    if weight < 0 or not np.isfinite(weight):
        raise ValueError(f"similarity weight must be non-negative, got {weight}")
    S0 = np.asarray(S0, dtype=np.float64)
    if S0.ndim != 2 or S0.shape[0] != S0.shape[1]:
        raise ShapeMismatch(f"similarity must be square, got {S0.shape}")
    n = S0.shape[0]
    if n > max_dim:
        raise TooLargeForDense(f"similarity dimension {n} exceeds limit {max_dim}")
    if np.any(np.diag(S0) != 0):
        raise ValueError("S0 must have a zero diagonal")
    if n and np.max(np.abs(S0 - S0.T)) > 1e-12:
        raise ValueError("S0 must be symmetric")
    if weight == 0:
        return SimilarityMatrix(n, 0.0, S0, None)
    chol = cholesky_spd(np.eye(n) + weight * S0, jitter_policy="auto_jitter")
    return SimilarityMatrix(n, weight, S0, chol)


def load_features(path, id_map, fields=None) -> FeatureTable:
    """Read ``entity_id<TAB>field<TAB>token`` lines.

    ``id_map`` maps external entity ids (as strings) to dense indices;
    unknown ids are skipped. ``fields`` optionally restricts the fields kept.
    """
    records = []
    keep = None if fields is None else set(fields)
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            ext, name, token = parts
            if keep is not None and name not in keep:
                continue
            if ext in id_map:
                records.append((id_map[ext], name, token))
    return FeatureTable.from_records(len(id_map), records)
