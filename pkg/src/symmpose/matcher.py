"""Rotation-embedding library and exhaustive dot-product matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericError
from .so3 import SO3Grid

BUILD_CHUNK = 32768


@dataclass(frozen=True)
class EmbeddingLibrary:
    object_id: str
    rows: np.ndarray  # (Q, D) float32, unit rows, index-aligned with grid
    grid: SO3Grid

    def __post_init__(self):
        if len(self.rows) != len(self.grid):
            raise InvalidInputError(f"library has {len(self.rows)} rows but grid has {len(self.grid)} entries")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.rows)


def build_library(embed, grid: SO3Grid, object_id: str) -> EmbeddingLibrary:
    """Embed every grid rotation with ``embed`` and L2-normalise the rows.

    ``embed`` maps an ``(n, 3, 3)`` rotation stack to ``(n, D)`` raw
    embeddings; it is evaluated in chunks to bound memory.
    """
    rots = grid.rotations
    rows = None
    for start in range(0, len(rots), BUILD_CHUNK):
        e = np.asarray(embed(rots[start:start + BUILD_CHUNK]), dtype=float)
        bad = ~np.all(np.isfinite(e), axis=1)
        if np.any(bad):
            raise NumericError(f"non-finite embedding for grid index {start + int(np.argmax(bad))}")
        norms = np.linalg.norm(e, axis=1, keepdims=True)
        if np.any(norms <= 1e-12):
            raise NumericError(f"zero embedding for grid index {start + int(np.argmin(norms))}")
        if rows is None:
            rows = np.empty((len(rots), e.shape[1]), dtype=np.float32)
        rows[start:start + len(e)] = e / norms
    return EmbeddingLibrary(object_id, rows, grid)


def _prep_query(query, lib: EmbeddingLibrary) -> np.ndarray:
    q = np.asarray(query, dtype=float)
    if q.shape[-1] != lib.dim:
        raise InvalidInputError(f"query width {q.shape[-1]} does not match library width {lib.dim}")
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n <= 1e-12):
        raise InvalidInputError("query has zero norm")
    return (q / n).astype(np.float32)


def scores(query, lib: EmbeddingLibrary) -> np.ndarray:
    """Cosine scores of one query ``(D,)`` or a batch ``(B, D)`` against every row."""
    q = _prep_query(query, lib)
    if q.ndim == 1:
        return lib.rows @ q
    return q @ lib.rows.T


def match_distribution(query, lib: EmbeddingLibrary, tau: float = 0.1) -> np.ndarray:
    """Softmax of ``query . row / tau`` over the library (float64 accumulation)."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    z = scores(query, lib).astype(np.float64) / tau
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def top_k(query, lib: EmbeddingLibrary, k: int):
    """The ``k`` best ``(index, score)`` pairs, descending; ties go to the lower index."""
    if not 1 <= k <= len(lib):
        raise InvalidInputError(f"k must lie in [1, {len(lib)}], got {k}")
    s = scores(query, lib)
    if np.ndim(s) != 1:
        raise InvalidInputError("top_k takes a single query")
    if k < len(s):
        cand = np.argpartition(-s, k - 1)[:k]
        # pull in every index tied with the k-th score so tie-breaking is exact
        cand = np.union1d(cand, np.flatnonzero(s == s[cand].min()))
    else:
        cand = np.arange(len(s))
    order = np.lexsort((cand, -s[cand]))[:k]
    idx = cand[order]
    return [(int(i), float(s[i])) for i in idx]


def argmax_index(query, lib: EmbeddingLibrary):
    """Top-1 library index for one query or each row of a batch."""
    s = scores(query, lib)
    # np.argmax returns the first maximum, i.e. the lower index on ties
    return np.argmax(s, axis=-1)


def argmax_rotation(query, lib: EmbeddingLibrary) -> np.ndarray:
    return lib.grid.rotations[argmax_index(query, lib)]
