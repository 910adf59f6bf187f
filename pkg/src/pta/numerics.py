"""Dense vector primitives and statistics used by every other module.

Embeddings are plain 1-D float64 numpy arrays; a collection of embeddings is
a 2-D array with one row per member (``EmbeddingSet`` wraps one when a label
needs to travel with the vectors).  Embeddings are stored unnormalized;
normalization is always an explicit step, because the trade-off analysis
works in raw L2 geometry while cosine scoring normalizes internally.

Conventions pinned here so results are bit-reproducible across languages:

* variance_trace uses the population (1/N) variance, matching the
  expectation-based definition the trade-off formula assumes;
* quantile uses nearest-rank semantics (sort ascending, take the element at
  index ceil(q*N) - 1, with q=0 mapping to the minimum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "EmbeddingSet",
    "as_vector",
    "as_matrix",
    "cosine",
    "l2_dist",
    "unit_normalize",
    "mean_embedding",
    "variance_trace",
    "quantile",
]


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array of dimension >= 2, all values finite."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size < 2:
        raise DomainError(f"{name} must have dimension >= 2, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def as_matrix(s, name: str = "set") -> np.ndarray:
    """Coerce an embedding collection to a non-empty (N, d) float64 array."""
    if isinstance(s, EmbeddingSet):
        return s.vectors
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DomainError(f"{name} must be a 2-D array of embeddings, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise DomainError(f"{name} must be non-empty")
    if arr.shape[1] < 2:
        raise DomainError(f"{name} members must have dimension >= 2, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """A non-empty, dimension-consistent collection of embeddings.

    ``label`` is a free-form tag (cluster id, import tag, ...); it never
    influences numerical results.
    """

    vectors: np.ndarray
    label: str = ""
    member_labels: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        arr = as_matrix(np.asarray(self.vectors, dtype=float), name="EmbeddingSet")
        object.__setattr__(self, "vectors", arr)
        if self.member_labels and len(self.member_labels) != arr.shape[0]:
            raise DomainError("member_labels length must match the number of members")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise DomainError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def cosine(a, b) -> float:
    """Cosine similarity dot(a,b) / (||a|| ||b||), in [-1, 1].

    Equals the plain dot product when both inputs are unit-norm.  Raises
    DomainError naming the offending argument on a zero-norm input.
    """
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    _check_same_dim(va, vb)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0:
        raise DomainError("cosine: argument 'a' has zero norm")
    if nb == 0.0:
        raise DomainError("cosine: argument 'b' has zero norm")
    c = float(np.dot(va, vb) / (na * nb))
    # clamp rounding spill so downstream acos/comparisons stay in range
    return max(-1.0, min(1.0, c))


def l2_dist(a, b) -> float:
    """Euclidean distance; zero iff a == b."""
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    _check_same_dim(va, vb)
    return float(np.linalg.norm(va - vb))


def unit_normalize(a) -> np.ndarray:
    """Rescale to unit L2 norm, preserving direction."""
    va = as_vector(a, "a")
    n = float(np.linalg.norm(va))
    if n == 0.0:
        raise DomainError("unit_normalize: zero vector has no direction")
    return va / n


def mean_embedding(s) -> np.ndarray:
    """Coordinate-wise arithmetic mean of a set (NOT re-normalized)."""
    m = as_matrix(s)
    return m.mean(axis=0)


def variance_trace(s) -> float:
    """Trace of the population covariance matrix of a set.

    Sum over coordinates of the 1/N variance; 0 for a singleton or for
    identical members.
    """
    m = as_matrix(s)
    centered = m - m.mean(axis=0)
    return float(np.sum(centered * centered) / m.shape[0])


def quantile(scores, q: float) -> float:
    """Nearest-rank quantile of a non-empty score list.

    Sort ascending and return the element at index ceil(q*N) - 1; q=0 returns
    the minimum and q=1 the maximum.  No interpolation, so the result is
    always an observed score and is bit-exact across implementations.
    """
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("quantile: scores must be a non-empty 1-D list")
    if not np.all(np.isfinite(arr)):
        raise DomainError("quantile: scores contain non-finite values")
    if not (0.0 <= q <= 1.0):
        raise DomainError(f"quantile: q must be in [0, 1], got {q}")
    ordered = np.sort(arr, kind="stable")
    idx = max(0, math.ceil(q * arr.size) - 1)
    return float(ordered[idx])
