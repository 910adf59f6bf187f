"""Embedding-space anomaly detection.

Four scorers (kNN distance, local outlier factor, isolation forest, PCA
reconstruction error) plus the quantile outlier filter: with anomaly ratio r,
the threshold is the (1-r) nearest-rank quantile of the scores and exactly
the strict exceedances are flagged.  Higher score = more anomalous for every
method, so the filter is scorer-agnostic.

The defender's true threshold is never materialized; callers control the
filter only through r (or through an explicit per-window flag budget, see
``flag_top_scores``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .numerics import as_matrix, quantile
from .rng import stream

__all__ = [
    "DetectionConfig",
    "DetectionResult",
    "score_knn",
    "score_lof",
    "score_iforest",
    "score_pca",
    "score_set",
    "filter_outliers",
    "flag_top_scores",
    "score_rank",
    "average_score_rank",
]

DETECTOR_METHODS = ("knn", "lof", "iforest", "pca")


@dataclass(frozen=True)
class DetectionConfig:
    """Detector family choice and its (pinned, reproducible) parameters."""

    method: str = "knn"
    anomaly_ratio_r: float = 0.05
    neighbors_k: int = 5
    n_trees: int = 100
    subsample: int = 256
    pca_variance_keep: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.method not in DETECTOR_METHODS:
            raise ConfigError(f"method must be one of {DETECTOR_METHODS}, got {self.method!r}")
        if not (0.0 < self.anomaly_ratio_r <= 1.0):
            raise ConfigError(f"anomaly_ratio_r must be in (0, 1], got {self.anomaly_ratio_r}")
        if int(self.neighbors_k) < 1:
            raise ConfigError(f"neighbors_k must be >= 1, got {self.neighbors_k}")
        if int(self.n_trees) < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if int(self.subsample) < 2:
            raise ConfigError(f"subsample must be >= 2, got {self.subsample}")
        if not (0.0 < self.pca_variance_keep <= 1.0):
            raise ConfigError(
                f"pca_variance_keep must be in (0, 1], got {self.pca_variance_keep}"
            )
        for name in ("neighbors_k", "n_trees", "subsample"):
            object.__setattr__(self, name, int(getattr(self, name)))


@dataclass(frozen=True)
class DetectionResult:
    """Scores, the (1-r) quantile threshold, and the strict exceedances."""

    scores: tuple[float, ...]
    threshold: float
    outlier_indices: frozenset[int]
    flagged_count: int

    def to_dict(self) -> dict:
        return {
            "scores": list(self.scores),
            "threshold": self.threshold,
            "outlier_indices": sorted(self.outlier_indices),
            "flagged_count": self.flagged_count,
        }


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def score_knn(points, k: int) -> np.ndarray:
    """Distance to the k-th nearest other point (self excluded)."""
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ConfigError(f"k={k} requires more than k points, got {n}")
    dist = _pairwise_distances(pts)
    np.fill_diagonal(dist, np.inf)
    part = np.sort(dist, axis=1)
    return part[:, k - 1].copy()


def score_lof(points, k: int) -> np.ndarray:
    """Local outlier factor with the standard tie-inclusive neighborhood.

    ~1 for points inside a uniform-density region, > 1 for isolated points.
    Fully degenerate neighborhoods (all reachability distances zero) are
    defined to score 1 rather than raising.
    """
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if k < 2:
        raise ConfigError(f"k must be >= 2 for LOF, got {k}")
    if k >= n:
        raise ConfigError(f"k={k} requires more than k points, got {n}")
    dist = _pairwise_distances(pts)
    np.fill_diagonal(dist, np.inf)
    order = np.sort(dist, axis=1)
    k_dist = order[:, k - 1]
    # neighborhood includes every point at distance <= k-distance (ties kept)
    neighborhoods = [np.flatnonzero(dist[i] <= k_dist[i] + 0.0) for i in range(n)]

    lrd = np.empty(n)
    for i in range(n):
        nb = neighborhoods[i]
        reach = np.maximum(k_dist[nb], dist[i, nb])
        total = float(np.sum(reach))
        lrd[i] = math.inf if total == 0.0 else len(nb) / total

    scores = np.empty(n)
    for i in range(n):
        nb = neighborhoods[i]
        own = lrd[i]
        neighbor_mean = float(np.mean(lrd[nb]))
        if math.isinf(own):
            # duplicates: inf/inf is the defined degenerate density ratio 1;
            # finite neighbor density over infinite own density is 0
            scores[i] = 1.0 if math.isinf(neighbor_mean) else 0.0
        else:
            scores[i] = neighbor_mean / own
    return scores


def _harmonic(n: int) -> float:
    return math.log(n) + 0.5772156649015329


def _avg_path_length(n: int) -> float:
    """Expected unsuccessful-search path length in a tree of n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1) / n


def _build_itree(data: np.ndarray, gen, depth: int, limit: int):
    n = data.shape[0]
    if depth >= limit or n <= 1:
        return ("leaf", n)
    spans = data.max(axis=0) - data.min(axis=0)
    usable = np.flatnonzero(spans > 0)
    if usable.size == 0:
        return ("leaf", n)
    feature = int(usable[gen.integer_below(usable.size)])
    lo = float(data[:, feature].min())
    hi = float(data[:, feature].max())
    split = lo + (hi - lo) * gen.random()
    mask = data[:, feature] < split
    # a degenerate split would recurse forever; treat as a leaf
    if not mask.any() or mask.all():
        return ("leaf", n)
    left = _build_itree(data[mask], gen, depth + 1, limit)
    right = _build_itree(data[~mask], gen, depth + 1, limit)
    return ("node", feature, split, left, right)


def _tree_path_lengths(node, pts: np.ndarray, idx: np.ndarray, depth: int, out: np.ndarray):
    if node[0] == "leaf":
        out[idx] = depth + _avg_path_length(node[1])
        return
    _, feature, split, left, right = node
    mask = pts[idx, feature] < split
    if mask.any():
        _tree_path_lengths(left, pts, idx[mask], depth + 1, out)
    if not mask.all():
        _tree_path_lengths(right, pts, idx[~mask], depth + 1, out)


def score_iforest(points, n_trees: int, subsample: int, seed: int) -> np.ndarray:
    """Isolation-forest scores 2^(-E[path]/c(subsample)), in (0, 1).

    Deterministic given ``seed``; a subsample larger than the point count is
    silently capped.
    """
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if n < 2:
        raise ConfigError("isolation forest needs at least 2 points")
    if int(n_trees) < 1:
        raise ConfigError(f"n_trees must be >= 1, got {n_trees}")
    psi = min(int(subsample), n)
    if psi < 2:
        raise ConfigError(f"subsample must be >= 2, got {subsample}")
    limit = math.ceil(math.log2(psi))
    gen = stream(seed, "iforest")
    paths = np.zeros(n)
    scratch = np.empty(n)
    all_idx = np.arange(n)
    for _ in range(int(n_trees)):
        chosen = all_idx.tolist()
        gen.shuffle(chosen)
        sample = pts[np.array(chosen[:psi])]
        tree = _build_itree(sample, gen, 0, limit)
        _tree_path_lengths(tree, pts, all_idx, 0, scratch)
        paths += scratch
    expected = paths / int(n_trees)
    return np.power(2.0, -expected / _avg_path_length(psi))


def score_pca(points, variance_keep: float) -> np.ndarray:
    """Squared reconstruction error from the kept principal subspace.

    Keeps the smallest component count whose explained-variance fraction
    reaches ``variance_keep``; zero-variance data scores all points 0.
    """
    if not (0.0 < variance_keep <= 1.0):
        raise ConfigError(f"variance_keep must be in (0, 1], got {variance_keep}")
    pts = as_matrix(points, "points")
    if pts.shape[0] < 2:
        raise ConfigError("PCA scoring needs at least 2 points")
    centered = pts - pts.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals**2
    total = float(variances.sum())
    if total == 0.0:
        return np.zeros(pts.shape[0])
    fractions = np.cumsum(variances) / total
    keep = int(np.searchsorted(fractions, variance_keep * (1.0 - 1e-12)) + 1)
    keep = min(keep, vt.shape[0])
    basis = vt[:keep]
    projected = (centered @ basis.T) @ basis
    residual = centered - projected
    return np.sum(residual * residual, axis=1)


def score_set(points, cfg: DetectionConfig) -> np.ndarray:
    """Dispatch to the configured scorer."""
    if cfg.method == "knn":
        return score_knn(points, cfg.neighbors_k)
    if cfg.method == "lof":
        return score_lof(points, max(2, cfg.neighbors_k))
    if cfg.method == "iforest":
        return score_iforest(points, cfg.n_trees, cfg.subsample, cfg.seed)
    return score_pca(points, cfg.pca_variance_keep)


def filter_outliers(scores, r: float) -> DetectionResult:
    """Flag strict exceedances of the (1-r) nearest-rank quantile.

    Ties at the threshold are never flagged, so at most ceil(r*N) points are
    flagged when scores are distinct and none when all scores are equal.
    """
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("scores must be a non-empty 1-D list")
    if not (0.0 < r <= 1.0):
        raise ConfigError(f"anomaly ratio r must be in (0, 1], got {r}")
    threshold = quantile(arr, 1.0 - r)
    flagged = frozenset(int(i) for i in np.flatnonzero(arr > threshold))
    return DetectionResult(
        scores=tuple(float(s) for s in arr),
        threshold=threshold,
        outlier_indices=flagged,
        flagged_count=len(flagged),
    )


def flag_top_scores(scores, n_flag: int) -> frozenset[int]:
    """Flag exactly the ``n_flag`` highest scores (ties: lower index first).

    This is the per-window detector budget used for top-K retrieval
    filtering, where the budget equals the number of injected items in the
    window rather than a global ratio.
    """
    arr = np.asarray(scores, dtype=float)
    if n_flag < 0:
        raise ConfigError(f"n_flag must be >= 0, got {n_flag}")
    n_flag = min(int(n_flag), arr.size)
    if n_flag == 0:
        return frozenset()
    order = sorted(range(arr.size), key=lambda i: (-arr[i], i))
    return frozenset(order[:n_flag])


def score_rank(scores, index: int) -> int:
    """Rank of one score within its pool: 1 + count of strictly higher scores."""
    arr = np.asarray(scores, dtype=float)
    return 1 + int(np.sum(arr > arr[int(index)]))


def average_score_rank(ae_embeddings, reference, cfg: DetectionConfig) -> float:
    """Mean anomaly-score rank of each AE inside the reference pool.

    For each AE the pooled set (reference + that AE) is scored; the AE's
    rank is 1 plus the number of pooled points scoring strictly higher.
    Rank 1 means the AE is the most anomalous point; larger ranks mean the
    AE hides better.  Reported as the raw mean rank among N_ref + 1 points.
    """
    aes = as_matrix(ae_embeddings, "ae_embeddings")
    refs = as_matrix(reference, "reference")
    ranks = []
    for ae in aes:
        pool = np.vstack([refs, ae[None, :]])
        scores = score_set(pool, cfg)
        ranks.append(score_rank(scores, scores.size - 1))
    return float(np.mean(ranks))
