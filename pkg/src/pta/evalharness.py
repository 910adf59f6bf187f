"""Task simulations and attack metrics.

Success-rate semantics: ``A_success`` is the set of cases that match the
target after the attack, ``A'`` the set that already matched before it (the
unperturbed originals of the same items stand in for "before"), and the
reported rate is 100 * |A_success \\ A'| / N.  With a detector enabled, the
successful-yet-detected cases are removed from the numerator, so the
defended rate never exceeds the undefended one.

Retrieval detection scores the union of the queries' top-K windows in one
pass, and the flag budget is applied within each query's own top-K list:
exactly as many flags as that list contains injected items (the detector is
granted one flag per adversarial example to find).  Classification
detection pools the AEs with a reference set from the target class and
applies the quantile filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detect import DetectionConfig, filter_outliers, score_set
from .errors import ConfigError, DomainError
from .numerics import as_matrix, as_vector

__all__ = [
    "Gallery",
    "MetricReport",
    "PoisoningReport",
    "RetrievalCounts",
    "classify",
    "cls_asr",
    "cls_asrd",
    "detect_in_reference_pool",
    "retrieve_topk",
    "retrieval_success_sets",
    "retrieval_attack_counts",
    "rk_asr",
    "rk_asrd",
    "poisoning_degradation",
]


# ---------------------------------------------------------------------------
# Gallery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gallery:
    """Benign items plus injected adversarial embeddings.

    Item ids are positional: benign items take 0..N-1, injected items
    N..N+M-1, so id >= N identifies an adversarial entry.  The injection
    ratio is always recomputed from the current contents.
    """

    items: np.ndarray
    injected: np.ndarray
    item_tags: tuple[str, ...] = ()

    def __post_init__(self):
        items = as_matrix(np.asarray(self.items, dtype=float), "items")
        injected = np.asarray(self.injected, dtype=float)
        if injected.size == 0:
            injected = np.zeros((0, items.shape[1]))
        else:
            injected = as_matrix(injected, "injected")
            if injected.shape[1] != items.shape[1]:
                raise DomainError("injected embeddings must share the item dimension")
        if self.item_tags and len(self.item_tags) != items.shape[0]:
            raise DomainError("item_tags length must match the number of items")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "injected", injected)

    @property
    def n_items(self) -> int:
        return self.items.shape[0]

    @property
    def n_injected(self) -> int:
        return self.injected.shape[0]

    @property
    def size(self) -> int:
        return self.n_items + self.n_injected

    @property
    def injection_ratio(self) -> float:
        return self.n_injected / self.size

    def all_embeddings(self) -> np.ndarray:
        if self.n_injected == 0:
            return self.items
        return np.vstack([self.items, self.injected])

    def is_injected(self, item_id: int) -> bool:
        return int(item_id) >= self.n_items


# ---------------------------------------------------------------------------
# Classification task
# ---------------------------------------------------------------------------


def classify(candidate, class_prompt_sets) -> int:
    """Zero-shot class index: argmax over classes of max cosine to any prompt.

    Ties break toward the lowest class index.
    """
    if not class_prompt_sets:
        raise ConfigError("at least one class prompt set is required")
    cand = as_vector(candidate, "candidate")
    norm = float(np.linalg.norm(cand))
    if norm == 0.0:
        raise DomainError("candidate has zero norm")
    best_class, best_score = 0, -math.inf
    for idx, prompts in enumerate(class_prompt_sets):
        mat = as_matrix(prompts, f"class {idx} prompts")
        pnorms = np.linalg.norm(mat, axis=1)
        if np.any(pnorms == 0.0):
            raise DomainError(f"class {idx} contains a zero-norm prompt")
        score = float(np.max((mat @ cand) / (pnorms * norm)))
        if score > best_score:
            best_class, best_score = idx, score
    return best_class


def _cls_sets(pre_labels, post_labels, target_class: int):
    pre = list(pre_labels)
    post = list(post_labels)
    if len(pre) != len(post):
        raise DomainError("pre and post label lists must have equal length")
    if not post:
        raise DomainError("at least one attack outcome is required")
    success = {i for i, c in enumerate(post) if c == target_class}
    pre_success = {i for i, c in enumerate(pre) if c == target_class}
    return success, pre_success


def cls_asr(pre_labels, post_labels, target_class: int) -> float:
    """Share (%) of AEs newly classified as the target class."""
    success, pre_success = _cls_sets(pre_labels, post_labels, target_class)
    return 100.0 * len(success - pre_success) / len(list(post_labels))


def cls_asrd(pre_labels, post_labels, target_class: int, detected) -> float:
    """cls_asr with detected AEs removed from the successes."""
    success, pre_success = _cls_sets(pre_labels, post_labels, target_class)
    surviving = (success - pre_success) - set(detected)
    return 100.0 * len(surviving) / len(list(post_labels))


def detect_in_reference_pool(
    ae_embeddings, references, cfg: DetectionConfig, r: float | None = None
) -> frozenset[int]:
    """Flag AEs by pooling them with a benign reference set.

    Scores the pooled set with the configured detector and applies the
    quantile filter (anomaly ratio ``r``, defaulting to the config's).
    Returns the indices of flagged AEs (0-based within ``ae_embeddings``).
    """
    aes = as_matrix(ae_embeddings, "ae_embeddings")
    refs = as_matrix(references, "references")
    pool = np.vstack([refs, aes])
    scores = score_set(pool, cfg)
    ratio = cfg.anomaly_ratio_r if r is None else r
    result = filter_outliers(scores, ratio)
    n_refs = refs.shape[0]
    return frozenset(i - n_refs for i in result.outlier_indices if i >= n_refs)


# ---------------------------------------------------------------------------
# Retrieval task
# ---------------------------------------------------------------------------


def retrieve_topk(query, gallery: Gallery, k: int) -> np.ndarray:
    """Top-k gallery ids by descending cosine; ties by ascending id."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if k > gallery.size:
        raise ConfigError(f"K={k} exceeds gallery size {gallery.size}")
    q = as_vector(query, "query")
    qnorm = float(np.linalg.norm(q))
    if qnorm == 0.0:
        raise DomainError("query has zero norm")
    mat = gallery.all_embeddings()
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("gallery contains a zero-norm embedding")
    sims = (mat @ q) / (norms * qnorm)
    # stable sort on ascending id, then stable sort on -similarity
    order = np.argsort(-sims, kind="stable")
    return order[:k]


def retrieval_success_sets(queries, gallery: Gallery, k: int) -> set[int]:
    """Indices of queries with >= 1 injected item in their top-k."""
    qmat = as_matrix(queries, "queries")
    hits = set()
    for qi in range(qmat.shape[0]):
        top = retrieve_topk(qmat[qi], gallery, k)
        if any(gallery.is_injected(i) for i in top):
            hits.add(qi)
    return hits


@dataclass(frozen=True)
class RetrievalCounts:
    """Exact case counts behind the retrieval success rates."""

    n_queries: int
    n_success: int  # queries with an injected hit after the attack
    n_pre_success: int  # queries already hit by the clean originals
    n_new_success: int  # |success \ pre_success|
    n_surviving: int  # new successes that survive detection
    n_detected: int  # new successes whose every hit was flagged

    @property
    def asr(self) -> float:
        return 100.0 * self.n_new_success / self.n_queries

    @property
    def asrd(self) -> float:
        return 100.0 * self.n_surviving / self.n_queries


def retrieval_attack_counts(
    queries,
    items,
    adv_embeddings,
    clean_embeddings,
    k: int,
    cfg: DetectionConfig | None = None,
    window_k: int | None = None,
) -> RetrievalCounts:
    """One pass over the retrieval task, with optional window detection.

    Success is judged at rank ``k``.  When a detector config is given, it
    scores the union of all queries' top-``window_k`` entries once
    (``window_k`` defaults to ``k``; typically a wider window such as 50),
    and within each query's own top-``window_k`` list flags exactly as many
    entries as that list contains injected items.  A query keeps its
    success only if at least one of its top-``k`` injected hits is never
    flagged in its list.
    """
    qmat = as_matrix(queries, "queries")
    if qmat.shape[0] == 0:
        raise DomainError("at least one query is required")
    adv = as_matrix(adv_embeddings, "adv_embeddings")
    if adv.shape[0] == 0:
        raise DomainError("the gallery must contain at least one injected AE")
    gallery_adv = Gallery(items=items, injected=adv)
    gallery_clean = Gallery(items=items, injected=clean_embeddings)
    if window_k is None:
        window_k = k
    window_k = min(int(window_k), gallery_adv.size)
    if window_k < k:
        raise ConfigError(f"window_k={window_k} must be >= the success rank k={k}")

    wide_per_query = [
        retrieve_topk(qmat[qi], gallery_adv, window_k) for qi in range(qmat.shape[0])
    ]
    topk_per_query = [wide[:k] for wide in wide_per_query]
    success = {
        qi
        for qi, top in enumerate(topk_per_query)
        if any(gallery_adv.is_injected(i) for i in top)
    }
    pre_success = retrieval_success_sets(qmat, gallery_clean, k)
    new_success = success - pre_success

    if cfg is None:
        surviving = set(new_success)
    else:
        window_ids = sorted({int(i) for wide in wide_per_query for i in wide})
        scores = dict(
            zip(window_ids, score_set(gallery_adv.all_embeddings()[window_ids], cfg))
        )
        surviving = set()
        for qi in new_success:
            ids = [int(i) for i in wide_per_query[qi]]
            budget = sum(1 for i in ids if gallery_adv.is_injected(i))
            by_score = sorted(ids, key=lambda i: (-scores[i], i))
            flagged = set(by_score[:budget])
            if any(
                gallery_adv.is_injected(i) and int(i) not in flagged
                for i in topk_per_query[qi]
            ):
                surviving.add(qi)
    return RetrievalCounts(
        n_queries=qmat.shape[0],
        n_success=len(success),
        n_pre_success=len(pre_success),
        n_new_success=len(new_success),
        n_surviving=len(surviving),
        n_detected=len(new_success) - len(surviving),
    )


def rk_asr(queries, items, adv_embeddings, clean_embeddings, k: int) -> float:
    """Recall-window success rate (%) net of pre-existing successes.

    ``adv_embeddings`` are the injected adversarial entries;
    ``clean_embeddings`` are the unperturbed versions of the same entries,
    used to compute the before-attack success set.
    """
    return retrieval_attack_counts(queries, items, adv_embeddings, clean_embeddings, k).asr


def rk_asrd(
    queries,
    items,
    adv_embeddings,
    clean_embeddings,
    k: int,
    cfg: DetectionConfig,
    window_k: int | None = None,
) -> float:
    """rk_asr after per-list window detection removes flagged injected items."""
    return retrieval_attack_counts(
        queries, items, adv_embeddings, clean_embeddings, k, cfg=cfg, window_k=window_k
    ).asrd


# ---------------------------------------------------------------------------
# Gallery poisoning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoisoningReport:
    recall_before: float
    recall_after: float
    drop: float
    n_injected: int


def _recall_at_1(queries: np.ndarray, ground_truth, gallery: Gallery) -> float:
    hits = 0
    for qi in range(queries.shape[0]):
        top = retrieve_topk(queries[qi], gallery, 1)
        if int(top[0]) == int(ground_truth[qi]):
            hits += 1
    return 100.0 * hits / queries.shape[0]


def poisoning_degradation(
    queries, ground_truth_ids, items, ae_pool, injection_ratio: float
) -> PoisoningReport:
    """Recall@1 before/after injecting ceil(ratio * N_items) AEs.

    Every query must have exactly one ground-truth item id; the drop is
    reported in percentage points.
    """
    qmat = as_matrix(queries, "queries")
    gts = [int(g) for g in ground_truth_ids]
    items = as_matrix(items, "items")
    if len(gts) != qmat.shape[0]:
        raise DomainError("one ground-truth id is required per query")
    if any(not 0 <= g < items.shape[0] for g in gts):
        raise DomainError("ground-truth ids must reference benign items")
    if injection_ratio < 0:
        raise ConfigError(f"injection_ratio must be >= 0, got {injection_ratio}")
    n_inject = math.ceil(injection_ratio * items.shape[0])
    pool = np.asarray(ae_pool, dtype=float)
    available = 0 if pool.size == 0 else pool.shape[0]
    if n_inject > available:
        raise ConfigError(
            f"injection ratio {injection_ratio} needs {n_inject} AEs, only {available} available"
        )
    before_gallery = Gallery(items=items, injected=np.zeros((0, items.shape[1])))
    after_gallery = Gallery(items=items, injected=pool[:n_inject])
    before = _recall_at_1(qmat, gts, before_gallery)
    after = _recall_at_1(qmat, gts, after_gallery)
    return PoisoningReport(
        recall_before=before, recall_after=after, drop=before - after, n_injected=n_inject
    )


# ---------------------------------------------------------------------------
# Aggregated report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """One experiment row: success rates plus the bookkeeping counts."""

    asr: float
    asrd: float
    n_total: int
    n_success: int
    n_pre_success: int
    n_detected: int
    recall_at_1: float | None = None
    recall_drop: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.asrd <= self.asr <= 100.0):
            raise DomainError(
                f"rates must satisfy 0 <= asrd <= asr <= 100, got asr={self.asr}, asrd={self.asrd}"
            )

    def to_dict(self) -> dict:
        return {
            "asr": self.asr,
            "asrd": self.asrd,
            "n_total": self.n_total,
            "n_success": self.n_success,
            "n_pre_success": self.n_pre_success,
            "n_detected": self.n_detected,
            "recall_at_1": self.recall_at_1,
            "recall_drop": self.recall_drop,
        }
