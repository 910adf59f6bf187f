"""Synthetic two-modality universe.

The source modality has a raw input space (the box [0,1]^n, mimicking pixel
range so an L-infinity budget like 8/255 keeps its usual meaning) and a fixed
differentiable encoder onto the unit sphere in R^d.  The target modality is
modeled purely in embedding space: every consumer only ever touches target
items through their embeddings, so a cluster sampler around
``concept_direction + modality_offset`` stands in for a second encoder.

Each cluster's target embeddings are split 50/50 into a PROXY half (what an
attacker may sample) and a TRUE-TARGET half (held out for evaluation) by
index parity, which is deterministic and seed-independent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, NumericError, ParseError, UnknownClusterError
from .numerics import EmbeddingSet, as_vector, unit_normalize, mean_embedding, variance_trace
from .rng import stream

__all__ = [
    "SourceEncoder",
    "ClusterSpec",
    "WorldSnapshot",
    "GapStats",
    "build_encoder",
    "encode",
    "encode_batch",
    "encode_gradient",
    "cluster_anchor",
    "sample_world",
    "empirical_gap_stats",
    "snapshot_to_json",
    "snapshot_from_json",
    "write_embedding_csv",
    "read_embedding_csv",
    "replace_target_embeddings",
]


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceEncoder:
    """Two-layer tanh network with unit-normalized output.

    encode(x) = normalize(W2.T tanh(W1.T x + b)).  tanh keeps the map C^1
    everywhere in the input box, which the gradient checks and the trend
    experiments rely on.  Weights are fully determined by ``seed``.
    """

    layer1_weights: np.ndarray  # (n, h)
    layer1_bias: np.ndarray  # (h,)
    layer2_weights: np.ndarray  # (h, d)
    seed: int

    @property
    def input_dim(self) -> int:
        return self.layer1_weights.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.layer1_weights.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.layer2_weights.shape[1]


def build_encoder(input_dim: int, hidden_dim: int, embed_dim: int, seed: int) -> SourceEncoder:
    """Draw encoder weights deterministically from ``seed``.

    Entries come from the package's xoshiro stream, scaled by 1/sqrt(fan_in)
    so hidden pre-activations stay in tanh's responsive range.  The bias
    centers layer 1 at the box midpoint (plus a small random component):
    without it every input shares the 0.5*ones component and all embeddings
    collapse into one narrow cone of the sphere.
    """
    for name, v in (("input_dim", input_dim), ("hidden_dim", hidden_dim), ("embed_dim", embed_dim)):
        if int(v) < 2:
            raise ConfigError(f"{name} must be >= 2, got {v}")
    gen = stream(seed, "encoder-weights")
    n, h, d = int(input_dim), int(hidden_dim), int(embed_dim)
    w1 = gen.normal(n * h).reshape(n, h) / math.sqrt(n)
    b1 = -0.5 * w1.sum(axis=0) + gen.normal(h) / math.sqrt(n)
    w2 = gen.normal(h * d).reshape(h, d) / math.sqrt(h)
    return SourceEncoder(w1, b1, w2, int(seed))


def encode(enc: SourceEncoder, x) -> np.ndarray:
    """Embed one input; result is unit-norm within 1e-9."""
    xv = as_vector(x, "x")
    if xv.shape[0] != enc.input_dim:
        raise DomainError(f"input has dimension {xv.shape[0]}, encoder expects {enc.input_dim}")
    hidden = np.tanh(xv @ enc.layer1_weights + enc.layer1_bias)
    raw = hidden @ enc.layer2_weights
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:
        raise NumericError("encoder output collapsed to the zero vector")
    return raw / norm


def encode_batch(enc: SourceEncoder, xs: np.ndarray) -> np.ndarray:
    """Vectorized encode over rows of ``xs``; returns (N, d) unit rows."""
    xs = np.asarray(xs, dtype=float)
    hidden = np.tanh(xs @ enc.layer1_weights + enc.layer1_bias)
    raw = hidden @ enc.layer2_weights
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise NumericError("encoder output collapsed to the zero vector")
    return raw / norms


def encode_gradient(enc: SourceEncoder, x, upstream) -> np.ndarray:
    """Gradient of ``dot(upstream, encode(x))`` with respect to ``x``.

    Hand-derived backpropagation through normalize -> affine -> tanh ->
    affine; linear in ``upstream``.
    """
    xv = as_vector(x, "x")
    uv = as_vector(upstream, "upstream")
    if xv.shape[0] != enc.input_dim:
        raise DomainError(f"input has dimension {xv.shape[0]}, encoder expects {enc.input_dim}")
    if uv.shape[0] != enc.embed_dim:
        raise DomainError(f"upstream has dimension {uv.shape[0]}, encoder emits {enc.embed_dim}")
    pre = xv @ enc.layer1_weights + enc.layer1_bias
    hidden = np.tanh(pre)
    raw = hidden @ enc.layer2_weights
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:
        raise NumericError("encoder output collapsed to the zero vector")
    unit = raw / norm
    # d(u . raw/||raw||)/d raw = (u - (u.unit) unit) / ||raw||
    g_raw = (uv - float(uv @ unit) * unit) / norm
    g_hidden = enc.layer2_weights @ g_raw
    g_pre = g_hidden * (1.0 - hidden * hidden)
    return enc.layer1_weights @ g_pre


# ---------------------------------------------------------------------------
# Clusters and snapshots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterSpec:
    """One concept: where its two modal clusters live and how wide they are.

    ``source_dispersion`` is input-space noise around the cluster anchor;
    ``target_dispersion`` is embedding-space noise around
    ``concept_direction + modality_offset`` (total variance, split evenly
    over coordinates before normalization).
    """

    concept_direction: np.ndarray
    source_dispersion: float
    target_dispersion: float
    modality_offset: np.ndarray
    count: int
    label: str = ""

    def __post_init__(self):
        direction = as_vector(np.asarray(self.concept_direction, dtype=float), "concept_direction")
        if abs(float(np.linalg.norm(direction)) - 1.0) > 1e-6:
            raise ConfigError("concept_direction must be unit-norm")
        offset = as_vector(np.asarray(self.modality_offset, dtype=float), "modality_offset")
        if offset.shape != direction.shape:
            raise ConfigError("modality_offset must share the concept dimension")
        if self.source_dispersion < 0 or self.target_dispersion < 0:
            raise ConfigError("dispersions must be >= 0")
        if int(self.count) < 1:
            raise ConfigError("count must be >= 1")
        object.__setattr__(self, "concept_direction", direction)
        object.__setattr__(self, "modality_offset", offset)
        object.__setattr__(self, "source_dispersion", float(self.source_dispersion))
        object.__setattr__(self, "target_dispersion", float(self.target_dispersion))
        object.__setattr__(self, "count", int(self.count))


class GapStats(NamedTuple):
    delta_norm: float
    sigma_s: float
    sigma_t: float


def proxy_indices(count: int) -> np.ndarray:
    """Even indices: the attacker-visible half of a cluster."""
    return np.arange(0, count, 2)


def true_target_indices(count: int) -> np.ndarray:
    """Odd indices: the held-out half of a cluster."""
    return np.arange(1, count, 2)


@dataclass(frozen=True)
class WorldSnapshot:
    """Immutable sampled world; regenerable bit-exactly from (specs, seed)."""

    encoder: SourceEncoder
    clusters: tuple[ClusterSpec, ...]
    source_inputs: tuple[np.ndarray, ...]  # per cluster, (count, n) in [0,1]
    target_embeddings: tuple[np.ndarray, ...]  # per cluster, (count, d) unit rows
    source_embeddings: tuple[np.ndarray, ...]  # encoder applied to source_inputs
    seed: int

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def cluster_index(self, cluster) -> int:
        if isinstance(cluster, (int, np.integer)):
            idx = int(cluster)
            if not 0 <= idx < self.n_clusters:
                raise UnknownClusterError(f"cluster index {idx} out of range")
            return idx
        for i, spec in enumerate(self.clusters):
            if spec.label == cluster:
                return i
        raise UnknownClusterError(f"no cluster labeled {cluster!r}")

    def target_proxies(self, cluster) -> np.ndarray:
        i = self.cluster_index(cluster)
        emb = self.target_embeddings[i]
        return emb[proxy_indices(emb.shape[0])]

    def true_targets(self, cluster) -> np.ndarray:
        i = self.cluster_index(cluster)
        emb = self.target_embeddings[i]
        return emb[true_target_indices(emb.shape[0])]


def cluster_anchor(seed: int, cluster_index: int, input_dim: int) -> np.ndarray:
    """The cluster's anchor input, uniform in [0.25, 0.75]^n.

    Exposed so preset builders can tie a concept direction to the embedding
    of the exact anchor ``sample_world`` will use.
    """
    gen = stream(seed, "cluster", cluster_index, "anchor")
    return gen.uniform(0.25, 0.75, int(input_dim))


def sample_world(
    specs,
    input_dim: int,
    hidden_dim: int,
    embed_dim: int,
    seed: int,
) -> WorldSnapshot:
    """Sample source inputs and target embeddings for every cluster.

    Source inputs: cluster anchor plus Gaussian noise of scale
    ``source_dispersion``, clipped to [0,1].  Target embeddings:
    normalize(concept_direction + modality_offset + Gaussian noise with
    per-coordinate variance target_dispersion^2 / d).
    """
    specs = tuple(specs)
    if not specs:
        raise ConfigError("at least one cluster is required")
    for i, spec in enumerate(specs):
        if spec.count < 2:
            raise ConfigError(
                f"cluster {i} has count {spec.count}; at least 2 members are needed "
                "to split into proxy and true-target halves"
            )
        if spec.concept_direction.shape[0] != embed_dim:
            raise ConfigError(f"cluster {i} concept dimension != embed_dim {embed_dim}")
    encoder = build_encoder(input_dim, hidden_dim, embed_dim, seed)
    n, d = encoder.input_dim, encoder.embed_dim

    source_inputs = []
    target_embeddings = []
    for i, spec in enumerate(specs):
        anchor = cluster_anchor(seed, i, n)
        gen_src = stream(seed, "cluster", i, "source")
        noise = gen_src.normal(spec.count * n).reshape(spec.count, n)
        inputs = np.clip(anchor + spec.source_dispersion * noise, 0.0, 1.0)
        source_inputs.append(inputs)

        gen_tgt = stream(seed, "cluster", i, "target")
        center = spec.concept_direction + spec.modality_offset
        tnoise = gen_tgt.normal(spec.count * d).reshape(spec.count, d)
        raw = center + (spec.target_dispersion / math.sqrt(d)) * tnoise
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise NumericError(f"cluster {i}: target sample collapsed to zero")
        target_embeddings.append(raw / norms)

    source_embeddings = tuple(encode_batch(encoder, x) for x in source_inputs)
    return WorldSnapshot(
        encoder=encoder,
        clusters=specs,
        source_inputs=tuple(source_inputs),
        target_embeddings=tuple(target_embeddings),
        source_embeddings=source_embeddings,
        seed=int(seed),
    )


def empirical_gap_stats(world: WorldSnapshot, cluster) -> GapStats:
    """Measured modality gap and dispersion traces for one cluster."""
    i = world.cluster_index(cluster)
    src = world.source_embeddings[i]
    tgt = world.target_embeddings[i]
    delta = mean_embedding(tgt) - mean_embedding(src)
    return GapStats(
        delta_norm=float(np.linalg.norm(delta)),
        sigma_s=variance_trace(src),
        sigma_t=variance_trace(tgt),
    )


# ---------------------------------------------------------------------------
# Snapshot and embedding-file interchange
# ---------------------------------------------------------------------------


def snapshot_to_json(world: WorldSnapshot) -> str:
    doc = {
        "dims": {
            "input": world.encoder.input_dim,
            "hidden": world.encoder.hidden_dim,
            "embed": world.encoder.embed_dim,
        },
        "seed": world.seed,
        "clusters": [
            {
                "label": spec.label,
                "concept_direction": spec.concept_direction.tolist(),
                "source_dispersion": spec.source_dispersion,
                "target_dispersion": spec.target_dispersion,
                "modality_offset": spec.modality_offset.tolist(),
                "count": spec.count,
            }
            for spec in world.clusters
        ],
        "source_inputs": [x.tolist() for x in world.source_inputs],
        "target_embeddings": [x.tolist() for x in world.target_embeddings],
    }
    return json.dumps(doc)


def snapshot_from_json(text: str) -> WorldSnapshot:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"snapshot document is not valid JSON: {exc}") from exc
    try:
        dims = doc["dims"]
        encoder = build_encoder(dims["input"], dims["hidden"], dims["embed"], doc["seed"])
        clusters = tuple(
            ClusterSpec(
                concept_direction=np.asarray(c["concept_direction"], dtype=float),
                source_dispersion=c["source_dispersion"],
                target_dispersion=c["target_dispersion"],
                modality_offset=np.asarray(c["modality_offset"], dtype=float),
                count=c["count"],
                label=c.get("label", ""),
            )
            for c in doc["clusters"]
        )
        source_inputs = tuple(np.asarray(x, dtype=float) for x in doc["source_inputs"])
        target_embeddings = tuple(np.asarray(x, dtype=float) for x in doc["target_embeddings"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"snapshot document is missing field: {exc}") from exc
    return WorldSnapshot(
        encoder=encoder,
        clusters=clusters,
        source_inputs=source_inputs,
        target_embeddings=target_embeddings,
        source_embeddings=tuple(encode_batch(encoder, x) for x in source_inputs),
        seed=int(doc["seed"]),
    )


def write_embedding_csv(path, embeddings: EmbeddingSet) -> None:
    """One row per embedding: tag, coordinate...  Full float precision."""
    tags = embeddings.member_labels or tuple(
        embeddings.label for _ in range(len(embeddings))
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for tag, row in zip(tags, embeddings.vectors):
            writer.writerow([tag] + [repr(float(v)) for v in row])


def read_embedding_csv(path, normalize: bool = False) -> EmbeddingSet:
    """Parse an embedding CSV (tag + >= 2 coordinates per row).

    Raises ParseError naming the 1-based row number on ragged rows,
    non-numeric cells, or non-finite values.
    """
    rows: list[list[float]] = []
    tags: list[str] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 3:
                raise ParseError(
                    f"row {lineno}: expected a tag plus at least 2 coordinates, got {len(row)} cells"
                )
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"row {lineno}: ragged width {len(row)}, expected {width}")
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise ParseError(f"row {lineno}: non-numeric coordinate") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"row {lineno}: non-finite coordinate")
            tags.append(row[0])
            rows.append(values)
    if not rows:
        raise ParseError("embedding file contains no rows")
    vectors = np.asarray(rows, dtype=float)
    if normalize:
        vectors = np.stack([unit_normalize(v) for v in vectors])
    return EmbeddingSet(vectors, member_labels=tuple(tags))


def replace_target_embeddings(world: WorldSnapshot, embeddings: EmbeddingSet) -> WorldSnapshot:
    """Swap in externally supplied target embeddings, grouped by row tag.

    Each tag must match a cluster label; dimensions must agree; every group
    needs >= 2 rows so the proxy/true-target split stays meaningful.
    """
    if embeddings.dim != world.encoder.embed_dim:
        raise ConfigError(
            f"imported embeddings have dimension {embeddings.dim}, world uses {world.encoder.embed_dim}"
        )
    groups: dict[str, list[np.ndarray]] = {}
    for tag, row in zip(embeddings.member_labels, embeddings.vectors):
        groups.setdefault(tag, []).append(row)
    new_targets = list(world.target_embeddings)
    for tag, members in groups.items():
        idx = world.cluster_index(tag)
        if len(members) < 2:
            raise ConfigError(f"cluster {tag!r} needs >= 2 imported rows to split")
        new_targets[idx] = np.stack(members)
    return WorldSnapshot(
        encoder=world.encoder,
        clusters=world.clusters,
        source_inputs=world.source_inputs,
        target_embeddings=tuple(new_targets),
        source_embeddings=world.source_embeddings,
        seed=world.seed,
    )
