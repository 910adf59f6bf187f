"""Ready-made worlds for the two task regimes.

Concept directions are tied to the embedding of each cluster's anchor input,
so the configured modality offset is what separates the two modal clusters
of a concept (plus curvature effects the gap stats measure).  The offset
direction is one global unit vector per world: modality gaps in practice
are a shared shift, not per-concept noise.

Dispersion constants are calibrated so the per-cluster covariance traces of
the sampled embeddings land near the reference magnitudes observed on real
encoders: a concentrated regime (sigma_T ~ 0.11, sigma_S ~ 0.28) for
classification-style prompt distributions and a dispersed regime
(sigma_T ~ 0.59, sigma_S ~ 0.57) for retrieval-style query distributions.
Calibrated magnitudes, not claimed equivalences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .numerics import unit_normalize
from .rng import stream
from .synthworld import (
    ClusterSpec,
    WorldSnapshot,
    build_encoder,
    cluster_anchor,
    encode,
    sample_world,
)

__all__ = ["WorldPreset", "PRESETS", "resolve_preset", "build_preset_world"]


@dataclass(frozen=True)
class WorldPreset:
    name: str
    n_clusters: int = 8
    cluster_count: int = 100
    input_dim: int = 1536
    hidden_dim: int = 64
    embed_dim: int = 32
    source_dispersion: float = 0.17
    target_dispersion: float = 3.80
    gap_scale: float = 3.0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if self.cluster_count < 2:
            raise ConfigError("cluster_count must be >= 2")
        for name in ("input_dim", "hidden_dim", "embed_dim"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be >= 2")
        if self.source_dispersion < 0 or self.target_dispersion < 0 or self.gap_scale < 0:
            raise ConfigError("dispersions and gap_scale must be >= 0")


# Dispersion/gap constants tuned on seeds 0..5; see tests for the bands held.
# Large input_dim gives the attacker realistic leverage: within a fixed
# L-infinity budget the reachable embedding swing grows like sqrt(input_dim),
# the same effect that makes pixel-space attacks on real encoders strong.
PRESETS = {
    "retrieval": WorldPreset(
        name="retrieval",
        source_dispersion=0.17,
        target_dispersion=3.80,
        gap_scale=3.0,
    ),
    "classification": WorldPreset(
        name="classification",
        source_dispersion=0.09,
        target_dispersion=0.80,
        gap_scale=2.0,
    ),
}


def resolve_preset(name: str) -> WorldPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        ) from None


def build_preset_world(preset: WorldPreset | str, seed: int, **overrides) -> WorldSnapshot:
    """Sample a world from a preset (or preset name) at the given seed."""
    if isinstance(preset, str):
        preset = resolve_preset(preset)
    if overrides:
        preset = replace(preset, **overrides)
    encoder = build_encoder(preset.input_dim, preset.hidden_dim, preset.embed_dim, seed)
    gap_gen = stream(seed, "modality-gap")
    gap_direction = unit_normalize(gap_gen.normal(preset.embed_dim))
    specs = []
    for i in range(preset.n_clusters):
        anchor = cluster_anchor(seed, i, preset.input_dim)
        specs.append(
            ClusterSpec(
                concept_direction=encode(encoder, anchor),
                source_dispersion=preset.source_dispersion,
                target_dispersion=preset.target_dispersion,
                modality_offset=preset.gap_scale * gap_direction,
                count=preset.cluster_count,
                label=f"c{i}",
            )
        )
    return sample_world(
        specs, preset.input_dim, preset.hidden_dim, preset.embed_dim, seed
    )
