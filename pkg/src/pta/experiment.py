"""Deterministic experiment orchestration.

One ExperimentConfig fully determines every numeric output: per-trial seeds
are derived by hashing (master seed, trial index), so adding trials never
perturbs earlier ones, and sweep values reuse each trial's world so sweep
points are paired.  Trials may run concurrently; rows are merged in trial
order, keeping the emitted bytes independent of the parallelism degree.

The three evaluation tasks share one protocol skeleton per trial: build the
world, craft one AE per (attack, target cluster) from a source item of the
target concept, then score generalization against the held-out true-target
half and undetectability against the benign source embeddings.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .attack import (
    AttackConfig,
    AttackResult,
    EncoderObjective,
    IllusionLoss,
    ProxySet,
    PtaLoss,
    SameModalLoss,
    run_pgd,
    run_square,
    select_samemodal_surrogate,
)
from .detect import DetectionConfig, average_score_rank
from .errors import BoundViolationError, ConfigError, ValidationError
from .evalharness import (
    MetricReport,
    classify,
    detect_in_reference_pool,
    poisoning_degradation,
    retrieval_attack_counts,
)
from .numerics import cosine, unit_normalize
from .presets import WorldPreset, build_preset_world, resolve_preset
from .rng import hash64, stream
from .synthworld import (
    WorldSnapshot,
    encode,
    read_embedding_csv,
    replace_target_embeddings,
    sample_world,
)
from .theory import (
    TheoryInstance,
    tradeoff_closed_form,
    tradeoff_numeric_oracle,
    source_hull_bound_check,
    target_hull_bound_check,
)

__all__ = [
    "WorldConfig",
    "EvaluationConfig",
    "SweepConfig",
    "ExperimentConfig",
    "ResultRow",
    "RunManifest",
    "ATTACK_METHODS",
    "SWEEP_PARAMETERS",
    "config_from_dict",
    "apply_overrides",
    "build_world",
    "build_proxy_set",
    "craft_attack",
    "run_trial",
    "run_experiment",
    "run_theory_suite",
    "sign_test_pvalue",
]

ATTACK_METHODS = ("pta", "illusion", "samemodal")
SWEEP_PARAMETERS = ("alpha", "n_c", "n_s", "epsilon", "query_budget", "injection_ratio")
TASKS = ("classification", "retrieval", "poisoning")

RANK_CONVENTION = "raw mean rank among n_references + 1 pooled points (1 = most anomalous)"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldConfig:
    """Preset name plus optional field-level overrides and an import hook.

    ``clusters`` bypasses the preset's cluster recipe entirely: each entry
    is an explicit cluster spec document ({concept_direction, modality_offset,
    source_dispersion, target_dispersion, count, label}) sampled with the
    configured encoder dims.  An extra modality can be expressed this way as
    an additional cluster family with its own offset.
    """

    preset: str = "retrieval"
    n_clusters: int | None = None
    cluster_count: int | None = None
    input_dim: int | None = None
    hidden_dim: int | None = None
    embed_dim: int | None = None
    source_dispersion: float | None = None
    target_dispersion: float | None = None
    gap_scale: float | None = None
    clusters: tuple = ()
    target_csv: str | None = None

    def resolved_preset(self) -> WorldPreset:
        preset = resolve_preset(self.preset)
        overrides = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("preset", "target_csv", "clusters")
            and getattr(self, f.name) is not None
        }
        return replace(preset, **overrides) if overrides else preset

    def explicit_specs(self):
        from .synthworld import ClusterSpec

        specs = []
        for i, doc in enumerate(self.clusters):
            if not isinstance(doc, dict):
                raise ConfigError(f"world.clusters[{i}] must be an object")
            try:
                specs.append(
                    ClusterSpec(
                        concept_direction=np.asarray(doc["concept_direction"], dtype=float),
                        source_dispersion=doc.get("source_dispersion", 0.1),
                        target_dispersion=doc.get("target_dispersion", 0.5),
                        modality_offset=np.asarray(doc["modality_offset"], dtype=float),
                        count=doc.get("count", 16),
                        label=doc.get("label", f"c{i}"),
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"world.clusters[{i}] is missing field {exc}") from None
        return specs


@dataclass(frozen=True)
class EvaluationConfig:
    """Task selection and the protocol knobs shared by the tasks.

    ``k`` is the detection window width (top-K); success itself is judged
    at ``metric_rank`` (R@1 by default).  ``gallery_per_cluster`` splits
    each cluster's source items into gallery entries and held-out AE bases
    for the poisoning task.
    """

    task: str = "retrieval"
    k: int = 50
    metric_rank: int = 1
    injection_ratio: float = 0.01
    attacks: tuple[str, ...] = ("pta", "illusion")
    n_c: int = 50
    n_s: int = 20
    target_clusters: int | None = None
    gallery_per_cluster: int = 80
    poison_query_noise: float = 0.5
    baseline_injection_ratio: float | None = None


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    sweep: SweepConfig | None = None
    trials: int = 1
    seed: int = 0
    output_dir: str = "."
    experiment_id: str = "exp"
    jobs: int = 1
    figures: bool = True

    def to_dict(self) -> dict:
        def plain(obj):
            if obj is None:
                return None
            if isinstance(obj, (str, int, float, bool)):
                return obj
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}

        return {
            "world": plain(self.world),
            "attack": plain(self.attack),
            "detection": plain(self.detection),
            "evaluation": plain(self.evaluation),
            "sweep": plain(self.sweep),
            "trials": self.trials,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "experiment_id": self.experiment_id,
            "jobs": self.jobs,
            "figures": self.figures,
        }

    def config_hash(self) -> str:
        import hashlib

        doc = self.to_dict()
        doc.pop("output_dir")  # where results land must not change what they are
        doc.pop("jobs")
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _build_section(cls, doc: dict, prefix: str, violations: list[str]):
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            violations.append(f"{prefix}.{key}: unknown field")
    kwargs = {}
    for f in fields(cls):
        if f.name in doc:
            value = doc[f.name]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (ConfigError, TypeError, ValueError) as exc:
        violations.append(f"{prefix}: {exc}")
        return None


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig, reporting ALL violations."""
    violations: list[str] = []
    if not isinstance(doc, dict):
        raise ValidationError(["config document must be a JSON object"])
    known_top = {
        "world",
        "attack",
        "detection",
        "evaluation",
        "sweep",
        "trials",
        "seed",
        "output_dir",
        "experiment_id",
        "jobs",
        "figures",
    }
    for key in doc:
        if key not in known_top:
            violations.append(f"{key}: unknown field")

    world = _build_section(WorldConfig, doc.get("world", {}), "world", violations)
    attack = _build_section(AttackConfig, doc.get("attack", {}), "attack", violations)
    detection = _build_section(DetectionConfig, doc.get("detection", {}), "detection", violations)
    evaluation = _build_section(
        EvaluationConfig, doc.get("evaluation", {}), "evaluation", violations
    )
    sweep = None
    if doc.get("sweep") is not None:
        sweep = _build_section(SweepConfig, doc["sweep"], "sweep", violations)

    if world is not None:
        try:
            world.resolved_preset()
        except ConfigError as exc:
            violations.append(f"world: {exc}")
        if world.clusters:
            try:
                world.explicit_specs()
            except ConfigError as exc:
                violations.append(f"world: {exc}")
    if evaluation is not None:
        if evaluation.task not in TASKS:
            violations.append(f"evaluation.task: must be one of {TASKS}, got {evaluation.task!r}")
        for name in evaluation.attacks:
            if name not in ATTACK_METHODS:
                violations.append(
                    f"evaluation.attacks: unknown attack {name!r}; known: {ATTACK_METHODS}"
                )
        if evaluation.k < 1:
            violations.append("evaluation.k: must be >= 1")
        if evaluation.metric_rank < 1 or evaluation.metric_rank > evaluation.k:
            violations.append("evaluation.metric_rank: must be in [1, evaluation.k]")
        if evaluation.injection_ratio < 0:
            violations.append("evaluation.injection_ratio: must be >= 0")
        if evaluation.gallery_per_cluster < 1:
            violations.append("evaluation.gallery_per_cluster: must be >= 1")
    if sweep is not None:
        if sweep.parameter not in SWEEP_PARAMETERS:
            violations.append(
                f"sweep.parameter: must be one of {SWEEP_PARAMETERS}, got {sweep.parameter!r}"
            )
        if len(sweep.values) == 0:
            violations.append("sweep.values: must be non-empty when sweep is present")
    trials = doc.get("trials", 1)
    if not isinstance(trials, int) or trials < 1:
        violations.append("trials: must be an integer >= 1")
    jobs = doc.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        violations.append("jobs: must be an integer >= 1")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        violations.append("seed: must be an integer")

    if violations:
        raise ValidationError(violations)
    return ExperimentConfig(
        world=world,
        attack=attack,
        detection=detection,
        evaluation=evaluation,
        sweep=sweep,
        trials=trials,
        seed=seed,
        output_dir=str(doc.get("output_dir", ".")),
        experiment_id=str(doc.get("experiment_id", "exp")),
        jobs=jobs,
        figures=bool(doc.get("figures", True)),
    )


def apply_overrides(doc: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted-path overrides (e.g. "attack.alpha" -> "0.4") to a dict.

    Values are parsed as JSON when possible (numbers, lists, booleans) and
    fall back to plain strings.
    """
    out = json.loads(json.dumps(doc))  # deep copy
    for path, raw in overrides.items():
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = path.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError([f"{path}: cannot descend into non-object at {p!r}"])
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# Protocol pieces
# ---------------------------------------------------------------------------


def build_world(world_cfg: WorldConfig, seed: int) -> WorldSnapshot:
    preset = world_cfg.resolved_preset()
    if world_cfg.clusters:
        world = sample_world(
            world_cfg.explicit_specs(),
            preset.input_dim,
            preset.hidden_dim,
            preset.embed_dim,
            seed,
        )
    else:
        world = build_preset_world(preset, seed)
    if world_cfg.target_csv:
        world = replace_target_embeddings(world, read_embedding_csv(world_cfg.target_csv))
    return world


def build_proxy_set(world: WorldSnapshot, cluster, n_c: int, n_s: int) -> ProxySet:
    """Adversary-visible proxies for one target concept.

    Target proxies come from the cluster's proxy half (never the held-out
    true targets); source proxies are the embeddings of the cluster's first
    ``n_s`` source items.
    """
    idx = world.cluster_index(cluster)
    target_pool = world.target_proxies(idx)
    if n_c < 1 or n_c > target_pool.shape[0]:
        raise ConfigError(
            f"n_c={n_c} outside [1, {target_pool.shape[0]}] for cluster {cluster}"
        )
    source_pool = world.source_embeddings[idx]
    if n_s < 0 or n_s > source_pool.shape[0]:
        raise ConfigError(f"n_s={n_s} outside [0, {source_pool.shape[0]}]")
    source = source_pool[:n_s] if n_s else np.zeros((0, target_pool.shape[1]))
    return ProxySet(source=source, target=target_pool[:n_c])


def _objective_for(method: str, world: WorldSnapshot, proxies: ProxySet, alpha: float):
    if method == "pta":
        return PtaLoss(proxies, alpha=alpha)
    if method == "illusion":
        return IllusionLoss(proxies.target[0])
    if method == "samemodal":
        _, _, surrogate = select_samemodal_surrogate(world, proxies.target.mean(axis=0))
        return SameModalLoss(surrogate)
    raise ConfigError(f"unknown attack method {method!r}")


def craft_attack(
    world: WorldSnapshot,
    method: str,
    target_cluster: int,
    base_input: np.ndarray,
    attack_cfg: AttackConfig,
    n_c: int,
    n_s: int,
) -> AttackResult:
    """Craft one adversarial example against a target concept."""
    proxies = build_proxy_set(world, target_cluster, n_c=n_c, n_s=n_s)
    emb_loss = _objective_for(method, world, proxies, attack_cfg.alpha)
    objective = EncoderObjective(world.encoder, emb_loss)
    if attack_cfg.optimizer == "square":
        return run_square(base_input, objective, attack_cfg)
    return run_pgd(base_input, objective, attack_cfg)


def _attack_bases(world: WorldSnapshot, cluster: int, count: int) -> np.ndarray:
    """Source items of the target concept reserved as AE bases.

    Taken from the tail of the cluster's item list so they never overlap
    the head slice used for source proxies.
    """
    inputs = world.source_inputs[cluster]
    if count > inputs.shape[0] // 2:
        raise ConfigError(f"not enough held-back items in cluster {cluster} for {count} bases")
    return inputs[-count:]


def _effective_params(cfg: ExperimentConfig, sweep_value):
    """Fold the current sweep value into (attack config, evaluation knobs)."""
    attack_cfg = cfg.attack
    n_c, n_s = cfg.evaluation.n_c, cfg.evaluation.n_s
    injection_ratio = cfg.evaluation.injection_ratio
    if cfg.sweep is not None and sweep_value is not None:
        p = cfg.sweep.parameter
        if p == "alpha":
            attack_cfg = replace(attack_cfg, alpha=float(sweep_value))
        elif p == "epsilon":
            attack_cfg = replace(attack_cfg, epsilon=float(sweep_value), step_size=None)
        elif p == "query_budget":
            attack_cfg = replace(attack_cfg, query_budget=int(sweep_value))
        elif p == "n_c":
            n_c = int(sweep_value)
        elif p == "n_s":
            n_s = int(sweep_value)
        elif p == "injection_ratio":
            injection_ratio = float(sweep_value)
    return attack_cfg, n_c, n_s, injection_ratio


@dataclass(frozen=True)
class ResultRow:
    """One CSV/JSON row; column order is the schema."""

    schema_version: int
    config_hash: str
    experiment_id: str
    task: str
    attack: str
    alpha: float
    n_c: int
    n_s: int
    epsilon: float
    detector: str
    trial: int
    seed: int
    sweep_parameter: str
    sweep_value: str
    asr: float
    asrd: float
    mean_rank_raw: float | None
    recall_at_1: float | None
    recall_drop: float | None
    n_total: int
    n_success: int
    n_pre_success: int
    n_detected: int
    injection_ratio: float | None = None
    n_injected: int | None = None

    def as_list(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _target_cluster_ids(world: WorldSnapshot, evaluation: EvaluationConfig) -> list[int]:
    n = world.n_clusters if evaluation.target_clusters is None else min(
        evaluation.target_clusters, world.n_clusters
    )
    return list(range(n))


def _alpha_for(method: str, attack_cfg: AttackConfig) -> float:
    return attack_cfg.alpha if method == "pta" else 0.0


def _trial_retrieval(
    cfg: ExperimentConfig, world: WorldSnapshot, trial: int, trial_seed: int, sweep_value
) -> list[ResultRow]:
    attack_cfg, n_c, n_s, _ = _effective_params(cfg, sweep_value)
    items = np.vstack(world.source_embeddings)
    rows = []
    for method in cfg.evaluation.attacks:
        counts_acc = np.zeros(5, dtype=int)
        ranks = []
        for t in _target_cluster_ids(world, cfg.evaluation):
            run_cfg = replace(
                attack_cfg,
                alpha=_alpha_for(method, attack_cfg),
                seed=hash64(trial_seed, "attack", method, t),
            )
            eff_n_c = 1 if method == "illusion" else n_c
            base = _attack_bases(world, t, 1)[0]
            result = craft_attack(world, method, t, base, run_cfg, eff_n_c, n_s)
            adv = result.adversarial_embedding.reshape(1, -1)
            clean = encode(world.encoder, base).reshape(1, -1)
            queries = world.true_targets(t)
            counts = retrieval_attack_counts(
                queries,
                items,
                adv,
                clean,
                k=cfg.evaluation.metric_rank,
                cfg=cfg.detection,
                window_k=cfg.evaluation.k,
            )
            counts_acc += np.array(
                [
                    counts.n_queries,
                    counts.n_success,
                    counts.n_pre_success,
                    counts.n_new_success,
                    counts.n_surviving,
                ]
            )
            ranks.append(
                average_score_rank(adv, world.source_embeddings[t], cfg.detection)
            )
        n_q, n_succ, n_pre, n_new, n_surv = (int(v) for v in counts_acc)
        # MetricReport validates 0 <= asrd <= asr <= 100 before anything is emitted
        metrics = MetricReport(
            asr=100.0 * n_new / n_q,
            asrd=100.0 * n_surv / n_q,
            n_total=n_q,
            n_success=n_succ,
            n_pre_success=n_pre,
            n_detected=n_new - n_surv,
        )
        rows.append(
            ResultRow(
                schema_version=1,
                config_hash=cfg.config_hash(),
                experiment_id=cfg.experiment_id,
                task="retrieval",
                attack=method,
                alpha=_alpha_for(method, attack_cfg),
                n_c=1 if method == "illusion" else n_c,
                n_s=n_s if method == "pta" else 0,
                epsilon=attack_cfg.epsilon,
                detector=cfg.detection.method,
                trial=trial,
                seed=trial_seed,
                sweep_parameter=cfg.sweep.parameter if cfg.sweep else "",
                sweep_value="" if sweep_value is None else repr(sweep_value),
                asr=metrics.asr,
                asrd=metrics.asrd,
                mean_rank_raw=float(np.mean(ranks)),
                recall_at_1=None,
                recall_drop=None,
                n_total=metrics.n_total,
                n_success=metrics.n_success,
                n_pre_success=metrics.n_pre_success,
                n_detected=metrics.n_detected,
            )
        )
    return rows


def _trial_classification(
    cfg: ExperimentConfig, world: WorldSnapshot, trial: int, trial_seed: int, sweep_value
) -> list[ResultRow]:
    attack_cfg, n_c, n_s, _ = _effective_params(cfg, sweep_value)
    prompt_sets = [world.true_targets(c) for c in range(world.n_clusters)]
    rows = []
    for method in cfg.evaluation.attacks:
        n_success = n_pre = n_new = n_detected = 0
        ranks = []
        targets = _target_cluster_ids(world, cfg.evaluation)
        for t in targets:
            run_cfg = replace(
                attack_cfg,
                alpha=_alpha_for(method, attack_cfg),
                seed=hash64(trial_seed, "attack", method, t),
            )
            eff_n_c = 1 if method == "illusion" else n_c
            base_cluster = (t + 1) % world.n_clusters
            base = _attack_bases(world, base_cluster, 1)[0]
            result = craft_attack(world, method, t, base, run_cfg, eff_n_c, n_s)
            adv = result.adversarial_embedding
            clean = encode(world.encoder, base)
            pre = classify(clean, prompt_sets)
            post = classify(adv, prompt_sets)
            n_success += post == t
            n_pre += pre == t
            refs = world.source_embeddings[t]
            ranks.append(average_score_rank(adv.reshape(1, -1), refs, cfg.detection))
            if post == t and pre != t:
                n_new += 1
                flagged = detect_in_reference_pool(adv.reshape(1, -1), refs, cfg.detection)
                if 0 in flagged:
                    n_detected += 1
        n_total = len(targets)
        metrics = MetricReport(
            asr=100.0 * n_new / n_total,
            asrd=100.0 * (n_new - n_detected) / n_total,
            n_total=n_total,
            n_success=n_success,
            n_pre_success=n_pre,
            n_detected=n_detected,
        )
        rows.append(
            ResultRow(
                schema_version=1,
                config_hash=cfg.config_hash(),
                experiment_id=cfg.experiment_id,
                task="classification",
                attack=method,
                alpha=_alpha_for(method, attack_cfg),
                n_c=1 if method == "illusion" else n_c,
                n_s=n_s if method == "pta" else 0,
                epsilon=attack_cfg.epsilon,
                detector=cfg.detection.method,
                trial=trial,
                seed=trial_seed,
                sweep_parameter=cfg.sweep.parameter if cfg.sweep else "",
                sweep_value="" if sweep_value is None else repr(sweep_value),
                asr=metrics.asr,
                asrd=metrics.asrd,
                mean_rank_raw=float(np.mean(ranks)),
                recall_at_1=None,
                recall_drop=None,
                n_total=metrics.n_total,
                n_success=metrics.n_success,
                n_pre_success=metrics.n_pre_success,
                n_detected=metrics.n_detected,
            )
        )
    return rows


def build_poisoning_instance(world: WorldSnapshot, evaluation: EvaluationConfig, trial_seed: int):
    """Paired queries over a benign gallery for the poisoning protocol.

    Gallery items are the head of each cluster's source items; each item
    gets one paired target-modal query: the item's embedding shifted by the
    cluster's realized modality gap (difference of the sampled cluster
    means, not the raw pre-normalization offset) plus per-pair noise,
    normalized.  The noise scale controls the clean Recall@1 level.
    """
    g = evaluation.gallery_per_cluster
    d = world.encoder.embed_dim
    gen = stream(trial_seed, "poison-queries")
    items, tags, queries, gts = [], [], [], []
    next_id = 0
    for c in range(world.n_clusters):
        embs = world.source_embeddings[c]
        if g > embs.shape[0]:
            raise ConfigError(
                f"gallery_per_cluster={g} exceeds cluster size {embs.shape[0]}"
            )
        delta = world.target_embeddings[c].mean(axis=0) - embs.mean(axis=0)
        noise = gen.normal(g * d).reshape(g, d) * (
            evaluation.poison_query_noise / math.sqrt(d)
        )
        for j in range(g):
            items.append(embs[j])
            tags.append(world.clusters[c].label)
            queries.append(unit_normalize(embs[j] + delta + noise[j]))
            gts.append(next_id)
            next_id += 1
    return np.stack(queries), gts, np.stack(items)


def _trial_poisoning(
    cfg: ExperimentConfig, world: WorldSnapshot, trial: int, trial_seed: int, sweep_value
) -> list[ResultRow]:
    attack_cfg, n_c, n_s, injection_ratio = _effective_params(cfg, sweep_value)
    queries, gts, items = build_poisoning_instance(world, cfg.evaluation, trial_seed)
    n_items = items.shape[0]
    rows = []
    for method in cfg.evaluation.attacks:
        ratio = injection_ratio
        if method != "pta" and cfg.evaluation.baseline_injection_ratio is not None:
            ratio = cfg.evaluation.baseline_injection_ratio
        n_inject = math.ceil(ratio * n_items)
        pool = []
        per_cluster = math.ceil(n_inject / world.n_clusters) if n_inject else 0
        smallest = min(spec.count for spec in world.clusters)
        if cfg.evaluation.gallery_per_cluster + max(per_cluster, 1) > smallest:
            raise ConfigError(
                f"gallery_per_cluster={cfg.evaluation.gallery_per_cluster} leaves no room "
                f"for {per_cluster} AE bases in clusters of size {smallest}"
            )
        for t in _target_cluster_ids(world, cfg.evaluation):
            if len(pool) >= n_inject:
                break
            bases = _attack_bases(world, t, max(per_cluster, 1))
            for b in range(bases.shape[0]):
                if len(pool) >= n_inject:
                    break
                run_cfg = replace(
                    attack_cfg,
                    alpha=_alpha_for(method, attack_cfg),
                    seed=hash64(trial_seed, "attack", method, t, b),
                )
                eff_n_c = 1 if method == "illusion" else n_c
                result = craft_attack(world, method, t, bases[b], run_cfg, eff_n_c, n_s)
                pool.append(result.adversarial_embedding)
        pool_arr = np.stack(pool) if pool else np.zeros((0, items.shape[1]))
        report = poisoning_degradation(queries, gts, items, pool_arr, ratio)
        rows.append(
            ResultRow(
                schema_version=1,
                config_hash=cfg.config_hash(),
                experiment_id=cfg.experiment_id,
                task="poisoning",
                attack=method,
                alpha=_alpha_for(method, attack_cfg),
                n_c=1 if method == "illusion" else n_c,
                n_s=n_s if method == "pta" else 0,
                epsilon=attack_cfg.epsilon,
                detector=cfg.detection.method,
                trial=trial,
                seed=trial_seed,
                sweep_parameter=cfg.sweep.parameter if cfg.sweep else "",
                sweep_value="" if sweep_value is None else repr(sweep_value),
                asr=0.0,
                asrd=0.0,
                mean_rank_raw=None,
                recall_at_1=report.recall_after,
                recall_drop=report.drop,
                n_total=len(gts),
                n_success=0,
                n_pre_success=0,
                n_detected=0,
                injection_ratio=ratio,
                n_injected=report.n_injected,
            )
        )
    return rows


def run_trial(cfg: ExperimentConfig, trial: int) -> list[ResultRow]:
    """All rows for one trial (every sweep value, every attack)."""
    trial_seed = hash64(cfg.seed, trial)
    world = build_world(cfg.world, trial_seed)
    values = list(cfg.sweep.values) if cfg.sweep else [None]
    task_fn = {
        "retrieval": _trial_retrieval,
        "classification": _trial_classification,
        "poisoning": _trial_poisoning,
    }[cfg.evaluation.task]
    rows = []
    for value in values:
        rows.extend(task_fn(cfg, world, trial, trial_seed, value))
    return rows


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    tool_version: str
    per_trial_seeds: tuple[int, ...]
    emitted_files: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "per_trial_seeds": list(self.per_trial_seeds),
            "emitted_files": list(self.emitted_files),
            "conventions": {"mean_rank_raw": RANK_CONVENTION},
        }


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Execute every trial, then emit results.csv / results.json / manifest.

    Trials run under a --jobs thread limit; each owns its seed-derived RNG
    streams and its private row buffer, and buffers merge in trial order, so
    output bytes never depend on scheduling.
    """
    from . import report

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            buffers = list(pool.map(lambda t: run_trial(cfg, t), range(cfg.trials)))
    else:
        buffers = [run_trial(cfg, t) for t in range(cfg.trials)]
    rows = [row for buffer in buffers for row in buffer]
    emitted = report.emit_results(cfg, rows)
    return RunManifest(
        config_hash=cfg.config_hash(),
        tool_version=__version__,
        per_trial_seeds=tuple(hash64(cfg.seed, t) for t in range(cfg.trials)),
        emitted_files=tuple(emitted),
    )


# ---------------------------------------------------------------------------
# Theory suite
# ---------------------------------------------------------------------------


def _random_theory_instance(gen, dim: int) -> TheoryInstance:
    mu_s = gen.normal(dim)
    direction = gen.normal(dim)
    direction = direction / float(np.linalg.norm(direction))
    delta = gen.uniform(0.0, 3.0)
    mu_t = mu_s + delta * direction
    sigma_s = gen.uniform(0.0, 1.0)
    sigma_t = gen.uniform(0.0, 1.0)
    beta = sigma_s + gen.uniform(1e-6, 4.0)
    return TheoryInstance.from_means(mu_s, mu_t, beta, sigma_s, sigma_t)


def _cone_unit(gen, center: np.ndarray, spread: float) -> np.ndarray:
    noise = gen.normal(center.size)
    noise = noise / float(np.linalg.norm(noise))
    v = center + spread * noise
    return v / float(np.linalg.norm(v))


def run_theory_suite(
    output_dir: str,
    seed: int = 0,
    instance_count: int = 200,
    bound_triples: int = 500,
    dim_low: int = 2,
    dim_high: int = 64,
    tol: float = 1e-4,
    figures: bool = True,
) -> RunManifest:
    """Randomized verification sweeps for all three analytical claims.

    Emits theory_results.csv (one row per instance, replayable), a summary
    JSON, and raises BoundViolationError after serializing any offending
    instance for replay.  The closed-form/oracle gap must stay below
    ``tol`` and the hull bounds must never be violated beyond 1e-9 slack.
    """
    from . import report

    gen = stream(seed, "theory-suite")
    rows = []
    violations = []

    max_gap = 0.0
    for i in range(instance_count):
        dim = dim_low + gen.integer_below(dim_high - dim_low + 1)
        inst = _random_theory_instance(gen, dim)
        closed = tradeoff_closed_form(inst)
        oracle = tradeoff_numeric_oracle(inst, tol=tol)
        gap = abs(closed - oracle)
        max_gap = max(max_gap, gap)
        rows.append(
            {
                "kind": "tradeoff",
                "index": i,
                "dim": dim,
                "delta_norm": inst.delta_norm,
                "beta": inst.beta,
                "sigma_s": inst.sigma_s,
                "sigma_t": inst.sigma_t,
                "closed_form": closed,
                "oracle": oracle,
                "gap": gap,
                "satisfied": gap < tol,
            }
        )
        if gap >= tol:
            violations.append(rows[-1])

    # monotonicity grids: non-increasing in beta, non-decreasing in delta
    sigma_s, sigma_t = 0.3, 0.2
    beta_grid = np.linspace(sigma_s, sigma_s + 4.0, 80)
    beta_values = [
        tradeoff_closed_form(TheoryInstance(1.5, float(b), sigma_s, sigma_t))
        for b in beta_grid
    ]
    beta_ok = all(b <= a + 1e-12 for a, b in zip(beta_values, beta_values[1:]))
    delta_grid = np.linspace(0.0, 3.0, 80)
    delta_values = [
        tradeoff_closed_form(TheoryInstance(float(d), 1.0, sigma_s, sigma_t))
        for d in delta_grid
    ]
    delta_ok = all(b >= a - 1e-12 for a, b in zip(delta_values, delta_values[1:]))
    if not (beta_ok and delta_ok):
        violations.append({"kind": "monotonicity", "beta_ok": beta_ok, "delta_ok": delta_ok})

    for kind, checker in (("source-hull", source_hull_bound_check), ("target-hull", target_hull_bound_check)):
        for i in range(bound_triples):
            dim = 3 + gen.integer_below(10)
            center = gen.normal(dim)
            center = center / float(np.linalg.norm(center))
            n_vertices = 2 + gen.integer_below(5)
            proxies = np.stack([_cone_unit(gen, center, 0.7) for _ in range(n_vertices)])
            weights = np.array([gen.uniform(0.05, 1.0) for _ in range(n_vertices)])
            weights = weights / weights.sum()
            combo = proxies.T @ weights
            if kind == "source-hull":
                target = center
                bound, satisfied = checker(combo, proxies, target)
                ae_cos = cosine(combo, target)
            else:
                ae = _cone_unit(gen, center, 0.4)
                if any(cosine(ae, p) < 0 for p in proxies):
                    continue  # outside the nonnegative-cosine regime the bound covers
                bound, satisfied = checker(ae, proxies, combo)
                ae_cos = cosine(ae, combo)
            rows.append(
                {
                    "kind": kind,
                    "index": i,
                    "dim": dim,
                    "n_vertices": n_vertices,
                    "bound": bound,
                    "cosine": ae_cos,
                    "satisfied": bool(satisfied),
                }
            )
            if not satisfied:
                violations.append(rows[-1])

    summary = {
        "instances": instance_count,
        "max_tradeoff_gap": max_gap,
        "tolerance": tol,
        "bound_triples_per_theorem": bound_triples,
        "monotone_in_beta": beta_ok,
        "monotone_in_delta": delta_ok,
        "violations": len(violations),
    }
    emitted = report.emit_theory(output_dir, rows, summary, violations, figures=figures)
    manifest = RunManifest(
        config_hash="theory",
        tool_version=__version__,
        per_trial_seeds=(seed,),
        emitted_files=tuple(emitted),
    )
    if violations:
        raise BoundViolationError(
            f"{len(violations)} theory violation(s); replay file written to "
            f"{output_dir}/theory_violations.json"
        )
    return manifest


def replay_theory_row(row: dict, tol: float = 1e-4) -> float:
    """Re-evaluate a serialized trade-off instance; returns the new gap."""
    inst = TheoryInstance(
        delta_norm=float(row["delta_norm"]),
        beta=float(row["beta"]),
        sigma_s=float(row["sigma_s"]),
        sigma_t=float(row["sigma_t"]),
    )
    closed = tradeoff_closed_form(inst)
    oracle = tradeoff_numeric_oracle(inst, dim=int(row["dim"]), tol=tol)
    return abs(closed - oracle)


# ---------------------------------------------------------------------------
# Small statistics helper for trend criteria
# ---------------------------------------------------------------------------


def sign_test_pvalue(wins: int, losses: int) -> float:
    """One-sided exact sign test: P(X >= wins) for X ~ Binomial(n, 1/2).

    Ties are dropped by the caller (standard practice).
    """
    n = wins + losses
    if n == 0:
        return 1.0
    total = sum(math.comb(n, i) for i in range(wins, n + 1))
    return total / 2.0**n
