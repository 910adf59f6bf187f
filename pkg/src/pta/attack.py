"""The adversary: proxy-based losses and the two optimizers.

Losses live in embedding space (functions of v = encode(x)); optimizers work
in input space and chain through the encoder via its hand-derived gradient.
The combined objective is

    loss_G(v) + alpha * loss_D(v)

where loss_G pulls v toward the target-modal proxies (1 minus mean cosine)
and loss_D anchors it among the source-modal proxies (mean L2 distance).
alpha = 0 recovers pure cross-target matching; with a single target proxy
that reduces to the classic single-target ("illusion") objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .numerics import as_matrix, as_vector, cosine
from .rng import stream
from .synthworld import SourceEncoder, WorldSnapshot, encode, encode_gradient

__all__ = [
    "ProxySet",
    "AttackConfig",
    "AttackResult",
    "loss_G",
    "loss_D",
    "pta_objective",
    "illusion_objective",
    "samemodal_objective",
    "PtaLoss",
    "IllusionLoss",
    "SameModalLoss",
    "EncoderObjective",
    "LinearObjective",
    "select_samemodal_surrogate",
    "run_pgd",
    "run_square",
    "SQUARE_P_INIT",
    "SQUARE_HALVING_FRACTIONS",
]


# ---------------------------------------------------------------------------
# Proxy sets and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProxySet:
    """The adversary's sampled stand-ins for the unknown true target.

    ``target`` rows are target-modal embeddings (>= 1 required); ``source``
    rows are source-modal embeddings (may be empty, in which case the
    concealment loss is unavailable).  All members must be unit-norm.
    """

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        target = as_matrix(np.asarray(self.target, dtype=float), "target proxies")
        source = np.asarray(self.source, dtype=float)
        if source.size == 0:
            source = np.zeros((0, target.shape[1]))
        else:
            source = as_matrix(source, "source proxies")
            if source.shape[1] != target.shape[1]:
                raise DomainError("source and target proxies must share dimension")
        for name, arr in (("target", target), ("source", source)):
            if arr.shape[0] and np.max(np.abs(np.linalg.norm(arr, axis=1) - 1.0)) > 1e-6:
                raise DomainError(f"{name} proxies must be unit-norm")
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)

    @property
    def n_source(self) -> int:
        return self.source.shape[0]

    @property
    def n_target(self) -> int:
        return self.target.shape[0]


# Square-search proposal schedule: start from this fraction of the input
# area and halve it each time the spent-query fraction crosses a threshold.
SQUARE_P_INIT = 0.8
SQUARE_HALVING_FRACTIONS = (0.001, 0.005, 0.02, 0.10, 0.20, 0.50)


@dataclass(frozen=True)
class AttackConfig:
    """Budgets and optimizer choice for one attack run.

    Defaults: L-infinity budget 8/255 with 100 iterations; the step size
    eps/10 lets the iterate traverse the ball several times and keeps the
    run deterministic (no random start).
    """

    epsilon: float = 8.0 / 255.0
    iterations: int = 100
    step_size: float | None = None  # None -> epsilon / 10
    alpha: float = 0.0
    optimizer: str = "pgd"
    query_budget: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be positive and finite, got {self.epsilon}")
        if int(self.iterations) < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        object.__setattr__(self, "iterations", int(self.iterations))
        step = self.epsilon / 10.0 if self.step_size is None else float(self.step_size)
        if not (step > 0 and math.isfinite(step)):
            raise ConfigError(f"step_size must be positive and finite, got {step}")
        if step > self.epsilon + 1e-12:
            raise ConfigError(f"step_size {step} exceeds epsilon {self.epsilon}")
        object.__setattr__(self, "step_size", step)
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.optimizer not in ("pgd", "square"):
            raise ConfigError(f"optimizer must be 'pgd' or 'square', got {self.optimizer!r}")
        if int(self.query_budget) < 1:
            raise ConfigError(f"query_budget must be >= 1, got {self.query_budget}")
        object.__setattr__(self, "query_budget", int(self.query_budget))


@dataclass(frozen=True)
class AttackResult:
    original_input: np.ndarray
    adversarial_input: np.ndarray
    adversarial_embedding: np.ndarray | None
    loss_trace: tuple[float, ...]
    queries_used: int
    config: AttackConfig = field(repr=False, default=None)

    @property
    def best_objective(self) -> float:
        return min(self.loss_trace)

    def to_json(self) -> str:
        cfg = self.config
        return json.dumps(
            {
                "original": self.original_input.tolist(),
                "adversarial_input": self.adversarial_input.tolist(),
                "objective_trace": list(self.loss_trace),
                "config_echo": None
                if cfg is None
                else {
                    "epsilon": cfg.epsilon,
                    "iterations": cfg.iterations,
                    "step_size": cfg.step_size,
                    "alpha": cfg.alpha,
                    "optimizer": cfg.optimizer,
                    "query_budget": cfg.query_budget,
                },
                "seed": None if cfg is None else cfg.seed,
            }
        )


# ---------------------------------------------------------------------------
# Losses in embedding space
# ---------------------------------------------------------------------------


def _target_matrix(proxies) -> np.ndarray:
    if isinstance(proxies, ProxySet):
        if proxies.n_target == 0:
            raise DomainError("at least one target proxy is required")
        return proxies.target
    return as_matrix(proxies, "target proxies")


def _source_matrix(proxies) -> np.ndarray:
    if isinstance(proxies, ProxySet):
        if proxies.n_source == 0:
            raise DomainError("at least one source proxy is required")
        return proxies.source
    return as_matrix(proxies, "source proxies")


def loss_G(v, proxies) -> float:
    """Cross-target matching loss: 1 - mean cosine to the target proxies.

    In [0, 2] for any input; 0 iff v aligns with every proxy exactly.
    """
    targets = _target_matrix(proxies)
    vv = as_vector(v, "v")
    if targets.shape[1] != vv.shape[0]:
        raise DomainError("v and target proxies must share dimension")
    v_norm = float(np.linalg.norm(vv))
    if v_norm == 0.0:
        raise DomainError("loss_G: v has zero norm")
    t_norms = np.linalg.norm(targets, axis=1)
    if np.any(t_norms == 0.0):
        raise DomainError("loss_G: a target proxy has zero norm")
    return 1.0 - float(np.mean((targets @ vv) / (t_norms * v_norm)))


def loss_D(v, proxies) -> float:
    """Concealment loss: mean L2 distance to the source proxies."""
    sources = _source_matrix(proxies)
    vv = as_vector(v, "v")
    return float(np.mean(np.linalg.norm(sources - vv, axis=1)))


def pta_objective(v, proxies: ProxySet, alpha: float) -> float:
    """Combined objective loss_G + alpha * loss_D."""
    if alpha < 0 or not math.isfinite(alpha):
        raise ConfigError(f"alpha must be finite and >= 0, got {alpha}")
    if alpha > 0 and proxies.n_source == 0:
        raise ConfigError("alpha > 0 requires at least one source proxy")
    value = loss_G(v, proxies)
    if alpha > 0:
        value += alpha * loss_D(v, proxies)
    return value


def illusion_objective(v, target) -> float:
    """Single cross-modal target baseline: 1 - cosine(v, target)."""
    return 1.0 - cosine(v, target)


def samemodal_objective(v, surrogate) -> float:
    """Same-modal surrogate baseline: L2 distance to one source embedding."""
    return float(np.linalg.norm(as_vector(v, "v") - as_vector(surrogate, "surrogate")))


def select_samemodal_surrogate(world: WorldSnapshot, target_mean) -> tuple[int, int, np.ndarray]:
    """Pick the benign source embedding standing in for a cross-modal target.

    Chooses the cluster whose mean source embedding has the highest cosine to
    ``target_mean``, then the member of that cluster nearest (by cosine) to
    ``target_mean``.  Returns (cluster index, member index, embedding).
    """
    tm = as_vector(target_mean, "target_mean")
    cluster_idx = max(
        range(world.n_clusters),
        key=lambda i: cosine(np.mean(world.source_embeddings[i], axis=0), tm),
    )
    members = world.source_embeddings[cluster_idx]
    member_idx = max(range(members.shape[0]), key=lambda j: cosine(members[j], tm))
    return cluster_idx, member_idx, members[member_idx]


# ---------------------------------------------------------------------------
# Differentiable objective wrappers
# ---------------------------------------------------------------------------


class PtaLoss:
    """loss_G + alpha * loss_D with its exact embedding-space gradient."""

    def __init__(self, proxies: ProxySet, alpha: float):
        if alpha > 0 and proxies.n_source == 0:
            raise ConfigError("alpha > 0 requires at least one source proxy")
        self.proxies = proxies
        self.alpha = float(alpha)

    def value(self, v: np.ndarray) -> float:
        return pta_objective(v, self.proxies, self.alpha)

    def v_gradient(self, v: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise DomainError("gradient undefined at the zero embedding")
        mean_target = self.proxies.target.mean(axis=0)
        # d/dv [1 - v.m/||v||] with unit-norm proxies
        grad = -(mean_target / norm - (float(v @ mean_target) / norm**3) * v)
        if self.alpha > 0:
            diffs = v - self.proxies.source
            dists = np.linalg.norm(diffs, axis=1)
            safe = dists > 1e-12
            if np.any(safe):
                grad = grad + self.alpha * (
                    (diffs[safe] / dists[safe, None]).sum(axis=0) / diffs.shape[0]
                )
        return grad


class IllusionLoss:
    def __init__(self, target):
        self.target = as_vector(target, "target")

    def value(self, v: np.ndarray) -> float:
        return illusion_objective(v, self.target)

    def v_gradient(self, v: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise DomainError("gradient undefined at the zero embedding")
        t = self.target / float(np.linalg.norm(self.target))
        return -(t / norm - (float(v @ t) / norm**3) * v)


class SameModalLoss:
    def __init__(self, surrogate):
        self.surrogate = as_vector(surrogate, "surrogate")

    def value(self, v: np.ndarray) -> float:
        return samemodal_objective(v, self.surrogate)

    def v_gradient(self, v: np.ndarray) -> np.ndarray:
        diff = v - self.surrogate
        dist = float(np.linalg.norm(diff))
        if dist < 1e-12:
            return np.zeros_like(v)
        return diff / dist


class EncoderObjective:
    """Input-space objective: an embedding loss chained through the encoder."""

    def __init__(self, enc: SourceEncoder, emb_loss):
        self.enc = enc
        self.emb_loss = emb_loss

    def value(self, x: np.ndarray) -> float:
        return self.emb_loss.value(encode(self.enc, x))

    def value_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        v = encode(self.enc, x)
        upstream = self.emb_loss.v_gradient(v)
        return self.emb_loss.value(v), encode_gradient(self.enc, x, upstream)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return encode(self.enc, x)


class LinearObjective:
    """Test hook bypassing the encoder: objective g . x with constant g."""

    def __init__(self, g):
        self.g = np.asarray(g, dtype=float)

    def value(self, x: np.ndarray) -> float:
        return float(self.g @ x)

    def value_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        return float(self.g @ x), self.g.copy()

    def embed(self, x: np.ndarray):
        return None


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


def _check_start(x0: np.ndarray) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise DomainError("x0 contains non-finite values")
    if np.any(x0 < 0.0) or np.any(x0 > 1.0):
        raise DomainError("x0 must lie in the [0,1] box")
    return x0


def run_pgd(x0, objective, cfg: AttackConfig) -> AttackResult:
    """Signed projected gradient descent under the L-infinity ball.

    Each iteration takes a step of ``cfg.step_size`` along -sign(gradient),
    projects back into the epsilon-ball around ``x0`` and into the [0,1]
    box, and records the objective.  The best iterate seen (including x0)
    is returned, so the result's objective never exceeds the starting one.
    """
    if cfg.optimizer != "pgd":
        raise ConfigError(f"run_pgd called with optimizer={cfg.optimizer!r}")
    x0 = _check_start(x0)
    eps = cfg.epsilon
    lo = np.clip(x0 - eps, 0.0, 1.0)
    hi = np.clip(x0 + eps, 0.0, 1.0)

    x = x0.copy()
    value = objective.value(x)
    trace = [value]
    best_value, best_x = value, x.copy()
    for it in range(cfg.iterations):
        value, grad = objective.value_and_gradient(x)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient at iteration {it}")
        x = np.clip(x - cfg.step_size * np.sign(grad), lo, hi)
        value = objective.value(x)
        trace.append(value)
        if value < best_value:
            best_value, best_x = value, x.copy()
    return AttackResult(
        original_input=x0,
        adversarial_input=best_x,
        adversarial_embedding=objective.embed(best_x),
        loss_trace=tuple(trace),
        queries_used=0,
        config=cfg,
    )


def _square_window_length(n: int, queries_spent: int, budget: int) -> int:
    """Window length for the current query, following the halving schedule."""
    frac = queries_spent / budget
    halvings = sum(1 for f in SQUARE_HALVING_FRACTIONS if frac >= f)
    p = SQUARE_P_INIT / (2.0**halvings)
    return max(1, min(n, round(p * n)))


def run_square(x0, objective, cfg: AttackConfig) -> AttackResult:
    """Gradient-free random search with square (contiguous-window) proposals.

    Each query proposes flipping one contiguous window of coordinates to
    x0 +/- epsilon (clipped to the box) and accepts only strict objective
    decreases, so the best-so-far trace is monotone non-increasing and every
    iterate satisfies both constraints by construction.  Exhausting the
    budget is not an error; the best iterate seen is returned.
    """
    if cfg.optimizer != "square":
        raise ConfigError(f"run_square called with optimizer={cfg.optimizer!r}")
    x0 = _check_start(x0)
    n = x0.size
    eps = cfg.epsilon
    gen = stream(cfg.seed, "square-search")

    x = x0.copy()
    f_best = objective.value(x)
    queries = 1
    trace = [f_best]
    while queries < cfg.query_budget:
        w = _square_window_length(n, queries, cfg.query_budget)
        start = gen.integer_below(n - w + 1)
        sign = gen.choice_sign()
        proposal = x.copy()
        proposal[start : start + w] = np.clip(x0[start : start + w] + sign * eps, 0.0, 1.0)
        f_prop = objective.value(proposal)
        queries += 1
        if f_prop < f_best:
            f_best = f_prop
            x = proposal
        trace.append(f_best)
    return AttackResult(
        original_input=x0,
        adversarial_input=x,
        adversarial_embedding=objective.embed(x),
        loss_trace=tuple(trace),
        queries_used=queries,
        config=cfg,
    )
