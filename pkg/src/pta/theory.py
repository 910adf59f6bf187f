"""Numerical verification of the analytical claims.

Two kinds of guarantees become executable here:

1. The generalizability/undetectability trade-off.  Minimizing the expected
   squared distance to the target distribution subject to an expected
   squared-distance budget beta around the source distribution has the
   closed-form optimum

       (max{ ||Delta||_2 - sqrt(beta - sigma_S), 0 })^2 + sigma_T

   where Delta is the modality gap between the distribution means and
   sigma_S / sigma_T are covariance traces.  ``tradeoff_closed_form``
   evaluates it; ``tradeoff_numeric_oracle`` independently solves the
   underlying constrained problem by projected gradient descent, so the two
   can be cross-checked on random instances.

2. Convex-polytope similarity bounds.  If a point lies in the convex hull of
   proxies that all have nonnegative cosine to a reference vector, its own
   cosine to the reference is bounded below by the worst proxy
   (``source_hull_bound_check`` for source-side hulls, ``target_hull_bound_check``
   for target-side hulls).  Hull membership itself is decided by
   ``convex_membership`` via simplex-constrained nonnegative least squares.

beta < sigma_S is rejected rather than clamped: the constraint set is empty
there and no optimum exists to report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import DomainError, InfeasibleConstraintError, NumericError
from .numerics import as_matrix, as_vector, cosine

__all__ = [
    "TheoryInstance",
    "tradeoff_closed_form",
    "tradeoff_numeric_oracle",
    "source_hull_bound_check",
    "target_hull_bound_check",
    "convex_membership",
]

ORACLE_STEP = 0.1
ORACLE_MAX_ITERATIONS = 10_000
ORACLE_GRADIENT_TOL = 1e-10


@dataclass(frozen=True)
class TheoryInstance:
    """One (||Delta||, beta, sigma_S, sigma_T) point, optionally with means.

    When both mean vectors are supplied their distance must match
    ``delta_norm`` within 1e-9; the numeric oracle needs the means, the
    closed form only the scalars.
    """

    delta_norm: float
    beta: float
    sigma_s: float
    sigma_t: float
    mu_s: np.ndarray | None = None
    mu_t: np.ndarray | None = None

    def __post_init__(self):
        for name in ("delta_norm", "sigma_s", "sigma_t"):
            v = float(getattr(self, name))
            if not (v >= 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        if not math.isfinite(float(self.beta)):
            raise DomainError(f"beta must be finite, got {self.beta}")
        object.__setattr__(self, "beta", float(self.beta))
        if (self.mu_s is None) != (self.mu_t is None):
            raise DomainError("supply both mean vectors or neither")
        if self.mu_s is not None:
            mu_s = as_vector(np.asarray(self.mu_s, dtype=float), "mu_s")
            mu_t = as_vector(np.asarray(self.mu_t, dtype=float), "mu_t")
            if mu_s.shape != mu_t.shape:
                raise DomainError("mu_s and mu_t must share dimension")
            gap = float(np.linalg.norm(mu_t - mu_s))
            if abs(gap - self.delta_norm) > 1e-9:
                raise DomainError(
                    f"||mu_t - mu_s|| = {gap} does not match delta_norm = {self.delta_norm}"
                )
            object.__setattr__(self, "mu_s", mu_s)
            object.__setattr__(self, "mu_t", mu_t)

    @classmethod
    def from_means(cls, mu_s, mu_t, beta: float, sigma_s: float, sigma_t: float):
        mu_s = as_vector(np.asarray(mu_s, dtype=float), "mu_s")
        mu_t = as_vector(np.asarray(mu_t, dtype=float), "mu_t")
        return cls(
            delta_norm=float(np.linalg.norm(mu_t - mu_s)),
            beta=beta,
            sigma_s=sigma_s,
            sigma_t=sigma_t,
            mu_s=mu_s,
            mu_t=mu_t,
        )


def _check_feasible(inst: TheoryInstance) -> float:
    slack = inst.beta - inst.sigma_s
    if slack < 0:
        raise InfeasibleConstraintError(
            f"beta = {inst.beta} < sigma_S = {inst.sigma_s}: the detection-budget "
            "constraint admits no embedding"
        )
    return slack


def tradeoff_closed_form(inst: TheoryInstance) -> float:
    """Optimal expected squared distance to the target distribution.

    Two branches: when the gap fits inside the budget radius
    sqrt(beta - sigma_S) the optimum sits at the target mean and only the
    irreducible dispersion sigma_T remains; otherwise the optimum sits on
    the budget sphere and the residual crossing distance is paid squared.
    """
    slack = _check_feasible(inst)
    shortfall = max(inst.delta_norm - math.sqrt(slack), 0.0)
    return shortfall * shortfall + inst.sigma_t


def tradeoff_numeric_oracle(
    inst: TheoryInstance, dim: int | None = None, tol: float = 1e-4
) -> float:
    """Independently minimize the constrained objective by projected descent.

    Minimizes ||v - mu_T||^2 + sigma_T over the ball ||v - mu_S|| <=
    sqrt(beta - sigma_S), using step 0.1 with a 10^4-iteration cap and an
    early stop when the gradient-mapping norm falls below 1e-10.  The means
    are synthesized along one axis when the instance carries none (the
    problem is rotation- and translation-invariant).  ``tol`` is only a
    label for callers comparing against the closed form; the oracle itself
    runs to its own convergence criterion.
    """
    slack = _check_feasible(inst)
    if inst.mu_s is not None:
        mu_s, mu_t = inst.mu_s, inst.mu_t
    else:
        if dim is None or dim < 2:
            raise DomainError("dim >= 2 is required when the instance carries no means")
        mu_s = np.zeros(dim)
        mu_t = np.zeros(dim)
        mu_t[0] = inst.delta_norm
    radius = math.sqrt(slack)

    def project(v: np.ndarray) -> np.ndarray:
        offset = v - mu_s
        dist = float(np.linalg.norm(offset))
        if dist <= radius or dist == 0.0:
            return v
        return mu_s + offset * (radius / dist)

    v = mu_s.copy()
    for _ in range(ORACLE_MAX_ITERATIONS):
        grad = 2.0 * (v - mu_t)
        v_next = project(v - ORACLE_STEP * grad)
        mapping_norm = float(np.linalg.norm(v - v_next)) / ORACLE_STEP
        v = v_next
        if mapping_norm < ORACLE_GRADIENT_TOL:
            break
    else:
        raise NumericError(
            f"projected descent did not converge in {ORACLE_MAX_ITERATIONS} iterations; "
            f"final gradient-mapping norm {mapping_norm:.3e} (tol label {tol})"
        )
    return float(np.sum((v - mu_t) ** 2)) + inst.sigma_t


# ---------------------------------------------------------------------------
# Convex-polytope bounds
# ---------------------------------------------------------------------------

SIMPLEX_PENALTY = 1e4


def convex_membership(point, vertices, tol: float = 1e-7):
    """Decide whether ``point`` is a convex combination of ``vertices``.

    Solves the simplex-constrained nonnegative least-squares problem (sum of
    weights pinned to 1 via a penalty row, then exactly renormalized) and
    accepts when the reconstruction residual is below ``tol``.  Returns
    (inside, weights); weights are only returned when inside.
    """
    p = as_vector(point, "point")
    verts = as_matrix(vertices, "vertices")
    if verts.shape[1] != p.shape[0]:
        raise DomainError("point and vertices must share dimension")
    a = np.vstack([verts.T, SIMPLEX_PENALTY * np.ones((1, verts.shape[0]))])
    b = np.concatenate([p, [SIMPLEX_PENALTY]])
    weights, _ = nnls(a, b)
    total = float(weights.sum())
    if total <= 0.0:
        return False, None
    weights = weights / total
    residual = float(np.linalg.norm(verts.T @ weights - p))
    if residual >= tol:
        return False, None
    return True, weights


def source_hull_bound_check(ae, source_proxies, true_target, membership_tol: float = 1e-7):
    """Hull bound for a point inside the source-proxy polytope.

    bound = the worst proxy-to-target cosine; the check passes when
    cosine(ae, target) >= bound - 1e-9.  The bound is only guaranteed when
    every proxy has nonnegative cosine to the target (proxies approximate
    the target, so this is the meaningful regime).
    """
    aev = as_vector(ae, "ae")
    proxies = as_matrix(source_proxies, "source_proxies")
    target = as_vector(true_target, "true_target")
    inside, _ = convex_membership(aev, proxies, tol=membership_tol)
    if not inside:
        raise DomainError(
            "ae is not a convex combination of the source proxies; run "
            "convex_membership to diagnose the residual"
        )
    bound = min(cosine(row, target) for row in proxies)
    satisfied = cosine(aev, target) >= bound - 1e-9
    return bound, satisfied


def target_hull_bound_check(ae, target_proxies, true_target, membership_tol: float = 1e-7):
    """Hull bound for a true target inside the target-proxy polytope.

    bound = the worst AE-to-proxy cosine; the check passes when
    cosine(ae, target) >= bound - 1e-9, guaranteed in the same nonnegative-
    cosine regime as the source-side bound.
    """
    aev = as_vector(ae, "ae")
    proxies = as_matrix(target_proxies, "target_proxies")
    target = as_vector(true_target, "true_target")
    inside, _ = convex_membership(target, proxies, tol=membership_tol)
    if not inside:
        raise DomainError(
            "true_target is not a convex combination of the target proxies; run "
            "convex_membership to diagnose the residual"
        )
    bound = min(cosine(aev, row) for row in proxies)
    satisfied = cosine(aev, target) >= bound - 1e-9
    return bound, satisfied
