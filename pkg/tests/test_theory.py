"""Closed form vs. numeric oracle, and the hull-bound guarantees."""

import math

import numpy as np
import pytest

from pta.errors import DomainError, InfeasibleConstraintError
from pta.numerics import cosine, unit_normalize
from pta.theory import (
    TheoryInstance,
    convex_membership,
    tradeoff_closed_form,
    tradeoff_numeric_oracle,
    source_hull_bound_check,
    target_hull_bound_check,
)


def random_feasible_instance(rng, dim):
    mu_s = rng.normal(size=dim)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    delta = float(rng.uniform(0.0, 3.0))
    mu_t = mu_s + delta * direction
    sigma_s = float(rng.uniform(0.0, 1.0))
    sigma_t = float(rng.uniform(0.0, 1.0))
    beta = sigma_s + float(rng.uniform(1e-6, 4.0))
    return TheoryInstance.from_means(mu_s, mu_t, beta, sigma_s, sigma_t)


def cone_proxies(rng, center, n, spread=0.7):
    """Unit proxies with guaranteed-positive cosine to ``center``."""
    rows = []
    for _ in range(n):
        noise = rng.normal(size=center.size)
        noise /= np.linalg.norm(noise)
        rows.append(unit_normalize(center + spread * noise))
    return np.stack(rows)


def convex_point(rng, vertices):
    w = rng.uniform(0.05, 1.0, size=vertices.shape[0])
    w /= w.sum()
    return vertices.T @ w


class TestClosedForm:
    def test_interior_branch(self):
        inst = TheoryInstance(delta_norm=0.0, beta=1.0, sigma_s=0.5, sigma_t=0.25)
        assert tradeoff_closed_form(inst) == 0.25

    def test_boundary_branch_with_reference_traces(self):
        inst = TheoryInstance(delta_norm=1.0, beta=0.5, sigma_s=0.2753, sigma_t=0.1107)
        assert tradeoff_closed_form(inst) == pytest.approx(0.3873, abs=5e-5)

    def test_gap_within_budget_returns_sigma_t(self):
        inst = TheoryInstance(delta_norm=0.7, beta=1.0, sigma_s=0.4, sigma_t=0.33)
        assert math.sqrt(inst.beta - inst.sigma_s) >= inst.delta_norm
        assert tradeoff_closed_form(inst) == 0.33

    def test_infeasible_budget_rejected(self):
        inst = TheoryInstance(delta_norm=1.0, beta=0.1, sigma_s=0.5, sigma_t=0.1)
        with pytest.raises(InfeasibleConstraintError):
            tradeoff_closed_form(inst)

    def test_zero_slack_zero_gap_limit(self):
        inst = TheoryInstance(delta_norm=0.0, beta=0.5, sigma_s=0.5, sigma_t=0.2)
        assert tradeoff_closed_form(inst) == 0.2

    def test_monotone_in_beta_and_delta(self):
        sigma_s, sigma_t = 0.3, 0.2
        betas = np.linspace(sigma_s, sigma_s + 3, 40)
        values = [
            tradeoff_closed_form(TheoryInstance(1.2, b, sigma_s, sigma_t)) for b in betas
        ]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        deltas = np.linspace(0.0, 3.0, 40)
        values = [
            tradeoff_closed_form(TheoryInstance(d, 1.0, sigma_s, sigma_t)) for d in deltas
        ]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


class TestNumericOracle:
    def test_interior_optimum(self):
        rng = np.random.default_rng(0)
        mu_s = rng.normal(size=5)
        mu_t = mu_s + 0.3 * unit_normalize(rng.normal(size=5))
        inst = TheoryInstance.from_means(mu_s, mu_t, beta=2.0, sigma_s=0.5, sigma_t=0.4)
        assert tradeoff_numeric_oracle(inst) == pytest.approx(0.4, abs=1e-8)

    def test_degenerate_radius_zero(self):
        rng = np.random.default_rng(1)
        mu_s = rng.normal(size=4)
        mu_t = mu_s + 1.5 * unit_normalize(rng.normal(size=4))
        inst = TheoryInstance.from_means(mu_s, mu_t, beta=0.3, sigma_s=0.3, sigma_t=0.05)
        assert tradeoff_numeric_oracle(inst) == pytest.approx(1.5**2 + 0.05, abs=1e-8)

    def test_agrees_with_closed_form(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            dim = int(rng.integers(2, 65))
            inst = random_feasible_instance(rng, dim)
            gap = abs(tradeoff_numeric_oracle(inst) - tradeoff_closed_form(inst))
            assert gap < 1e-4

    def test_synthesized_means(self):
        inst = TheoryInstance(delta_norm=1.1, beta=0.9, sigma_s=0.4, sigma_t=0.2)
        value = tradeoff_numeric_oracle(inst, dim=6)
        assert value == pytest.approx(tradeoff_closed_form(inst), abs=1e-6)
        with pytest.raises(DomainError):
            tradeoff_numeric_oracle(inst)  # no means and no dim

    def test_mean_mismatch_rejected(self):
        with pytest.raises(DomainError):
            TheoryInstance(
                delta_norm=5.0,
                beta=1.0,
                sigma_s=0.1,
                sigma_t=0.1,
                mu_s=np.zeros(3),
                mu_t=np.ones(3),
            )


class TestConvexMembership:
    def test_vertex_is_inside_with_indicator(self):
        rng = np.random.default_rng(3)
        verts = rng.normal(size=(4, 6))
        inside, w = convex_membership(verts[2], verts)
        assert inside
        np.testing.assert_allclose(w, [0, 0, 1, 0], atol=1e-6)

    def test_mean_is_inside_with_uniform_weights(self):
        rng = np.random.default_rng(4)
        verts = rng.normal(size=(3, 6))  # general position: unique representation
        inside, w = convex_membership(verts.mean(axis=0), verts)
        assert inside
        np.testing.assert_allclose(w, np.full(3, 1 / 3), atol=1e-6)

    def test_point_off_affine_span_is_outside(self):
        verts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        point = np.array([0.5, 0.5, 0.3])  # orthogonal offset 0.3
        inside, w = convex_membership(point, verts, tol=1e-7)
        assert not inside and w is None

    def test_weights_reconstruct_and_sum_to_one(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            verts = rng.normal(size=(5, 8))
            point = convex_point(rng, verts)
            inside, w = convex_membership(point, verts, tol=1e-7)
            assert inside
            assert abs(float(w.sum()) - 1.0) < 1e-9
            assert np.all(w >= -1e-12)
            assert np.linalg.norm(verts.T @ w - point) < 1e-7


class TestHullBounds:
    def test_single_vertex_equality(self):
        target = np.array([1.0, 0.0, 0.0])
        proxies = np.array([[0.8, 0.6, 0.0], [0.9, math.sqrt(1 - 0.81), 0.0]])
        bound, satisfied = source_hull_bound_check(proxies[0], proxies, target)
        assert satisfied
        assert bound == pytest.approx(0.8, abs=1e-12)
        assert cosine(proxies[0], target) == pytest.approx(bound, abs=1e-12)

    def test_midpoint_of_two_equal_cosine_proxies(self):
        target = np.array([1.0, 0.0, 0.0])
        p1 = np.array([0.8, 0.6, 0.0])
        p2 = np.array([0.8, -0.6, 0.0])
        midpoint = 0.5 * (p1 + p2)
        bound, satisfied = source_hull_bound_check(midpoint, np.stack([p1, p2]), target)
        assert bound == pytest.approx(0.8, abs=1e-12)
        assert satisfied

    def test_outside_hull_rejected(self):
        target = np.array([1.0, 0.0, 0.0])
        proxies = np.array([[0.8, 0.6, 0.0], [0.8, -0.6, 0.0]])
        with pytest.raises(DomainError, match="convex_membership"):
            source_hull_bound_check(np.array([0.0, 0.0, 1.0]), proxies, target)

    def test_source_hull_randomized_sweep(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            d = int(rng.integers(3, 12))
            target = unit_normalize(rng.normal(size=d))
            proxies = cone_proxies(rng, target, int(rng.integers(2, 7)))
            ae = convex_point(rng, proxies)
            bound, satisfied = source_hull_bound_check(ae, proxies, target)
            assert satisfied, f"bound {bound} violated: cos={cosine(ae, target)}"

    def test_target_hull_target_in_proxy_hull(self):
        rng = np.random.default_rng(7)
        d = 5
        concept = unit_normalize(rng.normal(size=d))
        proxies = cone_proxies(rng, concept, 4)
        target = convex_point(rng, proxies)
        ae = unit_normalize(concept + 0.3 * rng.normal(size=d))
        if all(cosine(ae, p) >= 0 for p in proxies):
            bound, satisfied = target_hull_bound_check(ae, proxies, target)
            assert satisfied
            assert bound == pytest.approx(min(cosine(ae, p) for p in proxies), abs=1e-12)

    def test_target_hull_vertex_target(self):
        rng = np.random.default_rng(8)
        concept = unit_normalize(rng.normal(size=4))
        proxies = cone_proxies(rng, concept, 3)
        ae = unit_normalize(concept + 0.2 * rng.normal(size=4))
        bound, satisfied = target_hull_bound_check(ae, proxies, proxies[1])
        assert satisfied

    def test_target_hull_randomized_sweep(self):
        rng = np.random.default_rng(9)
        checked = 0
        while checked < 100:
            d = int(rng.integers(3, 12))
            concept = unit_normalize(rng.normal(size=d))
            proxies = cone_proxies(rng, concept, int(rng.integers(2, 7)))
            target = convex_point(rng, proxies)
            ae = unit_normalize(concept + 0.4 * rng.normal(size=d))
            if any(cosine(ae, p) < 0 for p in proxies):
                continue  # outside the nonnegative-cosine regime the bound covers
            bound, satisfied = target_hull_bound_check(ae, proxies, target)
            assert satisfied, f"bound {bound} violated: cos={cosine(ae, target)}"
            checked += 1
