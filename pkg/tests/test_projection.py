import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwf.algorithms import AlgorithmConfig, run
from iwf.errors import DomainError, FeasibilityError, MatrixError
from iwf.model import Scenario
from iwf.projection import (
    CappedSimplex,
    insr_matrix,
    insr_vector,
    project_capped_simplex,
    project_metric,
    project_rows,
    water_level,
    water_level_bisection,
    waterfill_all,
    waterfill_response,
)

from helpers import random_capped_set, random_game
from oracles import bisection_level, enumerate_capped_simplex, enumerate_metric_qp


def test_symmetric_example():
    r = project_capped_simplex([0.0, 0.0], CappedSimplex([2.0, 2.0]))
    np.testing.assert_allclose(r.allocation, [1.0, 1.0])
    assert r.water_level == 1.0


def test_capped_example():
    r = project_capped_simplex([0.0, 1.0], CappedSimplex([1.2, 2.0]))
    np.testing.assert_allclose(r.allocation, [1.2, 0.8], atol=1e-15)
    assert r.water_level == pytest.approx(1.8, abs=1e-15)
    assert r.at_cap.tolist() == [0]
    assert r.interior.tolist() == [1]
    oracle, mu = enumerate_capped_simplex([0.0, 1.0], [1.2, 2.0])
    np.testing.assert_allclose(r.allocation, oracle, atol=1e-14)


def test_three_carrier_example():
    x0 = [0.2, 0.5, 1.0]
    r = project_capped_simplex(x0, CappedSimplex([1.5] * 3))
    np.testing.assert_allclose(r.allocation, [1.3666666666666667, 1.0666666666666667,
                                              0.5666666666666667], atol=1e-14)
    assert r.water_level == pytest.approx(1.7 / 3 + 1, abs=1e-14)
    np.testing.assert_allclose(r.allocation, enumerate_capped_simplex(x0, [1.5] * 3)[0],
                               atol=1e-14)


def test_water_level_examples():
    assert water_level([0.0, 0.0], CappedSimplex([2.0, 2.0])) == 1.0
    assert water_level([0.7, 0.7], CappedSimplex([np.inf, np.inf])) == pytest.approx(1.7)


def test_water_level_left_most_on_flat_segment():
    # f is flat between mu = 2.1 and mu = 10.
    assert water_level([0.1, 10.0], CappedSimplex([2.0, 2.0])) == pytest.approx(2.1, abs=1e-15)


def test_water_level_matches_bisection_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x0 = rng.uniform(-2, 3, 5)
        cs = CappedSimplex(random_capped_set(rng, 5))
        mu = water_level(x0, cs)
        assert mu == pytest.approx(bisection_level(x0, cs.caps), abs=1e-12)
        assert mu == pytest.approx(water_level_bisection(x0, cs), abs=1e-12)


def test_infinite_insr_entry_gets_nothing():
    r = project_capped_simplex([0.1, np.inf, 0.5], CappedSimplex([2.0, 2.0, 2.0]))
    assert r.allocation[1] == 0.0
    assert r.allocation.mean() == pytest.approx(1.0, abs=1e-15)


def test_infeasible_set_rejected():
    with pytest.raises(FeasibilityError):
        CappedSimplex([1.0, 1.0])
    with pytest.raises(FeasibilityError):
        CappedSimplex([0.5, 0.5, 1.9])


def test_budget_unreachable_over_finite_entries():
    with pytest.raises(FeasibilityError):
        project_capped_simplex([np.inf, 0.0], CappedSimplex([5.0, 1.5]))


def test_bad_vector_rejected():
    with pytest.raises(DomainError):
        project_capped_simplex([0.0, np.nan], CappedSimplex([2.0, 2.0]))
    with pytest.raises(DomainError):
        project_capped_simplex([0.0], CappedSimplex([2.0, 2.0]))


def test_oracle_equivalence_many():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(1, 7))
        x0 = rng.uniform(-2, 3, n)
        caps = random_capped_set(rng, n)
        r = project_capped_simplex(x0, CappedSimplex(caps))
        oracle, _ = enumerate_capped_simplex(x0, caps)
        np.testing.assert_allclose(r.allocation, oracle, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_is_optimal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    x0 = rng.uniform(-2, 3, n)
    caps = random_capped_set(rng, n)
    x = project_capped_simplex(x0, CappedSimplex(caps)).allocation
    # Random feasible competitors.
    y = project_rows(-rng.uniform(-3, 5, (100, n)), caps)[0]
    d_x = np.linalg.norm(x + x0)
    d_y = np.linalg.norm(y + x0, axis=1)
    assert np.all(d_x <= d_y + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_budget_and_box_are_exact(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    caps = random_capped_set(rng, n)
    x = project_capped_simplex(rng.uniform(-5, 5, n), CappedSimplex(caps)).allocation
    assert abs(x.mean() - 1.0) <= 1e-10
    assert np.all(x >= 0.0) and np.all(x <= caps)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    cs = CappedSimplex(random_capped_set(rng, n))
    x = project_capped_simplex(rng.uniform(-2, 3, n), cs).allocation
    again = project_capped_simplex(-x, cs).allocation
    assert np.max(np.abs(again - x)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_euclidean_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    cs = CappedSimplex(random_capped_set(rng, n))
    a, b = rng.uniform(-3, 3, (2, n))
    pa = project_capped_simplex(a, cs).allocation
    pb = project_capped_simplex(b, cs).allocation
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_seminorm_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    support = rng.random(n) < 0.7
    support[rng.integers(n)] = True
    caps = np.where(support, rng.uniform(0.5, 3.0, n), 0.0)
    caps *= n * rng.uniform(1.05, 2.0) / caps.sum()
    cs = CappedSimplex(caps)
    a, b = rng.uniform(0, 4, (2, n))
    pa = project_capped_simplex(a, cs).allocation
    pb = project_capped_simplex(b, cs).allocation
    lhs = np.linalg.norm((pa - pb)[support])
    rhs = np.linalg.norm((a - b)[support])
    assert lhs <= rhs + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_budget_function_monotone(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    x0 = rng.uniform(-2, 3, n)
    caps = random_capped_set(rng, n)
    grid = np.sort(rng.uniform(-4, 8, 200))
    f = np.clip(grid[:, None] - x0, 0, caps).mean(axis=1)
    assert np.all(np.diff(f) >= -1e-15)


def test_metric_identity_matches_euclidean():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        cs = CappedSimplex(random_capped_set(rng, n))
        x0 = rng.uniform(-2, 3, n)
        expected = project_capped_simplex(-x0, cs).allocation
        np.testing.assert_allclose(project_metric(x0, cs), expected, atol=1e-10)
        np.testing.assert_allclose(project_metric(x0, cs, np.eye(n) * 1.0), expected, atol=1e-10)


def test_metric_diagonal_matches_weighted_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        caps = random_capped_set(rng, n)
        caps[np.isinf(caps)] = 5.0
        cs = CappedSimplex(caps)
        w = rng.uniform(0.2, 3.0, n)
        insr = rng.uniform(0.0, 3.0, n)
        x = project_metric(-insr, cs, w)
        # Weighted waterfilling: x_k = clamp(mu / w_k - insr_k, 0, caps_k).
        lo, hi = -10.0, 100.0
        for _ in range(200):
            mu = 0.5 * (lo + hi)
            if np.clip(mu / w - insr, 0, caps).sum() >= n:
                hi = mu
            else:
                lo = mu
        np.testing.assert_allclose(x, np.clip(hi / w - insr, 0, caps), atol=1e-10)
        np.testing.assert_allclose(x, enumerate_metric_qp(-insr, caps, np.diag(w)), atol=1e-9)


def test_metric_dense_matches_qp_oracle():
    rng = np.random.default_rng(4)
    for _ in range(40):
        n = 4
        A = rng.standard_normal((n, n))
        G = A @ A.T + 0.3 * np.eye(n)
        caps = rng.uniform(0.5, 3.0, n)
        caps *= n * rng.uniform(1.1, 2.0) / caps.sum()
        x0 = rng.uniform(-2, 3, n)
        x = project_metric(x0, CappedSimplex(caps), G)
        np.testing.assert_allclose(x, enumerate_metric_qp(x0, caps, G), atol=1e-9)


def test_metric_rejects_non_pd():
    cs = CappedSimplex([2.0, 2.0])
    with pytest.raises(MatrixError):
        project_metric([0.0, 0.0], cs, np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(MatrixError):
        project_metric([0.0, 0.0], cs, np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(MatrixError):
        project_metric([0.0, 0.0], cs, np.array([1.0, -1.0]))


def test_insr_no_interference():
    s = Scenario(np.eye(2)[:, :, None] * np.ones((2, 2, 4)), [1.0, 1.0], np.full((2, 4), 2.0))
    np.testing.assert_array_equal(insr_vector(s, 0, np.ones((2, 4))), np.ones(4))


def test_insr_sentinel_for_dead_carrier():
    g = np.ones((2, 2, 3))
    g[1, 1, 2] = 0.0
    s = Scenario(g, [1.0, 1.0], np.full((2, 3), 2.0))
    v = insr_vector(s, 1, np.ones((2, 3)))
    assert np.isinf(v[2]) and np.all(np.isfinite(v[:2]))


def test_insr_matches_elementwise_recomputation():
    rng = np.random.default_rng(5)
    s = random_game(rng, 2, 5, gap=True)
    p = rng.uniform(0, 2, (2, 5))
    for q in range(2):
        r = 1 - q
        expected = s.snr_gap[q] * (1 + s.gain_sq[r, q] * p[r]) / s.gain_sq[q, q]
        np.testing.assert_allclose(insr_vector(s, q, p), expected, rtol=1e-14)
        np.testing.assert_allclose(insr_matrix(s, p)[q], expected, rtol=1e-14)


def test_waterfill_flat_no_interference_is_uniform():
    s = Scenario(np.eye(3)[:, :, None] * np.ones((3, 3, 5)), np.ones(3), np.full((3, 5), 5.0))
    np.testing.assert_allclose(waterfill_response(s, 1, np.zeros((3, 5))), np.ones(5))


def test_waterfill_two_carrier_example():
    # insr = (0.1, 10): carrier 1 takes all the power up to its cap.
    g = np.zeros((1, 1, 2))
    g[0, 0] = [10.0, 0.1]
    s = Scenario(g, [1.0], [[2.0, 2.0]])
    resp = waterfill_response(s, 0, np.zeros((1, 2)))
    np.testing.assert_allclose(resp, [2.0, 0.0])
    r = project_capped_simplex([0.1, 10.0], CappedSimplex([2.0, 2.0]))
    assert r.water_level == pytest.approx(2.1)
    np.testing.assert_allclose(resp, enumerate_capped_simplex([0.1, 10.0], [2.0, 2.0])[0])


def test_symmetric_equilibrium_is_fixed_point():
    rng = np.random.default_rng(6)
    d = rng.uniform(0.5, 2.0, 6)
    c = rng.uniform(0.05, 0.3, 6)
    g = np.empty((2, 2, 6))
    g[0, 0] = g[1, 1] = d
    g[0, 1] = g[1, 0] = c
    s = Scenario(g, [1.0, 1.0], np.full((2, 6), 3.0))
    p = run(s, None, AlgorithmConfig(schedule="simultaneous", tol=1e-13)).final_profile
    np.testing.assert_allclose(p[0], p[1], atol=1e-12)
    for q in range(2):
        assert np.max(np.abs(waterfill_response(s, q, p) - p[q])) < 1e-10
    np.testing.assert_allclose(waterfill_all(s, p), p, atol=1e-10)
