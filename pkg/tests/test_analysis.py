import numpy as np
import pytest

from iwf.algorithms import AlgorithmConfig, ne_residual, run
from iwf.analysis import (
    MIN_FIT_POINTS,
    block_norm,
    contraction_modulus,
    contraction_probe,
    error_norms,
    estimate_exponent,
    exponent_bounds,
    reference_equilibrium,
    vi_residual,
)
from iwf.conditions import check_spectral_radius
from iwf.errors import EstimationError
from iwf.model import Scenario
from iwf.projection import project_rows

from helpers import random_game


def sym(a, N=4, mask=3.0):
    g = np.ones((2, 2, N))
    g[0, 1] = g[1, 0] = a
    return Scenario(g, [1.0, 1.0], np.full((2, N), mask))


def decoupled():
    g = np.zeros((2, 2, 4))
    g[0, 0] = [2.0, 1.0, 0.5, 0.1]
    g[1, 1] = [0.3, 1.0, 1.0, 3.0]
    return Scenario(g, [1.0, 1.0], np.full((2, 4), 3.0))


def test_vi_residual_decoupled():
    s = decoupled()
    p = project_rows(1.0 / s.direct, s.mask)[0]
    assert vi_residual(s, p) < 1e-10


def test_vi_residual_converged_and_perturbed():
    rng = np.random.default_rng(0)
    s = random_game(rng, 3, 6)
    while not check_spectral_radius(s).satisfied:
        s = random_game(rng, 3, 6)
    p = reference_equilibrium(s)
    assert ne_residual(s, p) < 1e-12
    assert vi_residual(s, p) < 1e-8
    bumped = project_rows(-(p + 1e-3 * rng.standard_normal(p.shape)), s.mask)[0]
    r = vi_residual(s, bumped)
    assert 1e-5 < r < 1e-1


def test_residual_equivalence():
    rng = np.random.default_rng(1)
    for _ in range(40):
        s = random_game(rng, 3, 5, gap=True)
        tr = run(s, None, AlgorithmConfig(schedule="simultaneous", tol=1e-12, max_iters=5000))
        if ne_residual(s, tr.final_profile) < 1e-10:
            assert vi_residual(s, tr.final_profile) < 1e-8


def test_exponent_synthetic():
    n = np.arange(60)
    est = estimate_exponent(None, errors=3.0 * np.exp(-0.3 * n))
    assert est.exponent == pytest.approx(0.3, abs=1e-9)
    assert est.fit_residual < 1e-9
    assert est.burn_in == 3  # first point at or below half the initial error


def test_exponent_floor_excluded():
    n = np.arange(80)
    e = np.maximum(np.exp(-0.5 * n), 1e-16)
    est = estimate_exponent(None, errors=e)
    assert est.exponent == pytest.approx(0.5, abs=1e-9)
    assert est.num_points == int(np.sum((e >= 1e-12) & (e <= 0.5)))


def test_exponent_too_few_points():
    with pytest.raises(EstimationError):
        estimate_exponent(None, errors=np.exp(-10.0 * np.arange(MIN_FIT_POINTS + 2)))
    with pytest.raises(EstimationError):
        estimate_exponent(None, errors=np.ones(20))


def test_exponent_of_run_respects_simultaneous_bound():
    s = sym(0.4, N=6)
    p0 = np.zeros((2, 6))
    p0[0, :3] = 2.0
    p0[1, 3:] = 2.0
    p_star = reference_equilibrium(s)
    tr = run(s, p0, AlgorithmConfig(schedule="simultaneous", tol=1e-14))
    b = exponent_bounds(s)
    est = estimate_exponent(tr, p_star)
    assert est.exponent >= -np.log(b.modulus) - 0.05


def test_block_norm_and_error_norms():
    x = np.array([[3.0, 4.0], [0.0, 1.0]])
    assert block_norm(x) == 5.0
    assert block_norm(x, [10.0, 0.1]) == 10.0
    s = sym(0.2, N=2)
    tr = run(s, None, AlgorithmConfig(max_iters=2))
    e = error_norms(tr, np.zeros((2, 2)), "block")
    assert e[0] == pytest.approx(np.sqrt(2))


def test_exponent_bounds_examples():
    a = 0.3
    b = exponent_bounds(sym(a))
    assert b.applicable
    assert b.d_seq_low == pytest.approx(-np.log(a))
    assert b.d_sim_low == pytest.approx(-2 * np.log(a))
    near_one = exponent_bounds(sym(a), alphas=0.999999)
    assert near_one.d_seq_low < 1e-5
    off = exponent_bounds(sym(1.3))
    assert not off.applicable and np.isnan(off.d_seq_low)


def test_exponent_bounds_ratio_is_q():
    rng = np.random.default_rng(2)
    for _ in range(30):
        s = random_game(rng, 4, 6).with_cross_scale(0.1)
        b = exponent_bounds(s)
        if b.applicable:
            assert b.d_sim_low == 4 * b.d_seq_low


def test_probe_zero_interference():
    assert contraction_probe(decoupled(), trials=20) == 0.0


@pytest.mark.parametrize("alpha", [0.0, 0.9])
def test_probe_symmetric_bound(alpha):
    s = sym(0.5, N=5)
    bound = contraction_modulus(s, alpha)
    assert bound == pytest.approx(alpha + (1 - alpha) * 0.5)
    assert contraction_probe(s, alpha, trials=200) <= bound + 1e-9


def test_probe_deterministic():
    s = random_game(np.random.default_rng(3), 3, 5)
    assert contraction_probe(s, trials=30, rng_seed=4) == contraction_probe(s, trials=30, rng_seed=4)


def test_probe_below_modulus_random():
    rng = np.random.default_rng(5)
    for _ in range(10):
        s = random_game(rng, 3, 6, gap=True)
        w = rng.uniform(0.5, 2.0, 3)
        alphas = rng.uniform(0, 0.9, 3)
        assert contraction_probe(s, alphas, w, trials=50) <= contraction_modulus(s, alphas, w) + 1e-9
