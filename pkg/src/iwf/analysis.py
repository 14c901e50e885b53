"""Post-run analysis: variational-inequality residuals, convergence exponents
and empirical contraction checks of the best-response mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algorithms import AlgorithmConfig, RunTrace, rate_gradients, run
from .conditions import build_hmax, estimate_usable_carriers
from .errors import DomainError, EstimationError
from .experiments import make_rng
from .model import Scenario
from .projection import project_rows, waterfill_all

__all__ = [
    "ExponentEstimate",
    "ExponentBounds",
    "vi_residual",
    "reference_equilibrium",
    "error_norms",
    "estimate_exponent",
    "exponent_bounds",
    "contraction_modulus",
    "block_norm",
    "contraction_probe",
]

MIN_FIT_POINTS = 5
ERROR_FLOOR = 1e-12


@dataclass(frozen=True)
class ExponentEstimate:
    """Least-squares fit of ``ln ||p(n) - p*|| ~ c - d n``.

    Attributes
    ----------
    exponent : float
        Fitted decay rate ``d`` per iteration event.
    burn_in : int
        Iteration index where the fit window starts.
    fit_residual : float
        Root-mean-square residual of the log-linear fit.
    norm : str
    num_points : int
    """

    exponent: float
    burn_in: int
    fit_residual: float
    norm: str
    num_points: int


@dataclass(frozen=True)
class ExponentBounds:
    d_seq_low: float
    d_sim_low: float
    modulus: float
    applicable: bool


def vi_residual(s: Scenario, p) -> float:
    """``max_q ||p_q - proj(p_q + grad_q R_q)||_inf``, zero exactly at equilibria."""
    p = np.asarray(p, dtype=float)
    target = p + rate_gradients(s, p)
    return float(np.max(np.abs(p - project_rows(-target, s.mask)[0])))


def reference_equilibrium(s: Scenario, p0=None, tol: float = 1e-13,
                          max_sweeps: int = 1_000_000) -> np.ndarray:
    """High-accuracy equilibrium from simultaneous waterfilling."""
    cfg = AlgorithmConfig(schedule="simultaneous", tol=tol, max_iters=max_sweeps,
                          record_profiles=False)
    tr = run(s, p0, cfg)
    return tr.final_profile


def block_norm(x, w=None) -> float:
    """``max_q ||x_q||_2 / w_q`` for a ``(Q, N)`` array."""
    x = np.asarray(x, dtype=float)
    w = np.ones(x.shape[0]) if w is None else np.asarray(w, dtype=float)
    return float(np.max(np.linalg.norm(x, axis=1) / w))


def error_norms(trace: RunTrace, p_star, norm: str = "euclidean") -> np.ndarray:
    """Distance of every recorded profile to ``p_star``."""
    if any(p is None for p in trace.profiles):
        raise EstimationError("trace was recorded without profile snapshots")
    diffs = [np.asarray(p) - p_star for p in trace.profiles]
    if norm == "euclidean":
        return np.array([np.linalg.norm(d) for d in diffs])
    if norm == "block":
        return np.array([block_norm(d) for d in diffs])
    raise DomainError(f"unknown norm {norm!r}")


def estimate_exponent(trace: RunTrace | None, p_star=None, norm: str = "euclidean",
                      errors=None, iterations=None) -> ExponentEstimate:
    """Fit the asymptotic convergence exponent of a run.

    The window drops the transient (errors above half the initial error) and
    the floor (errors below 1e-12); the exponent is minus the OLS slope of
    the log error against the iteration index.

    Parameters
    ----------
    trace : RunTrace
        Needs profile snapshots.  May be ``None`` if ``errors`` is given.
    p_star : array_like
        Reference equilibrium.
    norm : {"euclidean", "block"}
    errors, iterations : array_like, optional
        Precomputed error sequence and its iteration indices.
    """
    if errors is None:
        errors = error_norms(trace, np.asarray(p_star, dtype=float), norm)
        iterations = trace.iterations
    errors = np.asarray(errors, dtype=float)
    iterations = np.arange(errors.size) if iterations is None else np.asarray(iterations)
    if errors.size == 0 or not errors[0] > 0:
        raise EstimationError("initial error must be positive")
    below_floor = np.flatnonzero(errors < ERROR_FLOOR)
    end = below_floor[0] if below_floor.size else errors.size
    settled = np.flatnonzero(errors[:end] <= 0.5 * errors[0])
    if settled.size == 0:
        raise EstimationError("error never fell below half its initial value")
    start = settled[0]
    n = iterations[start:end].astype(float)
    y = np.log(errors[start:end])
    if n.size < MIN_FIT_POINTS:
        raise EstimationError(f"only {n.size} usable points; need {MIN_FIT_POINTS}")
    A = np.column_stack([np.ones_like(n), n])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return ExponentEstimate(float(-coef[1]), int(iterations[start]),
                            float(np.sqrt(np.mean(resid ** 2))), norm, int(n.size))


def contraction_modulus(s: Scenario, alphas=0.0, w=None, carrier_sets=None) -> float:
    """``max_q (alpha_q + (1 - alpha_q) (1/w_q) sum_r Hmax[q, r] w_r)``.

    ``carrier_sets`` defaults to :func:`iwf.conditions.estimate_usable_carriers`.
    """
    Q = s.num_users
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (Q,))
    w = np.ones(Q) if w is None else np.asarray(w, dtype=float)
    if w.shape != (Q,) or not np.all(w > 0):
        raise DomainError("weights must be positive, one per user")
    sets = estimate_usable_carriers(s) if carrier_sets is None else carrier_sets
    H = build_hmax(s, sets).entries
    with np.errstate(invalid="ignore"):
        row = H @ w / w
    return float(np.max(alphas + (1.0 - alphas) * row))


def exponent_bounds(s: Scenario, alphas=0.0, w=None, carrier_sets=None) -> ExponentBounds:
    """Lower bounds on the convergence exponents of sequential and simultaneous waterfilling.

    Not applicable (NaN bounds) when the weighted modulus is not below 1.
    """
    m = contraction_modulus(s, alphas, w, carrier_sets)
    if not m < 1.0:
        return ExponentBounds(float("nan"), float("nan"), m, False)
    d_seq = -np.log(m)
    return ExponentBounds(float(d_seq), float(s.num_users * d_seq), m, True)


def _random_feasible(s: Scenario, caps, rng) -> np.ndarray:
    Q, N = s.num_users, s.num_carriers
    scale = rng.uniform(0.1, 3.0, size=(Q, 1))
    u = rng.exponential(size=(Q, N)) * scale
    return project_rows(-u, caps)[0]


def contraction_probe(s: Scenario, alphas=0.0, w=None, trials: int = 100, rng_seed: int = 0,
                      carrier_sets=None) -> float:
    """Largest observed contraction ratio of the smoothed simultaneous best response.

    Draws ``trials`` pairs of random feasible profiles supported on the
    usable carrier sets and returns the maximum of
    ``||T(p1) - T(p2)|| / ||p1 - p2||`` in the weighted block norm, where
    ``T(p) = alpha p + (1 - alpha) WF(p)``.  Trial ``t`` uses the random
    substream ``(rng_seed, t)``.
    """
    Q = s.num_users
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (Q,))[:, None]
    w = np.ones(Q) if w is None else np.asarray(w, dtype=float)
    sets = estimate_usable_carriers(s) if carrier_sets is None else np.asarray(carrier_sets, bool)
    caps = np.where(sets, s.mask, 0.0)

    def T(p):
        return alphas * p + (1.0 - alphas) * waterfill_all(s, p)

    worst = 0.0
    for t in range(trials):
        rng = make_rng(rng_seed, t)
        p1 = _random_feasible(s, caps, rng)
        p2 = _random_feasible(s, caps, rng)
        den = block_norm(p1 - p2, w)
        if den == 0.0:
            continue
        worst = max(worst, block_norm(T(p1) - T(p2), w) / den)
    return worst
