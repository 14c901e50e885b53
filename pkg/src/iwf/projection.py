"""Projections onto the per-user feasible set and the waterfilling operator.

The per-user strategy set is the capped simplex

    {x : 0 <= x <= caps, mean(x) = target_mean}.

Euclidean projection onto it has the waterfilling form
``x_k = clamp(mu - x0_k, 0, caps_k)``, where the water level ``mu`` is the
root of a nondecreasing piecewise-linear function.  Water levels are found
exactly by walking the sorted breakpoints of that function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, FeasibilityError, MatrixError
from .model import Scenario, interference

__all__ = [
    "CappedSimplex",
    "WaterfillingResult",
    "project_capped_simplex",
    "water_level",
    "water_level_bisection",
    "project_metric",
    "insr_vector",
    "insr_matrix",
    "waterfill_response",
    "waterfill_all",
    "project_rows",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CappedSimplex:
    """The set ``{x : 0 <= x <= caps, mean(x) = target_mean}``.

    Parameters
    ----------
    caps : array_like, shape (n,)
        Per-index upper bounds; ``inf`` is allowed.
    target_mean : float
        Required average of the entries, 1 for a normalized power budget.
    """

    caps: np.ndarray
    target_mean: float = 1.0

    def __post_init__(self):
        caps = np.array(self.caps, dtype=float, copy=True).reshape(-1)
        if caps.size == 0:
            raise DomainError("capped simplex needs at least one coordinate")
        if np.any(np.isnan(caps)) or np.any(caps < 0):
            raise DomainError("caps must be nonnegative")
        if not self.target_mean > 0:
            raise DomainError("target_mean must be positive")
        if not caps.sum() / caps.size > self.target_mean:
            raise FeasibilityError(
                f"mean cap {caps.sum() / caps.size:.6g} must exceed target mean {self.target_mean:.6g}"
            )
        caps.setflags(write=False)
        object.__setattr__(self, "caps", caps)

    @property
    def n(self) -> int:
        return self.caps.size

    @property
    def budget(self) -> float:
        """Required sum of the entries."""
        return self.n * self.target_mean

    def contains(self, x, tol: float = 1e-10) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            x.shape == self.caps.shape
            and np.all(x >= -tol)
            and np.all(x <= self.caps + tol)
            and abs(x.mean() - self.target_mean) <= tol
        )


@dataclass(frozen=True)
class WaterfillingResult:
    """Outcome of a capped-simplex projection.

    Attributes
    ----------
    allocation : ndarray
        ``clamp(water_level - x0, 0, caps)``.
    water_level : float
    at_zero, interior, at_cap : ndarray of int
        Index sets of entries clamped at 0, strictly inside the box, and
        clamped at the cap.
    """

    allocation: np.ndarray
    water_level: float
    at_zero: np.ndarray
    interior: np.ndarray
    at_cap: np.ndarray


def _solve_levels(a, slope, caps, totals):
    """Row-wise roots of ``sum_k clamp(slope_k (mu - a_k), 0, caps_k) = total``.

    All arguments are 2-D ``(B, n)`` except ``totals`` of shape ``(B,)``.
    ``a`` and ``caps`` may hold ``+inf``; ``slope`` must be finite and
    positive.  Returns the left-most root of each row.
    """
    a = np.asarray(a, dtype=float)
    slope = np.asarray(slope, dtype=float)
    caps = np.asarray(caps, dtype=float)
    totals = np.asarray(totals, dtype=float)
    B, n = a.shape

    finite_a = np.isfinite(a)
    capacity = np.where(finite_a, caps, 0.0).sum(axis=1)
    # Capacity equal to the budget is feasible; allow for rounding in the sum.
    bad = capacity < totals * (1.0 - 1e-12)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise FeasibilityError(
            f"capacity {capacity[row]:.6g} over finite entries is below the budget {totals[row]:.6g}"
        )

    # Breakpoints: f gains slope s_k at a_k and loses it at a_k + c_k / s_k.
    with np.errstate(invalid="ignore"):
        upper = a + caps / slope
    upper = np.where(finite_a, upper, np.inf)
    bp = np.concatenate([a, upper], axis=1)
    dslope = np.concatenate([slope, -slope], axis=1)
    order = np.argsort(bp, axis=1, kind="stable")
    bp = np.take_along_axis(bp, order, axis=1)
    dslope = np.take_along_axis(dslope, order, axis=1)
    finite_bp = np.isfinite(bp)
    dslope = np.where(finite_bp, dslope, 0.0)
    run_slope = np.cumsum(dslope, axis=1)

    with np.errstate(invalid="ignore"):
        gaps = np.diff(bp, axis=1)
    gaps = np.where(finite_bp[:, 1:], gaps, 0.0)
    g = np.zeros_like(bp)
    g[:, 1:] = np.cumsum(run_slope[:, :-1] * gaps, axis=1)

    n_finite = finite_bp.sum(axis=1)
    reached = (g >= totals[:, None]) & finite_bp
    hit = reached.any(axis=1)
    first = np.argmax(reached, axis=1)
    rows = np.arange(B)

    mu = np.empty(B)
    # Root inside a segment ending at a breakpoint.
    prev = np.maximum(first - 1, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        seg = bp[rows, prev] + (totals - g[rows, prev]) / run_slope[rows, prev]
    mu = np.where(hit & (first > 0), seg, mu)
    mu = np.where(hit & (first == 0), bp[:, 0], mu)
    # Root beyond the last finite breakpoint.
    last = np.maximum(n_finite - 1, 0)
    tail_slope = run_slope[rows, last]
    beyond = ~hit
    # Budget equal to capacity: every finite entry sits at its cap.
    saturated = beyond & ~(tail_slope > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(saturated, bp[rows, last],
                        bp[rows, last] + (totals - g[rows, last]) / tail_slope)
    mu = np.where(beyond, tail, mu)

    # One correction step on the interior set tightens the budget to rounding.
    with np.errstate(invalid="ignore"):
        raw = slope * (mu[:, None] - a)
    x = np.clip(raw, 0.0, caps)
    interior = (raw > 0.0) & (raw < caps)
    s_int = np.where(interior, slope, 0.0).sum(axis=1)
    err = totals - x.sum(axis=1)
    mu = np.where(s_int > 0, mu + err / np.where(s_int > 0, s_int, 1.0), mu)
    return mu


def project_rows(x0, caps, target_mean=1.0, weights=None):
    """Waterfill many rows at once.

    Row ``b`` solves ``y = clamp((mu_b - x0_b * w_b) / w_b, 0, caps_b)`` with
    ``mean(y) = target_mean``, i.e. the projection of ``-x0_b`` onto the
    capped simplex in the norm weighted by ``w_b`` (all ones by default).

    Returns
    -------
    allocation : ndarray, shape (B, n)
    water_level : ndarray, shape (B,)
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    caps = np.broadcast_to(np.asarray(caps, dtype=float), x0.shape)
    B, n = x0.shape
    totals = np.broadcast_to(np.asarray(target_mean, dtype=float) * n, (B,))
    if weights is None:
        slope = np.ones_like(x0)
        a = x0
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=float), x0.shape)
        slope = 1.0 / w
        a = x0 * w
    mu = _solve_levels(a, slope, caps, totals)
    with np.errstate(invalid="ignore"):
        raw = slope * (mu[:, None] - a)
    alloc = np.clip(np.where(np.isfinite(a), raw, 0.0), 0.0, caps)
    return alloc, mu


def water_level(x0, cset: CappedSimplex) -> float:
    """Left-most ``mu`` with ``mean(clamp(mu - x0, 0, caps)) = target_mean``."""
    x0 = _check_vector(x0, cset)
    _, mu = project_rows(x0[None, :], cset.caps[None, :], cset.target_mean)
    return float(mu[0])


def water_level_bisection(x0, cset: CappedSimplex, tol: float = 1e-13) -> float:
    """Water level by bisection on the monotone budget function.

    Slower than :func:`water_level`; kept as an independent cross-check.
    """
    x0 = _check_vector(x0, cset)
    finite = np.isfinite(x0)
    if cset.caps[finite].sum() < cset.budget:
        raise FeasibilityError("capacity over finite entries is below the budget")

    def f(mu):
        return np.clip(mu - x0[finite], 0.0, cset.caps[finite]).sum() - cset.budget

    lo = x0[finite].min()
    hi = x0[finite].max() + cset.budget + 1.0
    while f(hi) < 0:
        hi = lo + 2.0 * (hi - lo)
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return float(hi)


def _check_vector(x0, cset):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != cset.caps.shape:
        raise DomainError(f"vector length {x0.size} does not match set dimension {cset.n}")
    if np.any(np.isnan(x0)) or np.any(x0 == -np.inf):
        raise DomainError("x0 must not contain NaN or -inf")
    return x0


def project_capped_simplex(x0, cset: CappedSimplex) -> WaterfillingResult:
    """Euclidean projection of ``-x0`` onto the capped simplex.

    Parameters
    ----------
    x0 : array_like, shape (n,)
        Any real vector; ``+inf`` entries receive zero allocation.
    cset : CappedSimplex

    Returns
    -------
    WaterfillingResult

    Examples
    --------
    >>> r = project_capped_simplex([0.0, 1.0], CappedSimplex([1.2, 2.0]))
    >>> r.allocation, r.water_level
    (array([1.2, 0.8]), 1.8)
    """
    x0 = _check_vector(x0, cset)
    alloc, mu = project_rows(x0[None, :], cset.caps[None, :], cset.target_mean)
    alloc = alloc[0]
    mu = float(mu[0])
    level = mu - x0
    at_zero = np.flatnonzero(level <= 0.0)
    at_cap = np.flatnonzero((level > 0.0) & (level >= cset.caps))
    interior = np.flatnonzero((level > 0.0) & (level < cset.caps))
    return WaterfillingResult(alloc, mu, at_zero, interior, at_cap)


def project_metric(x0, cset: CappedSimplex, G=None, tol: float = 1e-10,
                   max_iter: int = 100_000) -> np.ndarray:
    """Projection of ``x0`` onto the capped simplex in the ``G``-norm.

    Minimizes ``(x - x0)^T G (x - x0)`` over the set.

    Parameters
    ----------
    x0 : array_like, shape (n,)
    cset : CappedSimplex
    G : None, array_like of shape (n,) or (n, n)
        ``None`` is the identity, a vector is a diagonal metric, and a
        matrix must be symmetric positive definite.
    tol : float
        Target natural KKT residual for the general-matrix solver.

    Raises
    ------
    MatrixError
        If ``G`` is not symmetric positive definite.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != cset.caps.shape or not np.all(np.isfinite(x0)):
        raise DomainError("x0 must be a finite vector matching the set dimension")
    n = cset.n
    if G is None:
        return project_rows(-x0[None, :], cset.caps[None, :], cset.target_mean)[0][0]
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        if G.shape != (n,) or not np.all(G > 0) or not np.all(np.isfinite(G)):
            raise MatrixError("diagonal metric must hold n positive finite weights")
        return project_rows(-x0[None, :], cset.caps[None, :], cset.target_mean, weights=G)[0][0]
    if G.shape != (n, n):
        raise MatrixError(f"metric must be {n}x{n}, got {G.shape}")
    if not np.allclose(G, G.T, rtol=1e-12, atol=0.0):
        raise MatrixError("metric must be symmetric")
    try:
        linalg.cholesky(G, lower=True)
    except linalg.LinAlgError as exc:
        raise MatrixError("metric is not positive definite") from exc
    d = np.diag(G)
    if np.count_nonzero(G - np.diag(d)) == 0:
        return project_rows(-x0[None, :], cset.caps[None, :], cset.target_mean, weights=d)[0][0]
    return _project_dense(x0, cset, G, tol, max_iter)


def _euclid(v, cset):
    return project_rows(-v[None, :], cset.caps[None, :], cset.target_mean)[0][0]


def _kkt_residual(x, x0, cset, G):
    return np.max(np.abs(x - _euclid(x - G @ (x - x0), cset)))


def _polish(x, x0, cset, G, tol):
    """Solve the equality-constrained problem on the guessed free set."""
    caps = cset.caps
    scale = max(1.0, np.max(np.abs(x)))
    lower = x <= 1e-9 * scale
    upper = ~lower & (x >= caps - 1e-9 * scale)
    free = ~(lower | upper)
    nf = int(free.sum())
    if nf == 0:
        return None
    fixed = np.where(upper, caps, 0.0)
    fixed[free] = 0.0
    F = np.flatnonzero(free)
    K = np.zeros((nf + 1, nf + 1))
    K[:nf, :nf] = G[np.ix_(F, F)]
    K[:nf, nf] = -1.0
    K[nf, :nf] = 1.0
    rhs = np.empty(nf + 1)
    rhs[:nf] = (G @ x0)[F] - G[F] @ fixed
    rhs[nf] = cset.budget - fixed.sum()
    try:
        sol = linalg.solve(K, rhs)
    except linalg.LinAlgError:
        return None
    y = fixed.copy()
    y[F] = sol[:nf]
    if np.any(y < 0) or np.any(y > caps):
        return None
    if _kkt_residual(y, x0, cset, G) < tol:
        return y
    return None


def _project_dense(x0, cset, G, tol, max_iter):
    # Projected gradient with Armijo backtracking; the free set guessed
    # from the iterate is periodically polished with an exact KKT solve.
    x = project_rows(-x0[None, :], cset.caps[None, :], cset.target_mean, weights=np.diag(G))[0][0]
    step = 1.0 / np.linalg.eigvalsh(G)[-1]

    def obj(z):
        r = z - x0
        return 0.5 * r @ G @ r

    fx = obj(x)
    for it in range(max_iter):
        grad = G @ (x - x0)
        t = step
        while True:
            y = _euclid(x - t * grad, cset)
            fy = obj(y)
            if fy <= fx + 1e-4 * grad @ (y - x) or t < 1e-12 * step:
                break
            t *= 0.5
        x, fx = y, fy
        if it % 5 == 4:
            y = _polish(x, x0, cset, G, tol)
            if y is not None:
                return y
            if _kkt_residual(x, x0, cset, G) < tol:
                return x
    log.warning("metric projection stopped after %d iterations", max_iter)
    return x


def insr_matrix(s: Scenario, p) -> np.ndarray:
    """Interference-plus-noise to signal ratios of all users, shape (Q, N).

    Entries where the direct gain vanishes are ``+inf``.
    """
    p = np.asarray(p, dtype=float)
    num = s.snr_gap[:, None] * (1.0 + interference(s, p))
    with np.errstate(divide="ignore"):
        out = np.where(s.direct > 0, num / np.where(s.direct > 0, s.direct, 1.0), np.inf)
    return out


def insr_vector(s: Scenario, q: int, p) -> np.ndarray:
    """Interference-plus-noise to signal ratio seen by user ``q``.

    ``p`` is a full ``(Q, N)`` profile; row ``q`` is ignored.
    """
    p = np.asarray(p, dtype=float)
    mui = np.einsum("rk,rk->k", s.cross[:, q, :], p)
    d = s.direct[q]
    with np.errstate(divide="ignore"):
        return np.where(d > 0, s.snr_gap[q] * (1.0 + mui) / np.where(d > 0, d, 1.0), np.inf)


def waterfill_response(s: Scenario, q: int, p) -> np.ndarray:
    """Best response of user ``q`` to the other users' powers in ``p``."""
    x0 = insr_vector(s, q, p)
    return project_rows(x0[None, :], s.mask[q][None, :])[0][0]


def waterfill_all(s: Scenario, p) -> np.ndarray:
    """Simultaneous best responses of all users to ``p``, shape (Q, N)."""
    return project_rows(insr_matrix(s, p), s.mask)[0]
