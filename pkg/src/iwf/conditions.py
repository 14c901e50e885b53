"""Interference matrices and sufficient conditions for convergence.

Every check returns a :class:`ConditionRecord` whose ``margin`` is positive
exactly when the condition holds.  The checks are:

``spectral_radius``
    spectral radius of the worst-case interference matrix below 1.
``weighted_row`` / ``weighted_col``
    weighted maximum row (column) sum of that matrix below 1.
``pairwise_q1`` / ``pairwise_2q3``
    every worst-case ratio below ``1/(Q-1)`` (``1/(2Q-3)``).
``flat_fading``
    row sums below 1 on frequency-flat channels.
``gauss_seidel``
    spectral radius of the Gauss-Seidel splitting matrix below 1.
``per_carrier_norm``
    spectral norm of every per-carrier interference matrix below a
    smoothing-dependent threshold.
``igpa_step``
    existence of a contracting step size for gradient projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from .errors import DomainError
from .model import Scenario
from .projection import project_rows

__all__ = [
    "HmaxMatrix",
    "ConditionRecord",
    "ConditionReport",
    "carrier_ratios",
    "build_hmax",
    "spectral_radius",
    "perron_vector",
    "optimal_weights",
    "weighted_norm",
    "estimate_usable_carriers",
    "check_spectral_radius",
    "check_weighted",
    "check_pairwise",
    "check_flat_fading",
    "check_gauss_seidel",
    "check_per_carrier_norm",
    "check_igpa_stepsize",
    "check_all",
    "CONDITION_NAMES",
]

log = logging.getLogger(__name__)

CONDITION_NAMES = (
    "spectral_radius",
    "weighted_row",
    "weighted_col",
    "pairwise_q1",
    "pairwise_2q3",
    "flat_fading",
    "gauss_seidel",
    "per_carrier_norm",
    "igpa_step",
)

PERRON_EPS = 1e-12


@dataclass(frozen=True)
class HmaxMatrix:
    """Worst-case normalized interference matrix.

    ``entries[q, r]`` is ``snr_gap[q]`` times the largest cross-to-direct gain
    ratio from transmitter ``r`` to receiver ``q`` over the carriers both
    users may load.
    """

    entries: np.ndarray
    carrier_sets: np.ndarray


@dataclass
class ConditionRecord:
    name: str
    satisfied: bool
    margin: float
    witness: dict = field(default_factory=dict)
    weights: np.ndarray | None = None
    applicable: bool = True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "satisfied": bool(self.satisfied),
            "margin": self.margin,
            "applicable": self.applicable,
            "weights": None if self.weights is None else self.weights.tolist(),
            "witness": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                        for k, v in self.witness.items()},
        }


@dataclass
class ConditionReport:
    records: list

    def __getitem__(self, name: str) -> ConditionRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"conditions": [r.to_dict() for r in self.records]}


def _record(name, margin, **kw) -> ConditionRecord:
    margin = float(margin)
    return ConditionRecord(name, bool(margin > 0), margin, **kw)


def carrier_ratios(s: Scenario) -> np.ndarray:
    """``ratio[q, r, k] = snr_gap[q] |H_rq(k)|^2 / |H_qq(k)|^2`` with zero diagonal.

    Carriers with zero direct gain give ``+inf`` for every ``r != q``.
    """
    Q = s.num_users
    d = s.direct
    cross = np.transpose(s.cross, (1, 0, 2))  # [q, r, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = s.snr_gap[:, None, None] * cross / d[:, None, :]
    ratio = np.where(d[:, None, :] > 0, ratio, np.inf)
    ratio[np.arange(Q), np.arange(Q), :] = 0.0
    return ratio


def _sets(s: Scenario, carrier_sets, full_sets=False):
    if full_sets:
        return np.ones((s.num_users, s.num_carriers), dtype=bool)
    if carrier_sets is None:
        return np.asarray(s.usable_carriers, dtype=bool)
    sets = np.asarray(carrier_sets, dtype=bool)
    if sets.shape != (s.num_users, s.num_carriers):
        raise DomainError("carrier sets must have shape (Q, N)")
    return sets


def build_hmax(s: Scenario, carrier_sets=None, full_sets: bool = False) -> HmaxMatrix:
    """Worst-case interference matrix over the given carrier sets.

    Parameters
    ----------
    s : Scenario
    carrier_sets : array_like of bool, shape (Q, N), optional
        Defaults to ``s.usable_carriers``.
    full_sets : bool
        Use every carrier for every user.
    """
    sets = _sets(s, carrier_sets, full_sets)
    ratio = carrier_ratios(s)
    shared = sets[:, None, :] & sets[None, :, :]
    H = np.where(shared, ratio, 0.0).max(axis=2)
    np.fill_diagonal(H, 0.0)
    H.setflags(write=False)
    return HmaxMatrix(H, sets)


def _check_square_nonneg(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {M.shape}")
    if np.any(np.isnan(M)) or np.any(M < 0):
        raise DomainError("matrix must be elementwise nonnegative")
    return M


def perron_vector(M, tol: float = 1e-13, max_iter: int = 100_000):
    """Perron root and positive eigenvector of an irreducible nonnegative matrix.

    Shifted power iteration stops when the Collatz-Wielandt bounds
    ``min_i (Mx)_i / x_i <= rho <= max_i (Mx)_i / x_i`` agree to ``tol``
    relative.  Falls back to a dense eigensolver if the cap is hit.

    Returns
    -------
    rho : float
    x : ndarray
        Eigenvector normalized to unit maximum.
    """
    M = _check_square_nonneg(M)
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0]), np.ones(1)
    shift = M.sum() / n
    if shift == 0.0:
        return 0.0, np.ones(n)
    A = M + shift * np.eye(n)
    x = np.ones(n)
    for _ in range(max_iter):
        y = A @ x
        q = y / x
        lo, hi = q.min(), q.max()
        x = y / y.max()
        if hi - lo <= tol * hi:
            rho = max(0.5 * (lo + hi) - shift, 0.0)
            return float(rho), x
    log.debug("power iteration hit its cap; using a dense eigensolver")
    vals, vecs = np.linalg.eig(M)
    i = int(np.argmax(vals.real))
    v = np.abs(vecs[:, i].real)
    return float(max(vals[i].real, 0.0)), v / v.max()


def spectral_radius(M) -> float:
    """Spectral radius of a nonnegative square matrix.

    The matrix is split into strongly connected components; the radius is
    the largest Perron root over the irreducible diagonal blocks.  Any
    infinite entry gives ``inf``.
    """
    M = _check_square_nonneg(M)
    if np.any(np.isinf(M)):
        return float("inf")
    n = M.shape[0]
    ncomp, labels = connected_components(M > 0, directed=True, connection="strong")
    rho = 0.0
    for c in range(ncomp):
        idx = np.flatnonzero(labels == c)
        if idx.size == 1:
            rho = max(rho, M[idx[0], idx[0]])
        else:
            rho = max(rho, perron_vector(M[np.ix_(idx, idx)])[0])
    return float(rho)


def optimal_weights(H) -> np.ndarray:
    """Positive weights minimizing the weighted maximum row sum of ``H``.

    Returns the Perron vector of ``H + eps (ones - I)`` with ``eps = 1e-12``,
    normalized to unit maximum.  For irreducible ``H`` the achieved weighted
    norm equals the spectral radius up to ``O(eps)``.
    """
    H = np.asarray(H.entries if isinstance(H, HmaxMatrix) else H, dtype=float)
    H = _check_square_nonneg(H)
    n = H.shape[0]
    if np.any(np.isinf(H)):
        return np.ones(n)
    P = H + PERRON_EPS * (np.ones((n, n)) - np.eye(n))
    return perron_vector(P)[1]


def weighted_norm(H, w) -> float:
    """``max_q (1/w_q) sum_r H[q, r] w_r``."""
    H = np.asarray(H, dtype=float)
    w = np.asarray(w, dtype=float)
    with np.errstate(invalid="ignore"):
        return float(np.max(H @ w / w))


def estimate_usable_carriers(s: Scenario, max_passes: int | None = None) -> np.ndarray:
    """Conservative superset of the carriers each user can ever load.

    Starting from the carriers with nonzero direct gain, carrier ``k`` is
    dropped from user ``q``'s set when even the most favorable interference
    (none on ``k``, the largest possible elsewhere) leaves it unloaded by
    waterfilling.  The largest possible interference from user ``r`` on
    carrier ``j`` is ``min(mask_r(j), N)`` when ``j`` is in ``r``'s current
    set and 0 otherwise.  Passes repeat until no set changes.

    Returns
    -------
    ndarray of bool, shape (Q, N)
    """
    Q, N = s.num_users, s.num_carriers
    sets = np.asarray(s.usable_carriers, dtype=bool) & (s.direct > 0)
    pmax_hi = np.minimum(s.mask, float(N))
    gap = s.snr_gap[:, None]
    with np.errstate(divide="ignore"):
        insr_lo = np.where(s.direct > 0, gap / np.where(s.direct > 0, s.direct, 1.0), np.inf)
    eye = np.eye(N, dtype=bool)
    caps = np.repeat(s.mask, N, axis=0)
    max_passes = max_passes or Q * N + 1
    for _ in range(max_passes):
        p_hi = np.where(sets, pmax_hi, 0.0)
        mui = np.einsum("rqk,rk->qk", s.cross, p_hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            insr_hi = np.where(s.direct > 0, gap * (1.0 + mui) / s.direct, np.inf)
        # Row q*N + k: user q's insr with carrier k interference-free.
        rows = np.where(eye[None, :, :], insr_lo[:, :, None], insr_hi[:, None, :])
        rows = rows.reshape(Q * N, N)
        alloc, _ = project_rows(rows, caps)
        loaded = alloc.reshape(Q, N, N)[:, np.arange(N), np.arange(N)] > 0
        new = sets & loaded
        if np.array_equal(new, sets):
            break
        sets = new
    return sets


def _default_sets(s, carrier_sets, full_sets):
    if full_sets:
        return np.ones((s.num_users, s.num_carriers), dtype=bool)
    if carrier_sets is not None:
        return _sets(s, carrier_sets)
    return estimate_usable_carriers(s)


def check_spectral_radius(s: Scenario, carrier_sets=None, full_sets: bool = False) -> ConditionRecord:
    """Spectral radius of the worst-case interference matrix below 1.

    Uses :func:`estimate_usable_carriers` unless sets are supplied or
    ``full_sets`` is set.
    """
    hm = build_hmax(s, _default_sets(s, carrier_sets, full_sets))
    rho = spectral_radius(hm.entries)
    return _record("spectral_radius", 1.0 - rho, witness={"rho": rho, "hmax": hm.entries})


def check_weighted(s: Scenario, w=None, direction: str = "row", carrier_sets=None,
                   full_sets: bool = False) -> ConditionRecord:
    """Weighted maximum row or column sum of the interference matrix below 1.

    Parameters
    ----------
    w : array_like of shape (Q,), optional
        Positive weights; defaults to the optimal (Perron) weights.
    direction : {"row", "col"}
    """
    if direction not in ("row", "col"):
        raise DomainError(f"direction must be 'row' or 'col', got {direction!r}")
    hm = build_hmax(s, _default_sets(s, carrier_sets, full_sets))
    H = hm.entries if direction == "row" else hm.entries.T
    if w is None:
        w = optimal_weights(H)
    w = np.asarray(w, dtype=float)
    if w.shape != (s.num_users,) or not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be a positive finite vector with one entry per user")
    with np.errstate(invalid="ignore"):
        per_user = H @ w / w
    per_user = np.where(np.isnan(per_user), np.inf, per_user)
    return _record(f"weighted_{direction}", 1.0 - per_user.max(),
                   witness={"per_user": per_user}, weights=w)


def check_pairwise(s: Scenario, which: str = "q1") -> ConditionRecord:
    """Every full-set worst-case ratio below ``1/(Q-1)`` or ``1/(2Q-3)``.

    Parameters
    ----------
    which : {"q1", "2q3"}
    """
    Q = s.num_users
    if which == "q1":
        factor = Q - 1
    elif which == "2q3":
        factor = 2 * Q - 3
    else:
        raise DomainError(f"unknown pairwise variant {which!r}")
    H = build_hmax(s, full_sets=True).entries
    if Q == 1:
        return _record(f"pairwise_{which}", 1.0, witness={"pair_margins": np.ones((1, 1))})
    off = ~np.eye(Q, dtype=bool)
    pair = np.where(off, 1.0 / factor - H, np.inf)
    return _record(f"pairwise_{which}", 1.0 - factor * H[off].max(),
                   witness={"pair_margins": pair})


def is_flat(s: Scenario) -> bool:
    g = s.gain_sq
    return bool(np.allclose(g, g[:, :, :1], rtol=1e-12, atol=0.0))


def check_flat_fading(s: Scenario) -> ConditionRecord:
    """Row sums of the interference matrix below 1, for flat channels only."""
    if not is_flat(s):
        return ConditionRecord("flat_fading", False, float("nan"), applicable=False)
    H = carrier_ratios(s)[:, :, 0]
    per_user = H.sum(axis=1)
    return _record("flat_fading", 1.0 - per_user.max(), witness={"per_user": per_user})


def gauss_seidel_matrix(H) -> np.ndarray:
    """``(I - L)^{-1} U`` for the strictly lower/upper triangular parts of ``H``."""
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    L = np.tril(H, -1)
    U = np.triu(H, 1)
    return linalg.solve_triangular(np.eye(n) - L, U, lower=True, unit_diagonal=True)


def check_gauss_seidel(s: Scenario) -> ConditionRecord:
    """Spectral radius of the Gauss-Seidel splitting matrix below 1 (full sets)."""
    H = build_hmax(s, full_sets=True).entries
    if np.any(np.isinf(H)):
        return _record("gauss_seidel", -np.inf, witness={"rho": np.inf})
    M = np.clip(gauss_seidel_matrix(H), 0.0, None)
    rho = spectral_radius(M)
    return _record("gauss_seidel", 1.0 - rho, witness={"rho": rho, "matrix": M})


def per_carrier_matrices(s: Scenario, carrier_sets) -> np.ndarray:
    """Stack of per-carrier interference matrices, shape (N, Q, Q)."""
    ratio = carrier_ratios(s)
    shared = carrier_sets[:, None, :] & carrier_sets[None, :, :]
    off = ~np.eye(s.num_users, dtype=bool)
    Hk = np.where(shared & off[:, :, None], ratio, 0.0)
    return np.transpose(Hk, (2, 0, 1))


def check_per_carrier_norm(s: Scenario, alphas=0.0, carrier_sets=None,
                           full_sets: bool = False) -> ConditionRecord:
    """Spectral norm of every per-carrier interference matrix below threshold.

    The threshold is ``(1 - max alpha) / (1 - min alpha)``, which is 1
    without smoothing.
    """
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (s.num_users,))
    eps = (1.0 - alphas.max()) / (1.0 - alphas.min())
    Hk = per_carrier_matrices(s, _default_sets(s, carrier_sets, full_sets))
    norms = np.empty(s.num_carriers)
    bad = np.isinf(Hk).any(axis=(1, 2))
    norms[bad] = np.inf
    if np.any(~bad):
        norms[~bad] = np.linalg.svd(Hk[~bad], compute_uv=False)[:, 0]
    return _record("per_carrier_norm", 1.0 - norms.max() / eps,
                   witness={"norms": norms, "threshold": eps})


def curvature_bounds(s: Scenario):
    """Extremes of the own-power curvature of each user's rate over the feasible set.

    Returns
    -------
    d_min, d_max : ndarray, shape (Q,)
        Smallest and largest diagonal entry of ``-Hessian_q R_q`` over all
        feasible profiles, bounded carrier by carrier.
    """
    N = s.num_carriers
    gap = s.snr_gap[:, None]
    d = s.direct
    p_hi = np.minimum(s.mask, float(N))
    i_max = np.einsum("rqk,rk->qk", s.cross, p_hi)
    d_max = (d ** 2 / gap ** 2).max(axis=1) / N
    den = gap * (1.0 + i_max) + d * p_hi
    d_min = (d ** 2 / den ** 2).min(axis=1) / N
    return d_min, d_max


def check_igpa_stepsize(s: Scenario) -> ConditionRecord:
    """Existence of a contracting step for simultaneous/sequential gradient projection.

    Holds when, for every user, the sum of worst-case interference ratios is
    below the ratio of smallest to largest own-power curvature.  The witness
    carries a certified step ``beta`` and contraction factor ``delta``.
    """
    H = build_hmax(s, full_sets=True).entries
    S = H.sum(axis=1)
    d_min, d_max = curvature_bounds(s)
    eps = d_min / d_max
    beta = 1.0 / d_max.max()
    delta = float(np.max(1.0 - beta * (d_min - d_max * S)))
    return _record("igpa_step", np.min(eps - S),
                   witness={"interference_sum": S, "epsilon": eps, "beta": float(beta),
                            "delta": delta})


def check_all(s: Scenario, full_sets: bool = False, alphas=0.0) -> ConditionReport:
    """Evaluate every condition; the estimated carrier sets are computed once."""
    sets = _default_sets(s, None, full_sets)
    records = [
        check_spectral_radius(s, sets),
        check_weighted(s, None, "row", sets),
        check_weighted(s, None, "col", sets),
        check_pairwise(s, "q1"),
        check_pairwise(s, "2q3"),
        check_flat_fading(s),
        check_gauss_seidel(s),
        check_per_carrier_norm(s, alphas, sets),
        check_igpa_stepsize(s),
    ]
    return ConditionReport(records)
