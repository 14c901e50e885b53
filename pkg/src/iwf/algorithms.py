"""Best-response dynamics for the power-control game.

One engine covers iterative waterfilling (optionally smoothed) and
iterative gradient projection, each under a sequential (Gauss-Seidel) or
simultaneous (Jacobi) update schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import Scenario, interference, rates
from .projection import CappedSimplex, insr_matrix, project_metric, project_rows, waterfill_all

__all__ = [
    "AlgorithmConfig",
    "TraceRecord",
    "RunTrace",
    "ALGORITHMS",
    "run",
    "rate_gradient",
    "rate_gradients",
    "ne_residual",
    "initial_profile",
    "default_step_size",
]

log = logging.getLogger(__name__)

WATERFILLING = "waterfilling"
GRADIENT = "gradient"
SEQUENTIAL = "sequential"
SIMULTANEOUS = "simultaneous"

# Short names used by the command line.
ALGORITHMS = {
    "seq-iwfa": (WATERFILLING, SEQUENTIAL),
    "sim-iwfa": (WATERFILLING, SIMULTANEOUS),
    "seq-igpa": (GRADIENT, SEQUENTIAL),
    "sim-igpa": (GRADIENT, SIMULTANEOUS),
}

DEFAULT_MAX_SWEEPS = 10_000
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class AlgorithmConfig:
    """Settings of one equilibrium-seeking run.

    Parameters
    ----------
    family : {"waterfilling", "gradient"}
    schedule : {"sequential", "simultaneous"}
    alpha : float or sequence of float
        Smoothing factors in ``[0, 1)`` (waterfilling family).
    beta : float or {"auto", "safe"}
        Step size of the gradient family.  ``"auto"`` scales the step to the
        local curvature at the initial point; ``"safe"`` uses the certified
        step from :func:`iwf.conditions.check_igpa_stepsize`.
    metric : None, or sequence of (None | 1-D weights | 2-D matrix)
        Per-user metric of the gradient projection; ``None`` is the identity.
    max_iters : int, optional
        Cap on update events.  Defaults to 10 000 sweeps.
    tol : float
        Stopping tolerance on both the per-sweep change and the NE residual.
    update_order : sequence of int, optional
        Permutation of users for the sequential schedule.
    record_profiles : bool
        Keep a copy of the profile after every update.
    """

    family: str = WATERFILLING
    schedule: str = SEQUENTIAL
    alpha: float | tuple = 0.0
    beta: float | str = "auto"
    metric: tuple | None = None
    max_iters: int | None = None
    tol: float = 1e-8
    update_order: tuple | None = None
    record_profiles: bool = True

    def __post_init__(self):
        if self.family not in (WATERFILLING, GRADIENT):
            raise DomainError(f"unknown family {self.family!r}")
        if self.schedule not in (SEQUENTIAL, SIMULTANEOUS):
            raise DomainError(f"unknown schedule {self.schedule!r}")
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if np.any(alpha < 0) or np.any(alpha >= 1):
            raise DomainError("smoothing factors must lie in [0, 1)")
        if isinstance(self.beta, str):
            if self.beta not in ("auto", "safe"):
                raise DomainError(f"unknown step-size rule {self.beta!r}")
        elif not self.beta > 0:
            raise DomainError("step size must be positive")
        if not self.tol > 0:
            raise DomainError("tolerance must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise DomainError("max_iters must be positive")

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "AlgorithmConfig":
        """Build a config from a short name such as ``"seq-iwfa"``."""
        try:
            family, schedule = ALGORITHMS[name]
        except KeyError:
            raise DomainError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}") from None
        return cls(family=family, schedule=schedule, **kwargs)

    @property
    def name(self) -> str:
        prefix = "seq" if self.schedule == SEQUENTIAL else "sim"
        suffix = "iwfa" if self.family == WATERFILLING else "igpa"
        return f"{prefix}-{suffix}"


@dataclass
class TraceRecord:
    iteration: int
    sweep: float
    user: str
    rates: np.ndarray
    residual: float
    delta: float
    profile: np.ndarray | None = None


@dataclass
class RunTrace:
    """Per-iteration history of a run.

    ``records[0]`` describes the initial profile.  ``status`` is one of
    ``"converged"``, ``"max-iters"`` or ``"diverged"``.
    """

    records: list = field(default_factory=list)
    status: str = "max-iters"
    final_profile: np.ndarray | None = None
    num_users: int = 0
    users_per_sweep: int = 1
    beta: float | None = None

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([r.delta for r in self.records])

    @property
    def rates(self) -> np.ndarray:
        return np.array([r.rates for r in self.records])

    @property
    def profiles(self) -> list:
        return [r.profile for r in self.records]

    @property
    def num_iterations(self) -> int:
        return self.records[-1].iteration

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual

    def iterations_to(self, eps: float) -> int | None:
        """First iteration index whose NE residual is at most ``eps``."""
        for r in self.records:
            if r.residual <= eps:
                return r.iteration
        return None

    def csv_rows(self, scale: float = 1.0):
        """Rows for the ``iter,sweep,user,rate_1..rate_Q,residual,delta`` layout."""
        for r in self.records:
            yield [r.iteration, r.sweep, r.user, *(r.rates * scale), r.residual, r.delta]

    def csv_header(self) -> list:
        return ["iter", "sweep", "user", *(f"rate_{q + 1}" for q in range(self.num_users)),
                "residual", "delta"]


def rate_gradients(s: Scenario, p) -> np.ndarray:
    """Gradients of every user's rate with respect to its own powers, shape (Q, N).

    Carriers with zero direct gain get a zero component.
    """
    p = np.asarray(p, dtype=float)
    d = s.direct
    denom = s.snr_gap[:, None] * (1.0 + interference(s, p)) + d * p
    return d / denom / s.num_carriers


def rate_gradient(s: Scenario, p, q: int) -> np.ndarray:
    """Gradient of user ``q``'s rate with respect to its own powers."""
    p = np.asarray(p, dtype=float)
    mui = np.einsum("rk,rk->k", s.cross[:, q, :], p)
    d = s.direct[q]
    return d / (s.snr_gap[q] * (1.0 + mui) + d * p[q]) / s.num_carriers


def ne_residual(s: Scenario, p) -> float:
    """``max_q ||p_q - WF_q(p_{-q})||_inf``; zero exactly at a Nash equilibrium."""
    p = np.asarray(p, dtype=float)
    return float(np.max(np.abs(p - waterfill_all(s, p))))


def initial_profile(s: Scenario) -> np.ndarray:
    """Uniform allocation, projected onto the masks where they bind."""
    ones = np.ones((s.num_users, s.num_carriers))
    return project_rows(-ones, s.mask)[0]


def default_step_size(s: Scenario, p0) -> float:
    """Step size matched to the own-power curvature of the rates at ``p0``.

    Near an equilibrium the interior carriers of user ``q`` satisfy
    ``insr + p = mu_q`` (the water level), so the gradient step
    ``N * mu_q**2`` cancels the own-curvature exactly.  Taking the minimum
    over users keeps every user's own-curvature factor in ``[0, 1)``.
    """
    mu = project_rows(insr_matrix(s, p0), s.mask)[1]
    return float(s.num_carriers * np.min(mu) ** 2)


def _resolve(s: Scenario, p0, cfg: AlgorithmConfig):
    Q, N = s.num_users, s.num_carriers
    alpha = np.broadcast_to(np.atleast_1d(np.asarray(cfg.alpha, dtype=float)), (Q,)).copy()
    order = np.arange(Q) if cfg.update_order is None else np.asarray(cfg.update_order, dtype=int)
    if sorted(order.tolist()) != list(range(Q)):
        raise DomainError("update_order must be a permutation of the users")
    beta = None
    metric = [None] * Q
    if cfg.family == GRADIENT:
        if cfg.beta == "auto":
            beta = default_step_size(s, p0)
        elif cfg.beta == "safe":
            from .conditions import check_igpa_stepsize
            beta = check_igpa_stepsize(s).witness["beta"]
        else:
            beta = float(cfg.beta)
        if cfg.metric is not None:
            metric = list(cfg.metric)
            if len(metric) != Q:
                raise DomainError("metric needs one entry per user")
    return alpha, order, beta, metric


def _gradient_update(s, p, users, beta, metric):
    """Gradient-projection responses of ``users`` to profile ``p``."""
    grad = rate_gradients(s, p)
    out = {}
    plain = [q for q in users if metric[q] is None or np.ndim(metric[q]) == 1]
    if plain:
        idx = np.array(plain)
        w = np.array([np.ones(s.num_carriers) if metric[q] is None else np.asarray(metric[q], float)
                      for q in plain])
        with np.errstate(over="ignore"):
            target = p[idx] + beta * grad[idx] / w
        ok = np.all(np.isfinite(target), axis=1)
        alloc = np.full(target.shape, np.nan)
        if ok.any():
            alloc[ok] = project_rows(-target[ok], s.mask[idx][ok], weights=w[ok])[0]
        for i, q in enumerate(plain):
            out[q] = alloc[i]
    for q in users:
        if q in out:
            continue
        G = np.asarray(metric[q], dtype=float)
        with np.errstate(over="ignore"):
            target = p[q] + beta * np.linalg.solve(G, grad[q])
        if not np.all(np.isfinite(target)):
            out[q] = np.full(s.num_carriers, np.nan)
            continue
        out[q] = project_metric(target, CappedSimplex(s.mask[q]), G)
    return out


def _waterfill_update(s, p, users):
    idx = np.array(users)
    insr = insr_matrix(s, p)[idx]
    alloc = project_rows(insr, s.mask[idx])[0]
    return {q: alloc[i] for i, q in enumerate(users)}


def run(s: Scenario, p0=None, cfg: AlgorithmConfig | None = None) -> RunTrace:
    """Iterate best responses until convergence, the iteration cap, or divergence.

    Parameters
    ----------
    s : Scenario
    p0 : array_like of shape (Q, N), optional
        Starting profile; projected onto the feasible set if needed.
        Defaults to :func:`initial_profile`.
    cfg : AlgorithmConfig, optional
        Defaults to unsmoothed sequential waterfilling.

    Returns
    -------
    RunTrace
        One record per update event plus the initial state.  With the
        sequential schedule each event updates one user; with the
        simultaneous schedule each event updates all users.
    """
    cfg = cfg or AlgorithmConfig()
    Q = s.num_users
    if p0 is None:
        p = initial_profile(s)
    else:
        p = np.array(p0, dtype=float)
        if p.shape != (Q, s.num_carriers):
            raise DomainError(f"initial profile must have shape {(Q, s.num_carriers)}")
        p = project_rows(-p, s.mask)[0]
    alpha, order, beta, metric = _resolve(s, p, cfg)

    sequential = cfg.schedule == SEQUENTIAL
    per_sweep = Q if sequential else 1
    max_iters = cfg.max_iters if cfg.max_iters is not None else DEFAULT_MAX_SWEEPS * per_sweep

    def snapshot():
        return p.copy() if cfg.record_profiles else None

    trace = RunTrace(num_users=Q, users_per_sweep=per_sweep, beta=beta)
    res = ne_residual(s, p)
    trace.records.append(TraceRecord(0, 0.0, "init", rates(s, p), res, 0.0, snapshot()))
    sweep_start = p.copy()

    for n in range(1, max_iters + 1):
        users = [int(order[(n - 1) % Q])] if sequential else list(range(Q))
        if cfg.family == WATERFILLING:
            new = _waterfill_update(s, p, users)
        else:
            new = _gradient_update(s, p, users, beta, metric)
        prev = p.copy()
        for q, resp in new.items():
            p[q] = alpha[q] * p[q] + (1.0 - alpha[q]) * resp if alpha[q] else resp
        delta = float(np.max(np.abs(p - prev)))
        if not np.all(np.isfinite(p)):
            trace.records.append(TraceRecord(n, n / per_sweep, _label(users, sequential),
                                             np.full(Q, np.nan), np.inf, np.inf, snapshot()))
            trace.status = "diverged"
            log.warning("%s: non-finite iterate at iteration %d", cfg.name, n)
            break
        res = ne_residual(s, p)
        trace.records.append(TraceRecord(n, n / per_sweep, _label(users, sequential),
                                         rates(s, p), res, delta, snapshot()))
        if res > DIVERGENCE_LIMIT:
            trace.status = "diverged"
            log.warning("%s: residual %.3g exceeds divergence limit at iteration %d", cfg.name, res, n)
            break
        if n % per_sweep == 0:
            sweep_delta = float(np.max(np.abs(p - sweep_start)))
            sweep_start = p.copy()
            if sweep_delta < cfg.tol and res < cfg.tol:
                trace.status = "converged"
                break
    trace.final_profile = p
    log.info("%s: %s after %d iterations, residual %.3g", cfg.name, trace.status,
             trace.num_iterations, trace.final_residual)
    return trace


def _label(users, sequential):
    return str(users[0] + 1) if sequential else "all"
