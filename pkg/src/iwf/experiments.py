"""Random frequency-selective scenarios and the two headline experiments.

* :func:`condition_probability_sweep` estimates, by Monte Carlo, how often
  each convergence condition holds as the cross-link distance grows.
* :func:`rate_trace_experiment` runs several algorithms from the same start
  on the same scenario and collects aligned rate traces.

Random numbers come from Philox streams keyed by ``(seed, trial)``.  The
same channel draw is reused across the distance grid, so each trial's
outcome is a monotone function of the distance ratio and results do not
depend on how trials are scheduled over workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .algorithms import initial_profile, run
from .conditions import (
    check_gauss_seidel,
    check_pairwise,
    check_per_carrier_norm,
    check_spectral_radius,
    estimate_usable_carriers,
)
from .errors import DomainError
from .model import PhysicalScenario, Scenario, normalize

__all__ = [
    "TopologyParams",
    "MonteCarloCurve",
    "TraceBundle",
    "make_rng",
    "random_scenario",
    "condition_probability_sweep",
    "rate_trace_experiment",
    "SWEEP_CONDITIONS",
]

log = logging.getLogger(__name__)

SWEEP_CONDITIONS = ("spectral_radius", "gauss_seidel", "pairwise_q1", "pairwise_2q3",
                    "per_carrier_norm")


def _default_ratios():
    return tuple(np.round(np.geomspace(1.0, 100.0, 41), 6).tolist())


@dataclass(frozen=True)
class TopologyParams:
    """Parameters of the random multi-cell topology.

    Parameters
    ----------
    num_users, num_carriers, num_taps : int
        ``Q``, ``N`` and the channel impulse-response length ``L <= N``.
    path_loss_exponent : float
    ratios : tuple of float
        Grid of cross-to-direct distance ratios.
    direct_snr_db : float
        ``P_q / sigma_q^2`` on the direct links.
    cross_snr_db : float
        Cross-link budget ``P_r / (sigma_q^2 d_rq^gamma)`` at ratio 1.
    snr_gap : float
    trials : int
        Monte Carlo trials per grid point.
    seed : int
    mask : float or None
        Per-carrier mask as a multiple of the power budget; ``None`` leaves
        carriers uncapped.
    tap_variance : float
        Variance of each complex Gaussian tap.
    """

    num_users: int = 5
    num_carriers: int = 64
    num_taps: int = 6
    path_loss_exponent: float = 2.5
    ratios: tuple = field(default_factory=_default_ratios)
    direct_snr_db: float = 7.0
    cross_snr_db: float = 3.0
    snr_gap: float = 1.0
    trials: int = 200
    seed: int = 0
    mask: float | None = 2.0
    tap_variance: float = 1.0

    def __post_init__(self):
        if self.num_users < 1 or self.num_carriers < 1 or self.num_taps < 1:
            raise DomainError("num_users, num_carriers and num_taps must be positive")
        if self.num_taps > self.num_carriers:
            raise DomainError("num_taps must not exceed num_carriers")
        ratios = tuple(float(r) for r in self.ratios)
        if not ratios or any(not r > 0 for r in ratios):
            raise DomainError("distance ratio grid must be nonempty and positive")
        object.__setattr__(self, "ratios", ratios)
        if self.trials < 1:
            raise DomainError("trials must be positive")
        if self.mask is not None and not self.mask > 1:
            raise DomainError("mask must exceed 1 (the average power budget)")
        if not self.tap_variance > 0:
            raise DomainError("tap_variance must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TopologyParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown topology parameters: {sorted(unknown)}")
        d = dict(d)
        if "ratios" in d:
            d["ratios"] = tuple(d["ratios"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {f: (list(getattr(self, f)) if f == "ratios" else getattr(self, f))
                for f in self.__dataclass_fields__}


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def _channel_power(tp: TopologyParams, rng: np.random.Generator) -> np.ndarray:
    Q, N, L = tp.num_users, tp.num_carriers, tp.num_taps
    std = np.sqrt(tp.tap_variance / 2.0)
    taps = std * (rng.standard_normal((Q, Q, L)) + 1j * rng.standard_normal((Q, Q, L)))
    return np.abs(np.fft.fft(taps, n=N, axis=2)) ** 2


def random_scenario(tp: TopologyParams, ratio: float, seed: int | None = None,
                    trial: int = 0) -> Scenario:
    """Draw a random scenario at the given cross-to-direct distance ratio.

    Parameters
    ----------
    tp : TopologyParams
    ratio : float
        ``d_rq / d_qq`` for every ``r != q``.
    seed : int, optional
        Defaults to ``tp.seed``.
    trial : int
        Substream index; the channel draw depends only on ``(seed, trial)``.
    """
    if not ratio > 0:
        raise DomainError("distance ratio must be positive")
    Q, N = tp.num_users, tp.num_carriers
    rng = make_rng(tp.seed if seed is None else seed, trial)
    gains = _channel_power(tp, rng)
    # Anchor the cross budget at ratio 1 by rescaling the raw cross gains.
    off = ~np.eye(Q, dtype=bool)
    gains[off] *= 10.0 ** ((tp.cross_snr_db - tp.direct_snr_db) / 10.0)
    power = 10.0 ** (tp.direct_snr_db / 10.0)
    dist = np.where(off, ratio, 1.0)
    mask = np.full((Q, N), np.inf if tp.mask is None else tp.mask * power)
    phys = PhysicalScenario(
        raw_gains=gains,
        tx_power=np.full(Q, power),
        noise_var=np.ones(Q),
        distances=dist,
        path_loss_exponent=tp.path_loss_exponent,
        mask_watts=mask,
    )
    s = normalize(phys)
    if tp.snr_gap != 1.0:
        s = replace(s, snr_gap=np.full(Q, tp.snr_gap))
    return s


@dataclass
class MonteCarloCurve:
    """Satisfaction counts of each condition on a grid of distance ratios."""

    ratios: np.ndarray
    conditions: tuple
    counts: np.ndarray  # (conditions, ratios)
    trials: int

    @property
    def probability(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def ci_halfwidth(self) -> np.ndarray:
        p = self.probability
        return 1.96 * np.sqrt(p * (1.0 - p) / self.trials)

    def curve(self, name: str) -> np.ndarray:
        return self.probability[self.conditions.index(name)]

    def threshold(self, name: str, level: float = 0.99) -> float:
        """Smallest grid ratio whose probability reaches ``level`` (``inf`` if none)."""
        hit = np.flatnonzero(self.curve(name) >= level)
        return float(self.ratios[hit[0]]) if hit.size else float("inf")

    def rows(self):
        """Rows for the ``ratio,condition,probability,trials,ci_halfwidth`` layout."""
        prob, hw = self.probability, self.ci_halfwidth
        for j, ratio in enumerate(self.ratios):
            for i, name in enumerate(self.conditions):
                yield [ratio, name, prob[i, j], self.trials, hw[i, j]]


def _trial_outcomes(tp: TopologyParams, trial: int) -> np.ndarray:
    """Boolean outcomes of :data:`SWEEP_CONDITIONS` at every ratio for one trial."""
    base = random_scenario(tp, 1.0, trial=trial)
    out = np.zeros((len(SWEEP_CONDITIONS), len(tp.ratios)), dtype=bool)
    for j, ratio in enumerate(tp.ratios):
        s = base.with_cross_scale(ratio ** (-tp.path_loss_exponent))
        sets = estimate_usable_carriers(s)
        out[0, j] = check_spectral_radius(s, sets).satisfied
        out[1, j] = check_gauss_seidel(s).satisfied
        out[2, j] = check_pairwise(s, "q1").satisfied
        out[3, j] = check_pairwise(s, "2q3").satisfied
        out[4, j] = check_per_carrier_norm(s, 0.0, sets).satisfied
    return out


def _trial_block(args):
    tp, trials = args
    return [_trial_outcomes(tp, t) for t in trials]


def condition_probability_sweep(tp: TopologyParams, jobs: int = 1) -> MonteCarloCurve:
    """Monte Carlo probability that each condition holds, per distance ratio.

    Parameters
    ----------
    tp : TopologyParams
    jobs : int
        Worker processes; the result does not depend on this value.
    """
    trials = list(range(tp.trials))
    if jobs <= 1:
        outcomes = _trial_block((tp, trials))
    else:
        chunks = [trials[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_trial_block, [(tp, c) for c in chunks]))
        by_trial = {}
        for chunk, part in zip(chunks, parts):
            by_trial.update(zip(chunk, part))
        outcomes = [by_trial[t] for t in trials]
    counts = np.sum(outcomes, axis=0)
    return MonteCarloCurve(np.array(tp.ratios), SWEEP_CONDITIONS, counts, tp.trials)


@dataclass
class TraceBundle:
    """Aligned traces of several algorithms on one scenario."""

    scenario: Scenario
    traces: dict
    users: list
    eps: float

    def iterations_to_eps(self) -> dict:
        return {name: tr.iterations_to(self.eps) for name, tr in self.traces.items()}

    def header(self) -> list:
        return ["algorithm", "iter", "sweep", "user",
                *(f"rate_{q + 1}" for q in self.users), "residual", "delta", "iters_to_eps"]

    def rows(self, scale: float = 1.0):
        reach = self.iterations_to_eps()
        for name, tr in self.traces.items():
            hit = reach[name]
            for r in tr.records:
                yield [name, r.iteration, r.sweep, r.user,
                       *(r.rates[self.users] * scale), r.residual, r.delta,
                       "" if hit is None else hit]


def rate_trace_experiment(tp: TopologyParams, algorithms: list, users_to_plot=None,
                          ratio: float = 3.0, trial: int = 0, eps: float = 1e-6) -> TraceBundle:
    """Run every configuration from the same start on the same random scenario.

    Parameters
    ----------
    tp : TopologyParams
    algorithms : list of AlgorithmConfig or (name, AlgorithmConfig) pairs
    users_to_plot : list of int, optional
        Zero-based users whose rates are kept; defaults to all.
    ratio : float
        Cross-to-direct distance ratio of the scenario.
    eps : float
        Residual level for the iterations-to-eps summary.
    """
    s = random_scenario(tp, ratio, trial=trial)
    p0 = initial_profile(s)
    users = list(range(tp.num_users)) if users_to_plot is None else [int(u) for u in users_to_plot]
    traces = {}
    for item in algorithms:
        name, cfg = item if isinstance(item, tuple) else (item.name, item)
        if name in traces:
            raise DomainError(f"duplicate algorithm label {name!r}")
        traces[name] = run(s, p0, cfg)
    return TraceBundle(s, traces, users, eps)
