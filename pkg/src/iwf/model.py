"""Game instances, SINR and rate evaluation.

Two descriptions of the same multiuser frequency-selective interference
channel are kept:

* :class:`PhysicalScenario` holds raw channel responses, transmit powers,
  noise variances, distances and spectral masks in physical units.
* :class:`Scenario` holds the normalized quantities the algorithms work
  with: squared channel gains already scaled by power, noise and path loss,
  SNR gaps, and masks expressed as fractions of each user's power budget.

Channel tensors are indexed ``[r, q, k]``: transmitter ``r``, receiver
``q``, carrier ``k``.  Direct links sit on the ``r == q`` diagonal.  A power
profile is a ``(Q, N)`` array whose rows average to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .errors import DomainError, FeasibilityError

__all__ = [
    "PhysicalScenario",
    "Scenario",
    "normalize",
    "q_function",
    "inverse_q_function",
    "snr_gap_from_ser",
    "interference",
    "sinr",
    "sinr_matrix",
    "rate",
    "rates",
    "is_feasible",
]

FEASIBILITY_TOL = 1e-10


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PhysicalScenario:
    """Physical description of the interference channel.

    Parameters
    ----------
    raw_gains : array_like, shape (Q, Q, N)
        Channel frequency responses ``bar-H_rq(k)``.  Complex input is
        converted to squared magnitude; real input is taken to be the squared
        magnitude already.
    tx_power : array_like, shape (Q,)
        Transmit power budget ``P_q`` of each user.
    noise_var : array_like, shape (Q,)
        Noise variance ``sigma_q^2`` at each receiver.
    distances : array_like, shape (Q, Q)
        ``distances[r, q]`` is the distance from transmitter ``r`` to
        receiver ``q``.
    path_loss_exponent : float
    mask_watts : array_like, shape (Q, N)
        Per-carrier power limits in the same unit as ``tx_power``; ``inf``
        means no mask.
    ser_target : array_like of shape (Q,), optional
        Target symbol error probability per user.  ``None`` (or NaN entries)
        selects the capacity model with unit SNR gap.
    """

    raw_gains: np.ndarray
    tx_power: np.ndarray
    noise_var: np.ndarray
    distances: np.ndarray
    path_loss_exponent: float
    mask_watts: np.ndarray
    ser_target: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.raw_gains)
        g = np.abs(g) ** 2 if np.iscomplexobj(g) else g.astype(float)
        if g.ndim != 3 or g.shape[0] != g.shape[1]:
            raise DomainError(f"raw_gains must have shape (Q, Q, N), got {g.shape}")
        Q, _, N = g.shape
        if Q < 1 or N < 1:
            raise DomainError("need at least one user and one carrier")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise DomainError("squared channel gains must be finite and nonnegative")
        object.__setattr__(self, "raw_gains", _frozen(g))

        for name, shape in (("tx_power", (Q,)), ("noise_var", (Q,)),
                            ("distances", (Q, Q)), ("mask_watts", (Q, N))):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape)
            object.__setattr__(self, name, _frozen(arr))
        if np.any(self.tx_power <= 0):
            raise DomainError("tx_power must be positive")
        if np.any(self.noise_var <= 0):
            raise DomainError("noise_var must be positive")
        if np.any(self.distances <= 0):
            raise DomainError("distances must be positive")
        if np.any(self.mask_watts < 0) or np.any(np.isnan(self.mask_watts)):
            raise DomainError("mask_watts must be nonnegative")
        if self.path_loss_exponent < 0:
            raise DomainError("path_loss_exponent must be nonnegative")
        if self.ser_target is not None:
            ser = np.broadcast_to(np.asarray(self.ser_target, dtype=float), (Q,))
            object.__setattr__(self, "ser_target", _frozen(ser))

    @property
    def num_users(self) -> int:
        return self.raw_gains.shape[0]

    @property
    def num_carriers(self) -> int:
        return self.raw_gains.shape[2]


@dataclass(frozen=True)
class Scenario:
    """Normalized game instance.

    Attributes
    ----------
    gain_sq : ndarray, shape (Q, Q, N)
        ``|H_rq(k)|^2`` after power/noise/path-loss normalization.
    snr_gap : ndarray, shape (Q,)
        SNR gap of each user (1 for the capacity model).
    mask : ndarray, shape (Q, N)
        Normalized spectral masks ``p_q^max(k)``; may contain ``inf``.
    usable_carriers : ndarray of bool, shape (Q, N)
        Carrier sets ``D_q`` used by the convergence conditions.  Defaults
        to all carriers.
    """

    gain_sq: np.ndarray
    snr_gap: np.ndarray
    mask: np.ndarray
    usable_carriers: np.ndarray | None = None
    direct: np.ndarray = field(init=False, repr=False, compare=False)
    cross: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        g = np.asarray(self.gain_sq, dtype=float)
        if g.ndim != 3 or g.shape[0] != g.shape[1]:
            raise DomainError(f"gain_sq must have shape (Q, Q, N), got {g.shape}")
        Q, _, N = g.shape
        if Q < 1 or N < 1:
            raise DomainError("need at least one user and one carrier")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise DomainError("gain_sq must be finite and nonnegative")
        gap = np.broadcast_to(np.asarray(self.snr_gap, dtype=float), (Q,))
        if np.any(~(gap > 0)) or not np.all(np.isfinite(gap)):
            raise DomainError("snr_gap must be positive and finite")
        mask = np.broadcast_to(np.asarray(self.mask, dtype=float), (Q, N))
        if np.any(np.isnan(mask)) or np.any(mask < 0):
            raise DomainError("mask must be nonnegative")
        if self.usable_carriers is None:
            usable = np.ones((Q, N), dtype=bool)
        else:
            usable = np.broadcast_to(np.asarray(self.usable_carriers, dtype=bool), (Q, N))

        for q in range(Q):
            if not mask[q].sum() / N > 1.0:
                raise FeasibilityError(
                    f"user {q}: mean spectral mask {mask[q].sum() / N:.6g} must exceed 1"
                )

        object.__setattr__(self, "gain_sq", _frozen(g))
        object.__setattr__(self, "snr_gap", _frozen(gap))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "usable_carriers", _frozen(usable, dtype=bool))
        idx = np.arange(Q)
        object.__setattr__(self, "direct", _frozen(g[idx, idx, :]))
        cross = g.copy()
        cross[idx, idx, :] = 0.0
        object.__setattr__(self, "cross", _frozen(cross))

    @property
    def num_users(self) -> int:
        return self.gain_sq.shape[0]

    @property
    def num_carriers(self) -> int:
        return self.gain_sq.shape[2]

    def with_usable_carriers(self, usable) -> "Scenario":
        return replace(self, usable_carriers=usable)

    def with_cross_scale(self, factor: float) -> "Scenario":
        """Return a copy with every cross gain multiplied by ``factor``."""
        g = self.cross * factor + np.einsum("qk,qr->qrk", self.direct, np.eye(self.num_users))
        return replace(self, gain_sq=g)


def normalize(phys: PhysicalScenario) -> Scenario:
    """Fold powers, noise and path loss into normalized channel gains."""
    P = phys.tx_power
    sigma2 = phys.noise_var
    d = phys.distances ** phys.path_loss_exponent
    # scale[r, q] = P_r / (sigma_q^2 d_rq^gamma)
    scale = P[:, None] / (sigma2[None, :] * d)
    gain_sq = phys.raw_gains * scale[:, :, None]
    mask = phys.mask_watts / P[:, None]
    N = phys.num_carriers
    for q in range(phys.num_users):
        if not mask[q].sum() / N > 1.0:
            raise FeasibilityError(
                f"user {q}: mean spectral mask {mask[q].sum() / N:.6g} "
                "(in units of the power budget) must exceed 1"
            )
    gap = np.ones(phys.num_users)
    if phys.ser_target is not None:
        for q, ser in enumerate(phys.ser_target):
            if not np.isnan(ser):
                gap[q] = snr_gap_from_ser(float(ser))
    return Scenario(gain_sq=gain_sq, snr_gap=gap, mask=mask)


def q_function(x):
    """Gaussian tail probability ``Q(x) = P(Z > x)``."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def inverse_q_function(t: float) -> float:
    """Solve ``Q(x) = t`` for ``x`` with ``0 < t < 1``.

    Newton's method on ``log Q`` kept inside a shrinking bisection bracket.
    """
    if not 0.0 < t < 1.0:
        raise DomainError(f"Q-function inverse needs 0 < t < 1, got {t}")
    if t == 0.5:
        return 0.0
    if t > 0.5:
        return -inverse_q_function(1.0 - t)
    log_t = math.log(t)

    def h(x):
        return float(special.log_ndtr(-x)) - log_t

    lo, hi = 0.0, 1.0
    while h(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(200):
        hx = h(x)
        if hx > 0.0:
            lo = x
        else:
            hi = x
        # d/dx log Q(x) = -phi(x) / Q(x)
        log_phi = -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
        slope = -math.exp(log_phi - float(special.log_ndtr(-x)))
        step = x - hx / slope
        x_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(x_new - x) <= 4e-16 * max(1.0, x) or hi - lo <= 4e-16 * max(1.0, hi):
            return x_new
        x = x_new
    return x


def snr_gap_from_ser(ser: float) -> float:
    """SNR gap ``(Q^{-1}(ser/4))^2 / 3`` for an uncoded symbol error target."""
    if not 0.0 < ser < 1.0:
        raise DomainError(f"symbol error probability must lie in (0, 1), got {ser}")
    x = inverse_q_function(ser / 4.0)
    return x * x / 3.0


def interference(s: Scenario, p: np.ndarray) -> np.ndarray:
    """Received multiuser interference ``sum_{r != q} |H_rq(k)|^2 p_r(k)``, shape (Q, N)."""
    return np.einsum("rqk,rk->qk", s.cross, p)


def sinr_matrix(s: Scenario, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return s.direct * p / (1.0 + interference(s, p))


def sinr(s: Scenario, p: np.ndarray, q: int, k: int) -> float:
    p = np.asarray(p, dtype=float)
    mui = sum(s.gain_sq[r, q, k] * p[r, k] for r in range(s.num_users) if r != q)
    return float(s.gain_sq[q, q, k] * p[q, k] / (1.0 + mui))


def rates(s: Scenario, p: np.ndarray) -> np.ndarray:
    """Rates of all users in nats per carrier, shape (Q,)."""
    return np.mean(np.log1p(sinr_matrix(s, p) / s.snr_gap[:, None]), axis=1)


def rate(s: Scenario, p: np.ndarray, q: int) -> float:
    p = np.asarray(p, dtype=float)
    mui = interference(s, p)[q]
    snr = s.direct[q] * p[q] / (1.0 + mui)
    return float(np.mean(np.log1p(snr / s.snr_gap[q])))


def is_feasible(s: Scenario, p: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    """True if every row of ``p`` lies in its capped simplex (to ``tol``)."""
    p = np.asarray(p, dtype=float)
    if p.shape != (s.num_users, s.num_carriers) or not np.all(np.isfinite(p)):
        return False
    return bool(
        np.all(p >= -tol)
        and np.all(p <= s.mask + tol)
        and np.all(np.abs(p.mean(axis=1) - 1.0) <= tol)
    )
