"""Water-filling capacity and NMSE utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix, relative_error_db
from .errors import NoCapacityError

__all__ = [
    "PowerAllocation",
    "water_filling",
    "capacity_bits",
    "capacity_from_gains",
    "singular_values",
    "mode_gains",
    "nmse_db",
    "dbm_to_watt",
    "DEFAULT_NOISE_DBM",
]

# thermal noise -174 dBm/Hz integrated over 5 GHz
DEFAULT_NOISE_DBM = -174.0 + 10 * np.log10(5e9)

_MU_TOL = 1e-12
_MAX_ITER = 200
_ZERO_MODE = 1e-12


def dbm_to_watt(dbm) -> np.ndarray | float:
    return 10 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10)


@dataclass(frozen=True)
class PowerAllocation:
    per_mode_power: np.ndarray
    water_level: float

    @property
    def total(self) -> float:
        return float(self.per_mode_power.sum())


def water_filling(channel_gains, total_power: float, noise_power: float) -> PowerAllocation:
    """Allocate ``total_power`` over parallel modes with power gains ``channel_gains``.

    Returns ``p_i = max(0, mu - noise / g_i)`` with the water level ``mu``
    located by bisection.  Once the active set is known the level is
    recomputed in closed form over it, so the powers sum to ``total_power``
    up to rounding.
    """
    gains = np.asarray(channel_gains, dtype=float).ravel()
    if total_power <= 0 or noise_power <= 0:
        raise ValueError("total_power and noise_power must be positive")
    if np.any(gains < 0):
        raise ValueError("channel gains must be non-negative")
    positive = gains > 0
    if not np.any(positive):
        raise NoCapacityError("all channel gains are zero")

    floors = np.full(gains.shape, np.inf)
    with np.errstate(over="ignore"):  # subnormal gains give an infinite floor, i.e. an unused mode
        floors[positive] = noise_power / gains[positive]

    def used(mu: float) -> float:
        return float(np.sum(np.maximum(0.0, mu - floors[positive])))

    lo = float(floors.min())
    hi = lo + total_power
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if used(mid) > total_power:
            hi = mid
        else:
            lo = mid
        if hi - lo <= _MU_TOL * max(1.0, abs(hi)):
            break
    mu = 0.5 * (lo + hi)
    active = floors < mu
    mu = (total_power + floors[active].sum()) / active.sum()
    power = np.where(active, mu - floors, 0.0)
    power = np.maximum(power, 0.0)
    return PowerAllocation(power, float(mu))


def singular_values(h) -> np.ndarray:
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    s = np.linalg.svd(entries, compute_uv=False)
    if s.size and s[0] > 0:
        s = np.where(s < _ZERO_MODE * s[0], 0.0, s)
    return s


def mode_gains(h) -> np.ndarray:
    """Squared singular values from the eigenvalues of the smaller Gram matrix.

    Cheaper than a full SVD for large square channels.  Gains below
    ``1e-24`` of the largest (singular values below ``1e-12``) are zeroed.
    """
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    gram = entries.conj().T @ entries if entries.shape[1] <= entries.shape[0] else entries @ entries.conj().T
    g = np.clip(np.linalg.eigvalsh(gram)[::-1], 0.0, None)
    if g.size and g[0] > 0:
        g = np.where(g < _ZERO_MODE**2 * g[0], 0.0, g)
    return g


def capacity_from_gains(
    gains,
    total_power: float,
    noise_power: float,
    allocation: str = "water-filling",
    n_tx: int | None = None,
) -> float:
    """Capacity of parallel modes with power gains ``gains``.

    ``allocation="water-filling"`` is the capacity-achieving loading.
    ``allocation="uniform"`` spreads the power evenly over ``n_tx`` transmit
    antennas (default: one per mode), i.e. an isotropic input without CSI at
    the transmitter, giving ``sum log2(1 + P g_i / (n_tx * noise))``.
    """
    gains = np.asarray(gains, dtype=float)
    if allocation == "water-filling":
        alloc = water_filling(gains, total_power, noise_power)
        return float(np.sum(np.log2(1.0 + alloc.per_mode_power * gains / noise_power)))
    if allocation == "uniform":
        if total_power <= 0 or noise_power <= 0:
            raise ValueError("total_power and noise_power must be positive")
        if not np.any(gains > 0):
            raise NoCapacityError("all channel gains are zero")
        n_tx = gains.size if n_tx is None else n_tx
        return float(np.sum(np.log2(1.0 + total_power * gains / (n_tx * noise_power))))
    raise ValueError(f"unknown allocation {allocation!r}")


def capacity_bits(h, total_power: float, noise_power: float, allocation: str = "water-filling") -> float:
    """Eigenmode capacity in bits/s/Hz under a total power budget.

    Water-filled by default; see :func:`capacity_from_gains` for the uniform
    (equal power per transmit antenna) alternative.
    """
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    return capacity_from_gains(singular_values(entries) ** 2, total_power, noise_power,
                               allocation, entries.shape[1])


def nmse_db(h_est, h_true) -> float:
    """Normalised mean-square error in dB, floored at -320 dB."""
    est = h_est.entries if isinstance(h_est, ChannelMatrix) else np.asarray(h_est)
    true = h_true.entries if isinstance(h_true, ChannelMatrix) else np.asarray(h_true)
    return relative_error_db(est, true)
