"""Block-diagonal constant-modulus hybrid beamforming for WSMS arrays.

Every subarray owns one RF chain.  Each analog block is the entrywise phase
of the dominant singular vector of the channel restricted to that subarray,
scaled to magnitude ``1/sqrt(block size)``.  The digital stage diagonalises
the small effective channel and water-fills power over its modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix
from .errors import NumericalError
from .geometry import ArrayGeometry
from .metrics import PowerAllocation, water_filling

__all__ = ["HybridPrecoder", "analog_block_diagonal", "design_wsms_hybrid", "spectral_efficiency"]

_RANK_TOL = 1e-9


@dataclass(frozen=True)
class HybridPrecoder:
    """Analog (N x N_rf) and digital (N_rf x N_streams) beamforming stages.

    ``analog @ digital`` has orthonormal columns, so the Frobenius norm of the
    product equals the stream count; transmit power lives in
    ``power_allocation``.
    """

    analog: np.ndarray
    digital: np.ndarray
    power_allocation: PowerAllocation | None = None
    streams_reduced: bool = False

    @property
    def n_streams(self) -> int:
        return self.digital.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.analog @ self.digital


def _dominant_vector(block: np.ndarray, side: str) -> np.ndarray:
    u, _, vh = np.linalg.svd(block, full_matrices=False)
    return u[:, 0] if side == "left" else vh[0].conj()


def analog_block_diagonal(h: np.ndarray, geometry: ArrayGeometry, side: str) -> np.ndarray:
    """Per-subarray phase-only beams, one column per subarray.

    ``side="right"`` designs the transmit analog precoder from the channel
    columns of each subarray, ``side="left"`` the receive combiner from its
    rows.
    """
    n = geometry.n_elements
    analog = np.zeros((n, geometry.k_subarrays), dtype=complex)
    for k in range(geometry.k_subarrays):
        idx = geometry.subarray_members(k)
        block = h[idx, :] if side == "left" else h[:, idx]
        vec = _dominant_vector(block, side)
        analog[idx, k] = np.exp(1j * np.angle(vec)) / np.sqrt(len(idx))
    return analog


def design_wsms_hybrid(
    h: ChannelMatrix,
    tx_geo: ArrayGeometry,
    rx_geo: ArrayGeometry,
    n_rf: int,
    n_streams: int,
    power: float,
    noise: float,
    analog: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[HybridPrecoder, HybridPrecoder]:
    """Design precoder and combiner with one RF chain per subarray.

    When the effective ``n_rf x n_rf`` channel has fewer than ``n_streams``
    usable modes the stream count is reduced and ``streams_reduced`` is set
    on both returned stages.  The analog stages do not depend on ``power``;
    a power sweep can pass a previously designed ``(precoder.analog,
    combiner.analog)`` pair as ``analog`` to skip the per-subarray SVDs.
    """
    if n_rf != tx_geo.k_subarrays or n_rf != rx_geo.k_subarrays:
        raise ValueError(
            f"n_rf={n_rf} must equal the subarray count at both ends "
            f"({tx_geo.k_subarrays}, {rx_geo.k_subarrays})"
        )
    if not 1 <= n_streams <= n_rf:
        raise ValueError(f"n_streams must lie in [1, {n_rf}], got {n_streams}")
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    if analog is None:
        f_a = analog_block_diagonal(entries, tx_geo, "right")
        w_a = analog_block_diagonal(entries, rx_geo, "left")
    else:
        f_a, w_a = analog
    eff = w_a.conj().T @ entries @ f_a
    u, s, vh = np.linalg.svd(eff)
    usable = int(np.sum(s > _RANK_TOL * s[0])) if s[0] > 0 else 0
    if usable == 0:
        raise NumericalError("effective channel is zero")
    reduced = usable < n_streams
    ns = min(n_streams, usable)
    alloc = water_filling(s[:ns] ** 2, power, noise)
    precoder = HybridPrecoder(f_a, vh[:ns].conj().T, alloc, reduced)
    combiner = HybridPrecoder(w_a, u[:, :ns], None, reduced)
    return precoder, combiner


def spectral_efficiency(h, precoder: HybridPrecoder, combiner: HybridPrecoder, power: float, noise: float) -> float:
    """Achievable rate ``log2 det(I + R^-1 G G^H / noise)`` in bits/s/Hz.

    ``G = W^H H F diag(sqrt(p))`` and ``R = W^H W`` whitens the combined
    noise.  Per-stream powers come from the precoder's allocation, rescaled to
    ``power``; without an allocation the power is split evenly.
    """
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    f = precoder.matrix
    w = combiner.matrix
    if f.shape[0] != entries.shape[1] or w.shape[0] != entries.shape[0]:
        raise ValueError("precoder/combiner dimensions do not match the channel")
    ns = f.shape[1]
    if precoder.power_allocation is not None:
        p = np.asarray(precoder.power_allocation.per_mode_power, dtype=float)
        total = p.sum()
        p = p * (power / total) if total > 0 else np.full(ns, power / ns)
    else:
        p = np.full(ns, power / ns)
    g = w.conj().T @ entries @ f * np.sqrt(p)[None, :]
    r = w.conj().T @ w
    if np.linalg.cond(r) > 1e12:
        raise NumericalError("combiner noise covariance is singular")
    m = np.eye(r.shape[0]) + np.linalg.solve(r, g @ g.conj().T) / noise
    sign, logdet = np.linalg.slogdet(m)
    return float(logdet.real / np.log(2))
