"""Compressive channel estimation with whole-array and per-subarray codebooks.

Pilots follow a Kronecker frame schedule: frame ``q = a * n_tx_beams + b``
combines with the ``a``-th unit-modulus combiner block and transmits the
``b``-th unit-modulus precoder, so the whole observation is
``Y = W^H H F + noise`` with ``W`` the stacked combiners and ``F`` the stacked
precoders.  With ``H = A_r X A_t^H`` this gives ``Y = Phi X Psi`` where
``Phi = W^H A_r`` and ``Psi = A_t^H F``; every estimator below works on these
two small sensing matrices instead of the Kronecker product.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelMatrix, ChannelModel
from .errors import NumericalError
from .geometry import ArrayGeometry

__all__ = [
    "Codebook",
    "PilotObservation",
    "ChannelEstimate",
    "build_far_field_codebook",
    "build_subarray_codebook",
    "simulate_pilots",
    "omp_estimate",
    "sse_estimate",
    "dse_estimate",
    "neighbourhood_mask",
]

log = logging.getLogger(__name__)

_COND_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class Codebook:
    """Unit-norm steering atoms (columns) with their angular grid.

    ``grid`` holds the (u, v) spatial frequencies of each atom along the
    array's local x and y axes, ``grid_index`` the integer grid position
    used to measure neighbourhoods, and ``subarray_map`` the subarray owning
    each atom (all zeros for a whole-array codebook).
    """

    atoms: np.ndarray
    grid: np.ndarray
    grid_index: np.ndarray
    grid_shape: tuple[int, int]
    structure: str
    subarray_map: np.ndarray

    @property
    def size(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_blocks(self) -> int:
        return int(self.subarray_map.max()) + 1


def _axis_grid(n: int, oversampling: float) -> np.ndarray:
    g = math.ceil(oversampling * n - 1e-9)
    return -1.0 + 2.0 * np.arange(g) / g


def _steering_atoms(offsets: np.ndarray, wavelength: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    k = 2 * np.pi / wavelength
    phase = np.outer(offsets[:, 0], u) + np.outer(offsets[:, 1], v)
    return np.exp(-1j * k * phase) / np.sqrt(len(offsets))


def _planar_grid(n_cols: int, n_rows: int, oversampling: float):
    gu, gv = _axis_grid(n_cols, oversampling), _axis_grid(n_rows, oversampling)
    iu, iv = np.meshgrid(np.arange(len(gu)), np.arange(len(gv)), indexing="ij")
    index = np.column_stack([iu.ravel(), iv.ravel()])
    return gu[index[:, 0]], gv[index[:, 1]], index, (len(gu), len(gv))


def build_far_field_codebook(geometry: ArrayGeometry, oversampling: float = 1.0) -> Codebook:
    """Whole-array steering vectors on a uniform (u, v) grid.

    Each axis gets ``ceil(oversampling * n)`` points with ``n`` the number of
    distinct element columns (rows) of the array.  Phases are referenced to
    element 0.
    """
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    n_cols, n_rows = geometry.axis_counts()
    u, v, index, shape = _planar_grid(n_cols, n_rows, oversampling)
    offsets = geometry.elements - geometry.elements[0]
    atoms = _steering_atoms(offsets, geometry.wavelength, u, v)
    return Codebook(atoms, np.column_stack([u, v]), index, shape, "whole-array", np.zeros(len(u), dtype=int))


def build_subarray_codebook(geometry: ArrayGeometry, oversampling: float = 1.0) -> Codebook:
    """Independent per-subarray steering grids, zero outside the owning subarray."""
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    rows, cols = geometry.subarray_shape
    u, v, index, shape = _planar_grid(cols, rows, oversampling)
    g = len(u)
    k = geometry.k_subarrays
    atoms = np.zeros((geometry.n_elements, k * g), dtype=complex)
    for s in range(k):
        idx = geometry.subarray_members(s)
        offsets = geometry.elements[idx] - geometry.elements[geometry.subarray_reference[s]]
        atoms[idx, s * g:(s + 1) * g] = _steering_atoms(offsets, geometry.wavelength, u, v)
    structure = "per-subarray" if k > 1 else "whole-array"
    return Codebook(
        atoms,
        np.tile(np.column_stack([u, v]), (k, 1)),
        np.tile(index, (k, 1)),
        shape,
        structure,
        np.repeat(np.arange(k), g),
    )


@dataclass(frozen=True, eq=False)
class PilotObservation:
    """Pilot measurements ``Y = W^H H_n F + W^H N`` of the normalised channel ``H_n``.

    ``measurements`` is ``(n_rx_frames * m_rx, n_tx_beams)``: row block ``a``
    and column ``b`` hold frame ``a * n_tx_beams + b``.  ``scale`` is the RMS
    entry magnitude removed before sounding; estimates are rescaled by it.
    """

    measurements: np.ndarray
    combiners: np.ndarray
    precoders: np.ndarray
    m_rx: int
    noise_power: float
    seed: int
    scale: float

    @property
    def n_tx_beams(self) -> int:
        return self.precoders.shape[1]

    @property
    def n_rx_frames(self) -> int:
        return self.combiners.shape[1] // self.m_rx

    @property
    def q_frames(self) -> int:
        return self.n_rx_frames * self.n_tx_beams

    def frame(self, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Combiner ``W_q`` (N_rx x m_rx), precoder ``f_q`` and measurement ``y_q``."""
        a, b = divmod(q, self.n_tx_beams)
        rows = slice(a * self.m_rx, (a + 1) * self.m_rx)
        return self.combiners[:, rows], self.precoders[:, b], self.measurements[rows, b]


def _default_tx_beams(q_frames: int, m_rx: int) -> int:
    target = math.sqrt(q_frames * m_rx)
    best = 1
    for d in range(1, q_frames + 1):
        if q_frames % d == 0 and d <= target:
            best = d
    return best


def _unit_modulus(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    return np.exp(2j * np.pi * rng.random((n, m))) / np.sqrt(n)


def simulate_pilots(
    h: ChannelMatrix,
    q_frames: int,
    m_rx: int,
    snr_db: float,
    seed: int,
    n_tx_beams: int | None = None,
) -> PilotObservation:
    """Sound ``h`` with random-phase pilots over ``q_frames`` frames.

    The channel is first scaled to unit mean entry power, so a unit-modulus
    pilot pair yields unit signal power per measurement and the noise
    variance is ``10 ** (-snr_db / 10)``.  ``snr_db = inf`` disables noise.
    """
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    n_rx, n_tx = entries.shape
    if q_frames < 1 or m_rx < 1:
        raise ValueError("q_frames and m_rx must be positive")
    if q_frames * m_rx >= n_rx * n_tx:
        raise ValueError(
            f"{q_frames} frames x {m_rx} RF chains is not compressive for a {n_rx}x{n_tx} channel"
        )
    n_tx_beams = n_tx_beams or _default_tx_beams(q_frames, m_rx)
    if q_frames % n_tx_beams:
        raise ValueError(f"n_tx_beams={n_tx_beams} must divide q_frames={q_frames}")
    n_rx_frames = q_frames // n_tx_beams

    scale = float(np.sqrt(np.mean(np.abs(entries) ** 2)))
    if scale == 0.0:
        raise ValueError("cannot sound an all-zero channel")
    hn = entries / scale

    rng = np.random.default_rng(seed)
    w = _unit_modulus(rng, n_rx, n_rx_frames * m_rx)
    f = _unit_modulus(rng, n_tx, n_tx_beams)
    y = w.conj().T @ hn @ f
    noise_power = 0.0 if math.isinf(snr_db) and snr_db > 0 else 10 ** (-snr_db / 10)
    if noise_power > 0:
        # W_a^H n per frame, drawn directly with covariance noise * W_a^H W_a
        for a in range(n_rx_frames):
            rows = slice(a * m_rx, (a + 1) * m_rx)
            wa = w[:, rows]
            chol = np.linalg.cholesky(wa.conj().T @ wa + 1e-12 * np.eye(m_rx))
            z = rng.standard_normal((m_rx, n_tx_beams, 2)).view(complex)[..., 0]
            y[rows] += np.sqrt(noise_power / 2) * (chol @ z)
    return PilotObservation(y, w, f, m_rx, noise_power, seed, scale)


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    """Reconstructed channel, chosen (rx atom, tx atom) pairs and their gains.

    ``counters`` records ``correlations``: how many candidate atoms (or atom
    pairs) were scored against the residual over the whole run.
    """

    h_hat: ChannelMatrix
    support: list[tuple[int, int]]
    gains: np.ndarray
    counters: Counter = field(default_factory=Counter)
    residual_norms: list[float] = field(default_factory=list)


def _sensing(obs: PilotObservation, tx_cb: Codebook, rx_cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    if rx_cb.atoms.shape[0] != obs.combiners.shape[0] or tx_cb.atoms.shape[0] != obs.precoders.shape[0]:
        raise ValueError("codebook dimensions do not match the pilot observation")
    phi = obs.combiners.conj().T @ rx_cb.atoms  # (Mr, Gr)
    psi = tx_cb.atoms.conj().T @ obs.precoders  # (Gt, Mt)
    return phi, psi


def _assemble(obs, tx_cb, rx_cb, rx_idx, tx_idx, x, like: ChannelMatrix | None) -> ChannelMatrix:
    if len(rx_idx):
        h = obs.scale * (rx_cb.atoms[:, rx_idx] @ x @ tx_cb.atoms[:, tx_idx].conj().T)
    else:
        h = np.zeros((rx_cb.atoms.shape[0], tx_cb.atoms.shape[0]), dtype=complex)
    if like is not None:
        return like.with_entries(h)
    return ChannelMatrix(h, ChannelModel.SWM, float("nan"))


def omp_estimate(
    obs: PilotObservation,
    tx_codebook: Codebook,
    rx_codebook: Codebook,
    max_atoms: int,
    residual_tol: float = 1e-6,
    like: ChannelMatrix | None = None,
) -> ChannelEstimate:
    """Orthogonal matching pursuit over the Kronecker (tx, rx) atom-pair dictionary.

    Each iteration scores every pair by its normalised correlation with the
    residual, adds the best one (lowest flat index on ties, flat index
    ``rx * G_t + tx``) and refits all gains by least squares.  Stops after
    ``max_atoms`` pairs or once the residual norm drops below
    ``residual_tol`` times the measurement norm.
    """
    phi, psi = _sensing(obs, tx_codebook, rx_codebook)
    y = obs.measurements
    gram_r = phi.conj().T @ phi
    gram_t = psi @ psi.conj().T
    norms = np.sqrt(np.real(np.diag(gram_r)))[:, None] * np.sqrt(np.real(np.diag(gram_t)))[None, :]
    norms = np.where(norms > 0, norms, np.inf)
    c0 = phi.conj().T @ y @ psi.conj().T
    y_energy = float(np.vdot(y, y).real)
    counters: Counter = Counter()

    rx_sel: list[int] = []
    tx_sel: list[int] = []
    x = np.zeros(0, dtype=complex)
    residuals = [math.sqrt(y_energy)]
    corr = c0.copy()
    n_tx = gram_t.shape[0]
    while len(rx_sel) < max_atoms and residuals[-1] > residual_tol * residuals[0]:
        score = np.abs(corr) / norms
        counters["correlations"] += score.size
        flat = int(np.argmax(score))
        i, j = divmod(flat, n_tx)
        trial_r, trial_t = rx_sel + [i], tx_sel + [j]
        g = gram_r[np.ix_(trial_r, trial_r)] * gram_t[np.ix_(trial_t, trial_t)].T
        if np.linalg.cond(g) > _COND_LIMIT:
            log.debug("OMP support became rank deficient at %d atoms; stopping", len(trial_r))
            break
        rx_sel, tx_sel = trial_r, trial_t
        c = c0[rx_sel, tx_sel]
        x = np.linalg.solve(g, c)
        corr = c0 - (gram_r[:, rx_sel] * x[None, :]) @ gram_t[tx_sel, :]
        explained = float(np.real(np.vdot(c, x)))
        residuals.append(math.sqrt(max(y_energy - explained, 0.0)))

    gains = np.zeros((len(rx_sel), len(tx_sel)), dtype=complex)
    gains[np.arange(len(rx_sel)), np.arange(len(tx_sel))] = x
    h_hat = _assemble(obs, tx_codebook, rx_codebook, rx_sel, tx_sel, gains, like)
    return ChannelEstimate(h_hat, list(zip(rx_sel, tx_sel)), x * obs.scale, counters, residuals)


def _somp(
    z0: np.ndarray,
    gram: np.ndarray,
    y_energy: float,
    blocks: np.ndarray,
    quota: int,
    candidates: np.ndarray,
    residual_tol: float,
    counters: Counter,
    selected: list[int] | None = None,
    block_order: np.ndarray | None = None,
) -> list[int]:
    """Greedy simultaneous OMP with a per-block atom quota.

    ``z0 = D^H Y`` for dictionary ``D`` and multiple measurement vectors
    ``Y``; ``gram = D^H D``.  Atoms are scored by residual energy normalised
    by their own energy; only ``candidates`` whose block has quota left are
    eligible.  Previously ``selected`` atoms stay in the support.
    """
    selected = list(selected or [])
    norms = np.real(np.diag(gram)).copy()
    norms[norms <= 0] = np.inf
    taken = Counter(int(blocks[s]) for s in selected)
    n_blocks = int(blocks.max()) + 1
    eligible_blocks = set(range(n_blocks)) if block_order is None else set(int(b) for b in block_order)
    start = math.sqrt(y_energy)

    def refit(sel):
        g = gram[np.ix_(sel, sel)]
        return np.linalg.solve(g, z0[sel])

    x = refit(selected) if selected else None
    resid = start
    if selected:
        resid = math.sqrt(max(y_energy - float(np.real(np.vdot(z0[selected], x))), 0.0))
    while resid > residual_tol * start:
        open_blocks = [b for b in eligible_blocks if taken[b] < quota]
        if not open_blocks:
            break
        mask = candidates & np.isin(blocks, open_blocks)
        mask[selected] = False
        if not mask.any():
            break
        z = z0 if not selected else z0 - gram[:, selected] @ x
        idx = np.flatnonzero(mask)
        counters["correlations"] += len(idx)
        energy = np.sum(np.abs(z[idx]) ** 2, axis=1) / norms[idx]
        best = int(idx[int(np.argmax(energy))])
        trial = selected + [best]
        if np.linalg.cond(gram[np.ix_(trial, trial)]) > _COND_LIMIT:
            log.debug("subarray support became rank deficient; stopping")
            break
        selected = trial
        taken[int(blocks[best])] += 1
        x = refit(selected)
        resid = math.sqrt(max(y_energy - float(np.real(np.vdot(z0[selected], x))), 0.0))
    return selected


def _side_dictionaries(obs, tx_cb, rx_cb):
    phi, psi = _sensing(obs, tx_cb, rx_cb)
    gram_r = phi.conj().T @ phi
    gram_t = psi @ psi.conj().T
    return phi, psi, gram_r, gram_t


def _separable_ls(phi_s, psi_s, y):
    """Least squares ``min ||Y - Phi_S X Psi_S||`` over all selected pairs."""
    gr = phi_s.conj().T @ phi_s
    gt = psi_s @ psi_s.conj().T
    if np.linalg.cond(gr) > _COND_LIMIT or np.linalg.cond(gt) > _COND_LIMIT:
        raise NumericalError("selected subarray atoms are linearly dependent")
    left = np.linalg.solve(gr, phi_s.conj().T @ y)
    return np.linalg.solve(gt.T, (left @ psi_s.conj().T).T).T


def _two_sided(
    obs: PilotObservation,
    tx_cb: Codebook,
    rx_cb: Codebook,
    quota: int,
    residual_tol: float,
    rx_candidates_fn,
    tx_candidates_fn,
    like,
) -> ChannelEstimate:
    phi, psi, gram_r, gram_t = _side_dictionaries(obs, tx_cb, rx_cb)
    y = obs.measurements
    y_energy = float(np.vdot(y, y).real)
    counters: Counter = Counter()

    # receive side: columns of Y share the rx support
    z0_r = phi.conj().T @ y
    rx_sel = rx_candidates_fn(z0_r, gram_r, y_energy, counters)
    if not rx_sel:
        raise NumericalError("no receive atoms selected")
    x_r = np.linalg.solve(gram_r[np.ix_(rx_sel, rx_sel)], z0_r[rx_sel])  # (|S_r|, Mt)

    # transmit side: rows of x_r are tx-domain observations sharing the tx support
    z0_t = psi.conj() @ x_r.T
    tx_sel = tx_candidates_fn(z0_t, gram_t.conj(), float(np.vdot(x_r, x_r).real), counters)
    if not tx_sel:
        raise NumericalError("no transmit atoms selected")

    x = _separable_ls(phi[:, rx_sel], psi[tx_sel, :], y)
    resid = y - phi[:, rx_sel] @ x @ psi[tx_sel, :]
    h_hat = _assemble(obs, tx_cb, rx_cb, rx_sel, tx_sel, x, like)
    support = [(i, j) for i in rx_sel for j in tx_sel]
    return ChannelEstimate(
        h_hat,
        support,
        (x * obs.scale).ravel(),
        counters,
        [math.sqrt(y_energy), float(np.linalg.norm(resid))],
    )


def sse_estimate(
    obs: PilotObservation,
    subarray_codebooks: tuple[Codebook, Codebook],
    max_atoms_per_block: int,
    residual_tol: float = 1e-6,
    like: ChannelMatrix | None = None,
) -> ChannelEstimate:
    """Separate side estimation over per-subarray codebooks ``(tx, rx)``.

    Receive atoms are found first, with up to ``max_atoms_per_block`` atoms
    per receive subarray, by simultaneous OMP across all pilot beams.  The
    transmit atoms of every transmit subarray are then found on the
    receive-projected observations, and all gains are refit jointly by least
    squares over every (receive atom, transmit atom) pair.
    """
    tx_cb, rx_cb = subarray_codebooks

    def rx_fn(z0, gram, energy, counters):
        return _somp(z0, gram, energy, rx_cb.subarray_map, max_atoms_per_block,
                     np.ones(rx_cb.size, bool), residual_tol, counters)

    def tx_fn(z0, gram, energy, counters):
        return _somp(z0, gram, energy, tx_cb.subarray_map, max_atoms_per_block,
                     np.ones(tx_cb.size, bool), residual_tol, counters)

    return _two_sided(obs, tx_cb, rx_cb, max_atoms_per_block, residual_tol, rx_fn, tx_fn, like)


def neighbourhood_mask(codebook: Codebook, anchors: list[int], halfwidth: int) -> np.ndarray:
    """Atoms in any block whose grid position is within ``halfwidth`` steps of an anchor.

    Distance is the Chebyshev distance on the (u, v) grid index, wrapping
    around because spatial frequency is periodic.
    """
    mask = np.zeros(codebook.size, dtype=bool)
    if not anchors:
        return mask
    nu, nv = codebook.grid_shape
    idx = codebook.grid_index
    for a in anchors:
        du = np.abs(idx[:, 0] - idx[a, 0])
        dv = np.abs(idx[:, 1] - idx[a, 1])
        du = np.minimum(du, nu - du)
        dv = np.minimum(dv, nv - dv)
        mask |= (du <= halfwidth) & (dv <= halfwidth)
    return mask


def dse_estimate(
    obs: PilotObservation,
    subarray_codebooks: tuple[Codebook, Codebook],
    neighborhood_halfwidth: int = 2,
    max_atoms_per_block: int = 4,
    residual_tol: float = 1e-6,
    like: ChannelMatrix | None = None,
) -> ChannelEstimate:
    """Dictionary shrinkage estimation.

    Subarray 0 at each end is searched alone first to find anchor atoms.
    The joint search is then rerun with every other subarray restricted to
    atoms within ``neighborhood_halfwidth`` grid steps of those anchors; a
    block left with no candidates falls back to its full dictionary.
    """
    if neighborhood_halfwidth < 0:
        raise ValueError("neighborhood_halfwidth must be >= 0")
    tx_cb, rx_cb = subarray_codebooks

    def side(cb: Codebook):
        def run(z0, gram, energy, counters):
            ref_only = cb.subarray_map == 0
            anchors = _somp(z0, gram, energy, cb.subarray_map, max_atoms_per_block,
                            ref_only, residual_tol, counters, block_order=np.array([0]))
            mask = ref_only | neighbourhood_mask(cb, anchors, neighborhood_halfwidth)
            for b in range(1, cb.n_blocks):
                in_block = cb.subarray_map == b
                if not (mask & in_block).any():
                    log.info("dictionary shrinkage left block %d empty; using its full codebook", b)
                    mask |= in_block
            return _somp(z0, gram, energy, cb.subarray_map, max_atoms_per_block,
                         mask, residual_tol, counters)
        return run

    return _two_sided(obs, tx_cb, rx_cb, max_atoms_per_block, residual_tol, side(rx_cb), side(tx_cb), like)
