"""Spherical-, planar- and hybrid-wave channel synthesis on a shared scene.

All three generators share one complex gain convention per path and antenna
pair::

    g(d) = reflection_gain * wavelength / (4 pi d) * exp(-1j * 2 pi d / wavelength)

with ``d`` the total propagation length (via the scatterer for a
single-bounce path).  The spherical-wave model (SWM) evaluates it for every
pair.  The planar-wave model (PWM) evaluates it once, at the reference
element pair, and extends it with linear phase steering.  The hybrid model
(HSPM) does the PWM construction per subarray pair, with each block anchored
at the exact gain between the two subarray reference elements.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSceneError
from .geometry import ArrayGeometry, PlacedArray, Pose

__all__ = [
    "PathKind",
    "PathParams",
    "ChannelModel",
    "ChannelMatrix",
    "sample_paths",
    "gen_swm",
    "gen_pwm",
    "gen_hspm",
    "pwm_factors",
    "approximation_error_db",
    "count_parameters",
    "ERROR_FLOOR_DB",
    "save_channel",
    "load_channel",
]

ERROR_FLOOR_DB = -320.0


class PathKind(str, enum.Enum):
    LOS = "line-of-sight"
    SINGLE_BOUNCE = "single-bounce"


class ChannelModel(str, enum.Enum):
    SWM = "SWM"
    PWM = "PWM"
    HSPM = "HSPM"


@dataclass(frozen=True)
class PathParams:
    kind: PathKind
    scatterer: np.ndarray | None = None
    reflection_gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.kind is PathKind.LOS:
            if self.scatterer is not None:
                raise ValueError("line-of-sight path cannot carry a scatterer")
        else:
            if self.scatterer is None:
                raise ValueError("single-bounce path needs a scatterer position")
            object.__setattr__(self, "scatterer", np.asarray(self.scatterer, dtype=float).reshape(3))
        if abs(self.reflection_gain) > 1.0 + 1e-12:
            raise ValueError("|reflection_gain| must not exceed 1")
        object.__setattr__(self, "reflection_gain", complex(self.reflection_gain))

    @classmethod
    def los(cls) -> PathParams:
        return cls(PathKind.LOS)


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """Complex ``Nr x Nt`` channel tagged with the model that produced it."""

    entries: np.ndarray
    model: ChannelModel
    wavelength: float
    tx_geometry: ArrayGeometry | None = field(default=None, repr=False)
    rx_geometry: ArrayGeometry | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.entries.ndim != 2:
            raise ValueError("channel entries must be a 2-D matrix")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("channel entries must be finite")
        for geo, dim, side in ((self.rx_geometry, 0, "rx"), (self.tx_geometry, 1, "tx")):
            if geo is not None and geo.n_elements != self.entries.shape[dim]:
                raise ValueError(f"{side} geometry has {geo.n_elements} elements, matrix has {self.entries.shape[dim]}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def with_entries(self, entries: np.ndarray, model: ChannelModel | None = None) -> ChannelMatrix:
        return ChannelMatrix(entries, model or self.model, self.wavelength, self.tx_geometry, self.rx_geometry)


def sample_paths(
    seed: int,
    n_nlos: int,
    tx_pose: Pose,
    rx_pose: Pose,
    scatterer_volume: tuple,
    gain_range: tuple[float, float] = (0.05, 0.3),
) -> list[PathParams]:
    """One LoS path plus ``n_nlos`` single-bounce paths.

    Scatterers are uniform in the axis-aligned box ``(low, high)``; reflection
    gains have uniform phase and log-uniform magnitude in ``gain_range``.
    """
    if n_nlos < 0:
        raise ValueError("n_nlos must be non-negative")
    low, high = (np.asarray(v, dtype=float).reshape(3) for v in scatterer_volume)
    if np.any(high <= low):
        raise ValueError("scatterer box is degenerate")
    for pose in (tx_pose, rx_pose):
        if np.all((pose.origin >= low) & (pose.origin <= high)):
            raise ValueError("scatterer box contains an array origin")

    rng = np.random.default_rng(seed)
    paths = [PathParams.los()]
    log_lo, log_hi = np.log(gain_range[0]), np.log(gain_range[1])
    for _ in range(n_nlos):
        pos = rng.uniform(low, high)
        mag = math.exp(rng.uniform(log_lo, log_hi))
        phase = rng.uniform(0.0, 2 * np.pi)
        paths.append(PathParams(PathKind.SINGLE_BOUNCE, pos, mag * complex(math.cos(phase), math.sin(phase))))
    return paths


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _path_length(rx_pts: np.ndarray, tx_pts: np.ndarray, path: PathParams) -> np.ndarray:
    """Propagation length between every rx point and every tx point."""
    if path.kind is PathKind.LOS:
        d = _norm(rx_pts[:, None, :] - tx_pts[None, :, :])
    else:
        s = path.scatterer
        d = _norm(rx_pts - s)[:, None] + _norm(s - tx_pts)[None, :]
    if np.any(d <= 0.0):
        raise DegenerateSceneError("zero propagation length in scene")
    return d


def _gain(d: np.ndarray, path: PathParams, wavelength: float) -> np.ndarray:
    return path.reflection_gain * (wavelength / (4 * np.pi * d)) * np.exp(-2j * np.pi * d / wavelength)


def _check_scene(tx: PlacedArray, rx: PlacedArray, paths) -> float:
    if not paths:
        raise ValueError("at least one path is required")
    if sum(p.kind is PathKind.LOS for p in paths) > 1:
        raise ValueError("a scene has at most one line-of-sight path")
    if not math.isclose(tx.wavelength, rx.wavelength, rel_tol=1e-12):
        raise ValueError("tx and rx arrays use different wavelengths")
    return tx.wavelength


def gen_swm(tx: PlacedArray, rx: PlacedArray, paths) -> ChannelMatrix:
    """Exact spherical-wave channel: gain evaluated for every antenna pair."""
    lam = _check_scene(tx, rx, paths)
    rx_pts, tx_pts = rx.positions, tx.positions
    h = np.zeros((len(rx_pts), len(tx_pts)), dtype=complex)
    for path in paths:
        h += _gain(_path_length(rx_pts, tx_pts, path), path, lam)
    return ChannelMatrix(h, ChannelModel.SWM, lam, tx.geometry, rx.geometry)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / _norm(v)[..., None]


def _blockwise_planar(
    tx: PlacedArray,
    rx: PlacedArray,
    paths,
    tx_labels: np.ndarray,
    tx_refs: np.ndarray,
    rx_labels: np.ndarray,
    rx_refs: np.ndarray,
) -> np.ndarray:
    """Plane-wave blocks anchored at exact gains between block references.

    Block ``(p, q)`` for path ``l`` is ``g_pq * a_p(arrival_p) a_q(departure_q)^H``
    with steering phases measured from the block reference elements.  Each
    direction belongs to one block: towards the scatterer for a bounce path,
    and towards the far array's element 0 for the line of sight.
    """
    lam = tx.wavelength
    k = 2 * np.pi / lam
    rx_pts, tx_pts = rx.positions, tx.positions
    rx_ref_pts, tx_ref_pts = rx_pts[rx_refs], tx_pts[tx_refs]
    # offsets of every element from its own block reference
    rx_off = rx_pts - rx_ref_pts[rx_labels]
    tx_off = tx_pts - tx_ref_pts[tx_labels]
    # block indices are dense 0..K-1 after this remap
    _, rx_blk = np.unique(rx_labels, return_inverse=True)
    _, tx_blk = np.unique(tx_labels, return_inverse=True)

    h = np.zeros((len(rx_pts), len(tx_pts)), dtype=complex)
    for path in paths:
        g = _gain(_path_length(rx_ref_pts, tx_ref_pts, path), path, lam)  # (Kr, Kt)
        if path.kind is PathKind.LOS:
            arr = _unit(rx_ref_pts - tx_pts[0])  # (Kr, 3)
            dep = _unit(rx_pts[0] - tx_ref_pts)  # (Kt, 3)
        else:
            arr = _unit(rx_ref_pts - path.scatterer)
            dep = _unit(path.scatterer - tx_ref_pts)
        rx_phase = np.sum(rx_off * arr[rx_blk], axis=1)
        tx_phase = np.sum(tx_off * dep[tx_blk], axis=1)
        steer = np.exp(-1j * k * rx_phase)[:, None] * np.exp(1j * k * tx_phase)[None, :]
        h += g[rx_blk][:, tx_blk] * steer
    return h


def gen_pwm(tx: PlacedArray, rx: PlacedArray, paths) -> ChannelMatrix:
    """Planar-wave channel steered from element 0 of each array."""
    lam = _check_scene(tx, rx, paths)
    zeros_t = np.zeros(tx.geometry.n_elements, dtype=int)
    zeros_r = np.zeros(rx.geometry.n_elements, dtype=int)
    h = _blockwise_planar(tx, rx, paths, zeros_t, np.array([0]), zeros_r, np.array([0]))
    return ChannelMatrix(h, ChannelModel.PWM, lam, tx.geometry, rx.geometry)


def pwm_factors(tx: PlacedArray, rx: PlacedArray, paths) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-``L`` factors ``(A_rx, g, A_tx)`` of the planar-wave channel.

    ``A_rx @ np.diag(g) @ A_tx.conj().T`` reproduces :func:`gen_pwm` up to
    rounding; the factors make its singular values cheap to obtain.
    """
    lam = _check_scene(tx, rx, paths)
    k = 2 * np.pi / lam
    rx_pts, tx_pts = rx.positions, tx.positions
    rx_off, tx_off = rx_pts - rx_pts[0], tx_pts - tx_pts[0]
    a_rx, a_tx, gains = [], [], []
    for path in paths:
        gains.append(_gain(_path_length(rx_pts[:1], tx_pts[:1], path), path, lam)[0, 0])
        if path.kind is PathKind.LOS:
            arr = dep = _unit(rx_pts[0] - tx_pts[0])
        else:
            arr, dep = _unit(rx_pts[0] - path.scatterer), _unit(path.scatterer - tx_pts[0])
        a_rx.append(np.exp(-1j * k * (rx_off @ arr)))
        a_tx.append(np.exp(-1j * k * (tx_off @ dep)))
    return np.stack(a_rx, axis=1), np.array(gains), np.stack(a_tx, axis=1)


def gen_hspm(tx: PlacedArray, rx: PlacedArray, paths, virtual_split: int = 1) -> ChannelMatrix:
    """Hybrid model: planar inside each (virtual) subarray, spherical among them."""
    lam = _check_scene(tx, rx, paths)
    if int(virtual_split) != virtual_split or virtual_split < 1:
        raise ValueError(f"virtual_split must be a positive integer, got {virtual_split}")
    tx_labels, tx_refs = tx.geometry.virtual_partition(int(virtual_split))
    rx_labels, rx_refs = rx.geometry.virtual_partition(int(virtual_split))
    h = _blockwise_planar(tx, rx, paths, tx_labels, tx_refs, rx_labels, rx_refs)
    return ChannelMatrix(h, ChannelModel.HSPM, lam, tx.geometry, rx.geometry)


def _ratio_db(num: float, den: float) -> float:
    ratio = num / den
    if ratio < 10 ** (ERROR_FLOOR_DB / 10):
        return ERROR_FLOOR_DB
    return 10 * math.log10(ratio)


def relative_error_db(estimate: np.ndarray, truth: np.ndarray) -> float:
    """``10 log10(||estimate - truth||_F^2 / ||truth||_F^2)`` with a -320 dB floor."""
    if estimate.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {estimate.shape} vs {truth.shape}")
    den = float(np.vdot(truth, truth).real)
    if den == 0.0:
        raise ValueError("reference matrix has zero Frobenius norm")
    diff = estimate - truth
    return _ratio_db(float(np.vdot(diff, diff).real), den)


def approximation_error_db(h_model: ChannelMatrix, h_truth: ChannelMatrix) -> float:
    """Normalised squared Frobenius error of a model against the SWM ground truth."""
    if h_truth.model is not ChannelModel.SWM:
        raise ValueError("ground truth must be an SWM channel")
    return relative_error_db(h_model.entries, h_truth.entries)


def count_parameters(model, nt: int, nr: int, kt: int, kr: int, n_paths: int) -> int:
    """Real parameters needed to specify a channel under each model.

    SWM stores amplitude and phase per antenna pair per path; PWM stores
    amplitude, phase and two angles at each end per path; HSPM stores the PWM
    set once per subarray pair.
    """
    model = ChannelModel(model)
    for label, val in (("nt", nt), ("nr", nr), ("kt", kt), ("kr", kr), ("n_paths", n_paths)):
        if val < 1:
            raise ValueError(f"{label} must be positive, got {val}")
    if kt > nt or kr > nr:
        raise ValueError("subarray count cannot exceed antenna count")
    if model is ChannelModel.SWM:
        return 2 * nt * nr * n_paths
    if model is ChannelModel.PWM:
        return 6 * n_paths
    return 6 * n_paths * kt * kr


def save_channel(h: ChannelMatrix, path) -> None:
    """Write a text dump: one ``#`` header line, then one row per matrix row.

    Each row holds ``re,im`` pairs interleaved column by column
    (``re0,im0,re1,im1,...``), printed with 17 significant digits so that
    :func:`load_channel` restores the matrix bit for bit.
    """
    rows, cols = h.shape
    flat = np.empty((rows, 2 * cols))
    flat[:, 0::2] = h.entries.real
    flat[:, 1::2] = h.entries.imag
    header = f"crossfield-channel v1 model={h.model.value} rows={rows} cols={cols} wavelength={h.wavelength!r}"
    np.savetxt(Path(path), flat, delimiter=",", fmt="%.17g", header=header, comments="# ")


def load_channel(path) -> ChannelMatrix:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
    if not header.startswith("# crossfield-channel v1"):
        raise ValueError(f"{path} is not a channel dump")
    meta = dict(tok.split("=", 1) for tok in header[2:].split()[2:])
    flat = np.loadtxt(path, delimiter=",", ndmin=2)
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if flat.shape != (rows, 2 * cols):
        raise ValueError(f"{path}: body shape {flat.shape} does not match header")
    entries = flat[:, 0::2] + 1j * flat[:, 1::2]
    return ChannelMatrix(entries, ChannelModel(meta["model"]), float(meta["wavelength"]))
