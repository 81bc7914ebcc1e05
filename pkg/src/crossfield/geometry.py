"""Array geometries: compact UPAs and widely-spaced multi-subarray (WSMS) arrays.

Elements are ordered subarray by subarray (super-grid row-major), and
row-major inside each subarray.  Column index runs along local x, row index
along local y; every array lies in its local z = 0 plane and is centred on
the local origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrayGeometry",
    "Pose",
    "PlacedArray",
    "build_upa",
    "build_wsms",
    "aperture",
    "rayleigh_distance",
    "SPEED_OF_LIGHT",
    "wavelength_from_ghz",
]

SPEED_OF_LIGHT = 299_792_458.0


def wavelength_from_ghz(freq_ghz: float) -> float:
    if freq_ghz <= 0:
        raise ValueError(f"frequency must be positive, got {freq_ghz}")
    return SPEED_OF_LIGHT / (freq_ghz * 1e9)


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Element positions of a planar array together with its subarray partition.

    Attributes
    ----------
    wavelength : float
        Carrier wavelength in metres.
    elements : np.ndarray
        ``(N, 3)`` element positions in the local frame (metres).
    subarray_index : np.ndarray
        ``(N,)`` subarray label of every element.
    k_subarrays : int
        Number of subarrays.
    subarray_reference : np.ndarray
        ``(k_subarrays,)`` element index of each subarray's reference
        (lowest row, lowest column) element.
    grid_index : np.ndarray
        ``(N, 2)`` (row, column) of every element inside its own subarray.
    subarray_shape : tuple of int
        ``(rows, cols)`` of every subarray.
    spacing : float
        Intra-subarray element pitch in metres.
    """

    wavelength: float
    elements: np.ndarray
    subarray_index: np.ndarray
    k_subarrays: int
    subarray_reference: np.ndarray
    grid_index: np.ndarray
    subarray_shape: tuple[int, int]
    spacing: float
    name: str = field(default="array")

    def __post_init__(self):
        for arr in (self.elements, self.subarray_index, self.subarray_reference, self.grid_index):
            arr.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def subarray_members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.subarray_index == k)

    def axis_counts(self) -> tuple[int, int]:
        """Number of distinct element columns (x) and rows (y) across the array."""
        xs = np.unique(np.round(self.elements[:, 0] / self.spacing, 6))
        ys = np.unique(np.round(self.elements[:, 1] / self.spacing, 6))
        return len(xs), len(ys)

    def virtual_partition(self, split: int) -> tuple[np.ndarray, np.ndarray]:
        """Split every subarray into ``split x split`` virtual subarrays.

        Returns per-element virtual labels and the reference element of every
        virtual subarray (its lowest row, lowest column element).
        """
        rows, cols = self.subarray_shape
        if split < 1 or rows % split or cols % split:
            raise ValueError(
                f"virtual_split={split} must be >= 1 and divide the {rows}x{cols} subarray grid"
            )
        if split == 1:
            return self.subarray_index, self.subarray_reference
        vr, vc = rows // split, cols // split
        local = (self.grid_index[:, 0] // vr) * split + self.grid_index[:, 1] // vc
        labels = self.subarray_index * split * split + local
        # elements are row-major inside a subarray, so the first hit is the corner
        _, refs = np.unique(labels, return_index=True)
        return labels, refs


@dataclass(frozen=True)
class Pose:
    """Placement of an array's local frame in the global frame."""

    origin: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        rot = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("orientation must be a proper rotation matrix")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "orientation", rot)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def facing_back(cls, origin) -> Pose:
        """Array at ``origin`` whose broadside points along global -z."""
        return cls(np.asarray(origin, dtype=float), np.diag([-1.0, 1.0, -1.0]))

    def to_global(self, local: np.ndarray) -> np.ndarray:
        return local @ self.orientation.T + self.origin


@dataclass(frozen=True, eq=False)
class PlacedArray:
    """An :class:`ArrayGeometry` placed in the scene by a :class:`Pose`."""

    geometry: ArrayGeometry
    pose: Pose

    @property
    def positions(self) -> np.ndarray:
        return self.pose.to_global(self.geometry.elements)

    @property
    def wavelength(self) -> float:
        return self.geometry.wavelength


def _grid(n_rows: int, n_cols: int, pitch: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    return np.stack([cc.ravel() * pitch, rr.ravel() * pitch], axis=1)


def build_wsms(
    k_rows: int,
    k_cols: int,
    sub_rows: int,
    sub_cols: int,
    intra_spacing_wl: float,
    subarray_spacing_wl: float,
    wavelength: float,
) -> ArrayGeometry:
    """Build a ``k_rows x k_cols`` grid of ``sub_rows x sub_cols`` subarrays.

    Subarray reference elements sit on a square super-grid with pitch
    ``subarray_spacing_wl * wavelength``; elements inside a subarray have
    pitch ``intra_spacing_wl * wavelength``.
    """
    for label, val in (("k_rows", k_rows), ("k_cols", k_cols), ("sub_rows", sub_rows), ("sub_cols", sub_cols)):
        if int(val) != val or val < 1:
            raise ValueError(f"{label} must be a positive integer, got {val}")
    if intra_spacing_wl <= 0 or wavelength <= 0:
        raise ValueError("spacing and wavelength must be positive")
    k = k_rows * k_cols
    if k > 1 and subarray_spacing_wl < intra_spacing_wl * max(sub_rows, sub_cols):
        raise ValueError(
            f"subarray spacing {subarray_spacing_wl} wavelengths makes "
            f"{sub_rows}x{sub_cols} subarrays overlap"
        )

    pitch = intra_spacing_wl * wavelength
    local = _grid(sub_rows, sub_cols, pitch)
    supers = _grid(k_rows, k_cols, subarray_spacing_wl * wavelength if k > 1 else 0.0)
    per_sub = sub_rows * sub_cols
    xy = (supers[:, None, :] + local[None, :, :]).reshape(-1, 2)
    xy -= (xy.max(axis=0) + xy.min(axis=0)) / 2
    elements = np.column_stack([xy, np.zeros(len(xy))])

    rr, cc = np.meshgrid(np.arange(sub_rows), np.arange(sub_cols), indexing="ij")
    grid_index = np.tile(np.column_stack([rr.ravel(), cc.ravel()]), (k, 1))
    return ArrayGeometry(
        wavelength=float(wavelength),
        elements=elements,
        subarray_index=np.repeat(np.arange(k), per_sub),
        k_subarrays=k,
        subarray_reference=np.arange(k) * per_sub,
        grid_index=grid_index,
        subarray_shape=(sub_rows, sub_cols),
        spacing=pitch,
        name=f"wsms{k_rows}x{k_cols}-{sub_rows}x{sub_cols}@{subarray_spacing_wl:g}wl" if k > 1
        else f"upa{sub_rows}x{sub_cols}",
    )


def build_upa(n_rows: int, n_cols: int, spacing_in_wavelengths: float, wavelength: float) -> ArrayGeometry:
    """Compact uniform planar array with a single subarray."""
    return build_wsms(1, 1, n_rows, n_cols, spacing_in_wavelengths, 0.0, wavelength)


def aperture(geometry: ArrayGeometry) -> float:
    """Largest distance between any two elements (the array diagonal)."""
    pts = geometry.elements
    best = 0.0
    # chunked to keep the pairwise block small for large arrays
    for start in range(0, len(pts), 512):
        block = pts[start:start + 512]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def rayleigh_distance(geometry: ArrayGeometry) -> float:
    """Near/far-field boundary ``2 S^2 / wavelength`` with ``S`` the aperture."""
    return 2.0 * aperture(geometry) ** 2 / geometry.wavelength
