"""Core geometric and data types shared by the reconstruction engine.

Conventions used throughout:

* images are 2D float32 arrays indexed ``[row, col]`` with values in [0, 1];
* volumes are dense float32 arrays stored ``[z, y, x]`` (C order), so the
  flattened linear index of voxel ``(x, y, z)`` is ``x + dx * (y + dy * z)``;
* a voxel that has not been reconstructed yet holds NaN in ``data`` and True
  in ``missing_mask``; the mask is authoritative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyStack, NonPositiveSpacing

AXIS_LABELS = ("axial", "sagittal", "coronal")


@dataclass
class SliceStack:
    """An ordered stack of registered 2D grayscale slices along one axis.

    ``slices`` has shape (n, height, width); ``pixel_spacing`` is the in-plane
    (x, y) spacing in mm and ``slice_gap_mm`` the physical distance between
    consecutive slices.
    """

    slices: np.ndarray
    pixel_spacing: tuple[float, float]
    slice_gap_mm: float
    axis_label: str = "axial"

    def __post_init__(self):
        self.slices = np.ascontiguousarray(self.slices, dtype=np.float32)
        if self.slices.ndim != 3 or self.slices.shape[0] < 2:
            raise EmptyStack("a stack needs at least 2 slices of equal size")
        if self.slice_gap_mm <= 0 or min(self.pixel_spacing) <= 0:
            raise NonPositiveSpacing("spacing and gap must be > 0")
        if self.axis_label not in AXIS_LABELS:
            raise ValueError(f"axis_label must be one of {AXIS_LABELS}")
        if not np.isfinite(self.slices).all():
            raise ValueError("slice values must be finite")

    @property
    def n(self) -> int:
        return self.slices.shape[0]

    @property
    def height(self) -> int:
        return self.slices.shape[1]

    @property
    def width(self) -> int:
        return self.slices.shape[2]

    @property
    def missing_per_gap(self) -> int:
        """Missing voxel planes between consecutive slices (the in-plane x
        spacing sets the voxel pitch)."""
        return missing_planes_per_gap(self.slice_gap_mm, self.pixel_spacing[0])

    def output_depth(self) -> int:
        g = self.missing_per_gap
        return self.n + (self.n - 1) * g


@dataclass
class VolumeGrid:
    """Dense 3D scalar grid with an explicit missing-voxel mask.

    ``data`` is float32 shaped (dz, dy, dx); ``missing_mask`` is bool of the
    same shape. ``origin_offset`` = (x, y, z) locates this grid inside the
    full reconstruction volume.
    """

    data: np.ndarray
    missing_mask: np.ndarray | None = None
    origin_offset: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("volume data must be 3D")
        if self.missing_mask is None:
            self.missing_mask = np.isnan(self.data)
        self.missing_mask = np.ascontiguousarray(self.missing_mask, dtype=bool)
        if self.missing_mask.shape != self.data.shape:
            raise DimensionMismatch("mask shape must match data shape")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(dx, dy, dz) in voxels."""
        dz, dy, dx = self.data.shape
        return (dx, dy, dz)

    @property
    def n_voxels(self) -> int:
        return self.data.size

    def linear_index(self, x: int, y: int, z: int) -> int:
        dx, dy, _ = self.dims
        return x + dx * (y + dy * z)

    def is_dense(self) -> bool:
        return not self.missing_mask.any()

    def validate(self):
        """Check the mask/sentinel correspondence invariant."""
        nan = np.isnan(self.data)
        if not np.array_equal(nan, self.missing_mask):
            raise ValueError("missing_mask out of sync with NaN sentinel")
        if not np.isfinite(self.data[~self.missing_mask]).all():
            raise ValueError("known voxels must be finite")

    def copy(self) -> "VolumeGrid":
        return VolumeGrid(self.data.copy(), self.missing_mask.copy(),
                          self.origin_offset)

    @classmethod
    def empty(cls, dims: tuple[int, int, int],
              origin_offset=(0, 0, 0)) -> "VolumeGrid":
        """All-missing grid of the given (dx, dy, dz) dims."""
        dx, dy, dz = dims
        data = np.full((dz, dy, dx), np.nan, dtype=np.float32)
        return cls(data, np.ones((dz, dy, dx), dtype=bool), origin_offset)


@dataclass
class BlockDescriptor:
    """Placement of one reconstruction block inside the full volume.

    A block is one in-plane quadrant crossed with one contiguous run of
    slices. Core regions of the 4k blocks tile the volume exactly; the grid
    handed to a worker may be larger by a read-only halo of known data.
    """

    quadrant_index: int
    chunk_index: int
    quadrant_origin: tuple[int, int]      # (x0, y0) of the quadrant core
    slice_range: tuple[int, int]          # [first, last) slice indices
    halo_width: int
    # Derived geometry, filled in by partition(): all in full-volume voxel
    # coordinates, half-open ranges.
    core_x: tuple[int, int] = (0, 0)
    core_y: tuple[int, int] = (0, 0)
    core_z: tuple[int, int] = (0, 0)
    grid_x: tuple[int, int] = (0, 0)
    grid_y: tuple[int, int] = (0, 0)
    grid_z: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not 0 <= self.quadrant_index < 4:
            raise ValueError("quadrant_index must be in 0..3")
        if self.halo_width < 0:
            raise ValueError("halo_width must be >= 0")


@dataclass
class TriangleMesh:
    """Triangle surface mesh in voxel coordinates."""

    vertices: np.ndarray   # (nv, 3) float64
    triangles: np.ndarray  # (nt, 3) int64
    normals: np.ndarray    # (nv, 3) float64, unit length

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.normals) != len(self.vertices):
            raise ValueError("need one normal per vertex")
        if len(self.triangles) and (self.triangles.min() < 0 or
                                    self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def normalize_stack(raw: SliceStack) -> SliceStack:
    """Linearly rescale a stack so the global min maps to 0 and max to 1.

    A constant stack (zero range) maps to all zeros.
    """
    data = raw.slices
    lo = float(data.min())
    hi = float(data.max())
    if hi > lo:
        out = (data - lo) / (hi - lo)
    else:
        out = np.zeros_like(data)
    return SliceStack(out.astype(np.float32), raw.pixel_spacing,
                      raw.slice_gap_mm, raw.axis_label)


def missing_planes_per_gap(slice_gap_mm: float, pixel_spacing_mm: float) -> int:
    """Number of voxel planes missing between two consecutive slices.

    With slices ``slice_gap_mm`` apart and voxels ``pixel_spacing_mm`` wide,
    g = max(0, round(gap / spacing) - 1); the reconstructed volume is then
    n + (n - 1) * g planes deep.
    """
    if slice_gap_mm <= 0 or pixel_spacing_mm <= 0:
        raise NonPositiveSpacing("gap and spacing must be > 0")
    ratio = slice_gap_mm / pixel_spacing_mm
    # round-half-away-from-zero keeps e.g. 2.5mm/1mm at g=2 regardless of
    # banker's rounding
    return max(0, int(np.floor(ratio + 0.5)) - 1)
