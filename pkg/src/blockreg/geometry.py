"""Core volume and geometry types shared by every registration stage.

Conventions used throughout the package:

* Arrays attached to a :class:`Grid` are indexed ``[i, j, k]`` along axes
  0, 1, 2.  When data is linearized (file I/O), the first index ``i`` varies
  fastest.
* World coordinates are always millimeters; voxel coordinates are continuous
  voxel indices.
* All types are immutable after construction and safe to share across
  threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

__all__ = [
    "Grid",
    "Volume",
    "Mask",
    "AffineTransform",
    "LandmarkSet",
    "world_from_voxel",
    "voxel_from_world",
    "compose",
]

_LAST_ROW = (0.0, 0.0, 0.0, 1.0)


def _check_last_row(matrix, what):
    if tuple(matrix[3]) != _LAST_ROW:
        raise GeometryError(f"last row of {what} must be (0, 0, 0, 1), got {matrix[3]}")


def _frozen(array):
    out = np.ascontiguousarray(array)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Grid:
    """Regular 3-D sampling lattice: shape, voxel size and world placement.

    ``voxel_to_world`` maps homogeneous continuous voxel indices to world
    millimeters.  ``spacing`` must agree with the column norms of its upper
    3x3 block (relative tolerance 1e-6).
    """

    dims: tuple
    spacing: tuple
    voxel_to_world: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise GeometryError(f"dims must be 3 positive integers, got {self.dims}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise GeometryError(f"spacing must be 3 positive reals, got {self.spacing}")
        matrix = np.array(self.voxel_to_world, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise GeometryError(f"voxel_to_world must be 4x4, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise GeometryError("voxel_to_world contains non-finite entries")
        _check_last_row(matrix, "voxel_to_world")
        if abs(np.linalg.det(matrix[:3, :3])) <= 1e-12:
            raise GeometryError("voxel_to_world has a singular 3x3 part")
        norms = np.linalg.norm(matrix[:3, :3], axis=0)
        if not np.allclose(norms, spacing, rtol=1e-6, atol=0.0):
            raise GeometryError(
                f"column norms {norms} of voxel_to_world disagree with spacing {spacing}"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "voxel_to_world", _frozen(matrix))

    @classmethod
    def isotropic(cls, dims, spacing_mm, origin=(0.0, 0.0, 0.0)):
        """Axis-aligned grid with equal spacing on every axis."""
        matrix = np.diag([spacing_mm, spacing_mm, spacing_mm, 1.0])
        matrix[:3, 3] = origin
        return cls(tuple(dims), (spacing_mm,) * 3, matrix)

    @classmethod
    def from_matrix(cls, dims, voxel_to_world):
        """Build a grid deriving spacing from the matrix column norms."""
        matrix = np.asarray(voxel_to_world, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise GeometryError(f"voxel_to_world must be 4x4, got shape {matrix.shape}")
        spacing = tuple(np.linalg.norm(matrix[:3, :3], axis=0))
        return cls(tuple(dims), spacing, matrix)

    @property
    def world_to_voxel(self):
        try:
            return np.linalg.inv(self.voxel_to_world)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded in init
            raise GeometryError("voxel_to_world is singular") from exc

    def world_center(self):
        """World position of the grid's voxel-center centroid."""
        center_index = (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0
        return world_from_voxel(self, center_index)

    def corner_indices(self):
        """The 8 corner voxel indices (0 and dim-1 per axis), shape (8, 3)."""
        nx, ny, nz = (d - 1.0 for d in self.dims)
        return np.array(
            [(x, y, z) for x in (0.0, nx) for y in (0.0, ny) for z in (0.0, nz)]
        )

    def corners_world(self):
        return world_from_voxel(self, self.corner_indices())

    def matches(self, other, tol=1e-6):
        """True when dims are equal and spacing/matrix agree within ``tol``."""
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0.0, atol=tol)
            and np.allclose(self.voxel_to_world, other.voxel_to_world, rtol=0.0, atol=tol)
        )


@dataclass(frozen=True)
class Volume:
    """Scalar 3-D image on a grid; intensities are finite float64."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != self.grid.dims:
            raise GeometryError(
                f"data shape {data.shape} does not match grid dims {self.grid.dims}"
            )
        if not np.all(np.isfinite(data)):
            raise GeometryError("volume contains non-finite intensities")
        object.__setattr__(self, "data", _frozen(data))


@dataclass(frozen=True)
class Mask:
    """Per-voxel boolean region on the same grid as the volume it masks."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.bool_:
            data = data.astype(bool)
        if data.shape != self.grid.dims:
            raise GeometryError(
                f"mask shape {data.shape} does not match grid dims {self.grid.dims}"
            )
        object.__setattr__(self, "data", _frozen(data))

    def count(self):
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True)
class AffineTransform:
    """Homogeneous 4x4 world(mm) -> world(mm) map, resampling convention.

    In this package an affine maps fixed-space world points to moving-space
    world points: warping samples the moving image at ``transform(x)`` for
    each fixed-space location ``x``.
    """

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise GeometryError(f"affine matrix must be 4x4, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise GeometryError("affine matrix contains non-finite entries")
        _check_last_row(matrix, "affine matrix")
        if abs(np.linalg.det(matrix[:3, :3])) <= 1e-12:
            raise GeometryError("affine matrix is not invertible")
        object.__setattr__(self, "matrix", _frozen(matrix))

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    @classmethod
    def translation(cls, t):
        matrix = np.eye(4)
        matrix[:3, 3] = t
        return cls(matrix)

    @classmethod
    def from_linear(cls, linear, offset):
        matrix = np.eye(4)
        matrix[:3, :3] = linear
        matrix[:3, 3] = offset
        return cls(matrix)

    @property
    def linear(self):
        return self.matrix[:3, :3]

    @property
    def offset(self):
        return self.matrix[:3, 3]

    def apply(self, points):
        """Map world points, shape (3,) or (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        out = pts.reshape(-1, 3) @ self.linear.T + self.offset
        return out[0] if single else out

    def inverse(self):
        return AffineTransform(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered world-space points (mm) with optional per-point labels."""

    points: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise GeometryError(f"landmark points must be (N, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise GeometryError("landmark coordinates must be finite")
        if self.labels is not None:
            labels = tuple(str(lbl) for lbl in self.labels)
            if len(labels) != len(points):
                raise GeometryError(
                    f"{len(labels)} labels for {len(points)} landmarks"
                )
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "points", _frozen(points))

    def __len__(self):
        return len(self.points)


def world_from_voxel(grid, index):
    """World position (mm) of a continuous voxel index; shape (3,) or (N, 3)."""
    idx = np.asarray(index, dtype=np.float64)
    single = idx.ndim == 1
    pts = idx.reshape(-1, 3)
    matrix = grid.voxel_to_world
    out = pts @ matrix[:3, :3].T + matrix[:3, 3]
    return out[0] if single else out


def voxel_from_world(grid, point):
    """Continuous voxel index of a world position; inverse of world_from_voxel."""
    matrix = grid.voxel_to_world
    try:
        inv = np.linalg.inv(matrix)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("grid voxel_to_world is singular") from exc
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    out = pts.reshape(-1, 3) @ inv[:3, :3].T + inv[:3, 3]
    return out[0] if single else out


def compose(a, b):
    """Transform equal to applying ``b`` first, then ``a``."""
    matrix = a.matrix @ b.matrix
    matrix[3] = (0.0, 0.0, 0.0, 1.0)
    return AffineTransform(matrix)
