"""Interpolation, pyramid resampling, warping, cropping and warp diagnostics.

Transform direction convention (used everywhere): an affine maps fixed-space
world points to moving-space world points, so warping samples the moving
image at ``transform(world(v))`` for every target voxel ``v``.  Displacement
fields live on the target (fixed) grid and store world-mm vectors added to
the voxel's world position before sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import GeometryError
from .geometry import AffineTransform, Grid, Mask, Volume, world_from_voxel

__all__ = [
    "DisplacementField",
    "InterpolationKind",
    "resample_to_resolution",
    "apply_affine",
    "apply_field",
    "compose_affine_then_field",
    "crop_to_mask",
    "mask_bounding_box",
    "crop_volume",
    "crop_mask",
    "embed_field",
    "resample_field_to_grid",
    "resample_mask_to_grid",
    "jacobian_determinants",
]

# anti-alias smoothing strength per unit of downsampling ratio
SMOOTH_SIGMA_FACTOR = 0.42

_IDENTITY4 = np.eye(4)


class InterpolationKind(Enum):
    """Sampling scheme: trilinear for intensities, nearest for masks/labels."""

    NEAREST = "nearest"
    TRILINEAR = "trilinear"


@dataclass(frozen=True)
class DisplacementField:
    """Per-voxel world-mm displacement vectors on a fixed-image grid."""

    grid: Grid
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.shape != self.grid.dims + (3,):
            raise GeometryError(
                f"vector shape {vectors.shape} does not match grid dims {self.grid.dims}"
            )
        if not np.all(np.isfinite(vectors)):
            raise GeometryError("displacement field contains non-finite vectors")
        vectors = np.ascontiguousarray(vectors)
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros(grid.dims + (3,)))

    def max_magnitude(self):
        return float(np.sqrt((self.vectors**2).sum(axis=-1)).max())


def _voxel_map(src_grid, transform, target_grid):
    """4x4 matrix sending target voxel indices to source voxel coordinates."""
    return src_grid.world_to_voxel @ transform @ target_grid.voxel_to_world


def resample_to_resolution(volume, iso_spacing_mm, threads=1):
    """Resample onto an isotropic grid covering the same world bounding box.

    Keeps the source orientation and corner; applies Gaussian pre-smoothing
    (sigma = 0.42 * spacing ratio, in source voxels) on axes that are
    downsampled.
    """
    spacing = float(iso_spacing_mm)
    if not np.isfinite(spacing) or spacing <= 0:
        raise GeometryError(f"target spacing must be positive, got {iso_spacing_mm}")
    grid = volume.grid
    direction = grid.voxel_to_world[:3, :3] / np.asarray(grid.spacing)
    new_dims = []
    for axis in range(3):
        extent = (grid.dims[axis] - 1) * grid.spacing[axis]
        n = int(np.ceil(extent / spacing - 1e-9)) + 1
        if n < 1:
            raise GeometryError(f"resampling to {spacing} mm yields empty axis {axis}")
        new_dims.append(n)
    matrix = np.eye(4)
    matrix[:3, :3] = direction * spacing
    matrix[:3, 3] = grid.voxel_to_world[:3, 3]
    new_grid = Grid(tuple(new_dims), (spacing,) * 3, matrix)

    sigmas = []
    for axis in range(3):
        ratio = spacing / grid.spacing[axis]
        sigmas.append(SMOOTH_SIGMA_FACTOR * ratio if ratio > 1.0 + 1e-9 else 0.0)
    data = volume.data
    if any(s > 0 for s in sigmas):
        data = ndimage.gaussian_filter(data, sigma=sigmas, mode="nearest")
    out = _kernels.warp_affine(
        data, _voxel_map(grid, _IDENTITY4, new_grid), new_grid.dims,
        background=0.0, nearest=False, threads=threads,
    )
    return Volume(new_grid, out)


def apply_affine(moving, transform, target_grid,
                 interp=InterpolationKind.TRILINEAR, background=0.0,
                 edge_clamp=False, threads=1):
    """Warp ``moving`` onto ``target_grid`` through a world-to-world affine.

    Out-of-field samples get ``background``; with ``edge_clamp`` they take
    the nearest boundary value instead (used by iterative stages to keep
    their objectives continuous at the volume edge).
    """
    if np.array_equal(transform.matrix, _IDENTITY4) and target_grid.matches(moving.grid, tol=0.0):
        return Volume(target_grid, moving.data)
    out = _kernels.warp_affine(
        moving.data,
        _voxel_map(moving.grid, transform.matrix, target_grid),
        target_grid.dims,
        background=background,
        nearest=interp is InterpolationKind.NEAREST,
        clamp=edge_clamp,
        threads=threads,
    )
    return Volume(target_grid, out)


def apply_field(moving, field, interp=InterpolationKind.TRILINEAR,
                background=0.0, edge_clamp=False, threads=1):
    """Warp ``moving`` by a displacement field; output lives on the field grid."""
    out = _kernels.warp_field(
        moving.data,
        moving.grid.world_to_voxel,
        field.grid.voxel_to_world,
        field.vectors,
        background=background,
        nearest=interp is InterpolationKind.NEAREST,
        clamp=edge_clamp,
        threads=threads,
    )
    return Volume(field.grid, out)


def _world_slab(grid, i0, i1):
    """World coordinates of voxels [i0, i1) x full j x full k, shape (.., 3)."""
    _, ny, nz = grid.dims
    ii, jj, kk = np.meshgrid(
        np.arange(i0, i1, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nz, dtype=np.float64),
        indexing="ij",
    )
    idx = np.stack([ii, jj, kk], axis=-1)
    matrix = grid.voxel_to_world
    return idx @ matrix[:3, :3].T + matrix[:3, 3]


def compose_affine_then_field(transform, field, slab=16):
    """Fold an affine into a field: total warp samples at a(world(v)+f(v)).

    The result g satisfies world(v) + g(v) = a(world(v) + f(v)) for every
    voxel, letting the whole pipeline resample the moving image exactly once.
    """
    linear = transform.linear
    offset = transform.offset
    nx = field.grid.dims[0]
    out = np.empty_like(field.vectors)
    for i0 in range(0, nx, slab):
        i1 = min(i0 + slab, nx)
        world = _world_slab(field.grid, i0, i1)
        target = (world + field.vectors[i0:i1]) @ linear.T + offset
        out[i0:i1] = target - world
    return DisplacementField(field.grid, out)


def mask_bounding_box(mask, margin_voxels=0):
    """Inclusive-exclusive (lo, hi) of the true region dilated by a margin."""
    if margin_voxels < 0:
        raise GeometryError(f"margin must be nonnegative, got {margin_voxels}")
    nz = np.nonzero(mask.data)
    if nz[0].size == 0:
        raise GeometryError("empty mask")
    lo = np.array([int(axis.min()) - margin_voxels for axis in nz])
    hi = np.array([int(axis.max()) + 1 + margin_voxels for axis in nz])
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, mask.grid.dims)
    return tuple(lo), tuple(hi)


def _cropped_grid(grid, lo, hi):
    dims = tuple(int(h - l) for l, h in zip(lo, hi))
    matrix = grid.voxel_to_world.copy()
    matrix[:3, 3] = world_from_voxel(grid, np.asarray(lo, dtype=np.float64))
    return Grid(dims, grid.spacing, matrix)


def crop_volume(volume, lo, hi):
    data = volume.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    return Volume(_cropped_grid(volume.grid, lo, hi), data)


def crop_mask(mask, lo, hi):
    data = mask.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    return Mask(_cropped_grid(mask.grid, lo, hi), data)


def crop_to_mask(volume, mask, margin_voxels=0):
    """Crop to the mask's bounding box; world coordinates are preserved."""
    if not mask.grid.matches(volume.grid):
        raise GeometryError("mask grid does not match volume grid")
    lo, hi = mask_bounding_box(mask, margin_voxels)
    return crop_volume(volume, lo, hi)


def embed_field(field, full_grid, lo):
    """Zero-pad a cropped field back onto ``full_grid`` at voxel offset ``lo``."""
    vectors = np.zeros(full_grid.dims + (3,))
    dims = field.grid.dims
    vectors[lo[0]:lo[0] + dims[0], lo[1]:lo[1] + dims[1], lo[2]:lo[2] + dims[2]] = (
        field.vectors
    )
    return DisplacementField(full_grid, vectors)


def resample_field_to_grid(field, grid, threads=1):
    """Trilinearly resample each vector component onto another grid."""
    matrix = _voxel_map(field.grid, _IDENTITY4, grid)
    components = [
        _kernels.warp_affine(
            np.ascontiguousarray(field.vectors[..., c]), matrix, grid.dims,
            background=0.0, nearest=False, threads=threads,
        )
        for c in range(3)
    ]
    return DisplacementField(grid, np.stack(components, axis=-1))


def resample_mask_to_grid(mask, grid, threads=1):
    """Nearest-neighbor resample of a mask onto another grid."""
    matrix = _voxel_map(mask.grid, _IDENTITY4, grid)
    out = _kernels.warp_affine(
        mask.data.astype(np.float64), matrix, grid.dims,
        background=0.0, nearest=True, threads=threads,
    )
    return Mask(grid, out > 0.5)


def jacobian_determinants(field):
    """Determinant of the Jacobian of x -> x + f(x) per voxel.

    Central differences in the interior, one-sided at the boundary; values
    near 1 mean locally volume-preserving, nonpositive values mean folding.
    """
    vectors = field.vectors
    dims = field.grid.dims
    m3 = field.grid.voxel_to_world[:3, :3]
    jac = np.empty(dims + (3, 3))
    for axis in range(3):
        if dims[axis] > 1:
            grad = np.gradient(vectors, axis=axis)
        else:
            grad = np.zeros_like(vectors)
        jac[..., :, axis] = m3[:, axis] + grad
    det = (
        jac[..., 0, 0] * (jac[..., 1, 1] * jac[..., 2, 2] - jac[..., 1, 2] * jac[..., 2, 1])
        - jac[..., 0, 1] * (jac[..., 1, 0] * jac[..., 2, 2] - jac[..., 1, 2] * jac[..., 2, 0])
        + jac[..., 0, 2] * (jac[..., 1, 0] * jac[..., 2, 1] - jac[..., 1, 1] * jac[..., 2, 0])
    )
    return Volume(field.grid, det / np.linalg.det(m3))
