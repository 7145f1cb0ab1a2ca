"""Block partition, variance-based selection and NCC correspondence search.

The fixed image is tiled into non-overlapping cubes (trailing partial blocks
discarded) and the highest-variance fraction is matched against the moving
image within a local search window, scoring candidates by absolute
normalized cross correlation so contrast inversion between modalities still
matches.  Correspondences are block-center point pairs in world mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import GeometryError, StageError
from .geometry import world_from_voxel

__all__ = [
    "BlockMatchParams",
    "CorrespondenceSet",
    "partition_and_select",
    "match_blocks",
    "write_correspondences_csv",
]


@dataclass(frozen=True)
class BlockMatchParams:
    """Block size and search window; defaults follow the standard recipe
    of 4-voxel blocks with the top 25% selected by intensity variance."""

    block_size: int = 4
    active_fraction: float = 0.25
    search_radius: int = 4
    search_stride: int = 1

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")
        if not 0.0 < self.active_fraction <= 1.0:
            raise ValueError(
                f"active_fraction must be in (0, 1], got {self.active_fraction}"
            )
        if self.search_radius < 1:
            raise ValueError(f"search_radius must be >= 1, got {self.search_radius}")
        if self.search_stride < 1:
            raise ValueError(f"search_stride must be >= 1, got {self.search_stride}")


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched fixed/moving world points with |NCC| scores in [0, 1]."""

    fixed_points: np.ndarray
    moving_points: np.ndarray
    scores: np.ndarray
    source_level: str = ""

    def __post_init__(self):
        fixed = np.asarray(self.fixed_points, dtype=np.float64).reshape(-1, 3)
        moving = np.asarray(self.moving_points, dtype=np.float64).reshape(-1, 3)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(fixed) != len(moving) or len(fixed) != len(scores):
            raise GeometryError("correspondence arrays have mismatched lengths")
        if not (np.all(np.isfinite(fixed)) and np.all(np.isfinite(moving))):
            raise GeometryError("correspondence coordinates must be finite")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise GeometryError("correspondence scores must lie in [0, 1]")
        if len(np.unique(fixed, axis=0)) != len(fixed):
            raise GeometryError("duplicate fixed points in correspondence set")
        for name, arr in (("fixed_points", fixed), ("moving_points", moving),
                          ("scores", scores)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.scores)


def ceil_fraction(fraction, count):
    """ceil(fraction * count) robust to float representation of the product."""
    return int(math.ceil(fraction * count - 1e-9))


def _block_grid_counts(dims, block_size):
    return tuple(d // block_size for d in dims)


def partition_and_select(fixed, params=BlockMatchParams()):
    """Origins (voxel indices) of the highest-variance blocks.

    Blocks are tiled from index origin 0; returned ordered by variance
    descending, ties broken by lowest linear block index (first axis
    fastest).  Exactly ceil(active_fraction * n_blocks) origins are returned;
    zero-variance blocks may be among them and are skipped downstream.
    """
    bs = params.block_size
    dims = fixed.grid.dims
    if any(d < bs for d in dims):
        raise GeometryError(f"volume dims {dims} smaller than one {bs}-voxel block")
    c0, c1, c2 = _block_grid_counts(dims, bs)
    trimmed = fixed.data[: c0 * bs, : c1 * bs, : c2 * bs]
    blocks = trimmed.reshape(c0, bs, c1, bs, c2, bs).transpose(0, 2, 4, 1, 3, 5)
    variances = blocks.reshape(c0, c1, c2, -1).var(axis=-1)

    b0, b1, b2 = np.meshgrid(
        np.arange(c0), np.arange(c1), np.arange(c2), indexing="ij"
    )
    linear = (b0 + c0 * (b1 + c1 * b2)).ravel()
    flat_var = variances.ravel()
    order = np.lexsort((linear, -flat_var))
    keep = ceil_fraction(params.active_fraction, flat_var.size)
    chosen = order[:keep]
    origins = np.stack(
        [b0.ravel()[chosen], b1.ravel()[chosen], b2.ravel()[chosen]], axis=1
    ).astype(np.int64) * bs
    return origins


def match_blocks(fixed, moving, active, params=BlockMatchParams(),
                 source_level="", threads=1):
    """Find the best |NCC| moving block for each active fixed block.

    Both volumes must share a grid (the moving image is expected to be the
    current warp of the original moving volume onto the fixed lattice).
    Candidates are the blocks whose origin lies within +-search_radius voxels
    (stepped by search_stride); ties are broken by smaller displacement, then
    lexicographically earlier offset.  Blocks with zero variance on either
    side never produce a correspondence.
    """
    if not fixed.grid.matches(moving.grid, tol=1e-6):
        raise GeometryError("fixed and moving grids must match for block matching")
    origins = np.asarray(active, dtype=np.int64).reshape(-1, 3)
    if origins.size == 0:
        raise StageError("empty active block set")
    counts = _block_grid_counts(fixed.grid.dims, params.block_size)
    block_index = origins[:, 0] // params.block_size + counts[0] * (
        origins[:, 1] // params.block_size
        + counts[1] * (origins[:, 2] // params.block_size)
    )
    origins = origins[np.argsort(block_index, kind="stable")]

    offsets, scores, valid = _kernels.block_match(
        fixed.data, moving.data, origins,
        params.block_size, params.search_radius, params.search_stride,
        threads=threads,
    )
    centers = origins[valid] + (params.block_size - 1) / 2.0
    fixed_points = world_from_voxel(fixed.grid, centers)
    moving_points = world_from_voxel(fixed.grid, centers + offsets[valid])
    return CorrespondenceSet(
        fixed_points, moving_points, scores[valid], source_level=source_level
    )


def write_correspondences_csv(correspondences, path):
    """Debug dump: fixed_xyz, moving_xyz, score per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("fixed_x,fixed_y,fixed_z,moving_x,moving_y,moving_z,score\n")
        for f, m, s in zip(
            correspondences.fixed_points,
            correspondences.moving_points,
            correspondences.scores,
        ):
            fh.write(
                f"{f[0]:.17g},{f[1]:.17g},{f[2]:.17g},"
                f"{m[0]:.17g},{m[1]:.17g},{m[2]:.17g},{s:.17g}\n"
            )
