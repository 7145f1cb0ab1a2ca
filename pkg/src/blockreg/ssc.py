"""Self-similarity context descriptor and the SSC-MSE similarity score.

The descriptor compares, per voxel, the 12 orthogonal pairs of patches drawn
from the six-neighborhood offsets {+-step*e1, +-step*e2, +-step*e3} (the
pairs at distance sqrt(2)*step).  Patch distance is the mean squared
intensity difference over aligned (2*patch_radius+1)^3 patches; distances
are turned into channels by exp(-D_k / V) with V the variance-clamped mean
distance, then normalized so the largest channel per voxel is 1.  Because
intensities enter only through difference ratios, the descriptor is
invariant under global affine intensity rescaling, which is what makes the
score usable across modalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import GeometryError, StageError
from .geometry import Grid

__all__ = ["SSCParams", "SSCDescriptor", "pair_offsets", "compute_ssc", "ssc_mse"]

N_CHANNELS = 12

# six-neighborhood offsets in canonical order
_NEIGHBORS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)
# the 12 unordered orthogonal pairs, lexicographic by neighbor index
_PAIR_INDEX = [
    (i, j)
    for i in range(6)
    for j in range(i + 1, 6)
    if int(np.dot(_NEIGHBORS[i], _NEIGHBORS[j])) == 0
]
assert len(_PAIR_INDEX) == N_CHANNELS


def pair_offsets(step=1):
    """The two (12, 3) voxel-offset tables defining the channel pairs."""
    first = np.array([_NEIGHBORS[i] for i, _ in _PAIR_INDEX], dtype=np.int64) * step
    second = np.array([_NEIGHBORS[j] for _, j in _PAIR_INDEX], dtype=np.int64) * step
    return first, second


@dataclass(frozen=True)
class SSCParams:
    """Descriptor construction parameters."""

    patch_radius: int = 1
    neighbor_step: int = 1
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError(f"patch_radius must be >= 0, got {self.patch_radius}")
        if self.neighbor_step < 1:
            raise ValueError(f"neighbor_step must be >= 1, got {self.neighbor_step}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def min_extent(self):
        return 2 * (self.patch_radius + self.neighbor_step) + 1


@dataclass(frozen=True)
class SSCDescriptor:
    """12-channel per-voxel descriptor in [0, 1], max channel 1 per voxel.

    ``degenerate`` marks voxels whose patch neighborhood carried no structure
    (e.g. constant background); their channels are all ones and they are
    excluded from similarity scoring.
    """

    grid: Grid
    channels: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float64)
        if channels.shape != (N_CHANNELS,) + self.grid.dims:
            raise GeometryError(
                f"channel shape {channels.shape} does not match "
                f"({N_CHANNELS},) + {self.grid.dims}"
            )
        if channels.min() < 0.0 or channels.max() > 1.0:
            raise GeometryError("descriptor channels outside [0, 1]")
        degenerate = np.asarray(self.degenerate, dtype=bool)
        if degenerate.shape != self.grid.dims:
            raise GeometryError("degenerate flag shape does not match grid dims")
        channels = np.ascontiguousarray(channels)
        channels.flags.writeable = False
        degenerate = np.ascontiguousarray(degenerate)
        degenerate.flags.writeable = False
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "degenerate", degenerate)


def compute_ssc(volume, params=SSCParams(), threads=1):
    """Compute the descriptor for every voxel of a volume."""
    extent = params.min_extent()
    if any(d < extent for d in volume.grid.dims):
        raise GeometryError(
            f"volume dims {volume.grid.dims} too small for descriptor extent {extent}"
        )
    first, second = pair_offsets(params.neighbor_step)
    distances = _kernels.ssc_distances(
        volume.data, first, second, params.patch_radius, threads=threads
    )
    global_variance = float(volume.data.var())
    floor = params.epsilon * (global_variance + params.epsilon)
    mean_distance = distances.mean(axis=0)
    degenerate = mean_distance < floor
    clamped = np.maximum(mean_distance, floor)
    channels = np.exp(-distances / clamped)
    channels /= channels.max(axis=0)
    return SSCDescriptor(volume.grid, channels, degenerate)


def ssc_mse(fixed, moving, mask=None):
    """Mean squared channel difference over comparable voxels.

    Voxels flagged degenerate in either descriptor are excluded; with a mask,
    only in-mask voxels count.  Symmetric in its arguments, and exactly zero
    for a descriptor against itself.
    """
    if not fixed.grid.matches(moving.grid, tol=1e-6):
        raise GeometryError("descriptor grids do not match")
    usable = ~(fixed.degenerate | moving.degenerate)
    if mask is not None:
        if not mask.grid.matches(fixed.grid, tol=1e-6):
            raise GeometryError("mask grid does not match descriptor grid")
        usable &= mask.data
    count = int(np.count_nonzero(usable))
    if count == 0:
        raise StageError("no non-degenerate voxels to compare")
    diff = fixed.channels[:, usable] - moving.channels[:, usable]
    return float(np.einsum("ij,ij->", diff, diff) / (N_CHANNELS * count))
