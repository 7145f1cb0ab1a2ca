"""Hot numeric kernels with a compiled core and a NumPy fallback.

The compiled extension (``_native``, Cython) is preferred when it imported
successfully; otherwise the pure-NumPy implementation (``_purepy``) is used.
Set ``BLOCKREG_BACKEND=purepy`` or ``BLOCKREG_BACKEND=native`` to force a
choice at import time.  Both backends implement the same contracts; each is
deterministic, including across thread counts (output voxels are independent,
there are no cross-thread reductions).
"""

import os

from . import _purepy

try:
    from . import _native
except ImportError:
    _native = None

_BACKENDS = {"purepy": _purepy}
if _native is not None:
    _BACKENDS["native"] = _native


def _default_backend():
    forced = os.environ.get("BLOCKREG_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"BLOCKREG_BACKEND={forced!r} unavailable; choices: {sorted(_BACKENDS)}"
            )
        return forced
    return "native" if _native is not None else "purepy"


_active_name = _default_backend()
_active = _BACKENDS[_active_name]


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return _active_name


def use(name):
    """Switch the active backend; mainly for tests and benchmarks."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_BACKENDS)}")
    _active_name = name
    _active = _BACKENDS[name]


def warp_affine(src, matrix, out_dims, background=0.0, nearest=False,
                clamp=False, threads=1):
    """Resample ``src`` onto a new lattice.

    ``matrix`` is the 4x4 map from output voxel index to continuous source
    voxel index.  Samples outside the source lattice get ``background``, or
    the edge-clamped value when ``clamp`` is set.
    """
    return _active.warp_affine(
        src, matrix, out_dims, background, nearest, bool(clamp), int(threads)
    )


def warp_field(src, world_to_voxel_src, voxel_to_world_out, vectors,
               background=0.0, nearest=False, clamp=False, threads=1):
    """Sample ``src`` at ``world(v) + vectors[v]`` for every output voxel v."""
    return _active.warp_field(
        src, world_to_voxel_src, voxel_to_world_out, vectors,
        background, nearest, bool(clamp), int(threads),
    )


def ssc_distances(img, offsets_a, offsets_b, patch_radius, threads=1):
    """Patch-pair mean squared distances for the descriptor channels.

    Returns an array of shape ``(n_pairs, nx, ny, nz)`` holding, per listed
    offset pair, the mean squared intensity difference between the two
    aligned patches around every voxel (edge-clamped sampling).
    """
    return _active.ssc_distances(
        img, offsets_a, offsets_b, int(patch_radius), int(threads)
    )


def block_match(fixed, moving, origins, block_size, radius, stride, threads=1):
    """Best |NCC| match for each fixed block within a search window.

    Returns ``(offsets, scores, valid)``: per block the winning voxel offset,
    its |NCC| score clamped to [0, 1], and whether a match was found at all
    (false when the fixed block has zero variance or no candidate fits).
    """
    return _active.block_match(
        fixed, moving, origins, int(block_size), int(radius), int(stride), int(threads)
    )
