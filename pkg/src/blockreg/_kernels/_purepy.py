"""NumPy implementations of the hot kernels.

Functionally equivalent to the compiled ``_native`` module; used when the
extension is unavailable.  The ``threads`` arguments are accepted for
signature compatibility and ignored (NumPy handles its own execution).
Output-voxel independence keeps every function deterministic.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_CHUNK = 16  # output slabs along axis 0, bounds temporary memory


def _sample_volume(src, x, y, z, background, nearest, clamp=False):
    """Sample ``src`` at continuous voxel coordinates.

    Out-of-lattice positions yield ``background`` unless ``clamp`` is set, in
    which case coordinates are clamped to the boundary (edge extension).
    """
    nx, ny, nz = src.shape
    if clamp:
        x = np.clip(x, 0.0, nx - 1.0)
        y = np.clip(y, 0.0, ny - 1.0)
        z = np.clip(z, 0.0, nz - 1.0)
        inb = True
    else:
        inb = (
            (x >= 0.0) & (x <= nx - 1.0)
            & (y >= 0.0) & (y <= ny - 1.0)
            & (z >= 0.0) & (z <= nz - 1.0)
        )
    if nearest:
        xi = np.clip(np.rint(x).astype(np.intp), 0, nx - 1)
        yi = np.clip(np.rint(y).astype(np.intp), 0, ny - 1)
        zi = np.clip(np.rint(z).astype(np.intp), 0, nz - 1)
        val = src[xi, yi, zi]
        return np.where(inb, val, background)

    x0 = np.clip(np.floor(x).astype(np.intp), 0, nx - 1)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, ny - 1)
    z0 = np.clip(np.floor(z).astype(np.intp), 0, nz - 1)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    val = (
        src[x0, y0, z0] * (gx * gy * gz)
        + src[x1, y0, z0] * (fx * gy * gz)
        + src[x0, y1, z0] * (gx * fy * gz)
        + src[x0, y0, z1] * (gx * gy * fz)
        + src[x1, y1, z0] * (fx * fy * gz)
        + src[x1, y0, z1] * (fx * gy * fz)
        + src[x0, y1, z1] * (gx * fy * fz)
        + src[x1, y1, z1] * (fx * fy * fz)
    )
    return np.where(inb, val, background)


def warp_affine(src, matrix, out_dims, background, nearest, clamp, threads):
    src = np.ascontiguousarray(src, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    ox, oy, oz = (int(d) for d in out_dims)
    out = np.empty((ox, oy, oz), dtype=np.float64)
    jj, kk = np.meshgrid(
        np.arange(oy, dtype=np.float64), np.arange(oz, dtype=np.float64), indexing="ij"
    )
    for i0 in range(0, ox, _CHUNK):
        i1 = min(i0 + _CHUNK, ox)
        ii = np.arange(i0, i1, dtype=np.float64)[:, None, None]
        j = jj[None, :, :]
        k = kk[None, :, :]
        x = matrix[0, 0] * ii + matrix[0, 1] * j + matrix[0, 2] * k + matrix[0, 3]
        y = matrix[1, 0] * ii + matrix[1, 1] * j + matrix[1, 2] * k + matrix[1, 3]
        z = matrix[2, 0] * ii + matrix[2, 1] * j + matrix[2, 2] * k + matrix[2, 3]
        out[i0:i1] = _sample_volume(src, x, y, z, background, nearest, clamp)
    return out


def warp_field(src, world_to_voxel_src, voxel_to_world_out, vectors,
               background, nearest, clamp, threads):
    src = np.ascontiguousarray(src, dtype=np.float64)
    w2v = np.asarray(world_to_voxel_src, dtype=np.float64)
    v2w = np.asarray(voxel_to_world_out, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    ox, oy, oz = vectors.shape[:3]
    out = np.empty((ox, oy, oz), dtype=np.float64)
    jj, kk = np.meshgrid(
        np.arange(oy, dtype=np.float64), np.arange(oz, dtype=np.float64), indexing="ij"
    )
    for i0 in range(0, ox, _CHUNK):
        i1 = min(i0 + _CHUNK, ox)
        ii = np.arange(i0, i1, dtype=np.float64)[:, None, None]
        j = jj[None, :, :]
        k = kk[None, :, :]
        wx = v2w[0, 0] * ii + v2w[0, 1] * j + v2w[0, 2] * k + v2w[0, 3]
        wy = v2w[1, 0] * ii + v2w[1, 1] * j + v2w[1, 2] * k + v2w[1, 3]
        wz = v2w[2, 0] * ii + v2w[2, 1] * j + v2w[2, 2] * k + v2w[2, 3]
        wx = wx + vectors[i0:i1, :, :, 0]
        wy = wy + vectors[i0:i1, :, :, 1]
        wz = wz + vectors[i0:i1, :, :, 2]
        x = w2v[0, 0] * wx + w2v[0, 1] * wy + w2v[0, 2] * wz + w2v[0, 3]
        y = w2v[1, 0] * wx + w2v[1, 1] * wy + w2v[1, 2] * wz + w2v[1, 3]
        z = w2v[2, 0] * wx + w2v[2, 1] * wy + w2v[2, 2] * wz + w2v[2, 3]
        out[i0:i1] = _sample_volume(src, x, y, z, background, nearest, clamp)
    return out


def _box_mean(padded, radius, dims):
    """Mean over the (2r+1)^3 window centered at each voxel of the original
    lattice; ``padded`` extends the lattice by ``radius`` on every side."""
    width = 2 * radius + 1
    acc = padded
    for axis in range(3):
        n = dims[axis]
        sl = [slice(None)] * 3
        sl[axis] = slice(0, n)
        total = acc[tuple(sl)].copy()
        for t in range(1, width):
            sl[axis] = slice(t, t + n)
            total += acc[tuple(sl)]
        acc = total
    return acc / float(width**3)


def ssc_distances(img, offsets_a, offsets_b, patch_radius, threads):
    img = np.ascontiguousarray(img, dtype=np.float64)
    offsets_a = np.asarray(offsets_a, dtype=np.int64)
    offsets_b = np.asarray(offsets_b, dtype=np.int64)
    n_pairs = offsets_a.shape[0]
    r = int(patch_radius)
    dims = img.shape
    pad = int(max(np.abs(offsets_a).max(), np.abs(offsets_b).max())) + r
    padded = np.pad(img, pad, mode="edge")
    distances = np.empty((n_pairs,) + dims, dtype=np.float64)
    ext = tuple(n + 2 * r for n in dims)
    for k in range(n_pairs):
        sa = tuple(
            slice(pad + int(offsets_a[k, d]) - r, pad + int(offsets_a[k, d]) - r + ext[d])
            for d in range(3)
        )
        sb = tuple(
            slice(pad + int(offsets_b[k, d]) - r, pad + int(offsets_b[k, d]) - r + ext[d])
            for d in range(3)
        )
        diff = padded[sa] - padded[sb]
        distances[k] = _box_mean(diff * diff, r, dims)
    return distances


def block_match(fixed, moving, origins, block_size, radius, stride, threads):
    fixed = np.ascontiguousarray(fixed, dtype=np.float64)
    moving = np.ascontiguousarray(moving, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64).reshape(-1, 3)
    bs = int(block_size)
    n_blocks = origins.shape[0]
    dims = np.asarray(fixed.shape, dtype=np.int64)

    f_windows = sliding_window_view(fixed, (bs, bs, bs))
    f_blocks = f_windows[origins[:, 0], origins[:, 1], origins[:, 2]].reshape(n_blocks, -1)
    f_mean = f_blocks.mean(axis=1)
    f_centered = f_blocks - f_mean[:, None]
    s_ff = np.einsum("ij,ij->i", f_centered, f_centered)
    usable = s_ff > 0.0

    m_windows = sliding_window_view(moving, (bs, bs, bs))
    m_limit = np.asarray(moving.shape, dtype=np.int64) - bs

    best_score = np.full(n_blocks, -1.0)
    best_d2 = np.full(n_blocks, np.iinfo(np.int64).max, dtype=np.int64)
    best_off = np.zeros((n_blocks, 3), dtype=np.int64)

    offsets = range(-int(radius), int(radius) + 1, int(stride))
    for da in offsets:
        for db in offsets:
            for dc in offsets:
                starts = origins + np.array([da, db, dc], dtype=np.int64)
                ok = (
                    usable
                    & (starts >= 0).all(axis=1)
                    & (starts <= m_limit).all(axis=1)
                )
                idx = np.flatnonzero(ok)
                if idx.size == 0:
                    continue
                sub = starts[idx]
                m = m_windows[sub[:, 0], sub[:, 1], sub[:, 2]].reshape(idx.size, -1)
                m_mean = m.mean(axis=1)
                mc = m - m_mean[:, None]
                s_mm = np.einsum("ij,ij->i", mc, mc)
                s_fm = np.einsum("ij,ij->i", f_centered[idx], mc)
                with np.errstate(invalid="ignore", divide="ignore"):
                    score = np.abs(s_fm) / np.sqrt(s_ff[idx] * s_mm)
                score = np.minimum(score, 1.0)
                dd = da * da + db * db + dc * dc
                better = (s_mm > 0.0) & (
                    (score > best_score[idx])
                    | ((score == best_score[idx]) & (dd < best_d2[idx]))
                )
                win = idx[better]
                if win.size:
                    best_score[win] = score[better]
                    best_d2[win] = dd
                    best_off[win] = (da, db, dc)

    valid = best_score >= 0.0
    best_score[~valid] = 0.0
    return best_off, best_score, valid
