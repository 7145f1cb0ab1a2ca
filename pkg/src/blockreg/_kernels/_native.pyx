# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: trilinear warping, descriptor patch distances, NCC block
search.  Parallel loops are plain maps over independent output elements, so
results are bit-identical for any thread count."""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport fabs, floor, rint, sqrt

cnp.import_array()


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline double _clampd(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline double _trilinear(const double[:, :, ::1] src,
                              double x, double y, double z,
                              double background, bint clamp) noexcept nogil:
    cdef Py_ssize_t nx = src.shape[0], ny = src.shape[1], nz = src.shape[2]
    cdef Py_ssize_t x0, y0, z0, x1, y1, z1
    cdef double fx, fy, fz, gx, gy, gz
    if clamp:
        x = _clampd(x, 0.0, nx - 1.0)
        y = _clampd(y, 0.0, ny - 1.0)
        z = _clampd(z, 0.0, nz - 1.0)
    elif x < 0.0 or y < 0.0 or z < 0.0 or x > nx - 1.0 or y > ny - 1.0 or z > nz - 1.0:
        return background
    x0 = _clampi(<Py_ssize_t>floor(x), 0, nx - 1)
    y0 = _clampi(<Py_ssize_t>floor(y), 0, ny - 1)
    z0 = _clampi(<Py_ssize_t>floor(z), 0, nz - 1)
    x1 = x0 + 1 if x0 + 1 < nx else nx - 1
    y1 = y0 + 1 if y0 + 1 < ny else ny - 1
    z1 = z0 + 1 if z0 + 1 < nz else nz - 1
    fx = x - x0
    fy = y - y0
    fz = z - z0
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    return (src[x0, y0, z0] * gx * gy * gz
            + src[x1, y0, z0] * fx * gy * gz
            + src[x0, y1, z0] * gx * fy * gz
            + src[x0, y0, z1] * gx * gy * fz
            + src[x1, y1, z0] * fx * fy * gz
            + src[x1, y0, z1] * fx * gy * fz
            + src[x0, y1, z1] * gx * fy * fz
            + src[x1, y1, z1] * fx * fy * fz)


cdef inline double _nearest(const double[:, :, ::1] src,
                            double x, double y, double z,
                            double background, bint clamp) noexcept nogil:
    cdef Py_ssize_t nx = src.shape[0], ny = src.shape[1], nz = src.shape[2]
    if not clamp:
        if x < 0.0 or y < 0.0 or z < 0.0 or x > nx - 1.0 or y > ny - 1.0 or z > nz - 1.0:
            return background
    return src[_clampi(<Py_ssize_t>rint(x), 0, nx - 1),
               _clampi(<Py_ssize_t>rint(y), 0, ny - 1),
               _clampi(<Py_ssize_t>rint(z), 0, nz - 1)]


def warp_affine(src, matrix, out_dims, double background, bint nearest,
                bint clamp, int threads):
    cdef const double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:, ::1] m = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef Py_ssize_t ox = out_dims[0], oy = out_dims[1], oz = out_dims[2]
    out_arr = np.empty((ox, oy, oz), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double x, y, z, xi, xj, xk
    cdef int nt = threads if threads > 0 else 1
    with nogil:
        for i in prange(ox, num_threads=nt, schedule='static'):
            xi = <double>i
            for j in range(oy):
                xj = <double>j
                for k in range(oz):
                    xk = <double>k
                    x = m[0, 0] * xi + m[0, 1] * xj + m[0, 2] * xk + m[0, 3]
                    y = m[1, 0] * xi + m[1, 1] * xj + m[1, 2] * xk + m[1, 3]
                    z = m[2, 0] * xi + m[2, 1] * xj + m[2, 2] * xk + m[2, 3]
                    if nearest:
                        out[i, j, k] = _nearest(s, x, y, z, background, clamp)
                    else:
                        out[i, j, k] = _trilinear(s, x, y, z, background, clamp)
    return out_arr


def warp_field(src, world_to_voxel_src, voxel_to_world_out, vectors,
               double background, bint nearest, bint clamp, int threads):
    cdef const double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:, ::1] w2v = np.ascontiguousarray(world_to_voxel_src, dtype=np.float64)
    cdef const double[:, ::1] v2w = np.ascontiguousarray(voxel_to_world_out, dtype=np.float64)
    cdef const double[:, :, :, ::1] f = np.ascontiguousarray(vectors, dtype=np.float64)
    cdef Py_ssize_t ox = f.shape[0], oy = f.shape[1], oz = f.shape[2]
    out_arr = np.empty((ox, oy, oz), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double wx, wy, wz, x, y, z, xi, xj, xk
    cdef int nt = threads if threads > 0 else 1
    with nogil:
        for i in prange(ox, num_threads=nt, schedule='static'):
            xi = <double>i
            for j in range(oy):
                xj = <double>j
                for k in range(oz):
                    xk = <double>k
                    wx = v2w[0, 0] * xi + v2w[0, 1] * xj + v2w[0, 2] * xk + v2w[0, 3] + f[i, j, k, 0]
                    wy = v2w[1, 0] * xi + v2w[1, 1] * xj + v2w[1, 2] * xk + v2w[1, 3] + f[i, j, k, 1]
                    wz = v2w[2, 0] * xi + v2w[2, 1] * xj + v2w[2, 2] * xk + v2w[2, 3] + f[i, j, k, 2]
                    x = w2v[0, 0] * wx + w2v[0, 1] * wy + w2v[0, 2] * wz + w2v[0, 3]
                    y = w2v[1, 0] * wx + w2v[1, 1] * wy + w2v[1, 2] * wz + w2v[1, 3]
                    z = w2v[2, 0] * wx + w2v[2, 1] * wy + w2v[2, 2] * wz + w2v[2, 3]
                    if nearest:
                        out[i, j, k] = _nearest(s, x, y, z, background, clamp)
                    else:
                        out[i, j, k] = _trilinear(s, x, y, z, background, clamp)
    return out_arr


def ssc_distances(img, offsets_a, offsets_b, int patch_radius, int threads):
    img_arr = np.ascontiguousarray(img, dtype=np.float64)
    cdef const long long[:, ::1] oa = np.ascontiguousarray(offsets_a, dtype=np.int64)
    cdef const long long[:, ::1] ob = np.ascontiguousarray(offsets_b, dtype=np.int64)
    cdef Py_ssize_t n_pairs = oa.shape[0]
    cdef Py_ssize_t n0 = img_arr.shape[0], n1 = img_arr.shape[1], n2 = img_arr.shape[2]
    cdef Py_ssize_t r = patch_radius
    cdef Py_ssize_t width = 2 * r + 1
    cdef Py_ssize_t pad = 0, k, d
    cdef long long mag
    for k in range(n_pairs):
        for d in range(3):
            mag = oa[k, d] if oa[k, d] >= 0 else -oa[k, d]
            if mag > pad:
                pad = mag
            mag = ob[k, d] if ob[k, d] >= 0 else -ob[k, d]
            if mag > pad:
                pad = mag
    pad += r
    padded_arr = np.pad(img_arr, pad, mode="edge")
    cdef const double[:, :, ::1] P = padded_arr
    cdef Py_ssize_t e0 = n0 + 2 * r, e1 = n1 + 2 * r, e2 = n2 + 2 * r

    dist_arr = np.empty((n_pairs, n0, n1, n2), dtype=np.float64)
    cdef double[:, :, :, ::1] dist = dist_arr
    diff2_arr = np.empty((e0, e1, e2), dtype=np.float64)
    cdef double[:, :, ::1] diff2 = diff2_arr
    t1_arr = np.empty((e0, e1, n2), dtype=np.float64)
    cdef double[:, :, ::1] t1 = t1_arr
    t2_arr = np.empty((e0, n1, n2), dtype=np.float64)
    cdef double[:, :, ::1] t2 = t2_arr

    cdef Py_ssize_t u0, u1, u2, w, a0, a1, a2, b0, b1, b2
    cdef double dv, acc, norm = 1.0 / <double>(width * width * width)
    cdef int nt = threads if threads > 0 else 1

    for k in range(n_pairs):
        # start offsets into the padded array for a diff lattice starting at -r
        a0 = pad + oa[k, 0] - r
        a1 = pad + oa[k, 1] - r
        a2 = pad + oa[k, 2] - r
        b0 = pad + ob[k, 0] - r
        b1 = pad + ob[k, 1] - r
        b2 = pad + ob[k, 2] - r
        with nogil:
            for u0 in prange(e0, num_threads=nt, schedule='static'):
                for u1 in range(e1):
                    for u2 in range(e2):
                        dv = P[u0 + a0, u1 + a1, u2 + a2] - P[u0 + b0, u1 + b1, u2 + b2]
                        diff2[u0, u1, u2] = dv * dv
            for u0 in prange(e0, num_threads=nt, schedule='static'):
                for u1 in range(e1):
                    for u2 in range(n2):
                        acc = 0.0
                        for w in range(width):
                            acc = acc + diff2[u0, u1, u2 + w]
                        t1[u0, u1, u2] = acc
            for u0 in prange(e0, num_threads=nt, schedule='static'):
                for u1 in range(n1):
                    for u2 in range(n2):
                        acc = 0.0
                        for w in range(width):
                            acc = acc + t1[u0, u1 + w, u2]
                        t2[u0, u1, u2] = acc
            for u0 in prange(n0, num_threads=nt, schedule='static'):
                for u1 in range(n1):
                    for u2 in range(n2):
                        acc = 0.0
                        for w in range(width):
                            acc = acc + t2[u0 + w, u1, u2]
                        dist[k, u0, u1, u2] = acc * norm

    return dist_arr


def block_match(fixed, moving, origins, int block_size, int radius, int stride,
                int threads):
    cdef const double[:, :, ::1] fx = np.ascontiguousarray(fixed, dtype=np.float64)
    cdef const double[:, :, ::1] mv = np.ascontiguousarray(moving, dtype=np.float64)
    cdef const long long[:, ::1] org = np.ascontiguousarray(
        np.asarray(origins, dtype=np.int64).reshape(-1, 3))
    cdef Py_ssize_t n_blocks = org.shape[0]
    cdef Py_ssize_t bs = block_size
    cdef Py_ssize_t mx = mv.shape[0], my = mv.shape[1], mz = mv.shape[2]

    off_arr = np.zeros((n_blocks, 3), dtype=np.int64)
    score_arr = np.zeros(n_blocks, dtype=np.float64)
    valid_arr = np.zeros(n_blocks, dtype=np.uint8)
    cdef long long[:, ::1] off = off_arr
    cdef double[::1] score = score_arr
    cdef unsigned char[::1] valid = valid_arr

    cdef Py_ssize_t kb, o0, o1, o2, i, j, k, da, db, dc, s0, s1, s2, ia, ib, ic
    cdef double nvox = <double>(bs * bs * bs)
    cdef double fsum, fmean, sff, msum, mmean, sfm, smm, sc, fv, mvv
    cdef double best_score
    cdef long long dd, best_dd, bo0, bo1, bo2
    cdef bint found
    cdef int nt = threads if threads > 0 else 1
    cdef Py_ssize_t rad = radius, st = stride
    cdef Py_ssize_t n_off = (2 * rad) // st + 1

    with nogil:
        for kb in prange(n_blocks, num_threads=nt, schedule='static'):
            o0 = org[kb, 0]
            o1 = org[kb, 1]
            o2 = org[kb, 2]
            fsum = 0.0
            for i in range(bs):
                for j in range(bs):
                    for k in range(bs):
                        fsum = fsum + fx[o0 + i, o1 + j, o2 + k]
            fmean = fsum / nvox
            sff = 0.0
            for i in range(bs):
                for j in range(bs):
                    for k in range(bs):
                        fv = fx[o0 + i, o1 + j, o2 + k] - fmean
                        sff = sff + fv * fv
            if sff <= 0.0:
                valid[kb] = 0
                continue
            best_score = -1.0
            best_dd = 0
            found = False
            bo0 = 0
            bo1 = 0
            bo2 = 0
            for ia in range(n_off):
                da = ia * st - rad
                s0 = o0 + da
                if s0 < 0 or s0 + bs > mx:
                    continue
                for ib in range(n_off):
                    db = ib * st - rad
                    s1 = o1 + db
                    if s1 < 0 or s1 + bs > my:
                        continue
                    for ic in range(n_off):
                        dc = ic * st - rad
                        s2 = o2 + dc
                        if s2 < 0 or s2 + bs > mz:
                            continue
                        msum = 0.0
                        for i in range(bs):
                            for j in range(bs):
                                for k in range(bs):
                                    msum = msum + mv[s0 + i, s1 + j, s2 + k]
                        mmean = msum / nvox
                        sfm = 0.0
                        smm = 0.0
                        for i in range(bs):
                            for j in range(bs):
                                for k in range(bs):
                                    fv = fx[o0 + i, o1 + j, o2 + k] - fmean
                                    mvv = mv[s0 + i, s1 + j, s2 + k] - mmean
                                    sfm = sfm + fv * mvv
                                    smm = smm + mvv * mvv
                        if smm <= 0.0:
                            continue
                        sc = fabs(sfm) / sqrt(sff * smm)
                        if sc > 1.0:
                            sc = 1.0
                        dd = <long long>(da * da + db * db + dc * dc)
                        if (not found) or sc > best_score or (sc == best_score and dd < best_dd):
                            found = True
                            best_score = sc
                            best_dd = dd
                            bo0 = da
                            bo1 = db
                            bo2 = dc
            if found:
                valid[kb] = 1
                off[kb, 0] = bo0
                off[kb, 1] = bo1
                off[kb, 2] = bo2
                score[kb] = best_score
            else:
                valid[kb] = 0
    return off_arr, score_arr, valid_arr.astype(bool)
