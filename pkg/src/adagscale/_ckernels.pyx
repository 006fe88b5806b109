# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled hot loops: tile intersection, 64-bit key radix sort, tile rasterization.

Mirrors ``_pykernels`` function for function; see that module for the contracts.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, floor, ceil, fabs, INFINITY
from libc.stdint cimport uint64_t, int64_t, int32_t, uint32_t
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy
from libcpp.vector cimport vector

BACKEND = "cython"

cdef enum:
    MODE_AABB = 0
    MODE_OBB = 1
    MODE_ELLIPSE = 2


cdef inline double _clamp(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline double _min_quad_on_box(double a, double b, double c, double cx, double cy,
                                    double x0, double x1, double y0, double y1) noexcept nogil:
    """Exact minimum of the quadratic form over the closed box."""
    cdef double best, dx, dy, q
    if x0 <= cx <= x1 and y0 <= cy <= y1:
        return 0.0
    best = INFINITY
    dx = x0 - cx
    dy = _clamp(-b * dx / c, y0 - cy, y1 - cy)
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    if q < best:
        best = q
    dx = x1 - cx
    dy = _clamp(-b * dx / c, y0 - cy, y1 - cy)
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    if q < best:
        best = q
    dy = y0 - cy
    dx = _clamp(-b * dy / a, x0 - cx, x1 - cx)
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    if q < best:
        best = q
    dy = y1 - cy
    dx = _clamp(-b * dy / a, x0 - cx, x1 - cx)
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    if q < best:
        best = q
    return best


cdef inline bint _tile_hit(int mode, double cx, double cy, double rb,
                           double ca, double cb, double cc, double r,
                           double l1, double l2, double ux, double uy,
                           double x0, double x1, double y0, double y1) noexcept nogil:
    cdef double bx, by, wx, wy, h1, h2, dxc, dyc
    # square of half-extent rb
    if x0 > cx + rb or x1 < cx - rb or y0 > cy + rb or y1 < cy - rb:
        return False
    if mode == MODE_AABB:
        return True
    # oriented rectangle, axes u=(ux,uy), v=(-uy,ux)
    h1 = r * sqrt(l1)
    h2 = r * sqrt(l2)
    bx = 0.5 * (x0 + x1)
    by = 0.5 * (y0 + y1)
    wx = 0.5 * (x1 - x0)
    wy = 0.5 * (y1 - y0)
    dxc = cx - bx
    dyc = cy - by
    if fabs(dxc) > wx + h1 * fabs(ux) + h2 * fabs(uy):
        return False
    if fabs(dyc) > wy + h1 * fabs(uy) + h2 * fabs(ux):
        return False
    if fabs(dxc * ux + dyc * uy) > h1 + wx * fabs(ux) + wy * fabs(uy):
        return False
    if fabs(-dxc * uy + dyc * ux) > h2 + wx * fabs(uy) + wy * fabs(ux):
        return False
    if mode == MODE_OBB:
        return True
    return _min_quad_on_box(ca, cb, cc, cx, cy, x0, x1, y0, y1) <= r * r


cdef inline void _tile_range(double lo, double hi, int ts, int n, int* first, int* last) noexcept nogil:
    cdef double f = ceil(lo / ts - 1.0)
    cdef double l = floor(hi / ts)
    if f < 0:
        f = 0
    if l > n - 1:
        l = n - 1
    if f > l:
        first[0] = 0
        last[0] = -1
    else:
        first[0] = <int>f
        last[0] = <int>l


cdef inline uint32_t _float_bits(float v) noexcept nogil:
    cdef uint32_t bits
    memcpy(&bits, &v, sizeof(float))
    return bits


def count_tiles(const double[:, ::1] mean2d, const double[:, ::1] conic, const double[:, ::1] eig,
                const double[::1] radius, const double[::1] rbox, int mode,
                int width, int height, int tile_size):
    cdef Py_ssize_t n = mean2d.shape[0], i
    cdef int tiles_x = (width + tile_size - 1) // tile_size
    cdef int tiles_y = (height + tile_size - 1) // tile_size
    cdef int tx0, tx1, ty0, ty1, tx, ty
    cdef double cx, cy, rb, x0, x1, y0, y1
    cdef int64_t cnt
    counts = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] out = counts
    with nogil:
        for i in range(n):
            cx = mean2d[i, 0]
            cy = mean2d[i, 1]
            rb = rbox[i]
            _tile_range(cx - rb, cx + rb, tile_size, tiles_x, &tx0, &tx1)
            _tile_range(cy - rb, cy + rb, tile_size, tiles_y, &ty0, &ty1)
            cnt = 0
            for ty in range(ty0, ty1 + 1):
                y0 = ty * tile_size
                y1 = min((ty + 1) * tile_size, height)
                for tx in range(tx0, tx1 + 1):
                    x0 = tx * tile_size
                    x1 = min((tx + 1) * tile_size, width)
                    if _tile_hit(mode, cx, cy, rb, conic[i, 0], conic[i, 1], conic[i, 2], radius[i],
                                 eig[i, 0], eig[i, 1], eig[i, 2], eig[i, 3], x0, x1, y0, y1):
                        cnt += 1
            out[i] = cnt
    return counts


def emit_tiles(const double[:, ::1] mean2d, const double[:, ::1] conic, const double[:, ::1] eig,
               const double[::1] radius, const double[::1] rbox, int mode,
               int width, int height, int tile_size,
               const float[::1] depth, const int64_t[::1] offsets, int64_t total):
    cdef Py_ssize_t n = mean2d.shape[0], i
    cdef int tiles_x = (width + tile_size - 1) // tile_size
    cdef int tiles_y = (height + tile_size - 1) // tile_size
    cdef int tx0, tx1, ty0, ty1, tx, ty
    cdef double cx, cy, rb, x0, x1, y0, y1
    cdef int64_t pos
    cdef uint64_t dbits
    keys_arr = np.empty(total, dtype=np.uint64)
    vals_arr = np.empty(total, dtype=np.int32)
    cdef uint64_t[::1] keys = keys_arr
    cdef int32_t[::1] vals = vals_arr
    with nogil:
        for i in range(n):
            cx = mean2d[i, 0]
            cy = mean2d[i, 1]
            rb = rbox[i]
            pos = offsets[i]
            dbits = _float_bits(depth[i])
            _tile_range(cx - rb, cx + rb, tile_size, tiles_x, &tx0, &tx1)
            _tile_range(cy - rb, cy + rb, tile_size, tiles_y, &ty0, &ty1)
            for ty in range(ty0, ty1 + 1):
                y0 = ty * tile_size
                y1 = min((ty + 1) * tile_size, height)
                for tx in range(tx0, tx1 + 1):
                    x0 = tx * tile_size
                    x1 = min((tx + 1) * tile_size, width)
                    if _tile_hit(mode, cx, cy, rb, conic[i, 0], conic[i, 1], conic[i, 2], radius[i],
                                 eig[i, 0], eig[i, 1], eig[i, 2], eig[i, 3], x0, x1, y0, y1):
                        keys[pos] = ((<uint64_t>(ty * tiles_x + tx)) << 32) | dbits
                        vals[pos] = <int32_t>i
                        pos += 1
    return keys_arr, vals_arr


def radix_sort_pairs(keys_in, vals_in):
    """Stable LSD radix sort of uint64 keys (8-bit digits) carrying int32 values."""
    cdef uint64_t[::1] k0 = np.array(keys_in, dtype=np.uint64, copy=True)
    cdef int32_t[::1] v0 = np.array(vals_in, dtype=np.int32, copy=True)
    cdef Py_ssize_t n = k0.shape[0], i
    k1_arr = np.empty(n, dtype=np.uint64)
    v1_arr = np.empty(n, dtype=np.int32)
    cdef uint64_t[::1] k1 = k1_arr
    cdef int32_t[::1] v1 = v1_arr
    cdef uint64_t* ks
    cdef uint64_t* kd
    cdef int32_t* vs
    cdef int32_t* vd
    cdef uint64_t* pk0 = &k0[0] if n else NULL
    cdef uint64_t* pk1 = &k1[0] if n else NULL
    cdef int32_t* pv0 = &v0[0] if n else NULL
    cdef int32_t* pv1 = &v1[0] if n else NULL
    hist_arr = np.zeros((8, 256), dtype=np.int64)
    cdef int64_t[:, ::1] hist = hist_arr
    cdef int pass_, d, shift
    cdef int64_t total, c
    cdef uint64_t key
    cdef bint src_is_0 = True
    with nogil:
        for i in range(n):
            key = k0[i]
            for pass_ in range(8):
                hist[pass_, (key >> (8 * pass_)) & 0xFF] += 1
        for pass_ in range(8):
            # a pass whose digit is constant leaves the order unchanged
            for d in range(256):
                if hist[pass_, d] == n:
                    break
            else:
                d = -1
            if d >= 0:
                continue
            total = 0
            for d in range(256):
                c = hist[pass_, d]
                hist[pass_, d] = total
                total += c
            shift = 8 * pass_
            if src_is_0:
                ks = pk0
                vs = pv0
                kd = pk1
                vd = pv1
            else:
                ks = pk1
                vs = pv1
                kd = pk0
                vd = pv0
            for i in range(n):
                d = (ks[i] >> shift) & 0xFF
                kd[hist[pass_, d]] = ks[i]
                vd[hist[pass_, d]] = vs[i]
                hist[pass_, d] += 1
            src_is_0 = not src_is_0
    if src_is_0:
        return np.asarray(k0), np.asarray(v0)
    return k1_arr, v1_arr


def raster_tiles(const int64_t[::1] tiles, const int64_t[:, ::1] ranges, const int32_t[::1] pair_splat,
                 const double[:, ::1] mean2d, const double[:, ::1] conic, const double[::1] opacity,
                 const double[:, ::1] rgb, int width, int height, int tile_size,
                 double tau, double t_floor, double alpha_clamp, const double[::1] background,
                 double[:, :, ::1] image, double[:, ::1] final_t, double[::1] maxt,
                 bint record_maxt, bint record_events,
                 int skip_mode, const double[::1] skip_weight, double skip_cutoff):
    """Front-to-back blending of the given tiles into ``image``.

    skip_mode: 0 none; 1 skip blends with α·T_unskipped < cutoff; 2 skip blends
    with α·skip_weight[splat] < cutoff. Skipped blends neither add color nor
    attenuate transmittance.
    """
    cdef int tiles_x = (width + tile_size - 1) // tile_size
    cdef Py_ssize_t n_tiles = tiles.shape[0], ti, j, span, s
    cdef int64_t tile, start, end, n_blend = 0
    cdef int tx, ty, px, py, x_end, y_end
    cdef double fx, fy, dx, dy, power, alpha, t, t_ref, r, g, b, w, metric
    cdef bint ref_live
    cdef double* gx = NULL
    cdef double* gy = NULL
    cdef double* ga = NULL
    cdef double* gb = NULL
    cdef double* gc = NULL
    cdef double* go = NULL
    cdef double* gr = NULL
    cdef double* gg = NULL
    cdef double* gbl = NULL
    cdef double* gw = NULL
    cdef double* gq = NULL
    cdef int32_t* gid = NULL
    cdef Py_ssize_t cap = 0
    cdef vector[int64_t] ev_pix
    cdef vector[int32_t] ev_splat
    cdef vector[double] ev_alpha
    cdef vector[double] ev_contrib
    cdef double bg0 = background[0], bg1 = background[1], bg2 = background[2]

    with nogil:
        for ti in range(n_tiles):
            tile = tiles[ti]
            start = ranges[tile, 0]
            end = ranges[tile, 1]
            span = end - start
            if span > cap:
                if cap > 0:
                    free(gx)
                cap = span
                gx = <double*>malloc(11 * cap * sizeof(double) + cap * sizeof(int32_t))
                gy = gx + cap
                ga = gy + cap
                gb = ga + cap
                gc = gb + cap
                go = gc + cap
                gr = go + cap
                gg = gr + cap
                gbl = gg + cap
                gw = gbl + cap
                gq = gw + cap
                gid = <int32_t*>(gq + cap)
            for j in range(span):
                s = pair_splat[start + j]
                gid[j] = <int32_t>s
                gx[j] = mean2d[s, 0]
                gy[j] = mean2d[s, 1]
                ga[j] = conic[s, 0]
                gb[j] = conic[s, 1]
                gc[j] = conic[s, 2]
                go[j] = opacity[s]
                # beyond this quadratic-form value alpha is certainly below tau
                if opacity[s] > tau:
                    gq[j] = 2.0 * log(opacity[s] / tau) * (1.0 + 1e-6) + 1e-12
                else:
                    gq[j] = -1.0
                gr[j] = rgb[s, 0]
                gg[j] = rgb[s, 1]
                gbl[j] = rgb[s, 2]
                if skip_mode == 2:
                    gw[j] = skip_weight[s]
            ty = tile // tiles_x
            tx = tile - ty * tiles_x
            y_end = min((ty + 1) * tile_size, height)
            x_end = min((tx + 1) * tile_size, width)
            for py in range(ty * tile_size, y_end):
                fy = py + 0.5
                for px in range(tx * tile_size, x_end):
                    fx = px + 0.5
                    t = 1.0
                    t_ref = 1.0
                    ref_live = True
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    for j in range(span):
                        dx = fx - gx[j]
                        dy = fy - gy[j]
                        power = ga[j] * dx * dx + 2.0 * gb[j] * dx * dy + gc[j] * dy * dy
                        if power > gq[j]:
                            continue
                        alpha = go[j] * exp(-0.5 * power)
                        if alpha > alpha_clamp:
                            alpha = alpha_clamp
                        if alpha < tau:
                            continue
                        if skip_mode != 0:
                            if skip_mode == 1:
                                metric = alpha * t_ref
                                if ref_live:
                                    t_ref = t_ref * (1.0 - alpha)
                                    if t_ref < t_floor:
                                        ref_live = False
                            else:
                                metric = alpha * gw[j]
                            if metric < skip_cutoff:
                                continue
                        if record_maxt and t > maxt[gid[j]]:
                            maxt[gid[j]] = t
                        w = alpha * t
                        if record_events:
                            ev_pix.push_back(<int64_t>py * width + px)
                            ev_splat.push_back(gid[j])
                            ev_alpha.push_back(alpha)
                            ev_contrib.push_back(w)
                        r += w * gr[j]
                        g += w * gg[j]
                        b += w * gbl[j]
                        n_blend += 1
                        t = t * (1.0 - alpha)
                        if t < t_floor:
                            break
                    image[py, px, 0] = r + t * bg0
                    image[py, px, 1] = g + t * bg1
                    image[py, px, 2] = b + t * bg2
                    final_t[py, px] = t
        if cap > 0:
            free(gx)

    events = None
    cdef Py_ssize_t m
    if record_events:
        m = ev_pix.size()
        pix = np.empty(m, dtype=np.int64)
        spl = np.empty(m, dtype=np.int32)
        alp = np.empty(m, dtype=np.float64)
        con = np.empty(m, dtype=np.float64)
        if m:
            _copy_events(pix, spl, alp, con, ev_pix, ev_splat, ev_alpha, ev_contrib)
        events = (pix, spl, alp, con)
    return n_blend, events


cdef void _copy_events(int64_t[::1] pix, int32_t[::1] spl, double[::1] alp, double[::1] con,
                       vector[int64_t]& a, vector[int32_t]& b, vector[double]& c, vector[double]& d):
    cdef Py_ssize_t i
    for i in range(<Py_ssize_t>a.size()):
        pix[i] = a[i]
        spl[i] = b[i]
        alp[i] = c[i]
        con[i] = d[i]
