"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when ``ADAGSCALE_BACKEND=python``.
Results match the compiled kernels up to floating-point rounding of ``exp``.

Shared conventions:

* ``conic`` rows hold the inverse 2D covariance as ``(xx, xy, yy)``.
* ``eig`` rows hold ``(λ1, λ2, u_x, u_y)``: eigenvalues of the 2D covariance and
  the unit eigenvector of ``λ1``.
* ``radius`` is the Mahalanobis radius of the tested level set; ``rbox`` the
  half-extent in pixels of the axis-aligned candidate square.
* Tiles are closed squares ``[tx·ts, min((tx+1)·ts, W)] × [...]``.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

MODE_AABB, MODE_OBB, MODE_ELLIPSE = 0, 1, 2


def _tile_range(lo, hi, ts, n):
    first = np.maximum(np.ceil(lo / ts - 1.0), 0)
    last = np.minimum(np.floor(hi / ts), n - 1)
    empty = first > last
    first = np.where(empty, 0, first).astype(np.int64)
    last = np.where(empty, -1, last).astype(np.int64)
    return first, last


def _min_quad_on_box(a, b, c, cx, cy, x0, x1, y0, y1):
    inside = (x0 <= cx) & (cx <= x1) & (y0 <= cy) & (cy <= y1)
    best = np.full(cx.shape, np.inf)
    for xe in (x0, x1):
        dx = xe - cx
        dy = np.clip(-b * dx / c, y0 - cy, y1 - cy)
        best = np.minimum(best, a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
    for ye in (y0, y1):
        dy = ye - cy
        dx = np.clip(-b * dy / a, x0 - cx, x1 - cx)
        best = np.minimum(best, a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
    return np.where(inside, 0.0, best)


def _candidates(mean2d, conic, eig, radius, rbox, mode, width, height, tile_size):
    """Test every tile in each splat's candidate square; returns (splat_id, tile_id, hit)."""
    tiles_x = -(-width // tile_size)
    tiles_y = -(-height // tile_size)
    cx, cy = mean2d[:, 0], mean2d[:, 1]
    tx0, tx1 = _tile_range(cx - rbox, cx + rbox, tile_size, tiles_x)
    ty0, ty1 = _tile_range(cy - rbox, cy + rbox, tile_size, tiles_y)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    per = nx * ny
    sid = np.repeat(np.arange(len(cx)), per)
    start = np.cumsum(per) - per
    local = np.arange(sid.size) - np.repeat(start, per)
    ty = ty0[sid] + local // nx[sid]
    tx = tx0[sid] + local % nx[sid]
    x0 = (tx * tile_size).astype(np.float64)
    x1 = np.minimum((tx + 1) * tile_size, width).astype(np.float64)
    y0 = (ty * tile_size).astype(np.float64)
    y1 = np.minimum((ty + 1) * tile_size, height).astype(np.float64)
    c_x, c_y, rb = cx[sid], cy[sid], rbox[sid]
    hit = ~((x0 > c_x + rb) | (x1 < c_x - rb) | (y0 > c_y + rb) | (y1 < c_y - rb))
    if mode != MODE_AABB:
        r = radius[sid]
        h1 = r * np.sqrt(eig[sid, 0])
        h2 = r * np.sqrt(eig[sid, 1])
        ux, uy = eig[sid, 2], eig[sid, 3]
        aux, auy = np.abs(ux), np.abs(uy)
        wx, wy = 0.5 * (x1 - x0), 0.5 * (y1 - y0)
        dxc = c_x - 0.5 * (x0 + x1)
        dyc = c_y - 0.5 * (y0 + y1)
        hit &= ~(np.abs(dxc) > wx + h1 * aux + h2 * auy)
        hit &= ~(np.abs(dyc) > wy + h1 * auy + h2 * aux)
        hit &= ~(np.abs(dxc * ux + dyc * uy) > h1 + wx * aux + wy * auy)
        hit &= ~(np.abs(-dxc * uy + dyc * ux) > h2 + wx * auy + wy * aux)
        if mode == MODE_ELLIPSE:
            q = _min_quad_on_box(conic[sid, 0], conic[sid, 1], conic[sid, 2], c_x, c_y, x0, x1, y0, y1)
            hit &= q <= r * r
    return sid, ty * tiles_x + tx, hit


def count_tiles(mean2d, conic, eig, radius, rbox, mode, width, height, tile_size):
    sid, _, hit = _candidates(mean2d, conic, eig, radius, rbox, mode, width, height, tile_size)
    return np.bincount(sid[hit], minlength=len(mean2d)).astype(np.int64)


def emit_tiles(mean2d, conic, eig, radius, rbox, mode, width, height, tile_size, depth, offsets, total):
    sid, tile, hit = _candidates(mean2d, conic, eig, radius, rbox, mode, width, height, tile_size)
    sid, tile = sid[hit], tile[hit]
    bits = np.asarray(depth, dtype=np.float32).view(np.uint32).astype(np.uint64)
    keys = (tile.astype(np.uint64) << np.uint64(32)) | bits[sid]
    assert keys.size == total
    return keys, sid.astype(np.int32)


def radix_sort_pairs(keys, vals):
    """Stable LSD radix sort, one 8-bit digit per pass."""
    keys = np.asarray(keys, dtype=np.uint64)
    vals = np.asarray(vals, dtype=np.int32)
    order = np.arange(keys.size)
    for shift in range(0, 64, 8):
        digit = ((keys[order] >> np.uint64(shift)) & np.uint64(0xFF)).astype(np.uint8)
        if digit.size and np.all(digit == digit[0]):
            continue
        # numpy's stable sort on uint8 is a counting sort
        order = order[np.argsort(digit, kind="stable")]
    return keys[order], vals[order]


def raster_tiles(tiles, ranges, pair_splat, mean2d, conic, opacity, rgb, width, height, tile_size,
                 tau, t_floor, alpha_clamp, background, image, final_t, maxt,
                 record_maxt, record_events, skip_mode, skip_weight, skip_cutoff):
    tiles_x = -(-width // tile_size)
    bg = np.asarray(background, dtype=np.float64)
    n_blend = 0
    ev = [] if record_events else None
    for ordinal, tile in enumerate(tiles):
        start, end = ranges[tile]
        ty, tx = divmod(int(tile), tiles_x)
        xs = np.arange(tx * tile_size, min((tx + 1) * tile_size, width))
        ys = np.arange(ty * tile_size, min((ty + 1) * tile_size, height))
        py, px = np.meshgrid(ys, xs, indexing="ij")
        py, px = py.ravel(), px.ravel()
        fx, fy = px + 0.5, py + 0.5
        npx = px.size
        t = np.ones(npx)
        t_ref = np.ones(npx)
        ref_live = np.ones(npx, dtype=bool)
        live = np.ones(npx, dtype=bool)
        color = np.zeros((npx, 3))
        for s in pair_splat[start:end]:
            if not live.any():
                break
            dx = fx - mean2d[s, 0]
            dy = fy - mean2d[s, 1]
            power = -0.5 * (conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy + conic[s, 2] * dy * dy)
            alpha = np.minimum(opacity[s] * np.exp(power), alpha_clamp)
            blend = live & (alpha >= tau)
            if skip_mode:
                if skip_mode == 1:
                    metric = alpha * t_ref
                    upd = blend & ref_live
                    t_ref = np.where(upd, t_ref * (1.0 - alpha), t_ref)
                    ref_live &= ~(upd & (t_ref < t_floor))
                else:
                    metric = alpha * skip_weight[s]
                blend &= ~(metric < skip_cutoff)
            if not blend.any():
                continue
            if record_maxt:
                maxt[s] = max(maxt[s], float(t[blend].max()))
            w = np.where(blend, alpha * t, 0.0)
            if ev is not None:
                idx = np.flatnonzero(blend)
                ev.append((py[idx] * width + px[idx], np.full(idx.size, s, np.int32), alpha[idx], w[idx], ordinal))
            color += w[:, None] * rgb[s]
            n_blend += int(np.count_nonzero(blend))
            t = np.where(blend, t * (1.0 - alpha), t)
            live &= ~(blend & (t < t_floor))
        image[py, px] = color + t[:, None] * bg
        final_t[py, px] = t
    events = None
    if ev is not None:
        events = _merge_events(ev)
    return n_blend, events


def _merge_events(ev):
    """Order events pixel-major like the compiled kernel (stable within a pixel)."""
    if not ev:
        return (np.zeros(0, np.int64), np.zeros(0, np.int32), np.zeros(0), np.zeros(0))
    pix = np.concatenate([e[0] for e in ev]).astype(np.int64)
    spl = np.concatenate([e[1] for e in ev])
    alp = np.concatenate([e[2] for e in ev])
    con = np.concatenate([e[3] for e in ev])
    # tiles are visited in order, so a stable sort on (tile position, pixel) suffices
    tile_no = np.concatenate([np.full(e[0].size, e[4]) for e in ev])
    order = np.lexsort((pix, tile_no))
    return pix[order], spl[order], alp[order], con[order]
