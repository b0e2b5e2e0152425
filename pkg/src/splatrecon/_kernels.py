"""Numba kernels for tile-based splat compositing (forward and backward).

Accumulation happens in float64 regardless of the input dtype so the
partition-of-unity invariant holds tightly, and so the backward pass can
re-derive exactly the same per-splat alpha decisions the forward pass made.
Tiles are processed in parallel; all writes are tile-exclusive, and the
backward per-splat reduction runs in fixed entry order, so results are
deterministic for a fixed input.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

TILE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_EPS = 1.0e-4
_LOG_ALPHA_MIN = float(np.log(ALPHA_MIN))


@njit(cache=True)
def count_tile_entries(rects, ntx, counts):
    for i in range(rects.shape[0]):
        x0, x1, y0, y1 = rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * ntx + tx] += 1


@njit(cache=True)
def fill_tile_entries(rects, ntx, offsets, cursor, entry_splat):
    # Splats arrive depth-sorted, so each tile's entry list is depth-sorted too.
    for i in range(rects.shape[0]):
        x0, x1, y0, y1 = rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                t = ty * ntx + tx
                entry_splat[offsets[t] + cursor[t]] = i
                cursor[t] += 1


@njit(cache=True, parallel=True)
def composite_forward(mean2d, conic, color, opa, log_opa,
                      entry_splat, tile_offsets, width, height, bg,
                      img, t_out, n_contrib, last_pos):
    ntx = (width + TILE - 1) // TILE
    ntiles = tile_offsets.shape[0] - 1
    for tile in prange(ntiles):
        t0 = tile_offsets[tile]
        t1 = tile_offsets[tile + 1]
        ty = tile // ntx
        tx = tile % ntx
        y_end = min((ty + 1) * TILE, height)
        x_end = min((tx + 1) * TILE, width)
        for py in range(ty * TILE, y_end):
            for px in range(tx * TILE, x_end):
                cx = px + 0.5
                cy = py + 0.5
                trans = 1.0
                acc0 = 0.0
                acc1 = 0.0
                acc2 = 0.0
                count = 0
                last = np.int64(-1)
                for e in range(t0, t1):
                    k = entry_splat[e]
                    dx = cx - np.float64(mean2d[k, 0])
                    dy = cy - np.float64(mean2d[k, 1])
                    ca = np.float64(conic[k, 0])
                    cb = np.float64(conic[k, 1])
                    cc = np.float64(conic[k, 2])
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0:
                        continue
                    # cheap reject before exp; exact alpha check below decides
                    if power < _LOG_ALPHA_MIN - np.float64(log_opa[k]) - 1.0e-6:
                        continue
                    alpha = np.float64(opa[k]) * np.exp(power)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    w = alpha * trans
                    acc0 += np.float64(color[k, 0]) * w
                    acc1 += np.float64(color[k, 1]) * w
                    acc2 += np.float64(color[k, 2]) * w
                    trans *= 1.0 - alpha
                    count += 1
                    last = e
                    if trans < T_EPS:
                        break
                img[py, px, 0] = acc0 + np.float64(bg[0]) * trans
                img[py, px, 1] = acc1 + np.float64(bg[1]) * trans
                img[py, px, 2] = acc2 + np.float64(bg[2]) * trans
                t_out[py, px] = trans
                n_contrib[py, px] = count
                last_pos[py, px] = last


@njit(cache=True, parallel=True)
def composite_backward(mean2d, conic, color, opa, log_opa,
                       entry_splat, tile_offsets, width, height, bg,
                       t_final, last_pos, dl_dimg, partials):
    # partials rows are per tile entry: [du, dv, da, db, dc, dr, dg, dbl, do]
    ntx = (width + TILE - 1) // TILE
    ntiles = tile_offsets.shape[0] - 1
    for tile in prange(ntiles):
        t0 = tile_offsets[tile]
        ty = tile // ntx
        tx = tile % ntx
        y_end = min((ty + 1) * TILE, height)
        x_end = min((tx + 1) * TILE, width)
        for py in range(ty * TILE, y_end):
            for px in range(tx * TILE, x_end):
                last = last_pos[py, px]
                if last < 0:
                    continue
                cx = px + 0.5
                cy = py + 0.5
                g0 = np.float64(dl_dimg[py, px, 0])
                g1 = np.float64(dl_dimg[py, px, 1])
                g2 = np.float64(dl_dimg[py, px, 2])
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                t_cur = np.float64(t_final[py, px])
                s0 = np.float64(bg[0]) * t_cur
                s1 = np.float64(bg[1]) * t_cur
                s2 = np.float64(bg[2]) * t_cur
                for e in range(last, t0 - 1, -1):
                    k = entry_splat[e]
                    dx = cx - np.float64(mean2d[k, 0])
                    dy = cy - np.float64(mean2d[k, 1])
                    ca = np.float64(conic[k, 0])
                    cb = np.float64(conic[k, 1])
                    cc = np.float64(conic[k, 2])
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0:
                        continue
                    if power < _LOG_ALPHA_MIN - np.float64(log_opa[k]) - 1.0e-6:
                        continue
                    gval = np.exp(power)
                    o = np.float64(opa[k])
                    alpha = o * gval
                    clamped = alpha > ALPHA_MAX
                    if clamped:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    one_m = 1.0 - alpha
                    t_i = t_cur / one_m
                    w = alpha * t_i
                    kr = np.float64(color[k, 0])
                    kg = np.float64(color[k, 1])
                    kb = np.float64(color[k, 2])
                    # dL/d(color channel) = dl_dimg * alpha * T_i
                    partials[e, 5] += g0 * w
                    partials[e, 6] += g1 * w
                    partials[e, 7] += g2 * w
                    # dL/d(alpha) through this pixel's blend and later occlusion
                    dalpha = (g0 * (kr * t_i - s0 / one_m)
                              + g1 * (kg * t_i - s1 / one_m)
                              + g2 * (kb * t_i - s2 / one_m))
                    s0 += kr * w
                    s1 += kg * w
                    s2 += kb * w
                    t_cur = t_i
                    if not clamped:
                        partials[e, 8] += dalpha * gval
                        dpower = dalpha * alpha
                        gx = ca * dx + cb * dy
                        gy = cb * dx + cc * dy
                        partials[e, 0] += dpower * gx
                        partials[e, 1] += dpower * gy
                        partials[e, 2] += dpower * (-0.5 * dx * dx)
                        partials[e, 3] += dpower * (-dx * dy)
                        partials[e, 4] += dpower * (-0.5 * dy * dy)


@njit(cache=True)
def reduce_entry_partials(entry_splat, partials, out):
    # Fixed entry order keeps the per-splat accumulation deterministic.
    for e in range(entry_splat.shape[0]):
        k = entry_splat[e]
        for j in range(9):
            out[k, j] += partials[e, j]
