"""Numba kernels for exact per-pixel front-to-back compositing.

Splats arrive already sorted by (depth, id). Binning into square tiles is
purely an acceleration structure: a splat's box covers every pixel where
its alpha can reach the 1/255 cutoff, so the composited result equals a
brute-force loop over all splats. Loops are serial, which keeps gradient
accumulation order fixed and the output bit-reproducible. Tiles may run on
several threads: each tile writes only its own pixels and its own slice of
the per-item gradient buffer, which is reduced serially afterwards, so the
result does not depend on the thread count.
"""

import os

import numpy as np
from numba import config, njit, prange

# the portable work-queue layer unless the user picked one; results do not
# depend on the layer
if "NUMBA_THREADING_LAYER" not in os.environ:
    config.THREADING_LAYER = "workqueue"

TILE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99


@njit(cache=True)
def bin_splats(bbox, width, height):
    """CSR lists of splat indices per tile, preserving the input order."""
    tw = (width + TILE - 1) // TILE
    th = (height + TILE - 1) // TILE
    counts = np.zeros(tw * th + 1, np.int64)
    m = bbox.shape[0]
    for k in range(m):
        x0, x1, y0, y1 = bbox[k, 0], bbox[k, 1], bbox[k, 2], bbox[k, 3]
        if x1 <= x0 or y1 <= y0:
            continue
        for ty in range(y0 // TILE, (y1 - 1) // TILE + 1):
            for tx in range(x0 // TILE, (x1 - 1) // TILE + 1):
                counts[ty * tw + tx + 1] += 1
    for i in range(tw * th):
        counts[i + 1] += counts[i]
    fill = counts[:-1].copy()
    items = np.empty(counts[-1], np.int64)
    for k in range(m):
        x0, x1, y0, y1 = bbox[k, 0], bbox[k, 1], bbox[k, 2], bbox[k, 3]
        if x1 <= x0 or y1 <= y0:
            continue
        for ty in range(y0 // TILE, (y1 - 1) // TILE + 1):
            for tx in range(x0 // TILE, (x1 - 1) // TILE + 1):
                t = ty * tw + tx
                items[fill[t]] = k
                fill[t] += 1
    return counts, items


@njit(cache=True)
def _gather(q0, q1, items, mean2d, conic, opac, color):
    n = q1 - q0
    loc = np.empty((n, 10))
    for j in range(n):
        k = items[q0 + j]
        loc[j, 0] = mean2d[k, 0]
        loc[j, 1] = mean2d[k, 1]
        loc[j, 2] = conic[k, 0]
        loc[j, 3] = conic[k, 1]
        loc[j, 4] = conic[k, 2]
        loc[j, 5] = opac[k]
        # below this exponent alpha is certainly under the cutoff
        loc[j, 6] = np.log(ALPHA_MIN / opac[k]) - 1e-6
        loc[j, 7] = color[k, 0]
        loc[j, 8] = color[k, 1]
        loc[j, 9] = color[k, 2]
    return loc


@njit(cache=True)
def _row_spans(loc, n, py, x0, x1, act, lo, hi):
    """Splats that can pass the alpha cutoff somewhere on pixel row ``py`` within [x0, x1).

    Solves the conic inequality for the pixel-centre x range; the bounds are
    widened slightly so the exact per-pixel test downstream decides.
    Returns the count written to ``act``/``lo``/``hi`` (in compositing order).
    """
    m = 0
    dy = py + 0.5
    for j in range(n):
        A = loc[j, 2]
        B = loc[j, 3]
        C = loc[j, 4]
        d = dy - loc[j, 1]
        a2 = 0.5 * A
        b2 = B * d
        c2 = 0.5 * C * d * d + loc[j, 6]
        disc = b2 * b2 - 4.0 * a2 * c2
        if disc < 0.0 or a2 <= 0.0:
            continue
        r = np.sqrt(disc)
        xl = loc[j, 0] + (-b2 - r) / (2.0 * a2) - 0.5
        xr = loc[j, 0] + (-b2 + r) / (2.0 * a2) - 0.5
        il = int(np.floor(xl - 1e-6))
        ir = int(np.ceil(xr + 1e-6))
        if il < x0:
            il = x0
        if ir > x1 - 1:
            ir = x1 - 1
        if il > ir:
            continue
        act[m] = j
        lo[m] = il
        hi[m] = ir
        m += 1
    return m


@njit(cache=True, parallel=True)
def composite_forward(mean2d, conic, opac, color, bbox, bg, width, height, offsets, items):
    out = np.empty((height, width, 3))
    t_final = np.empty((height, width))
    tw = (width + TILE - 1) // TILE
    th = (height + TILE - 1) // TILE
    for t in prange(tw * th):
        q0, q1 = offsets[t], offsets[t + 1]
        n = q1 - q0
        loc = _gather(q0, q1, items, mean2d, conic, opac, color)
        act = np.empty(n, np.int64)
        lo = np.empty(n, np.int64)
        hi = np.empty(n, np.int64)
        ty, tx = t // tw, t % tw
        x0, x1 = tx * TILE, min(width, tx * TILE + TILE)
        for py in range(ty * TILE, min(height, ty * TILE + TILE)):
            m = _row_spans(loc, n, py, x0, x1, act, lo, hi)
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                for i in range(m):
                    if px < lo[i] or px > hi[i]:
                        continue
                    j = act[i]
                    dx = cx - loc[j, 0]
                    dy = cy - loc[j, 1]
                    power = -0.5 * (loc[j, 2] * dx * dx + loc[j, 4] * dy * dy) - loc[j, 3] * dx * dy
                    if power < loc[j, 6]:
                        continue
                    a = loc[j, 5] * np.exp(power)
                    if a > ALPHA_MAX:
                        a = ALPHA_MAX
                    if a < ALPHA_MIN:
                        continue
                    w = a * T
                    r += loc[j, 7] * w
                    g += loc[j, 8] * w
                    b += loc[j, 9] * w
                    T *= 1.0 - a
                out[py, px, 0] = r + T * bg[0]
                out[py, px, 1] = g + T * bg[1]
                out[py, px, 2] = b + T * bg[2]
                t_final[py, px] = T
    return out, t_final


@njit(cache=True, parallel=True)
def composite_backward(mean2d, conic, opac, color, bbox, bg, width, height, offsets, items, t_final, grad_out):
    m_all = mean2d.shape[0]
    d_mean2d = np.zeros((m_all, 2))
    d_conic = np.zeros((m_all, 3))
    d_opac = np.zeros(m_all)
    d_color = np.zeros((m_all, 3))
    tw = (width + TILE - 1) // TILE
    th = (height + TILE - 1) // TILE
    buf = np.zeros((items.shape[0], 9))
    for t in prange(tw * th):
        q0, q1 = offsets[t], offsets[t + 1]
        n = q1 - q0
        loc = _gather(q0, q1, items, mean2d, conic, opac, color)
        acc = buf[q0:q1]
        act = np.empty(n, np.int64)
        lo = np.empty(n, np.int64)
        hi = np.empty(n, np.int64)
        ty, tx = t // tw, t % tw
        x0, x1 = tx * TILE, min(width, tx * TILE + TILE)
        for py in range(ty * TILE, min(height, ty * TILE + TILE)):
            m = -1
            cy = py + 0.5
            for px in range(x0, x1):
                g0 = grad_out[py, px, 0]
                g1 = grad_out[py, px, 1]
                g2 = grad_out[py, px, 2]
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                if m < 0:
                    m = _row_spans(loc, n, py, x0, x1, act, lo, hi)
                cx = px + 0.5
                T = t_final[py, px]
                acc0 = bg[0] * T
                acc1 = bg[1] * T
                acc2 = bg[2] * T
                for i in range(m - 1, -1, -1):
                    if px < lo[i] or px > hi[i]:
                        continue
                    j = act[i]
                    dx = cx - loc[j, 0]
                    dy = cy - loc[j, 1]
                    power = -0.5 * (loc[j, 2] * dx * dx + loc[j, 4] * dy * dy) - loc[j, 3] * dx * dy
                    if power < loc[j, 6]:
                        continue
                    gauss = np.exp(power)
                    a = loc[j, 5] * gauss
                    clamped = False
                    if a > ALPHA_MAX:
                        a = ALPHA_MAX
                        clamped = True
                    if a < ALPHA_MIN:
                        continue
                    T = T / (1.0 - a)
                    w = a * T
                    c0, c1, c2 = loc[j, 7], loc[j, 8], loc[j, 9]
                    acc[j, 6] += g0 * w
                    acc[j, 7] += g1 * w
                    acc[j, 8] += g2 * w
                    inv = 1.0 / (1.0 - a)
                    da = g0 * (c0 * T - acc0 * inv) + g1 * (c1 * T - acc1 * inv) + g2 * (c2 * T - acc2 * inv)
                    acc0 += c0 * w
                    acc1 += c1 * w
                    acc2 += c2 * w
                    if clamped:
                        continue
                    acc[j, 0] += da * gauss
                    dp = da * a
                    acc[j, 1] += dp * (loc[j, 2] * dx + loc[j, 3] * dy)
                    acc[j, 2] += dp * (loc[j, 4] * dy + loc[j, 3] * dx)
                    acc[j, 3] += dp * (-0.5 * dx * dx)
                    acc[j, 4] += dp * (-dx * dy)
                    acc[j, 5] += dp * (-0.5 * dy * dy)
    # serial reduction in item order
    for q in range(items.shape[0]):
        k = items[q]
        d_opac[k] += buf[q, 0]
        d_mean2d[k, 0] += buf[q, 1]
        d_mean2d[k, 1] += buf[q, 2]
        d_conic[k, 0] += buf[q, 3]
        d_conic[k, 1] += buf[q, 4]
        d_conic[k, 2] += buf[q, 5]
        d_color[k, 0] += buf[q, 6]
        d_color[k, 1] += buf[q, 7]
        d_color[k, 2] += buf[q, 8]
    return d_mean2d, d_conic, d_opac, d_color
