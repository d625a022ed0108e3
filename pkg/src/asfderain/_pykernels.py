"""Numpy implementations of the inner loops in ``_ckernels.pyx``.

Used when the compiled extension is unavailable or ``ASF_PURE_PYTHON=1``.
"""
import numpy as np


def rasterize_segments(x0, y0, x1, y1, width, intensity, height, img_width):
    out = np.zeros((height, img_width), dtype=np.float64)
    for k in range(len(x0)):
        reach = 0.5 * width[k] + 0.5
        dx = x1[k] - x0[k]
        dy = y1[k] - y0[k]
        len2 = dx * dx + dy * dy
        xa = int(np.floor(min(x0[k], x1[k]) - reach))
        xb = int(np.ceil(max(x0[k], x1[k]) + reach))
        ya = int(np.floor(min(y0[k], y1[k]) - reach))
        yb = int(np.ceil(max(y0[k], y1[k]) + reach))
        if xb < 0 or yb < 0 or xa > img_width - 1 or ya > height - 1:
            continue
        xa, xb = max(xa, 0), min(xb, img_width - 1)
        ya, yb = max(ya, 0), min(yb, height - 1)
        py, px = np.mgrid[ya:yb + 1, xa:xb + 1].astype(np.float64)
        if len2 > 0.0:
            t = np.clip(((px - x0[k]) * dx + (py - y0[k]) * dy) / len2, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        ex = px - (x0[k] + t * dx)
        ey = py - (y0[k] + t * dy)
        cov = reach - np.sqrt(ex * ex + ey * ey)
        cov = np.where(cov > 0.0, np.minimum(cov, 1.0), 0.0)
        out[ya:yb + 1, xa:xb + 1] += intensity[k] * cov
    return out


def block_match(a, b, init, candidates, half_block):
    h, w = a.shape
    ys, xs = np.mgrid[0:h, 0:w]
    best = np.full((h, w), -1, dtype=np.int64)
    out = init.copy()
    for cdx, cdy in candidates:
        fx = init[0] + cdx
        fy = init[1] + cdy
        cost = np.zeros((h, w), dtype=np.int64)
        for v in range(-half_block, half_block + 1):
            ay = np.clip(ys + v, 0, h - 1)
            by = np.clip(ys + v + fy, 0, h - 1)
            for u in range(-half_block, half_block + 1):
                ax = np.clip(xs + u, 0, w - 1)
                bx = np.clip(xs + u + fx, 0, w - 1)
                cost += np.abs(a[ay, ax] - b[by, bx])
        better = (best < 0) | (cost < best)
        best = np.where(better, cost, best)
        out[0] = np.where(better, fx, out[0])
        out[1] = np.where(better, fy, out[1])
    return out
