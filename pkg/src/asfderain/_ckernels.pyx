# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for streak rasterization and dense block matching.

Both functions mirror ``_pykernels`` operation for operation so that the two
backends agree to rounding (rasterization) or exactly (block matching, which
works on integer images).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt

cnp.import_array()


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def rasterize_segments(double[::1] x0, double[::1] y0, double[::1] x1,
                       double[::1] y1, double[::1] width,
                       double[::1] intensity, Py_ssize_t height,
                       Py_ssize_t img_width):
    cdef Py_ssize_t n = x0.shape[0]
    out_arr = np.zeros((height, img_width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, px, py, xa, xb, ya, yb
    cdef double reach, dx, dy, len2, t, cx, cy, ex, ey, dist, cov
    with nogil:
        for k in range(n):
            reach = 0.5 * width[k] + 0.5
            dx = x1[k] - x0[k]
            dy = y1[k] - y0[k]
            len2 = dx * dx + dy * dy
            xa = <Py_ssize_t>floor(min(x0[k], x1[k]) - reach)
            xb = <Py_ssize_t>ceil(max(x0[k], x1[k]) + reach)
            ya = <Py_ssize_t>floor(min(y0[k], y1[k]) - reach)
            yb = <Py_ssize_t>ceil(max(y0[k], y1[k]) + reach)
            if xb < 0 or yb < 0 or xa > img_width - 1 or ya > height - 1:
                continue
            xa = _clampi(xa, 0, img_width - 1)
            xb = _clampi(xb, 0, img_width - 1)
            ya = _clampi(ya, 0, height - 1)
            yb = _clampi(yb, 0, height - 1)
            for py in range(ya, yb + 1):
                for px in range(xa, xb + 1):
                    if len2 > 0.0:
                        t = ((px - x0[k]) * dx + (py - y0[k]) * dy) / len2
                        if t < 0.0:
                            t = 0.0
                        elif t > 1.0:
                            t = 1.0
                    else:
                        t = 0.0
                    cx = x0[k] + t * dx
                    cy = y0[k] + t * dy
                    ex = px - cx
                    ey = py - cy
                    dist = sqrt(ex * ex + ey * ey)
                    cov = reach - dist
                    if cov <= 0.0:
                        continue
                    if cov > 1.0:
                        cov = 1.0
                    out[py, px] += intensity[k] * cov
    return out_arr


def block_match(cnp.int64_t[:, ::1] a, cnp.int64_t[:, ::1] b,
                cnp.int64_t[:, :, ::1] init, cnp.int64_t[:, ::1] candidates,
                Py_ssize_t half_block):
    cdef Py_ssize_t h = a.shape[0]
    cdef Py_ssize_t w = a.shape[1]
    cdef Py_ssize_t nc = candidates.shape[0]
    out_arr = np.empty((2, h, w), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, c, u, v, fx, fy, cdx, cdy, best_dx, best_dy
    cdef Py_ssize_t ay, ax, by, bx
    cdef cnp.int64_t cost, best, diff
    with nogil:
        for y in range(h):
            for x in range(w):
                fx = init[0, y, x]
                fy = init[1, y, x]
                best = -1
                best_dx = fx
                best_dy = fy
                for c in range(nc):
                    cdx = fx + candidates[c, 0]
                    cdy = fy + candidates[c, 1]
                    cost = 0
                    if (y - half_block >= 0 and y + half_block < h
                            and x - half_block >= 0 and x + half_block < w
                            and y + cdy - half_block >= 0 and y + cdy + half_block < h
                            and x + cdx - half_block >= 0 and x + cdx + half_block < w):
                        # interior: no index clamping needed
                        for v in range(-half_block, half_block + 1):
                            for u in range(-half_block, half_block + 1):
                                diff = a[y + v, x + u] - b[y + v + cdy, x + u + cdx]
                                cost += diff if diff >= 0 else -diff
                            if best >= 0 and cost >= best:
                                break
                    else:
                        for v in range(-half_block, half_block + 1):
                            ay = _clampi(y + v, 0, h - 1)
                            by = _clampi(y + v + cdy, 0, h - 1)
                            for u in range(-half_block, half_block + 1):
                                ax = _clampi(x + u, 0, w - 1)
                                bx = _clampi(x + u + cdx, 0, w - 1)
                                diff = a[ay, ax] - b[by, bx]
                                cost += diff if diff >= 0 else -diff
                            if best >= 0 and cost >= best:
                                break
                    if best < 0 or cost < best:
                        best = cost
                        best_dx = cdx
                        best_dy = cdy
                out[0, y, x] = best_dx
                out[1, y, x] = best_dy
    return out_arr
