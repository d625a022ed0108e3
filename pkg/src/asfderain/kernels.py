"""Backend selection for the hot loops.

The compiled extension is preferred; set ``ASF_PURE_PYTHON=1`` to force the
numpy fallback (the test-suite runs both).
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("ASF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def search_candidates(radius):
    """Integer displacements within ``radius``, nearest first.

    Ordering by squared length makes every tie resolve toward the smaller
    displacement, in particular toward zero motion.
    """
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    cand = np.stack([dx.ravel(), dy.ravel()], axis=1)
    order = np.lexsort((cand[:, 0], cand[:, 1], (cand ** 2).sum(axis=1)))
    return np.ascontiguousarray(cand[order], dtype=np.int64)


def rasterize_segments(x0, y0, x1, y1, width, intensity, height, img_width, impl=None):
    impl = impl or _impl
    arrs = [np.ascontiguousarray(v, dtype=np.float64) for v in (x0, y0, x1, y1, width, intensity)]
    return impl.rasterize_segments(*arrs, int(height), int(img_width))


def block_match(a, b, init, radius, half_block, impl=None):
    """Refine an integer flow ``init`` (2, H, W) by exhaustive SAD search.

    ``a`` and ``b`` are integer images; the flow maps positions in ``a`` to
    positions in ``b``. Borders are handled by index clamping.
    """
    impl = impl or _impl
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    init = np.ascontiguousarray(init, dtype=np.int64)
    if a.shape != b.shape or init.shape != (2,) + a.shape:
        raise ValueError(f"shape mismatch: a={a.shape} b={b.shape} init={init.shape}")
    return impl.block_match(a, b, init, search_candidates(radius), int(half_block))
