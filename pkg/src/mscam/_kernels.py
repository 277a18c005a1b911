"""Hot inner loops with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``MSCAM_BACKEND=numpy`` to
force the fallback; the default is ``numba`` when it imports cleanly.
Both implementations of every kernel stay importable under explicit names
so tests and the benchmark can compare them side by side.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
    from numba import prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is too old for numba and warns on first parallel call
        numba.config.THREADING_LAYER = "omp"
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba ships with the sandbox
    numba = None
    prange = range
    NUMBA_AVAILABLE = False


def _requested_backend() -> str:
    name = os.environ.get("MSCAM_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"MSCAM_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        return "numpy"
    return name


BACKEND = _requested_backend()


# ---------------------------------------------------------------------------
# im2col / col2im
#
# Column layout: rows indexed by (batch, out_y, out_x), columns by
# (channel, ky, kx). ``xp`` is the already padded input.
# ---------------------------------------------------------------------------


def im2col_numpy(xp, kh, kw, stride, oh, ow):
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (oh - 1) + 1 : stride, : stride * (ow - 1) + 1 : stride]
    # (b, c, oh, ow, kh, kw) -> (b, oh, ow, c, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, c * kh * kw)


def col2im_numpy(cols, shape, kh, kw, stride, oh, ow):
    b, c, hp, wp = shape
    g = cols.reshape(b, oh, ow, c, kh, kw)
    out = np.zeros(shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += g[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return out


def _im2col_loops(xp, kh, kw, stride, oh, ow):
    b, c = xp.shape[0], xp.shape[1]
    ncol = c * kh * kw
    cols = np.empty((b * oh * ow, ncol), dtype=np.float64)
    for n in prange(b):
        for y in range(oh):
            for x in range(ow):
                row = (n * oh + y) * ow + x
                y0 = y * stride
                x0 = x * stride
                k = 0
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            cols[row, k] = xp[n, ch, y0 + i, x0 + j]
                            k += 1
    return cols


def _col2im_loops(cols, b, c, hp, wp, kh, kw, stride, oh, ow):
    out = np.zeros((b, c, hp, wp), dtype=np.float64)
    # one writer per batch item keeps the accumulation order fixed
    for n in prange(b):
        for y in range(oh):
            for x in range(ow):
                row = (n * oh + y) * ow + x
                y0 = y * stride
                x0 = x * stride
                k = 0
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            out[n, ch, y0 + i, x0 + j] += cols[row, k]
                            k += 1
    return out


# ---------------------------------------------------------------------------
# 8-connected component labelling (raster-order flood fill)
# ---------------------------------------------------------------------------


def _label_loops(mask):
    """Label 8-connected components; labels follow raster order of first pixel."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    current = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or labels[sy, sx] != 0:
                continue
            current += 1
            labels[sy, sx] = current
            top = 0
            stack[top] = sy * w + sx
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                py = p // w
                px = p - py * w
                for dy in range(-1, 2):
                    ny = py + dy
                    if ny < 0 or ny >= h:
                        continue
                    for dx in range(-1, 2):
                        nx = px + dx
                        if nx < 0 or nx >= w:
                            continue
                        if mask[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = current
                            stack[top] = ny * w + nx
                            top += 1
    return labels, current


label_components_python = _label_loops

if NUMBA_AVAILABLE:
    _im2col_numba = numba.njit(cache=True, parallel=True)(_im2col_loops)
    _col2im_numba = numba.njit(cache=True, parallel=True)(_col2im_loops)
    label_components_numba = numba.njit(cache=True)(_label_loops)

    def im2col_numba(xp, kh, kw, stride, oh, ow):
        return _im2col_numba(np.ascontiguousarray(xp), kh, kw, stride, oh, ow)

    def col2im_numba(cols, shape, kh, kw, stride, oh, ow):
        b, c, hp, wp = shape
        return _col2im_numba(np.ascontiguousarray(cols), b, c, hp, wp, kh, kw, stride, oh, ow)

else:  # pragma: no cover
    im2col_numba = im2col_numpy
    col2im_numba = col2im_numpy
    label_components_numba = label_components_python


if BACKEND == "numba":
    im2col = im2col_numba
    col2im = col2im_numba
    label_components = label_components_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
    label_components = label_components_python
