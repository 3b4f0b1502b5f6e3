"""Hot numeric kernels.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback
(except ``im2col3``, where numpy slicing is already the fast path).
The numba path is used when numba imports and ``RFORGE_NUMBA`` is not set to
``0``; both paths return identical values and the test-suite runs them
against each other.
"""

from __future__ import annotations

import os

import numpy as np

_WANT_JIT = os.environ.get("RFORGE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _WANT_JIT:
        raise ImportError("disabled by RFORGE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

# finite stand-in for +inf; intersections stay above -_INF for f <= _INF
_INF = 1e20


# ---------------------------------------------------------------- numpy path

def _edt_rows_np(f: np.ndarray) -> np.ndarray:
    # min over p of (q - p)^2 + f[p], vectorised per row; O(W^2) per row
    w = f.shape[1]
    idx = np.arange(w, dtype=np.float64)
    d2 = (idx[:, None] - idx[None, :]) ** 2
    out = np.empty_like(f)
    for r in range(f.shape[0]):
        out[r] = np.min(d2 + f[r][None, :], axis=1)
    return out


def _im2col3_np(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, h, w, 9, c), dtype=xp.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, :, :, k, :] = xp[:, dy:dy + h, dx:dx + w, :]
            k += 1
    return cols.reshape(n * h * w, 9 * c)


def _col2im3_np(dcols: np.ndarray, n: int, h: int, w: int, c: int) -> np.ndarray:
    d = dcols.reshape(n, h, w, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += d[:, :, :, k, :]
            k += 1
    return dxp[:, 1:h + 1, 1:w + 1, :]


def _maxpool2_np(x: np.ndarray):
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def _maxpool2_back_np(dout: np.ndarray, arg: np.ndarray) -> np.ndarray:
    n, ho, wo, c = dout.shape
    onehot = arg[..., None] == np.arange(4, dtype=np.int8)
    win = onehot * dout[..., None]
    win = win.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return win.reshape(n, ho * 2, wo * 2, c).astype(dout.dtype, copy=False)


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:

    @njit(cache=True)
    def _edt_row_jit(f, out, v, z):
        # Felzenszwalb-Huttenlocher lower envelope of parabolas
        n = f.shape[0]
        k = 0
        v[0] = 0
        z[0] = -_INF
        z[1] = _INF
        for q in range(1, n):
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            while s <= z[k]:
                k -= 1
                p = v[k]
                s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = _INF
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            p = v[k]
            out[q] = (q - p) * (q - p) + f[p]

    @njit(cache=True)
    def _edt_rows_jit(f):
        rows, n = f.shape
        out = np.empty_like(f)
        v = np.zeros(n, dtype=np.int64)
        z = np.zeros(n + 1, dtype=np.float64)
        for r in range(rows):
            _edt_row_jit(f[r], out[r], v, z)
        return out

    @njit(cache=True)
    def _col2im3_jit(dcols, n, h, w, c):
        dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
        row = 0
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    k = 0
                    for dy in range(3):
                        for dx in range(3):
                            for ch in range(c):
                                dxp[b, i + dy, j + dx, ch] += dcols[row, k * c + ch]
                            k += 1
                    row += 1
        return dxp[:, 1:h + 1, 1:w + 1, :].copy()

    @njit(cache=True)
    def _maxpool2_jit(x):
        n, h, w, c = x.shape
        out = np.empty((n, h // 2, w // 2, c), dtype=x.dtype)
        arg = np.empty((n, h // 2, w // 2, c), dtype=np.int8)
        for b in range(n):
            for i in range(h // 2):
                for j in range(w // 2):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        bk = 0
                        for k in range(1, 4):
                            val = x[b, 2 * i + k // 2, 2 * j + k % 2, ch]
                            if val > best:
                                best = val
                                bk = k
                        out[b, i, j, ch] = best
                        arg[b, i, j, ch] = bk
        return out, arg

    @njit(cache=True)
    def _maxpool2_back_jit(dout, arg):
        n, ho, wo, c = dout.shape
        dx = np.zeros((n, ho * 2, wo * 2, c), dtype=dout.dtype)
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for ch in range(c):
                        k = arg[b, i, j, ch]
                        dx[b, 2 * i + k // 2, 2 * j + k % 2, ch] = dout[b, i, j, ch]
        return dx


# ---------------------------------------------------------------- dispatch

_active = HAS_NUMBA


def use_jit() -> bool:
    return _active


def set_backend(jit: bool) -> bool:
    """Switch the default path at runtime; returns the previous setting.

    Asking for numba when it is unavailable silently keeps numpy.
    """
    global _active
    prev, _active = _active, bool(jit) and HAS_NUMBA
    return prev


def _pick(jit):
    return _active if jit is None else bool(jit) and HAS_NUMBA


def edt_rows(f: np.ndarray, *, jit: bool | None = None) -> np.ndarray:
    """Squared 1-D distance transform along the last axis of a 2-D array."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if _pick(jit):
        return _edt_rows_jit(f)
    return _edt_rows_np(f)


def im2col3(xp: np.ndarray, h: int, w: int, *, jit: bool | None = None) -> np.ndarray:
    """Patch matrix for a 3x3 convolution over a padded NHWC batch.

    Always numpy: nine strided slice copies beat every loop kernel tried,
    so ``jit`` is accepted for a uniform signature and ignored.
    """
    return _im2col3_np(xp, h, w)


def col2im3(dcols: np.ndarray, n: int, h: int, w: int, c: int, *, jit: bool | None = None) -> np.ndarray:
    if _pick(jit):
        return _col2im3_jit(np.ascontiguousarray(dcols), n, h, w, c)
    return _col2im3_np(dcols, n, h, w, c)


def maxpool2(x: np.ndarray, *, jit: bool | None = None):
    """2x2/stride-2 max-pool; returns (pooled, window argmax in row-major order)."""
    if _pick(jit):
        return _maxpool2_jit(np.ascontiguousarray(x))
    return _maxpool2_np(x)


def maxpool2_back(dout: np.ndarray, arg: np.ndarray, *, jit: bool | None = None) -> np.ndarray:
    if _pick(jit):
        return _maxpool2_back_jit(np.ascontiguousarray(dout), np.ascontiguousarray(arg))
    return _maxpool2_back_np(dout, arg)
