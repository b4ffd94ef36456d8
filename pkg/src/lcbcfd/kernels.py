"""Hot loops for applying Q_{d,h} on a whole grid.

Set LCBC_NO_NUMBA=1 to use the pure-numpy path (also used automatically if
numba cannot be imported).
"""
from __future__ import annotations

import os

import numpy as np

from .fd_ops import first_weights, second_weights

try:
    import numba as nb
except ImportError:  # pragma: no cover
    nb = None

USE_NUMBA = nb is not None and os.environ.get("LCBC_NO_NUMBA", "0") not in ("1", "true", "yes")


def _q_numpy(U, c11, c12, c22, c1, c2, c0, wx, wxx, wy, wyy, out):
    p = (len(wx) - 1) // 2
    nx, ny = U.shape
    ix = slice(p, nx - p)
    iy = slice(p, ny - p)
    uxx = np.zeros((nx - 2 * p, ny - 2 * p))
    uyy = np.zeros_like(uxx)
    ux_full = np.zeros((nx - 2 * p, ny))
    uy = np.zeros_like(uxx)
    for l in range(2 * p + 1):
        sx = slice(l, nx - 2 * p + l)
        sy = slice(l, ny - 2 * p + l)
        uxx += wxx[l] * U[sx, iy]
        uyy += wyy[l] * U[ix, sy]
        ux_full += wx[l] * U[sx, :]
        uy += wy[l] * U[ix, sy]
    uxy = np.zeros_like(uxx)
    for l in range(2 * p + 1):
        uxy += wy[l] * ux_full[:, l:ny - 2 * p + l]
    ux = ux_full[:, iy]
    out[ix, iy] = (c11[ix, iy] * uxx + 2.0 * c12[ix, iy] * uxy + c22[ix, iy] * uyy
                   + c1[ix, iy] * ux + c2[ix, iy] * uy + c0[ix, iy] * U[ix, iy])
    return out


if USE_NUMBA:

    @nb.njit(cache=True)
    def _q_numba(U, c11, c12, c22, c1, c2, c0, wx, wxx, wy, wyy, out):
        p = (wx.shape[0] - 1) // 2
        nx, ny = U.shape
        ux = np.zeros((nx, ny))
        for i in range(p, nx - p):
            for j in range(ny):
                s = 0.0
                for l in range(-p, p + 1):
                    s += wx[l + p] * U[i + l, j]
                ux[i, j] = s
        for i in range(p, nx - p):
            for j in range(p, ny - p):
                sxx = 0.0
                syy = 0.0
                sy = 0.0
                sxy = 0.0
                for l in range(-p, p + 1):
                    sxx += wxx[l + p] * U[i + l, j]
                    syy += wyy[l + p] * U[i, j + l]
                    sy += wy[l + p] * U[i, j + l]
                    sxy += wy[l + p] * ux[i, j + l]
                out[i, j] = (c11[i, j] * sxx + 2.0 * c12[i, j] * sxy + c22[i, j] * syy
                             + c1[i, j] * ux[i, j] + c2[i, j] * sy + c0[i, j] * U[i, j])
        return out

    @nb.njit(cache=True)
    def _sep_numba(U, wx, wy, out):
        px = (wx.shape[0] - 1) // 2
        py = (wy.shape[0] - 1) // 2
        nx, ny = U.shape
        tmp = np.zeros((nx, ny))
        for i in range(px, nx - px):
            for j in range(ny):
                s = 0.0
                for l in range(-px, px + 1):
                    s += wx[l + px] * U[i + l, j]
                tmp[i, j] = s
        for i in range(px, nx - px):
            for j in range(py, ny - py):
                s = 0.0
                for l in range(-py, py + 1):
                    s += wy[l + py] * tmp[i, j + l]
                out[i, j] = s
        return out


def _sep_numpy(U, wx, wy, out):
    px = (len(wx) - 1) // 2
    py = (len(wy) - 1) // 2
    nx, ny = U.shape
    tmp = np.zeros((nx - 2 * px, ny))
    for l, c in enumerate(wx):
        if c != 0.0:
            tmp += c * U[l:nx - 2 * px + l, :]
    res = np.zeros((nx - 2 * px, ny - 2 * py))
    for l, c in enumerate(wy):
        if c != 0.0:
            res += c * tmp[:, l:ny - 2 * py + l]
    out[px:nx - px, py:ny - py] = res
    return out


class GridQ:
    """Q_{d,h} on a fixed lattice with coefficients sampled once.

    Points closer than p to the array edge are returned as NaN.
    """

    def __init__(self, coeffs: tuple, d: int, dx: float, dy: float, use_numba: bool | None = None):
        shape = np.shape(coeffs[0])
        self.c = tuple(np.ascontiguousarray(np.broadcast_to(c, shape), dtype=float) for c in coeffs)
        self.d = d
        self.wx = np.ascontiguousarray(first_weights(d) / dx)
        self.wxx = np.ascontiguousarray(second_weights(d) / dx**2)
        self.wy = np.ascontiguousarray(first_weights(d) / dy)
        self.wyy = np.ascontiguousarray(second_weights(d) / dy**2)
        self.use_numba = USE_NUMBA if use_numba is None else (use_numba and USE_NUMBA)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        out = np.full(U.shape, np.nan)
        U = np.ascontiguousarray(U, dtype=float)
        fn = _q_numba if self.use_numba else _q_numpy
        return fn(U, *self.c, self.wx, self.wxx, self.wy, self.wyy, out)


def separable_apply(U: np.ndarray, wx: np.ndarray, wy: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """(wx along x) then (wy along y); NaN outside the valid window."""
    out = np.full(U.shape, np.nan)
    U = np.ascontiguousarray(U, dtype=float)
    numba_ok = USE_NUMBA if use_numba is None else (use_numba and USE_NUMBA)
    if numba_ok:
        return _sep_numba(U, np.ascontiguousarray(wx, dtype=float), np.ascontiguousarray(wy, dtype=float), out)
    return _sep_numpy(U, wx, wy, out)
