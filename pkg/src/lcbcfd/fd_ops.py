"""Centered finite-difference operators of order 2, 4 and 6.

Arrays carry the x index on axis -2 and the y index on axis -1; any leading
axes are batch axes.  Operators return an array of the same shape with NaN
wherever the stencil does not fit, so validity shrinks automatically as
operators are composed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, factorial

import numpy as np
import sympy as sp

X_AXIS = -2
Y_AXIS = -1

# corrections in D+D-^n for the second and first derivative expansions
A_COEF = (1.0, -1.0 / 12.0, 1.0 / 90.0)
B_COEF = (1.0, -1.0 / 6.0, 1.0 / 30.0)


def check_order(d: int) -> int:
    if d not in (2, 4, 6):
        raise ValueError(f"order must be 2, 4 or 6, got {d}")
    return d // 2


@lru_cache(maxsize=None)
def centered_weights(deriv: int, half_width: int) -> np.ndarray:
    """Weights for the deriv-th derivative at 0 from nodes -w..w, unit spacing.

    Solved exactly in rationals, so the tables carry no roundoff beyond the
    final conversion.
    """
    n = 2 * half_width + 1
    if deriv >= n:
        raise ValueError(f"{n} nodes cannot resolve derivative {deriv}")
    offs = range(-half_width, half_width + 1)
    V = sp.Matrix(n, n, lambda s, l: sp.Integer(offs[l]) ** s)
    rhs = sp.zeros(n, 1)
    rhs[deriv] = factorial(deriv)
    w = V.LUsolve(rhs)
    out = np.array([float(v) for v in w])
    out.flags.writeable = False
    return out


def derivative_half_width(deriv: int, k: int) -> int:
    """Half-width of the centered order-2k stencil for a deriv-th derivative."""
    if deriv == 0:
        return 0
    return ceil(deriv / 2) + k - 1


@lru_cache(maxsize=None)
def _dpm_power(n: int) -> np.ndarray:
    w = np.array([1.0])
    for _ in range(n):
        w = np.convolve(w, [1.0, -2.0, 1.0])
    return w


def _pad_to(w: np.ndarray, half: int) -> np.ndarray:
    cur = (len(w) - 1) // 2
    return np.pad(w, half - cur)


@lru_cache(maxsize=None)
def second_weights(d: int) -> np.ndarray:
    """D_{d,xx} at unit spacing, built from powers of D+D-."""
    p = check_order(d)
    w = np.zeros(2 * p + 1)
    for n in range(p):
        w += A_COEF[n] * _pad_to(_dpm_power(n + 1), p)
    return w


@lru_cache(maxsize=None)
def first_weights(d: int) -> np.ndarray:
    """D_{d,x} at unit spacing: D0 times the b_n series in D+D-."""
    p = check_order(d)
    w = np.zeros(2 * p + 1)
    for n in range(p):
        w += B_COEF[n] * _pad_to(np.convolve([-0.5, 0.0, 0.5], _dpm_power(n)), p)
    return w


def _axis_slice(ndim: int, axis: int, start: int, stop: int) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = slice(start, stop)
    return tuple(idx)


def apply_stencil(V: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """Apply a centered 1D stencil along `axis`; NaN where it does not fit."""
    w = (len(weights) - 1) // 2
    n = V.shape[axis]
    out = np.full(V.shape, np.nan)
    if n <= 2 * w:
        return out
    core = None
    for l, c in enumerate(weights):
        if c == 0.0:
            continue
        term = c * V[_axis_slice(V.ndim, axis, l, n - 2 * w + l)]
        core = term if core is None else core + term
    if core is None:
        core = np.zeros_like(V[_axis_slice(V.ndim, axis, w, n - w)])
    out[_axis_slice(V.ndim, axis, w, n - w)] = core
    return out


def _check_fits(V: np.ndarray, axis: int, p: int) -> None:
    if V.shape[axis] < 2 * p + 1:
        raise ValueError(f"field extent {V.shape[axis]} too short for a stencil of half-width {p}")


def apply_first_derivative(V: np.ndarray, axis: int, d: int, h: float) -> np.ndarray:
    """D_{d} along axis (0 for x, 1 for y of a 2D field)."""
    p = check_order(d)
    ax = X_AXIS if axis == 0 else Y_AXIS
    _check_fits(V, ax, p)
    return apply_stencil(V, first_weights(d) / h, ax)


def apply_second_derivative(V: np.ndarray, axis: int, d: int, h: float) -> np.ndarray:
    p = check_order(d)
    ax = X_AXIS if axis == 0 else Y_AXIS
    _check_fits(V, ax, p)
    return apply_stencil(V, second_weights(d) / h**2, ax)


@dataclass(frozen=True)
class CoeffArrays:
    """Coefficients of Q sampled on the same lattice as the field (or scalars)."""

    c11: np.ndarray | float
    c12: np.ndarray | float
    c22: np.ndarray | float
    c1: np.ndarray | float
    c2: np.ndarray | float
    c0: np.ndarray | float

    def window(self, ix: slice, iy: slice) -> "CoeffArrays":
        def cut(c):
            return c[..., ix, iy] if np.ndim(c) >= 2 else c
        return CoeffArrays(*(cut(c) for c in self.as_tuple()))

    def as_tuple(self) -> tuple:
        return (self.c11, self.c12, self.c22, self.c1, self.c2, self.c0)


def _is_zero(c) -> bool:
    return np.ndim(c) == 0 and float(c) == 0.0


def apply_Q(V: np.ndarray, coef: CoeffArrays, d: int, dx: float, dy: float) -> np.ndarray:
    """Q_{d,h} with the cross term discretized as D_{d,x} D_{d,y}."""
    p = check_order(d)
    _check_fits(V, X_AXIS, p)
    _check_fits(V, Y_AXIS, p)
    wx, wxx = first_weights(d) / dx, second_weights(d) / dx**2
    wy, wyy = first_weights(d) / dy, second_weights(d) / dy**2
    out = np.zeros(V.shape)
    need_ux = not (_is_zero(coef.c12) and _is_zero(coef.c1))
    ux = apply_stencil(V, wx, X_AXIS) if need_ux else None
    if not _is_zero(coef.c11):
        out += coef.c11 * apply_stencil(V, wxx, X_AXIS)
    if not _is_zero(coef.c22):
        out += coef.c22 * apply_stencil(V, wyy, Y_AXIS)
    if not _is_zero(coef.c12):
        out += 2.0 * coef.c12 * apply_stencil(ux, wy, Y_AXIS)
    if not _is_zero(coef.c1):
        out += coef.c1 * ux
    if not _is_zero(coef.c2):
        out += coef.c2 * apply_stencil(V, wy, Y_AXIS)
    if not _is_zero(coef.c0):
        out += coef.c0 * V
    # keep the NaN frame even when some terms were skipped
    frame = np.zeros(V.shape[-2:], dtype=bool)
    frame[:p, :] = frame[-p:, :] = True
    frame[:, :p] = frame[:, -p:] = True
    out[..., frame] = np.nan
    return out


# --- corrected repeated application -------------------------------------------------

def _dpm(V: np.ndarray, axis: int, h: float) -> np.ndarray:
    return apply_stencil(V, np.array([1.0, -2.0, 1.0]) / h**2, axis)


def _d0(V: np.ndarray, axis: int, h: float) -> np.ndarray:
    return apply_stencil(V, np.array([-0.5, 0.0, 0.5]) / h, axis)


def apply_Q_corrected(stack: list[np.ndarray], coef: CoeffArrays, k: int,
                      dx: float, dy: float) -> np.ndarray:
    """One application of the order-2k operator built from lower-accuracy inputs.

    stack[n] holds the input at accuracy order 2(k-n), n = 0..k-1.  The
    correction terms of order dx^{2n} are formed from stack[n], which is all
    the accuracy they need.
    """
    if len(stack) < k:
        raise ValueError(f"need {k} accuracy levels, got {len(stack)}")
    V = stack[0]
    sub: dict[tuple[int, int, int], np.ndarray] = {}

    def _Wfrom(l: int, m: int, level: int) -> np.ndarray:
        # (D+D-x)^l (D+D-y)^m stack[level]
        key = (l, m, level)
        if key not in sub:
            if l == 0 and m == 0:
                sub[key] = stack[level]
            elif m > 0:
                sub[key] = _dpm(_Wfrom(l, m - 1, level), Y_AXIS, dy)
            else:
                sub[key] = _dpm(_Wfrom(l - 1, 0, level), X_AXIS, dx)
        return sub[key]

    def corr(level_terms):
        acc = None
        for c, arr in level_terms:
            t = c * arr
            acc = t if acc is None else acc + t
        return acc

    out = np.zeros(V.shape)
    if not _is_zero(coef.c11):
        sx = corr([(1.0, V)] + [(A_COEF[n] * dx ** (2 * n), _Wfrom(n, 0, n)) for n in range(1, k)])
        out = out + coef.c11 * _dpm(sx, X_AXIS, dx)
    if not _is_zero(coef.c22):
        sy = corr([(1.0, V)] + [(A_COEF[n] * dy ** (2 * n), _Wfrom(0, n, n)) for n in range(1, k)])
        out = out + coef.c22 * _dpm(sy, Y_AXIS, dy)
    if not _is_zero(coef.c12):
        terms = [(1.0, V)]
        for n in range(1, k):
            for l in range(n + 1):
                c = B_COEF[l] * B_COEF[n - l] * dx ** (2 * l) * dy ** (2 * (n - l))
                terms.append((c, _Wfrom(l, n - l, n)))
        sxy = corr(terms)
        out = out + 2.0 * coef.c12 * _d0(_d0(sxy, X_AXIS, dx), Y_AXIS, dy)
    if not _is_zero(coef.c1):
        s1 = corr([(1.0, V)] + [(B_COEF[n] * dx ** (2 * n), _Wfrom(n, 0, n)) for n in range(1, k)])
        out = out + coef.c1 * _d0(s1, X_AXIS, dx)
    if not _is_zero(coef.c2):
        s2 = corr([(1.0, V)] + [(B_COEF[n] * dy ** (2 * n), _Wfrom(0, n, n)) for n in range(1, k)])
        out = out + coef.c2 * _d0(s2, Y_AXIS, dy)
    if not _is_zero(coef.c0):
        out = out + coef.c0 * V
    # the full operator footprint is k points in each direction
    frame = np.zeros(V.shape[-2:], dtype=bool)
    frame[:k, :] = frame[-k:, :] = True
    frame[:, :k] = frame[:, -k:] = True
    out[..., frame] = np.nan
    return out


def index_domain(p: int, nu: int, k: int) -> tuple[int, int]:
    """Half-widths (x, y) on which V[nu, k] is needed at a left-face point."""
    wx = p - (nu + k - 1)
    return wx, wx + p


def ladder_expansion(nu: int, k: int) -> int:
    """How far V[nu, k] reaches beyond the points where it is evaluated."""
    return 0 if nu == 0 else k + nu - 1


def apply_Q_power(V0: np.ndarray, coef: CoeffArrays, nu: int, k: int,
                  dx: float, dy: float) -> np.ndarray:
    """Q^nu applied to V0 at accuracy 2k, lowering accuracy one step per level.

    Level m+1 at accuracy kk is formed from level m at accuracies kk..1, so the
    final result V[nu, k] draws on V[nu-1, 1..k] and so on down to V0.
    """
    if nu == 0:
        return V0.copy()
    need = ladder_expansion(nu, k)
    for ax in (X_AXIS, Y_AXIS):
        if V0.shape[ax] < 2 * need + 1:
            raise ValueError(
                f"patch extent {V0.shape[ax]} too small for nu={nu}, k={k}: "
                f"needs half-width {need}")
    levels = [V0] * k  # levels[kk-1] = V[m, kk]
    for _ in range(nu):
        new = []
        for kk in range(1, k + 1):
            stack = [levels[kk - 1 - n] for n in range(kk)]
            new.append(apply_Q_corrected(stack, coef, kk, dx, dy))
        levels = new
    return levels[k - 1]


def tangential_derivative_pair(line: np.ndarray, mu: int, k: int,
                               h: float = 1.0) -> tuple[float, float]:
    """(d^{mu-1}, d^mu) at the center of `line`, each centered and order 2k.

    For mu = 0 the first entry is 0 and the second is the center value.
    """
    line = np.asarray(line, dtype=float)
    half = (len(line) - 1) // 2
    if len(line) % 2 == 0:
        raise ValueError("line must have odd length")
    if derivative_half_width(mu, k) > half:
        raise ValueError(
            f"line of half-width {half} too short for derivative {mu} at order {2 * k}")

    def one(m: int) -> float:
        if m < 0:
            return 0.0
        if m == 0:
            return float(line[half])
        w = derivative_half_width(m, k)
        wts = centered_weights(m, w)
        return float(wts @ line[half - w:half + w + 1]) / h**m

    return one(mu - 1), one(mu)


def line_weights(mu: int, k: int, half: int) -> np.ndarray:
    """Order-2k weights for the mu-th derivative padded to 2*half+1 nodes."""
    if mu == 0:
        w = np.zeros(2 * half + 1)
        w[half] = 1.0
        return w
    hw = derivative_half_width(mu, k)
    if hw > half:
        raise ValueError(f"derivative {mu} at order {2 * k} needs half-width {hw} > {half}")
    return _pad_to(centered_weights(mu, hw), half)
