"""Local compatibility boundary conditions: constraint systems and ghost closures.

At each boundary point (and each corner) a tensor-product polynomial of
degree 2p per variable is fitted to interior values, the boundary condition
and its compatibility conditions.  Its values at the ghost points close the
centered interior stencils.

Two accuracy modes are supported for the compatibility rows:
  ladder  Q^nu approximated at order 2(p+1-nu) (Dirichlet) or 2(p-nu)
          (Neumann), the practical default;
  full    every Q application at order 2p with the product cross term, which
          is exact for constant coefficients on the polynomial space and so
          gives the exact-derivative constraint matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
from scipy.optimize import linear_sum_assignment

from . import fd_ops
from .fd_ops import CoeffArrays, X_AXIS, Y_AXIS
from .model import (BOTTOM, CORNERS, DIRICHLET, LEFT, NEUMANN, RIGHT, SIDES, TOP,
                    ExtendedGrid, GridSpec, PdeProblem, inward_sign, normal_axis, zero_field)

LADDER, FULL = "ladder", "full"


class SolvabilityError(RuntimeError):
    pass


# --- basis ---------------------------------------------------------------------------

def lagrange_values(p: int, z) -> np.ndarray:
    """L_m(z) for m = -p..p, shape (2p+1,) + shape(z); extrapolates outside [-p, p]."""
    z = np.asarray(z, dtype=float)
    nodes = np.arange(-p, p + 1)
    out = np.ones((2 * p + 1,) + z.shape)
    for a, m in enumerate(nodes):
        for l in nodes:
            if l != m:
                out[a] *= (z - l) / (m - l)
    return out


@lru_cache(maxsize=None)
def _lagrange_int_table(p: int, reach: int) -> np.ndarray:
    t = lagrange_values(p, np.arange(-reach, reach + 1))
    t.flags.writeable = False
    return t


def row_accuracy(kind: str, nu: int, p: int) -> int:
    """Accuracy index k (order 2k) of the ladder for a BC kind and level nu."""
    return p + 1 - nu if kind == DIRICHLET else p - nu


def tangential_k(mu: int, k_row: int, p: int, mode: str) -> int:
    k_line = p + 1 - ceil(mu / 2)
    return k_line if mode == FULL else min(k_row, k_line)


def op_expansion(kind: str, nu: int, p: int, mode: str) -> tuple[int, int]:
    """(normal, tangential) reach of the row operator beyond its evaluation point."""
    if mode == FULL:
        e = nu * p
        return (e + p if kind == NEUMANN else e), e
    k = row_accuracy(kind, nu, p)
    e = fd_ops.ladder_expansion(nu, k)
    return (e + k if kind == NEUMANN else e), e


# --- equilibration -------------------------------------------------------------------

@dataclass
class Equilibration:
    scaled: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray
    perm: np.ndarray  # scaled row perm[i] comes from original row i
    kappa: float
    lu: tuple | None = None

    def solve(self, b: np.ndarray) -> np.ndarray:
        rhs = np.empty_like(b, dtype=float)
        rhs[self.perm] = (self.row_scale[:, None] * b) if b.ndim == 2 else self.row_scale * b
        y = sla.lu_solve(self.lu, rhs)
        return (self.col_scale[:, None] * y) if b.ndim == 2 else self.col_scale * y


def equilibrate(A: np.ndarray) -> Equilibration:
    """Row permutation and row/column scaling so |diag| = 1 and |offdiag| <= 1.

    Maximum-product matching on log magnitudes; the matching duals give the
    scalings.  Raises SolvabilityError for a structurally or numerically
    singular matrix.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    absA = np.abs(A)
    nz = absA > 0
    if not np.all(nz.any(axis=0)) or not np.all(nz.any(axis=1)):
        raise SolvabilityError("constraint matrix has an empty row or column")
    colmax = absA.max(axis=0)
    with np.errstate(divide="ignore"):
        cost = np.where(nz, np.log(colmax)[None, :] - np.log(np.where(nz, absA, 1.0)), np.inf)
    big = (np.max(cost[nz]) + 1.0) * (n + 1) + 1e3
    rows, cols = linear_sum_assignment(np.where(nz, cost, big))
    match = np.empty(n, dtype=int)
    match[rows] = cols
    if not np.all(nz[np.arange(n), match]):
        raise SolvabilityError("constraint matrix is structurally singular")
    # duals: v_j - v_match(i) <= cost_ij - cost_i,match(i) on nonzeros
    cm = cost[np.arange(n), match]
    W = np.full((n, n), np.inf)
    src, dst = np.nonzero(nz)
    W[match[src], dst] = np.minimum(W[match[src], dst], cost[src, dst] - cm[src])
    dist = np.zeros(n)
    for _ in range(n + 1):
        new = np.minimum(dist, np.min(dist[:, None] + W, axis=0))
        if np.allclose(new, dist, rtol=0, atol=1e-13):
            dist = new
            break
        dist = new
    v = dist
    u = cm - v[match]
    r = np.exp(u)
    c = np.exp(v) / colmax
    S = (r[:, None] * A) * c[None, :]
    scaled = np.empty_like(S)
    scaled[match] = S
    kappa = float(np.linalg.cond(scaled, 2))
    if not np.isfinite(kappa) or kappa > 1e15:
        raise SolvabilityError(f"constraint matrix numerically singular (condition {kappa:.3e})")
    eq = Equilibration(scaled=scaled, row_scale=r, col_scale=c, perm=match, kappa=kappa)
    eq.lu = sla.lu_factor(scaled, check_finite=False)
    return eq


# --- constraint manifests ------------------------------------------------------------

@dataclass(frozen=True)
class Row:
    """One constraint: a data value at a point, or a weighted sum of CBC terms.

    CBC term = (weight, face, nu, mu): the mu-th tangential derivative of the
    face operator at level nu (Q^nu for Dirichlet faces, d_n Q^nu for Neumann).
    """

    kind: str  # "interp", "bc" or "cbc"
    point: tuple[int, int] | None = None
    terms: tuple = ()

    @property
    def label(self) -> str:
        if self.kind != "cbc":
            return f"{self.kind}{self.point}"
        return "+".join(f"{f}[nu={nu},mu={mu}]" for _, f, nu, mu in self.terms)


def _local(side: str, a: int, t: int) -> tuple[int, int]:
    s = inward_sign(side)
    return (s * a, t) if normal_axis(side) == 0 else (t, s * a)


def side_rows(p: int, side: str, kind: str) -> list[Row]:
    rows = []
    for a in range(0, p + 1):
        for t in range(-p, p + 1):
            rk = "bc" if (a == 0 and kind == DIRICHLET) else "interp"
            rows.append(Row(rk, _local(side, a, t)))
    nus = range(1, p + 1) if kind == DIRICHLET else range(0, p)
    for nu in nus:
        for mu in range(2 * p + 1):
            rows.append(Row("cbc", terms=((1.0, side, nu, mu),)))
    return rows


def _odd_then_full(nu: int, p: int) -> list[int]:
    return list(range(1, 2 * nu, 2)) + list(range(2 * nu, 2 * p + 1))


def _even_then_full(nu: int, p: int) -> list[int]:
    return list(range(0, 2 * nu - 1, 2)) + list(range(2 * nu, 2 * p + 1))


def _avg(fa: str, mua: int, wa: float, fb: str, mub: int, wb: float, nua: int, nub: int) -> Row:
    s = wa + wb
    return Row("cbc", terms=((wa / s, fa, nua, mua), (wb / s, fb, nub, mub)))


def corner_rows(p: int, corner: str, kinds: tuple[str, str], dx: float, dy: float) -> list[Row]:
    """Constraint rows for a corner; fx is the face with an x-normal."""
    fx, fy = CORNERS[corner]
    kx, ky = kinds
    sx, sy = inward_sign(fx), inward_sign(fy)
    rows = []
    a0 = 1 if kx == DIRICHLET else 0
    b0 = 1 if ky == DIRICHLET else 0
    for a in range(a0, p + 1):
        for b in range(b0, p + 1):
            rows.append(Row("interp", (sx * a, sy * b)))
    # tangential spacing of each face: dy along the x-normal face
    hx_t, hy_t = dy, dx
    if kx == ky:
        for nu in range(0, p + 1) if kx == DIRICHLET else range(0, p):
            if kx == DIRICHLET:
                mus = list(range(2 * p + 1)) if nu == 0 else _odd_then_full(nu, p)
                mu_avg = 0 if nu == 0 else 2 * nu
            else:
                mus = _even_then_full(nu, p)
                mu_avg = 2 * nu + 1
            for mu in mus:
                if mu == mu_avg:
                    rows.append(_avg(fx, mu, hx_t**mu, fy, mu, hy_t**mu, nu, nu))
                else:
                    rows.append(Row("cbc", terms=((1.0, fx, nu, mu),)))
                    rows.append(Row("cbc", terms=((1.0, fy, nu, mu),)))
        return rows
    fd, fn = (fx, fy) if kx == DIRICHLET else (fy, fx)
    hd, hn = (hx_t, hy_t) if kx == DIRICHLET else (hy_t, hx_t)
    for nu in range(0, p):
        md = _even_then_full(nu, p)
        mn = _odd_then_full(nu, p)
        for mu in md:
            if mu != 2 * nu + 1:
                rows.append(Row("cbc", terms=((1.0, fd, nu, mu),)))
        for mu in mn:
            if mu != 2 * nu:
                rows.append(Row("cbc", terms=((1.0, fn, nu, mu),)))
        rows.append(_avg(fd, 2 * nu + 1, hd ** (2 * nu), fn, 2 * nu, hn ** (2 * nu), nu, nu))
    for mu in range(0, 2 * p + 1, 2):
        rows.append(Row("cbc", terms=((1.0, fd, p, mu),)))
    return rows


def corner_ghosts(p: int, corner: str) -> list[tuple[int, int]]:
    """Local offsets of the ghosts filled by a corner polynomial."""
    fx, fy = CORNERS[corner]
    sx, sy = inward_sign(fx), inward_sign(fy)
    out = []
    for a in range(-p, p):
        for b in range(-p, p):
            if a < 0 or b < 0:
                out.append((sx * a, sy * b))
    return out


# --- strip operators -----------------------------------------------------------------

class StripOperator:
    """Linear maps from samples on a strip around one side to line values.

    The strip spans normal offsets -M..M around the boundary line and the
    whole side plus margins.  Outputs live on the boundary line at tangential
    indices -p..n+p.
    """

    def __init__(self, coeffs, spec: GridSpec, side: str, mode: str, reach: int):
        self.spec, self.side, self.mode = spec, side, mode
        p = spec.p
        self.p = p
        self.M = reach
        self.axis = normal_axis(side)
        n_t = spec.n_along(side)
        line = {LEFT: 0, RIGHT: spec.nx, BOTTOM: 0, TOP: spec.ny}[side]
        self.line = line
        self.t_idx = np.arange(-p - reach, n_t + p + reach + 1)
        self.n_idx = np.arange(line - reach, line + reach + 1)
        if self.axis == 0:
            gi, gj = self.n_idx, self.t_idx
        else:
            gi, gj = self.t_idx, self.n_idx
        self.GI, self.GJ = np.meshgrid(gi, gj, indexing="ij")
        self.X = self.GI * spec.dx
        self.Y = self.GJ * spec.dy
        self.coef = coeffs.evaluate(self.X, self.Y)
        self.n_line = n_t + 2 * p + 1
        self._maps: dict = {}

    @property
    def shape(self) -> tuple[int, int]:
        return self.GI.shape

    def line_values(self, F: np.ndarray) -> np.ndarray:
        """Pick the boundary-line outputs j = -p..n+p from strip-shaped arrays."""
        M = self.M
        if self.axis == 0:
            return F[..., M, M:M + self.n_line]
        return F[..., M:M + self.n_line, M]

    def apply(self, V: np.ndarray, m: int, k: int, neumann: bool) -> np.ndarray:
        """Q^m (order 2k, or order 2p in full mode), then d_n if neumann."""
        spec = self.spec
        if self.mode == FULL:
            d = 2 * self.p
            W = V
            for _ in range(m):
                W = fd_ops.apply_Q(W, self.coef, d, spec.dx, spec.dy)
            kn = self.p
        else:
            W = fd_ops.apply_Q_power(V, self.coef, m, k, spec.dx, spec.dy) if m else V
            kn = k
        if neumann:
            ax = X_AXIS if self.axis == 0 else Y_AXIS
            h = spec.dx if self.axis == 0 else spec.dy
            W = fd_ops.apply_stencil(W, fd_ops.centered_weights(1, kn) / h, ax)
        return self.line_values(W)

    def expansion(self, m: int, k: int, neumann: bool) -> tuple[int, int]:
        if self.mode == FULL:
            e = m * self.p
            return (e + self.p if neumann else e), e
        e = fd_ops.ladder_expansion(m, k)
        return (e + k if neumann else e), e

    def matrix(self, m: int, k: int, neumann: bool) -> sps.csr_matrix:
        """Sparse (n_line x n_strip) map, extracted by colored impulse probing."""
        key = (m, k if self.mode != FULL else 0, neumann)
        if key in self._maps:
            return self._maps[key]
        en, et = self.expansion(m, k, neumann)
        if en > self.M or et > self.M:
            raise ValueError(f"strip reach {self.M} too small for operator reach {(en, et)}")
        S = 2 * et + 1
        nN, nT = len(self.n_idx), len(self.t_idx)
        colors = [(a, c) for a in range(nN) for c in range(S)]
        # only normal offsets within reach of the line matter
        colors = [(a, c) for a, c in colors if abs(a - self.M) <= en]
        rows_o, cols_o, vals_o = [], [], []
        out_t = np.arange(self.n_line) + self.M  # strip tangential coordinate of outputs
        chunk = 64
        for c0 in range(0, len(colors), chunk):
            batch = colors[c0:c0 + chunk]
            probe = np.zeros((len(batch),) + self.shape)
            for b, (a, c) in enumerate(batch):
                ts = np.arange(c, nT, S)
                if self.axis == 0:
                    probe[b, a, ts] = 1.0
                else:
                    probe[b, ts, a] = 1.0
            res = self.apply(probe, m, k, neumann)
            if np.isnan(res).any():
                raise ValueError("strip too narrow for the requested operator")
            for b, (a, c) in enumerate(batch):
                src_t = out_t - et + np.mod(c - (out_t - et), S)
                vals = res[b]
                ok = (src_t < nT) & (vals != 0.0)
                o = np.nonzero(ok)[0]
                if self.axis == 0:
                    flat = a * nT + src_t[o]
                else:
                    flat = src_t[o] * nN + a
                rows_o.append(o)
                cols_o.append(flat)
                vals_o.append(vals[o])
        mat = sps.csr_matrix((np.concatenate(vals_o), (np.concatenate(rows_o), np.concatenate(cols_o))),
                             shape=(self.n_line, self.GI.size))
        self._maps[key] = mat
        return mat


def _row_op(kind: str, nu: int, p: int, mode: str) -> tuple[int, int, bool]:
    return nu, row_accuracy(kind, nu, p), kind == NEUMANN


class BoundaryOperators:
    """Strip operators for all four sides of a problem on a grid."""

    def __init__(self, problem: PdeProblem, spec: GridSpec, mode: str = LADDER):
        if mode not in (LADDER, FULL):
            raise ValueError(f"unknown mode {mode!r}")
        self.problem, self.spec, self.mode = problem, spec, mode
        p = spec.p
        self.p = p
        self.strips = {}
        for side in SIDES:
            kind = problem.kind(side)
            nus = range(0, p + 1) if kind == DIRICHLET else range(0, p)
            reach = max(max(op_expansion(kind, nu, p, mode)) for nu in nus)
            # data tables apply Q^(m) at level nu's accuracy for m < nu
            reach = max(reach, p) + 1
            self.strips[side] = StripOperator(problem.coeffs, spec, side, mode, reach)

    def face_matrix(self, side: str, nu: int) -> sps.csr_matrix:
        kind = self.problem.kind(side)
        m, k, neu = _row_op(kind, nu, self.p, self.mode)
        return self.strips[side].matrix(m, k, neu)

    def table_rows(self, side: str) -> int:
        return self.p + 1 if self.problem.kind(side) == DIRICHLET else self.p


# --- systems -------------------------------------------------------------------------

@dataclass
class LcbcSystem:
    where: str
    center: tuple[int, int]
    p: int
    A: np.ndarray
    rows: list[Row]
    ghosts: list[tuple[int, int]]  # local offsets
    # b = Bu @ U[ext] + Br @ r[tables]; stored as dense blocks over index lists
    u_index: np.ndarray = None
    Bu: np.ndarray = None
    r_index: np.ndarray = None
    Br: np.ndarray = None
    eq: Equilibration | None = None

    @property
    def kappa(self) -> float:
        return self.eq.kappa if self.eq is not None else float("nan")

    def basis_index(self, m: int, n: int) -> int:
        return (m + self.p) * (2 * self.p + 1) + (n + self.p)


class TableLayout:
    """Flat indexing of all boundary-data tables (per side: rows nu, cols j = -p..n+p)."""

    def __init__(self, problem: PdeProblem, spec: GridSpec):
        self.p = spec.p
        self.offsets, self.shapes = {}, {}
        off = 0
        for side in SIDES:
            rows = spec.p + 1 if problem.kind(side) == DIRICHLET else spec.p
            cols = spec.n_along(side) + 2 * spec.p + 1
            self.offsets[side] = off
            self.shapes[side] = (rows, cols)
            off += rows * cols
        self.size = off

    def index(self, side: str, nu: int, j) -> np.ndarray:
        rows, cols = self.shapes[side]
        return self.offsets[side] + nu * cols + (np.asarray(j) + self.p)

    def split(self, flat: np.ndarray) -> dict:
        return {s: flat[self.offsets[s]:self.offsets[s] + np.prod(self.shapes[s])].reshape(self.shapes[s])
                for s in SIDES}


def _cbc_row(ops: BoundaryOperators, layout: TableLayout, center: tuple[int, int],
             terms: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A row over the basis, table indices, table weights) for one CBC row."""
    p, mode, spec = ops.p, ops.mode, ops.spec
    ic, jc = center
    arow = np.zeros((2 * p + 1) ** 2)
    r_idx, r_w = [], []
    for wt, face, nu, mu in terms:
        strip = ops.strips[face]
        kind = ops.problem.kind(face)
        Mmat = ops.face_matrix(face, nu)
        k_row = row_accuracy(kind, nu, p)
        kt = tangential_k(mu, k_row, p, mode)
        h_t = spec.h_along(face)
        w = fd_ops.line_weights(mu, kt, p) / h_t**mu
        tc = jc if normal_axis(face) == 0 else ic
        lines = tc + np.arange(-p, p + 1)  # tangential grid indices
        sel = np.nonzero(w)[0]
        vec = sps.csr_matrix(w[sel]) @ Mmat[lines[sel] + p]
        vec = vec.tocoo()
        gi = strip.GI.ravel()[vec.col] - ic
        gj = strip.GJ.ravel()[vec.col] - jc
        reach = int(max(np.max(np.abs(gi)), np.max(np.abs(gj)))) if vec.nnz else 0
        tab = _lagrange_int_table(p, max(reach, p))
        Lx = tab[:, gi + max(reach, p)]
        Ly = tab[:, gj + max(reach, p)]
        arow += wt * ((Lx * vec.data) @ Ly.T).ravel()
        r_idx.append(layout.index(face, nu, lines[sel]))
        r_w.append(wt * w[sel])
    return arow, np.concatenate(r_idx), np.concatenate(r_w)


def _build_system(ops: BoundaryOperators, layout: TableLayout, ext: ExtendedGrid, where: str,
                  center: tuple[int, int], rows: list[Row], ghosts: list[tuple[int, int]],
                  factor: bool = True) -> LcbcSystem:
    p = ops.p
    m = (2 * p + 1) ** 2
    if len(rows) != m:
        raise AssertionError(f"{where}: {len(rows)} constraints for {m} unknowns")
    A = np.zeros((m, m))
    u_pairs, r_pairs = [], []
    sysobj = LcbcSystem(where=where, center=center, p=p, A=A, rows=rows, ghosts=ghosts)
    ny_ext = ext.shape[1]
    for r, row in enumerate(rows):
        if row.kind in ("interp", "bc"):
            A[r, sysobj.basis_index(*row.point)] = 1.0
            gi, gj = center[0] + row.point[0], center[1] + row.point[1]
            u_pairs.append((r, (gi + p) * ny_ext + (gj + p), 1.0))
        else:
            arow, ridx, rw = _cbc_row(ops, layout, center, row.terms)
            A[r] = arow
            for a, b in zip(ridx, rw):
                r_pairs.append((r, int(a), float(b)))
    u_index = np.unique([e for _, e, _ in u_pairs]).astype(int)
    Bu = np.zeros((m, len(u_index)))
    pos = {e: i for i, e in enumerate(u_index)}
    for r, e, v in u_pairs:
        Bu[r, pos[e]] += v
    r_index = np.unique([e for _, e, _ in r_pairs]).astype(int) if r_pairs else np.zeros(0, int)
    Br = np.zeros((m, len(r_index)))
    pos = {e: i for i, e in enumerate(r_index)}
    for r, e, v in r_pairs:
        Br[r, pos[e]] += v
    sysobj.u_index, sysobj.Bu, sysobj.r_index, sysobj.Br = u_index, Bu, r_index, Br
    if not factor:
        return sysobj
    try:
        sysobj.eq = equilibrate(A)
    except SolvabilityError as exc:
        raise SolvabilityError(f"{where} at {center}: {exc}") from exc
    return sysobj


def side_center(spec: GridSpec, side: str, jt: int) -> tuple[int, int]:
    return {LEFT: (0, jt), RIGHT: (spec.nx, jt), BOTTOM: (jt, 0), TOP: (jt, spec.ny)}[side]


def corner_center(spec: GridSpec, corner: str) -> tuple[int, int]:
    fx, fy = CORNERS[corner]
    return (0 if fx == LEFT else spec.nx, 0 if fy == BOTTOM else spec.ny)


def assemble_side_system(ops: BoundaryOperators, side: str, jt: int,
                         layout: TableLayout | None = None, factor: bool = True) -> LcbcSystem:
    spec, p = ops.spec, ops.p
    n_t = spec.n_along(side)
    if not (p <= jt <= n_t - p):
        raise ValueError(f"index {jt} on {side} needs a corner system (side range is [{p}, {n_t - p}])")
    layout = layout or TableLayout(ops.problem, spec)
    kind = ops.problem.kind(side)
    ghosts = [_local(side, -a, 0) for a in range(1, p + 1)]
    return _build_system(ops, layout, ExtendedGrid(spec), side, side_center(spec, side, jt),
                         side_rows(p, side, kind), ghosts, factor)


def assemble_corner_system(ops: BoundaryOperators, corner: str,
                           layout: TableLayout | None = None, factor: bool = True) -> LcbcSystem:
    spec, p = ops.spec, ops.p
    kinds = ops.problem.corner_kinds(corner)
    layout = layout or TableLayout(ops.problem, spec)
    rows = corner_rows(p, corner, kinds, spec.dx, spec.dy)
    return _build_system(ops, layout, ExtendedGrid(spec), corner, corner_center(spec, corner),
                         rows, corner_ghosts(p, corner), factor)


# --- independent patch route for single matrix entries ------------------------------

def element_A(problem: PdeProblem, spec: GridSpec, side: str, center: tuple[int, int],
              m: int, n: int, mu: int, nu: int, mode: str = LADDER) -> float:
    """One CBC matrix entry computed on a local patch from the basis polynomial.

    Independent of the strip maps: the basis function L_m L_n is sampled on a
    square patch, Q is applied nu times (ladder or full), then the normal and
    tangential derivatives are taken.
    """
    p = spec.p
    kind = problem.kind(side)
    en, et = op_expansion(kind, nu, p, mode)
    W = max(en, et) + p
    offs = np.arange(-W, W + 1)
    Lx = lagrange_values(p, offs)[m + p]
    Ly = lagrange_values(p, offs)[n + p]
    V0 = np.outer(Lx, Ly)
    ic, jc = center
    X, Y = np.meshgrid((ic + offs) * spec.dx, (jc + offs) * spec.dy, indexing="ij")
    coef = problem.coeffs.evaluate(X, Y)
    k = row_accuracy(kind, nu, p)
    if mode == FULL:
        V = V0
        for _ in range(nu):
            V = fd_ops.apply_Q(V, coef, 2 * p, spec.dx, spec.dy)
        kn = p
    else:
        V = fd_ops.apply_Q_power(V0, coef, nu, k, spec.dx, spec.dy)
        kn = k
    ax = normal_axis(side)
    if kind == NEUMANN:
        h = spec.dx if ax == 0 else spec.dy
        V = fd_ops.apply_stencil(V, fd_ops.centered_weights(1, kn) / h, X_AXIS if ax == 0 else Y_AXIS)
    line = V[W, W - p:W + p + 1] if ax == 0 else V[W - p:W + p + 1, W]
    kt = tangential_k(mu, k, p, mode)
    _, val = fd_ops.tangential_derivative_pair(line, mu, kt, spec.h_along(side))
    return val


# --- boundary data tables ------------------------------------------------------------

class BoundaryData:
    """R (Dirichlet) and S (Neumann) tables at any time, from analytic f and g.

    q = 0:  row nu = -Q^(nu-1) f            (nu >= 1)
    q > 0:  row nu = d_t^(q nu) g - sum_{k=1..nu} Q^(k-1) d_t^(q(nu-k)) f
    with d_n applied to the f terms on Neumann sides; row 0 holds g itself.
    `shift` adds extra time derivatives to everything (used for d_t u data).
    """

    def __init__(self, ops: BoundaryOperators, layout: TableLayout):
        self.ops, self.layout = ops, layout
        self.problem = ops.problem
        spec, p = ops.spec, ops.p
        self.terms = {}  # side -> list per nu of [(f time order offset, matrix)]
        self.line_xy = {}
        for side in SIDES:
            strip = ops.strips[side]
            kind = self.problem.kind(side)
            rows = layout.shapes[side][0]
            per_nu = []
            for nu in range(rows):
                k = row_accuracy(kind, nu, p)
                neu = kind == NEUMANN
                lst = []
                if nu >= 1:
                    if self.problem.q == 0:
                        lst.append((0, strip.matrix(nu - 1, k, neu)))
                    else:
                        for kk in range(1, nu + 1):
                            lst.append((self.problem.q * (nu - kk), strip.matrix(kk - 1, k, neu)))
                per_nu.append(lst)
            self.terms[side] = per_nu
            jt = np.arange(-p, spec.n_along(side) + p + 1)
            line = strip.line
            if normal_axis(side) == 0:
                self.line_xy[side] = (np.full(jt.shape, line * spec.dx), jt * spec.dy)
            else:
                self.line_xy[side] = (jt * spec.dx, np.full(jt.shape, line * spec.dy))

    def _g(self, side: str, t: float, m: int) -> np.ndarray:
        x, y = self.line_xy[side]
        return np.asarray(self.problem.boundary[side].g(x, y, t, m), dtype=float)

    def tables(self, t: float, shift: int = 0) -> np.ndarray:
        out = np.zeros(self.layout.size)
        q = self.problem.q
        for side in SIDES:
            strip = self.ops.strips[side]
            rows, cols = self.layout.shapes[side]
            tab = np.zeros((rows, cols))
            fcache = {}

            def fstrip(mm):
                if mm not in fcache:
                    fcache[mm] = np.asarray(self.problem.f(strip.X, strip.Y, t, mm), dtype=float).ravel()
                return fcache[mm]

            tab[0] = self._g(side, t, shift)
            for nu in range(1, rows):
                acc = np.zeros(cols) if q == 0 else self._g(side, t, q * nu + shift)
                if self.problem.f is not zero_field:
                    for order, mat in self.terms[side][nu]:
                        acc = acc - mat @ fstrip(order + shift)
                tab[nu] = acc
            out[self.layout.offsets[side]:self.layout.offsets[side] + rows * cols] = tab.ravel()
        return out

    def tables_from_field(self, fn) -> np.ndarray:
        """Tables whose rows are the discrete row operators applied to fn(x, y).

        These are the data a smooth solution fn would produce; used to test
        polynomial reproduction.
        """
        out = np.zeros(self.layout.size)
        p = self.ops.p
        for side in SIDES:
            strip = self.ops.strips[side]
            rows, cols = self.layout.shapes[side]
            vals = np.asarray(fn(strip.X, strip.Y), dtype=float).ravel()
            tab = np.zeros((rows, cols))
            for nu in range(rows):
                tab[nu] = self.ops.face_matrix(side, nu) @ vals
            out[self.layout.offsets[side]:self.layout.offsets[side] + rows * cols] = tab.ravel()
        return out


# --- closures ------------------------------------------------------------------------

@dataclass
class GhostClosure:
    """ghosts = Gu @ U + Gr @ r after Dirichlet boundary values are set."""

    spec: GridSpec
    problem: PdeProblem
    ops: BoundaryOperators
    layout: TableLayout
    data: BoundaryData
    systems: list[LcbcSystem]
    Gu: sps.csr_matrix
    Gr: sps.csr_matrix
    ghost_flat: np.ndarray
    dirichlet: dict = field(default_factory=dict)  # side -> (ext flat indices, x, y)

    @property
    def kappa_max(self) -> float:
        return max(s.kappa for s in self.systems)

    def set_dirichlet(self, U: np.ndarray, t: float, shift: int = 0) -> None:
        flat = U.reshape(-1)
        for side, (idx, x, y) in self.dirichlet.items():
            flat[idx] = self.problem.boundary[side].g(x, y, t, shift)

    def fill(self, U: np.ndarray, t: float, shift: int = 0, tables: np.ndarray | None = None) -> np.ndarray:
        """Set Dirichlet boundary values and all ghosts in place; returns U."""
        self.set_dirichlet(U, t, shift)
        r = self.data.tables(t, shift) if tables is None else tables
        flat = U.reshape(-1)
        vals = self.Gu @ flat + self.Gr @ r
        flat[self.ghost_flat] = vals[self.ghost_flat]
        return U

    def fill_direct(self, U: np.ndarray, t: float, shift: int = 0, tables: np.ndarray | None = None) -> np.ndarray:
        """Same as fill but solving every local system afresh."""
        self.set_dirichlet(U, t, shift)
        r = self.data.tables(t, shift) if tables is None else tables
        flat = U.reshape(-1)
        ny_ext = U.shape[1]
        p = self.spec.p
        updates = {}
        for s in self.systems:
            b = s.Bu @ flat[s.u_index] + s.Br @ r[s.r_index]
            d = s.eq.solve(b)
            for (gm, gn) in s.ghosts:
                gi, gj = s.center[0] + gm, s.center[1] + gn
                updates[(gi + p) * ny_ext + (gj + p)] = d[s.basis_index(gm, gn)]
        for e, v in updates.items():
            flat[e] = v
        return U


def build_ghost_closure(problem: PdeProblem, spec: GridSpec, mode: str = LADDER) -> GhostClosure:
    ext = ExtendedGrid(spec)
    p = spec.p
    ops = BoundaryOperators(problem, spec, mode)
    layout = TableLayout(problem, spec)
    data = BoundaryData(ops, layout)
    systems = []
    for side in SIDES:
        for jt in range(p, spec.n_along(side) - p + 1):
            systems.append(assemble_side_system(ops, side, jt, layout))
    for corner in CORNERS:
        systems.append(assemble_corner_system(ops, corner, layout))
    n_ext = ext.shape[0] * ext.shape[1]
    ny_ext = ext.shape[1]
    ui, uj, uv, ri, rj, rv = [], [], [], [], [], []
    owner = {}
    for s in systems:
        gidx = [s.basis_index(*g) for g in s.ghosts]
        sol = s.eq.solve(np.hstack([s.Bu, s.Br]))[gidx]
        cu, cr = sol[:, :s.Bu.shape[1]], sol[:, s.Bu.shape[1]:]
        for g, (gm, gn) in enumerate(s.ghosts):
            e = (s.center[0] + gm + p) * ny_ext + (s.center[1] + gn + p)
            if e in owner:
                raise AssertionError(f"ghost {e} filled by both {owner[e]} and {s.where}")
            owner[e] = s.where
            nzu = np.nonzero(cu[g])[0]
            ui.extend([e] * len(nzu)); uj.extend(s.u_index[nzu]); uv.extend(cu[g, nzu])
            nzr = np.nonzero(cr[g])[0]
            ri.extend([e] * len(nzr)); rj.extend(s.r_index[nzr]); rv.extend(cr[g, nzr])
    ghost_flat = np.array(sorted(owner), dtype=int)
    expected = np.flatnonzero(ext.ghost_mask().ravel())
    if not np.array_equal(ghost_flat, expected):
        raise AssertionError("ghost closures do not cover the ghost layer exactly once")
    Gu = sps.csr_matrix((uv, (ui, uj)), shape=(n_ext, n_ext))
    Gr = sps.csr_matrix((rv, (ri, rj)), shape=(n_ext, layout.size))
    dirichlet = {}
    for side in SIDES:
        if problem.kind(side) != DIRICHLET:
            continue
        jt = np.arange(0, spec.n_along(side) + 1)
        if normal_axis(side) == 0:
            i = np.full(jt.shape, 0 if side == LEFT else spec.nx)
            j = jt
        else:
            i = jt
            j = np.full(jt.shape, 0 if side == BOTTOM else spec.ny)
        dirichlet[side] = ((i + p) * ny_ext + (j + p), i * spec.dx, j * spec.dy)
    return GhostClosure(spec=spec, problem=problem, ops=ops, layout=layout, data=data, systems=systems,
                        Gu=Gu, Gr=Gr, ghost_flat=ghost_flat, dirichlet=dirichlet)


def apply_ghost_closure(U: np.ndarray, closure: GhostClosure, t: float, shift: int = 0) -> np.ndarray:
    return closure.fill(U, t, shift)


def boundary_data(closure: GhostClosure, t: float, shift: int = 0) -> dict:
    """Tables per side: array (rows nu, tangential j = -p..n+p)."""
    return closure.layout.split(closure.data.tables(t, shift))
