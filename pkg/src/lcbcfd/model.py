"""Problem description: grids with ghost layers, coefficients, boundary data, mappings."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Protocol

import numpy as np
import sympy as sp

from .fd_ops import CoeffArrays

LEFT, RIGHT, BOTTOM, TOP = "left", "right", "bottom", "top"
SIDES = (LEFT, RIGHT, BOTTOM, TOP)
DIRICHLET, NEUMANN = "D", "N"

# corner name -> (face with x-normal, face with y-normal)
CORNERS = {
    "BL": (LEFT, BOTTOM),
    "BR": (RIGHT, BOTTOM),
    "TL": (LEFT, TOP),
    "TR": (RIGHT, TOP),
}

R_SYM, S_SYM, T_SYM = sp.symbols("r s t", real=True)
X_SYM, Y_SYM = sp.symbols("x y", real=True)


def normal_axis(side: str) -> int:
    return 0 if side in (LEFT, RIGHT) else 1


def inward_sign(side: str) -> int:
    return 1 if side in (LEFT, BOTTOM) else -1


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    p: int

    def __post_init__(self):
        if self.p not in (1, 2, 3):
            raise ValueError(f"ghost width p must be 1, 2 or 3, got {self.p}")
        need = max(4, 3 * self.p)
        if self.nx < need or self.ny < need:
            raise ValueError(
                f"grid {self.nx}x{self.ny} too coarse for p={self.p}: need at least {need} cells per direction")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dy(self) -> float:
        return 1.0 / self.ny

    @property
    def d(self) -> int:
        return 2 * self.p

    def n_along(self, side: str) -> int:
        """Cell count along a side (tangential direction)."""
        return self.ny if normal_axis(side) == 0 else self.nx

    def h_along(self, side: str) -> float:
        return self.dy if normal_axis(side) == 0 else self.dx

    def h_normal(self, side: str) -> float:
        return self.dx if normal_axis(side) == 0 else self.dy


class ExtendedGrid:
    """Coordinates over i = -p..nx+p, j = -p..ny+p.

    Array index = grid index + p.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        p = spec.p
        self.i = np.arange(-p, spec.nx + p + 1)
        self.j = np.arange(-p, spec.ny + p + 1)
        self.x = self.i * spec.dx
        self.y = self.j * spec.dy
        self.shape = (len(self.i), len(self.j))
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def p(self) -> int:
        return self.spec.p

    def classify(self, i: int, j: int) -> str:
        nx, ny, p = self.spec.nx, self.spec.ny, self.spec.p
        if not (-p <= i <= nx + p and -p <= j <= ny + p):
            raise IndexError(f"({i}, {j}) outside the extended grid")
        out_x = i < 0 or i > nx
        out_y = j < 0 or j > ny
        if out_x and out_y:
            return "corner-ghost"
        if out_x or out_y:
            return "face-ghost"
        if i in (0, nx) or j in (0, ny):
            return "boundary"
        return "interior"

    def side_line(self, side: str) -> tuple[int, int] | None:
        """(axis, grid index) of a side's boundary line."""
        return {LEFT: (0, 0), RIGHT: (0, self.spec.nx), BOTTOM: (1, 0), TOP: (1, self.spec.ny)}[side]

    def ghost_mask(self) -> np.ndarray:
        p, nx, ny = self.p, self.spec.nx, self.spec.ny
        m = np.ones(self.shape, dtype=bool)
        m[p:p + nx + 1, p:p + ny + 1] = False
        return m


def build_extended_grid(spec: GridSpec) -> ExtendedGrid:
    return ExtendedGrid(spec)


def sample_field(grid: ExtendedGrid, fn: Callable, t: float = 0.0) -> np.ndarray:
    vals = np.broadcast_to(np.asarray(fn(grid.X, grid.Y, t), dtype=float), grid.shape).copy()
    bad = np.argwhere(~np.isfinite(vals))
    if len(bad):
        a, b = bad[0]
        raise ValueError(f"non-finite sample at (i, j) = ({grid.i[a]}, {grid.j[b]})")
    return vals


# --- time-dependent data -------------------------------------------------------------

class TimeField(Protocol):
    def __call__(self, x, y, t: float, m: int = 0): ...


def zero_field(x, y, t=0.0, m=0):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


def _lambdify(expr) -> Callable:
    fn = sp.lambdify((R_SYM, S_SYM, T_SYM), expr, modules="numpy")

    def call(x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        return np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), shape)

    return call


class SymbolicField:
    """An analytic field of (r, s, t) with cached derivative evaluators.

    Calling it returns d^m/dt^m; `derivative(ar, as_)` gives the field of a
    spatial derivative.
    """

    def __init__(self, expr):
        self.expr = sp.sympify(expr)
        self._cache: dict[tuple[int, int, int], Callable] = {}

    def evaluator(self, m: int = 0, ar: int = 0, as_: int = 0) -> Callable:
        key = (m, ar, as_)
        if key not in self._cache:
            e = self.expr
            if m:
                e = sp.diff(e, T_SYM, m)
            if ar:
                e = sp.diff(e, R_SYM, ar)
            if as_:
                e = sp.diff(e, S_SYM, as_)
            self._cache[key] = _lambdify(e)
        return self._cache[key]

    def __call__(self, x, y, t: float = 0.0, m: int = 0):
        return self.evaluator(m)(x, y, t)

    def derivative(self, ar: int = 0, as_: int = 0) -> "SymbolicField":
        return SymbolicField(sp.diff(self.expr, R_SYM, ar, S_SYM, as_))


# --- coefficients --------------------------------------------------------------------

COEFF_NAMES = ("c11", "c12", "c22", "c1", "c2", "c0")


@dataclass(frozen=True)
class CoefficientField:
    """Evaluators c(x, y) for the six coefficients of Q on the unit square."""

    c11: Callable
    c12: Callable
    c22: Callable
    c1: Callable
    c2: Callable
    c0: Callable
    constant: bool = False

    def evaluate(self, X, Y) -> CoeffArrays:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        shape = np.broadcast(X, Y).shape
        vals = []
        for name in COEFF_NAMES:
            v = np.asarray(getattr(self, name)(X, Y), dtype=float)
            vals.append(np.broadcast_to(v, shape).copy())
        return CoeffArrays(*vals)

    def check_elliptic(self, X, Y, delta: float = 1e-12) -> None:
        c = self.evaluate(X, Y)
        if np.any(c.c11 <= 0) or np.any(c.c22 <= 0):
            raise ValueError("c11 and c22 must be positive at every grid point")
        margin = np.min(c.c11 * c.c22 - c.c12**2)
        if margin < delta:
            raise ValueError(f"ellipticity margin {margin:.3e} below {delta:.1e}")

    @staticmethod
    def constants(c11=1.0, c12=0.0, c22=1.0, c1=0.0, c2=0.0, c0=0.0) -> "CoefficientField":
        def const(v):
            return lambda X, Y: np.full(np.broadcast(np.asarray(X), np.asarray(Y)).shape, float(v))
        return CoefficientField(const(c11), const(c12), const(c22), const(c1), const(c2), const(c0), constant=True)

    @staticmethod
    def from_exprs(exprs: dict) -> "CoefficientField":
        """Coefficients as sympy expressions in (r, s); missing names are zero."""
        fns = {}
        for name in COEFF_NAMES:
            e = sp.sympify(exprs.get(name, 0))
            f = sp.lambdify((R_SYM, S_SYM), e, modules="numpy")
            fns[name] = (lambda f: lambda X, Y: np.broadcast_to(
                np.asarray(f(np.asarray(X, float), np.asarray(Y, float)), float),
                np.broadcast(np.asarray(X), np.asarray(Y)).shape))(f)
        return CoefficientField(**fns)


def laplacian() -> CoefficientField:
    return CoefficientField.constants()


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet: u = g.  Neumann: raw du/dx (left/right) or du/dy (bottom/top) = g."""

    side: str
    kind: str
    g: Callable = zero_field

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"boundary kind must be 'D' or 'N', got {self.kind!r}")


@dataclass
class PdeProblem:
    """L_q u = Q u + f on the unit square, L_0 = 0, L_1 = d/dt, L_2 = d2/dt2."""

    q: int
    coeffs: CoefficientField
    f: Callable
    boundary: dict
    u0: Callable | None = None
    u1: Callable | None = None
    T: float = 1.0
    exact: Callable | None = None
    name: str = ""
    mapping: "Mapping | None" = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.q not in (0, 1, 2):
            raise ValueError(f"q must be 0, 1 or 2, got {self.q}")
        missing = [s for s in SIDES if s not in self.boundary]
        if missing:
            raise ValueError(f"missing boundary specs for {missing}")
        if self.q >= 1 and self.u0 is None:
            raise ValueError("q >= 1 needs u0")
        if self.q == 2 and self.u1 is None:
            raise ValueError("q = 2 needs u1")

    def kind(self, side: str) -> str:
        return self.boundary[side].kind

    def corner_kinds(self, corner: str) -> tuple[str, str]:
        fx, fy = CORNERS[corner]
        return self.kind(fx), self.kind(fy)


# --- mappings ------------------------------------------------------------------------

class Mapping:
    """(r, s) -> (x, y) given symbolically; numeric derivatives come from sympy."""

    def __init__(self, name: str, x_expr, y_expr):
        self.name = name
        self.x_expr = sp.sympify(x_expr)
        self.y_expr = sp.sympify(y_expr)
        rs = (R_SYM, S_SYM)
        G = [self.x_expr, self.y_expr]
        J = [[sp.diff(g, v) for v in rs] for g in G]
        H = [[[sp.diff(g, a, b) for b in rs] for a in rs] for g in G]
        self._G = [sp.lambdify(rs, g, "numpy") for g in G]
        self._J = [[sp.lambdify(rs, e, "numpy") for e in row] for row in J]
        self._H = [[[sp.lambdify(rs, e, "numpy") for e in row] for row in blk] for blk in H]

    @staticmethod
    def _ev(f, r, s):
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(f(r, s), dtype=float), np.broadcast(r, s).shape)

    def G(self, r, s):
        return self._ev(self._G[0], r, s), self._ev(self._G[1], r, s)

    def jacobian(self, r, s) -> np.ndarray:
        """Array (..., 2, 2) with [a, b] = d x_a / d r_b."""
        return np.stack([np.stack([self._ev(f, r, s) for f in row], -1) for row in self._J], -2)

    def hessian(self, r, s) -> np.ndarray:
        """Array (..., 2, 2, 2) with [a, b, c] = d2 x_a / d r_b d r_c."""
        return np.stack([np.stack([np.stack([self._ev(f, r, s) for f in row], -1)
                                   for row in blk], -2) for blk in self._H], -3)

    def check_invertible(self, r, s, tol: float = 1e-12) -> None:
        det = np.linalg.det(self.jacobian(r, s))
        if np.min(np.abs(det)) < tol:
            raise ValueError(f"mapping {self.name} has a singular Jacobian on the grid")

    def compose(self, expr_xy):
        """Substitute the mapping into an expression of (x, y, t)."""
        return sp.sympify(expr_xy).subs({X_SYM: self.x_expr, Y_SYM: self.y_expr}, simultaneous=True)


def identity_mapping() -> Mapping:
    return Mapping("identity", R_SYM, S_SYM)


def annulus_mapping(rho1=1, rho2=2, theta2=sp.pi / 2) -> Mapping:
    rho = rho1 + R_SYM * (rho2 - rho1)
    return Mapping("annulus", rho * sp.cos(S_SYM * theta2), rho * sp.sin(S_SYM * theta2))


def wavy_channel_mapping(x1=-1, x2=1, y1=-1, y2=1, amp=sp.Rational(1, 10)) -> Mapping:
    hr = amp * sp.sin(2 * sp.pi * R_SYM)
    return Mapping("wavy-channel", (x2 - x1) * R_SYM + x1, (y2 - y1) * S_SYM + y1 + hr)


@dataclass(frozen=True)
class PhysicalOperator:
    """D * Laplacian - v . grad + gamma with constant physical coefficients."""

    diffusivity: float = 1.0
    velocity: tuple = (0.0, 0.0)
    reaction: float = 0.0


def mapped_coefficients(mapping: Mapping, op: PhysicalOperator) -> CoefficientField:
    """Chain-rule coefficients of the physical operator in (r, s)."""

    def parts(R, S):
        J = mapping.jacobian(R, S)
        H = mapping.hessian(R, S)
        K = np.linalg.inv(J)  # K[a, k] = d r_a / d x_k
        # d K / d x_k = -K (dJ/dx_k) K, dJ/dx_k = sum_m H[:, :, m] K[m, k]
        lap = np.zeros(K.shape[:-2] + (2,))
        for k in range(2):
            dJ = np.einsum("...abm,...m->...ab", H, K[..., :, k])
            dK = -K @ dJ @ K
            lap += dK[..., :, k]
        return K, lap

    D = float(op.diffusivity)
    vx, vy = (float(v) for v in op.velocity)

    def c11(R, S):
        K, _ = parts(R, S)
        return D * (K[..., 0, 0] ** 2 + K[..., 0, 1] ** 2)

    def c12(R, S):
        K, _ = parts(R, S)
        return D * (K[..., 0, 0] * K[..., 1, 0] + K[..., 0, 1] * K[..., 1, 1])

    def c22(R, S):
        K, _ = parts(R, S)
        return D * (K[..., 1, 0] ** 2 + K[..., 1, 1] ** 2)

    def c1(R, S):
        K, lap = parts(R, S)
        return D * lap[..., 0] - (vx * K[..., 0, 0] + vy * K[..., 0, 1])

    def c2(R, S):
        K, lap = parts(R, S)
        return D * lap[..., 1] - (vx * K[..., 1, 0] + vy * K[..., 1, 1])

    def c0(R, S):
        return np.full(np.broadcast(np.asarray(R), np.asarray(S)).shape, float(op.reaction))

    return CoefficientField(c11, c12, c22, c1, c2, c0)


def mapped_problem(mapping: Mapping, op: PhysicalOperator, grid: ExtendedGrid | None = None) -> CoefficientField:
    if grid is not None:
        mapping.check_invertible(grid.X, grid.Y)
    return mapped_coefficients(mapping, op)


# --- manufactured data ---------------------------------------------------------------

class ManufacturedForcing:
    """f = d^q U/dt^q - Q U for an analytic U(r, s, t); Q in computational form."""

    def __init__(self, U: SymbolicField, coeffs: CoefficientField, q: int):
        self.U = U
        self.coeffs = coeffs
        self.q = q
        self._fns: dict[int, Callable] = {}
        self._coef_cache: list = []  # [(x, y, CoeffArrays)], holding refs keeps ids valid
        # u = X(r, s) phi(t) lets f reuse cached spatial arrays at every t
        space, time = U.expr.as_independent(T_SYM, as_Add=False)
        self._separable = not (time.free_symbols & {R_SYM, S_SYM})
        if self._separable:
            self._space = SymbolicField(space)
            self._phi: dict[int, Callable] = {}
            self._time = time
        self._sep_cache: list = []

    def _parts(self, m: int) -> Callable:
        """One lambdified call returning the derivatives needed for time order m."""
        if m not in self._fns:
            e = sp.diff(self.U.expr, T_SYM, m) if m else self.U.expr
            parts = [sp.diff(e, R_SYM, 2), sp.diff(e, R_SYM, S_SYM), sp.diff(e, S_SYM, 2),
                     sp.diff(e, R_SYM), sp.diff(e, S_SYM), e, sp.diff(e, T_SYM, self.q)]
            self._fns[m] = sp.lambdify((R_SYM, S_SYM, T_SYM), parts, modules="numpy", cse=True)
        return self._fns[m]

    def _coef(self, x, y) -> CoeffArrays:
        for cx, cy, c in self._coef_cache:
            if cx is x and cy is y:
                return c
        c = self.coeffs.evaluate(x, y)
        if isinstance(x, np.ndarray) and isinstance(y, np.ndarray):
            self._coef_cache = ([(x, y, c)] + self._coef_cache)[:8]
        return c

    def _phi_val(self, m: int, t: float) -> float:
        if m not in self._phi:
            self._phi[m] = sp.lambdify(T_SYM, sp.diff(self._time, T_SYM, m) if m else self._time, "math")
        return float(self._phi[m](t))

    def _spatial(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        for cx, cy, X, QX in self._sep_cache:
            if cx is x and cy is y:
                return X, QX
        c = self._coef(x, y)
        xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        ev = self._space.evaluator
        X = np.array(ev(0, 0, 0)(xa, ya, 0.0))
        QX = (c.c11 * ev(0, 2, 0)(xa, ya, 0.0) + 2 * c.c12 * ev(0, 1, 1)(xa, ya, 0.0)
              + c.c22 * ev(0, 0, 2)(xa, ya, 0.0) + c.c1 * ev(0, 1, 0)(xa, ya, 0.0)
              + c.c2 * ev(0, 0, 1)(xa, ya, 0.0) + c.c0 * X)
        if isinstance(x, np.ndarray) and isinstance(y, np.ndarray):
            self._sep_cache = ([(x, y, X, QX)] + self._sep_cache)[:8]
        return X, QX

    def __call__(self, x, y, t: float = 0.0, m: int = 0):
        if self._separable:
            X, QX = self._spatial(x, y)
            out = -self._phi_val(m, t) * QX
            if self.q:
                out = out + self._phi_val(m + self.q, t) * X
            return out
        c = self._coef(x, y)
        xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        urr, urs, uss, ur, us, u, ut = self._parts(m)(xa, ya, t)
        QU = c.c11 * urr + 2 * c.c12 * urs + c.c22 * uss + c.c1 * ur + c.c2 * us + c.c0 * u
        QU = np.broadcast_to(QU, np.broadcast(xa, ya).shape)
        if self.q == 0:
            return -QU
        return ut - QU


def manufactured_data(u_expr, coeffs: CoefficientField, q: int, kinds: dict,
                      mapping: Mapping | None = None, T: float = 1.0, name: str = "") -> PdeProblem:
    """Problem whose exact solution is u_expr, an expression of (x, y, t).

    With a mapping, u is composed with it so all data live on the unit square;
    Neumann data are the computational-coordinate derivatives of the composed u.
    """
    mapping = mapping or identity_mapping()
    U = SymbolicField(mapping.compose(u_expr))
    boundary = {}
    for side in SIDES:
        kind = kinds[side]
        if kind == DIRICHLET:
            g = U
        else:
            g = U.derivative(1, 0) if normal_axis(side) == 0 else U.derivative(0, 1)
        boundary[side] = BoundarySpec(side, kind, g)
    u0 = (lambda x, y, t=0.0, m=0: U(x, y, 0.0, m)) if q >= 1 else None
    u1 = (lambda x, y, t=0.0, m=0: U(x, y, 0.0, m + 1)) if q == 2 else None
    return PdeProblem(q=q, coeffs=coeffs, f=ManufacturedForcing(U, coeffs, q), boundary=boundary,
                      u0=u0, u1=u1, T=T, exact=U, name=name, mapping=mapping)
