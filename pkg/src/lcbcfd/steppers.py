"""Fully discrete schemes: elliptic solve, forward Euler, BDF, modified-equation wave."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from math import ceil, gcd

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
import sympy as sp

from . import fd_ops
from .kernels import GridQ
from .lcbc import LADDER, GhostClosure, build_ghost_closure
from .model import ExtendedGrid, GridSpec, PdeProblem, zero_field

log = logging.getLogger(__name__)

# (r_d, s_d, q_d) of the forward-Euler ellipse estimate
FE_PARAMETERS = {
    2: (4.0, 2.0, 1.0),
    4: (16.0 / 3.0, 9.0 / 2.0, 3.0 / 2.0),
    6: (272.0 / 45.0, 1313.0 / 261.0, 1199.0 / 756.0),
}


class InstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeStepPlan:
    dt: float
    n_steps: int
    cfl: float
    scheme: str
    dt_bound: float


def coefficient_maxima(problem: PdeProblem, spec: GridSpec) -> dict:
    ext = ExtendedGrid(spec)
    p = spec.p
    X = ext.X[p:-p, p:-p]
    Y = ext.Y[p:-p, p:-p]
    c = problem.coeffs.evaluate(X, Y)
    return {"c11": float(np.max(c.c11)), "c22": float(np.max(c.c22)),
            "c12": float(np.max(np.abs(c.c12))), "c1": float(np.max(np.abs(c.c1))),
            "c2": float(np.max(np.abs(c.c2))), "c0": float(np.max(np.abs(c.c0)))}


def stable_dt(problem: PdeProblem, spec: GridSpec, d: int, cfl: float = 0.9,
              scheme: str = "me", T: float | None = None) -> TimeStepPlan:
    cm = coefficient_maxima(problem, spec)
    dx, dy = spec.dx, spec.dy
    if scheme == "fe":
        r, s, q = FE_PARAMETERS[d]
        alpha = r * (cm["c11"] / dx**2 + cm["c22"] / dy**2) + s * cm["c12"] / (dx * dy) + cm["c0"]
        beta = q * (cm["c1"] / dx + cm["c2"] / dy)
        bound = 1.0 / np.sqrt((alpha / 2) ** 2 + beta**2)
        dt = cfl * bound
    elif scheme == "bdf":
        bound = dt = min(dx, dy)
    elif scheme == "me":
        bound = 1.0 / np.sqrt(cm["c11"] / dx**2 + cm["c22"] / dy**2)
        dt = cfl * bound
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not dt > 0:
        raise ValueError("non-positive time step bound; check the coefficients")
    T = problem.T if T is None else T
    n = max(1, ceil(T / dt - 1e-12))
    return TimeStepPlan(dt=T / n, n_steps=n, cfl=cfl, scheme=scheme, dt_bound=bound)


# --- sparse whole-grid operators -----------------------------------------------------

def _band(n: int, w: np.ndarray) -> sps.csr_matrix:
    h = (len(w) - 1) // 2
    offs = [l - h for l in range(len(w)) if w[l] != 0.0]
    vals = [w[l + h] for l in offs]
    if not offs:
        return sps.csr_matrix((n, n))
    return sps.diags([np.full(n - abs(o), v) for o, v in zip(offs, vals)], offs, shape=(n, n), format="csr")


@dataclass(frozen=True)
class SepTerm:
    """coef * (wx along x) (wy along y); weights include the spacing powers."""

    coef: np.ndarray
    wx: np.ndarray
    wy: np.ndarray

    @property
    def width(self) -> tuple[int, int]:
        def w(a):
            nz = np.nonzero(a)[0]
            h = (len(a) - 1) // 2
            return int(np.max(np.abs(nz - h))) if len(nz) else 0
        return w(self.wx), w(self.wy)

    def matrix(self, shape: tuple[int, int]) -> sps.csr_matrix:
        K = sps.kron(_band(shape[0], self.wx), _band(shape[1], self.wy), format="csr")
        return sps.diags(np.ravel(self.coef)) @ K


def q2_terms(c: fd_ops.CoeffArrays, dx: float, dy: float) -> list[SepTerm]:
    one = np.array([1.0])
    dpm = np.array([1.0, -2.0, 1.0])
    d0 = np.array([-0.5, 0.0, 0.5])
    return [SepTerm(c.c11, dpm / dx**2, one), SepTerm(2 * c.c12, d0 / dx, d0 / dy),
            SepTerm(c.c22, one, dpm / dy**2), SepTerm(c.c1, d0 / dx, one),
            SepTerm(c.c2, one, d0 / dy), SepTerm(c.c0, one, one)]


def q4_correction_terms(c: fd_ops.CoeffArrays, dx: float, dy: float) -> list[SepTerm]:
    """Terms C with Q_{4,h} = Q_{2,h} + C (product form of the cross term)."""
    one = np.array([1.0])
    dpm2 = np.array([1.0, -4.0, 6.0, -4.0, 1.0])
    d0 = np.array([-0.5, 0.0, 0.5])
    d0dpm = np.convolve(d0, [1.0, -2.0, 1.0])
    a1, b1 = fd_ops.A_COEF[1], fd_ops.B_COEF[1]
    return [SepTerm(c.c11, a1 * dpm2 / dx**2, one),
            SepTerm(c.c22, one, a1 * dpm2 / dy**2),
            SepTerm(2 * c.c12, b1 * d0dpm / dx, d0 / dy),
            SepTerm(2 * c.c12, d0 / dx, b1 * d0dpm / dy),
            SepTerm(2 * c.c12, b1 * d0dpm / dx, b1 * d0dpm / dy),
            SepTerm(c.c1, b1 * d0dpm / dx, one),
            SepTerm(c.c2, one, b1 * d0dpm / dy)]


def q_terms(c: fd_ops.CoeffArrays, d: int, dx: float, dy: float) -> list[SepTerm]:
    one = np.array([1.0])
    wx, wxx = fd_ops.first_weights(d) / dx, fd_ops.second_weights(d) / dx**2
    wy, wyy = fd_ops.first_weights(d) / dy, fd_ops.second_weights(d) / dy**2
    return [SepTerm(c.c11, wxx, one), SepTerm(2 * c.c12, wx, wy), SepTerm(c.c22, one, wyy),
            SepTerm(c.c1, wx, one), SepTerm(c.c2, one, wy), SepTerm(c.c0, one, one)]


def _sum_matrix(terms: list[SepTerm], shape) -> sps.csr_matrix:
    out = sps.csr_matrix((shape[0] * shape[1],) * 2)
    for t in terms:
        if np.any(np.asarray(t.coef) != 0):
            out = out + t.matrix(shape)
    return out.tocsr()


def compact_q2_pairs(corr: list[SepTerm], max_width: int = 3) -> list[tuple[int, int]]:
    """Index pairs (a, b) of C_a o C_b whose combined half-width fits the ghost layer."""
    pairs = []
    for a, ta in enumerate(corr):
        for b, tb in enumerate(corr):
            wa, wb = ta.width, tb.width
            if wa[0] + wb[0] <= max_width and wa[1] + wb[1] <= max_width:
                pairs.append((a, b))
    return pairs


def compact_Q_squared_4(c: fd_ops.CoeffArrays, dx: float, dy: float, shape) -> sps.csr_matrix:
    """Fourth-order approximation of Q^2 with half-width 3.

    Q_{4,h}^2 = (Q2 + C)^2; every C o C product is O(h^4), so the ones wider
    than 3 points are dropped without losing fourth order.
    """
    q2 = _sum_matrix(q2_terms(c, dx, dy), shape)
    corr = q4_correction_terms(c, dx, dy)
    cm = _sum_matrix(corr, shape)
    out = q2 @ q2 + q2 @ cm + cm @ q2
    mats = [t.matrix(shape) for t in corr]
    for a, b in compact_q2_pairs(corr):
        out = out + mats[a] @ mats[b]
    return out.tocsr()


# --- discretization bundle -----------------------------------------------------------

class Discretization:
    """Grid, closure and whole-grid operators for one problem, order and grid."""

    def __init__(self, problem: PdeProblem, spec: GridSpec, d: int | None = None,
                 mode: str = LADDER, closure: GhostClosure | None = None):
        self.problem, self.spec = problem, spec
        self.d = d or spec.d
        if self.d != spec.d:
            raise ValueError(f"order {self.d} does not match ghost width p={spec.p}")
        self.ext = ExtendedGrid(spec)
        self.closure = closure or build_ghost_closure(problem, spec, mode)
        self.coef = problem.coeffs.evaluate(self.ext.X, self.ext.Y)
        self.gridq = GridQ(self.coef.as_tuple(), self.d, spec.dx, spec.dy)
        p, nx, ny = spec.p, spec.nx, spec.ny
        mask = np.zeros(self.ext.shape, dtype=bool)
        mask[p:p + nx + 1, p:p + ny + 1] = True
        dmask = np.zeros_like(mask)
        for side, (idx, _, _) in self.closure.dirichlet.items():
            dmask.reshape(-1)[idx] = True
        self.update_mask = mask & ~dmask
        self.domain_mask = mask
        self.unknowns = np.flatnonzero(self.update_mask.ravel())
        self.forcing_zero = problem.f is zero_field

    # whole-grid operators (rows valid at update points)
    def q_matrix(self, d: int) -> sps.csr_matrix:
        return self._cached(("Q", d), lambda: _sum_matrix(q_terms(self.coef, d, self.spec.dx, self.spec.dy),
                                                         self.ext.shape))

    @cached_property
    def q2(self) -> sps.csr_matrix:
        return self.q_matrix(2)

    @cached_property
    def q2sq(self) -> sps.csr_matrix:
        return (self.q2 @ self.q2).tocsr()

    @cached_property
    def q2cube(self) -> sps.csr_matrix:
        return (self.q2 @ self.q2sq).tocsr()

    @cached_property
    def qt2(self) -> sps.csr_matrix:
        return compact_Q_squared_4(self.coef, self.spec.dx, self.spec.dy, self.ext.shape)

    def _cached(self, key, fn):
        store = self.__dict__.setdefault("_ops", {})
        if key not in store:
            store[key] = fn()
        return store[key]

    def apply_q(self, U: np.ndarray) -> np.ndarray:
        return self.gridq(U)

    def sample(self, fn, t: float = 0.0, m: int = 0) -> np.ndarray:
        return np.broadcast_to(np.asarray(fn(self.ext.X, self.ext.Y, t, m), dtype=float), self.ext.shape).copy()

    def sample_domain(self, fn, t: float = 0.0, m: int = 0) -> np.ndarray:
        """fn on the closed unit square; ghost entries are left at zero."""
        p, nx, ny = self.spec.p, self.spec.nx, self.spec.ny
        out = np.zeros(self.ext.shape)
        win = (slice(p, p + nx + 1), slice(p, p + ny + 1))
        vals = fn(self.ext.X[win], self.ext.Y[win], t, m)
        out[win] = np.broadcast_to(np.asarray(vals, dtype=float), out[win].shape)
        return out

    def fill(self, U: np.ndarray, t: float, shift: int = 0) -> np.ndarray:
        return self.closure.fill(U, t, shift)

    def max_error(self, U: np.ndarray, t: float) -> float:
        exact = self.sample_domain(self.problem.exact, t)
        return float(np.max(np.abs(U - exact)[self.domain_mask]))

    def domain_values(self, U: np.ndarray) -> np.ndarray:
        p = self.spec.p
        return U[p:p + self.spec.nx + 1, p:p + self.spec.ny + 1]

    def check_finite(self, U: np.ndarray, step: int) -> None:
        if not np.all(np.isfinite(U[self.domain_mask])):
            raise InstabilityError(f"non-finite values at step {step}")


# --- elliptic ------------------------------------------------------------------------

class ImplicitOperator:
    """Q_{d,h} on the unknowns with ghosts and Dirichlet values eliminated.

    With U_ext = P u + b(t): (Q U_ext)[unknowns] = A u + Mq b(t).
    """

    def __init__(self, disc: Discretization):
        self.disc = disc
        n_ext = disc.ext.shape[0] * disc.ext.shape[1]
        unk = disc.unknowns
        cl = disc.closure
        S = sps.csr_matrix((np.ones(len(unk)), (unk, np.arange(len(unk)))), shape=(n_ext, len(unk)))
        self.P = (S + cl.Gu @ S).tocsr()
        self.Mq = disc.q_matrix(disc.d)[unk].tocsr()
        self.A = (self.Mq @ self.P).tocsc()

    def lift(self, t: float, shift: int = 0) -> np.ndarray:
        """b(t): Dirichlet values plus their and the tables' ghost contributions."""
        disc = self.disc
        D = np.zeros(disc.ext.shape)
        disc.closure.set_dirichlet(D, t, shift)
        flat = D.ravel()
        r = disc.closure.data.tables(t, shift)
        return flat + disc.closure.Gu @ flat + disc.closure.Gr @ r

    def rhs_part(self, t: float) -> np.ndarray:
        return self.Mq @ self.lift(t)

    def extend(self, u: np.ndarray, t: float) -> np.ndarray:
        return (self.P @ u + self.lift(t)).reshape(self.disc.ext.shape)


def solve_elliptic(disc: Discretization) -> np.ndarray:
    prob = disc.problem
    if prob.q != 0:
        raise ValueError("elliptic solve needs q = 0")
    imp = ImplicitOperator(disc)
    f = disc.sample(prob.f, 0.0).ravel()[disc.unknowns]
    rhs = -f - imp.rhs_part(0.0)
    u = spla.spsolve(imp.A, rhs)
    res = np.linalg.norm(imp.A @ u - rhs, np.inf) / max(1.0, np.linalg.norm(rhs, np.inf))
    if not np.isfinite(res) or res > 1e-10:
        raise RuntimeError(f"elliptic solve residual {res:.3e}")
    return imp.extend(u, 0.0)


# --- forward Euler -------------------------------------------------------------------

def step_forward_euler(U: np.ndarray, t: float, dt: float, disc: Discretization) -> np.ndarray:
    rows = disc.unknowns
    rhs = disc.apply_q(U).ravel()[rows]
    if not disc.forcing_zero:
        rhs = rhs + disc.sample(disc.problem.f, t).ravel()[rows]
    V = U.copy()
    V.reshape(-1)[rows] += dt * rhs
    return disc.fill(V, t + dt)


# --- BDF -----------------------------------------------------------------------------

def bdf_coefficients(k: int) -> np.ndarray:
    """alpha_i with sum_i alpha_i u(t_{n+1-i}) = dt u'(t_{n+1}) for degree-k u."""
    V = sp.Matrix(k + 1, k + 1, lambda s, i: sp.Integer(-i) ** s)
    rhs = sp.zeros(k + 1, 1)
    rhs[1] = 1
    return np.array([float(v) for v in V.LUsolve(rhs)])


class BDFSolver:
    def __init__(self, disc: Discretization, order: int, dt: float):
        self.disc, self.order, self.dt = disc, order, dt
        self.alpha = bdf_coefficients(order)
        self.imp = ImplicitOperator(disc)
        n = len(disc.unknowns)
        lhs = (self.alpha[0] * sps.identity(n, format="csc") - dt * self.imp.A).tocsc()
        self.lu = spla.splu(lhs)
        if order == 6:
            warnings.warn("BDF6 is not A(0)-stable for strongly advective problems", RuntimeWarning, stacklevel=2)

    def step(self, history: list[np.ndarray], t_new: float) -> np.ndarray:
        """history[0] = u^n, history[1] = u^{n-1}, ...; returns u^{n+1} on the unknowns."""
        disc = self.disc
        f = disc.sample(disc.problem.f, t_new).ravel()[disc.unknowns]
        rhs = self.dt * (f + self.imp.rhs_part(t_new))
        for i in range(1, self.order + 1):
            rhs -= self.alpha[i] * history[i - 1]
        u = self.lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise InstabilityError(f"BDF solve failed at t={t_new}")
        return u


def step_bdf(history: list[np.ndarray], solver: BDFSolver, t_new: float) -> np.ndarray:
    return solver.step(history, t_new)


# --- modified-equation wave schemes --------------------------------------------------

def _psi(disc: Discretization, ts: float, nu: int, acc: int, shift: int = 0):
    """Psi_nu f = sum_{k=1..nu} Q^(k-1) d_t^(2(nu-k)) f on the extended grid.

    Q^(j) uses Q_{2,h}^j except that acc >= 4 uses Q_{4,h} for a single Q.
    Returns 0.0 when the forcing is identically zero.
    """
    prob = disc.problem
    if disc.forcing_zero:
        return 0.0
    out = np.zeros(disc.ext.shape)
    for k in range(1, nu + 1):
        f = disc.sample(prob.f, ts, 2 * (nu - k) + shift).ravel()
        j = k - 1
        if j == 0:
            v = f
        elif j == 1:
            v = (disc.q_matrix(4) if acc >= 4 else disc.q2) @ f
        elif j == 2:
            v = disc.q2sq @ f
        else:
            raise ValueError(j)
        out += v.reshape(disc.ext.shape)
    return out


def me_correction(disc: Discretization, dt: float) -> sps.csr_matrix | None:
    """dt^2/12 Q2^2 (d=4) or dt^2/12 Qt2 + dt^4/360 Q2^3 (d=6), rows at update points."""
    if disc.d == 2:
        return None

    def build():
        rows = disc.unknowns
        if disc.d == 4:
            return (dt**2 / 12 * disc.q2sq[rows]).tocsr()
        return (dt**2 / 12 * disc.qt2[rows] + dt**4 / 360 * disc.q2cube[rows]).tocsr()

    return disc._cached(("me", disc.d, dt), build)


def me_rhs(U: np.ndarray, t: float, dt: float, disc: Discretization) -> np.ndarray:
    """Right side of D+t D-t U = ... at the update points (flat, in disc.unknowns order)."""
    d = disc.d
    rows = disc.unknowns
    rhs = disc.apply_q(U).ravel()[rows]
    if not disc.forcing_zero:
        rhs = rhs + disc.sample(disc.problem.f, t).ravel()[rows]
    corr = me_correction(disc, dt)
    if corr is not None:
        rhs = rhs + corr @ U.ravel()
    if d == 4 and not disc.forcing_zero:
        rhs = rhs + dt**2 / 12 * _psi(disc, t, 2, 2).ravel()[rows]
    elif d == 6 and not disc.forcing_zero:
        rhs = rhs + (dt**2 / 12 * _psi(disc, t, 2, 4) + dt**4 / 360 * _psi(disc, t, 3, 2)).ravel()[rows]
    return rhs


def step_me_wave(U: np.ndarray, Uold: np.ndarray, t: float, dt: float, disc: Discretization) -> np.ndarray:
    rhs = me_rhs(U, t, dt, disc)
    V = U.copy()
    rows = disc.unknowns
    flat, old = V.reshape(-1), Uold.reshape(-1)
    flat[rows] = 2 * flat[rows] - old[rows] + dt**2 * rhs
    return disc.fill(V, t + dt)


def taylor_start(disc: Discretization, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """(U^0, U^1) with U^1 from a Taylor series matched to the order."""
    prob = disc.problem
    d = disc.d
    U0 = disc.fill(disc.sample_domain(prob.u0, 0.0), 0.0)
    V0 = disc.fill(disc.sample_domain(prob.u1, 0.0), 0.0, shift=1)
    u0, v0 = U0.ravel(), V0.ravel()
    shape = U0.shape

    def f(m):
        return disc.sample(prob.f, 0.0, m)

    def Q(order, x):
        return (disc.q_matrix(order) @ x).reshape(shape)

    U1 = U0 + dt * V0 + dt**2 / 2 * (Q(d, u0) + f(0))
    if d >= 4:
        U1 += dt**3 / 6 * (Q(d, v0) + f(1))
    if d == 4:
        U1 += dt**4 / 24 * ((disc.q2sq @ u0).reshape(shape) + _psi(disc, 0.0, 2, 2))
    if d == 6:
        U1 += dt**4 / 24 * ((disc.qt2 @ u0).reshape(shape) + _psi(disc, 0.0, 2, 4))
        U1 += dt**5 / 120 * ((disc.q2sq @ v0).reshape(shape) + _psi(disc, 0.0, 2, 2, shift=1))
        U1 += dt**6 / 720 * ((disc.q2cube @ u0).reshape(shape) + _psi(disc, 0.0, 3, 2))
    V = U0.copy()
    m = disc.update_mask
    V[m] = U1[m]
    return U0, disc.fill(V, dt)


# --- drivers -------------------------------------------------------------------------

@dataclass
class RunResult:
    U: np.ndarray
    t: float
    plan: TimeStepPlan | None
    max_norms: list
    snapshots: dict = None  # t -> extended field copy


def run_scheme(disc: Discretization, scheme: str, cfl: float = 0.9, T: float | None = None,
               monitor_every: int = 0, n_steps: int | None = None, dt: float | None = None,
               checkpoints: tuple = ()) -> RunResult:
    """Integrate to T (or n_steps of size dt) and return the final extended field.

    `checkpoints` are times T*a/b at which copies are kept (wave scheme only);
    the step count is rounded up so that each lands on a time level.
    """
    prob = disc.problem
    if scheme == "elliptic":
        return RunResult(solve_elliptic(disc), 0.0, None, [])
    plan = stable_dt(prob, disc.spec, disc.d, cfl, scheme, T)
    if n_steps is not None:
        step = dt if dt is not None else plan.dt
        plan = TimeStepPlan(dt=step, n_steps=n_steps, cfl=cfl, scheme=scheme, dt_bound=plan.dt_bound)
    elif checkpoints:
        Tf = plan.dt * plan.n_steps
        mult = 1
        for tc in checkpoints:
            frac = Fraction(tc / Tf).limit_denominator(1000)
            mult = mult * frac.denominator // gcd(mult, frac.denominator)
        N = mult * ceil(plan.n_steps / mult)
        plan = TimeStepPlan(dt=Tf / N, n_steps=N, cfl=cfl, scheme=scheme, dt_bound=plan.dt_bound)
    dt_, N = plan.dt, plan.n_steps
    snap_steps = {int(round(tc / dt_)): tc for tc in checkpoints}
    snaps = {}
    norms = []
    if scheme == "fe":
        U = disc.fill(disc.sample_domain(prob.u0, 0.0), 0.0)
        for n in range(N):
            U = step_forward_euler(U, n * dt_, dt_, disc)
            if monitor_every and (n + 1) % monitor_every == 0:
                norms.append((n + 1, (n + 1) * dt_, float(np.max(np.abs(U[disc.domain_mask])))))
            if not np.isfinite(U[disc.domain_mask]).all():
                if monitor_every:
                    norms.append((n + 1, (n + 1) * dt_, float("inf")))
                    break
                raise InstabilityError(f"forward Euler blew up at step {n + 1}")
        return RunResult(U, N * dt_, plan, norms)
    if scheme == "me":
        Uold, U = taylor_start(disc, dt_)
        if 1 in snap_steps:
            snaps[snap_steps[1]] = U.copy()
        for n in range(1, N):
            Unew = step_me_wave(U, Uold, n * dt_, dt_, disc)
            Uold, U = U, Unew
            if monitor_every and (n + 1) % monitor_every == 0:
                norms.append((n + 1, (n + 1) * dt_, float(np.max(np.abs(U[disc.domain_mask])))))
            if not np.isfinite(U[disc.domain_mask]).all():
                raise InstabilityError(f"wave scheme blew up at step {n + 1}")
            if n + 1 in snap_steps:
                snaps[snap_steps[n + 1]] = U.copy()
        return RunResult(U, N * dt_, plan, norms, snaps)
    if scheme == "bdf":
        k = disc.d
        solver = BDFSolver(disc, k, dt_)
        exact = prob.exact
        hist = [disc.sample_domain(exact, (k - 1 - i) * dt_).ravel()[disc.unknowns] for i in range(k)]
        for n in range(k - 1, N):
            u = solver.step(hist, (n + 1) * dt_)
            hist = [u] + hist[:-1]
        U = solver.imp.extend(hist[0], N * dt_)
        return RunResult(U, N * dt_, plan, norms)
    raise ValueError(f"unknown scheme {scheme!r}")
