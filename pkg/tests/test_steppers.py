import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from lcbcfd import analysis, harness
from lcbcfd import cases
from lcbcfd.model import (DIRICHLET, SIDES, T_SYM, X_SYM, Y_SYM, BoundarySpec, GridSpec, PdeProblem, laplacian,
                          manufactured_data, zero_field)
from lcbcfd.steppers import (FE_PARAMETERS, Discretization, bdf_coefficients, me_correction, run_scheme,
                             solve_elliptic, stable_dt, taylor_start)

x, y, t = X_SYM, Y_SYM, T_SYM
ALL_D = {s: DIRICHLET for s in SIDES}


def homogeneous_wave(d, n=12):
    bd = {s: BoundarySpec(s, DIRICHLET) for s in SIDES}
    prob = PdeProblem(q=2, coeffs=laplacian(), f=zero_field, boundary=bd, u0=zero_field, u1=zero_field)
    return Discretization(prob, GridSpec(n, n, d // 2), d)


# --- time-step plans -----------------------------------------------------------------

def test_wave_dt_example():
    plan = stable_dt(cases.test1_problem("me"), GridSpec(10, 10, 2), 4, cfl=0.9, scheme="me")
    assert 0.9 * plan.dt_bound == pytest.approx(0.09 / np.sqrt(2), rel=1e-12)
    assert 0.9 * plan.dt_bound == pytest.approx(0.063640, abs=5e-7)
    assert plan.n_steps * plan.dt == pytest.approx(1.0)
    assert plan.dt <= 0.9 * plan.dt_bound + 1e-15
    assert plan.dt**2 * (1 / 0.1**2 + 1 / 0.1**2) < 1


def test_fe_dt_example():
    h = 1 / 20
    plan = stable_dt(cases.test1_problem("fe"), GridSpec(20, 20, 1), 2, cfl=0.9, scheme="fe")
    assert 0.9 * plan.dt_bound == pytest.approx(0.225 * h**2, rel=1e-12)


def test_fe_parameters():
    assert tuple(FE_PARAMETERS[2]) == (4.0, 2.0, 1.0)
    assert tuple(FE_PARAMETERS[4]) == pytest.approx((16 / 3, 9 / 2, 3 / 2))
    assert FE_PARAMETERS[6][1] == pytest.approx(1313 / 261)


# --- BDF -----------------------------------------------------------------------------

@pytest.mark.parametrize("k", range(1, 7))
def test_bdf_coefficients_rational_consistency(k):
    a = bdf_coefficients(k)
    assert len(a) == k + 1
    assert abs(np.sum(a)) < 1e-13  # constants are annihilated


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 6), coeffs=st.lists(st.floats(-3, 3), min_size=7, max_size=7), dt=st.floats(0.01, 0.5))
def test_bdf_exact_on_polynomials(k, coeffs, dt):
    c = np.array(coeffs[: k + 1])
    a = bdf_coefficients(k)
    tn = 0.7
    ts = tn - dt * np.arange(k + 1)
    lhs = a @ np.polynomial.polynomial.polyval(ts, c)
    rhs = dt * np.polynomial.polynomial.polyval(tn, np.polynomial.polynomial.polyder(c))
    assert abs(lhs - rhs) <= 1e-10 * (1 + np.sum(np.abs(c)))


def test_bdf2_quadratic_solution():
    # scalar surrogate u' = lambda u + g with u = 1 + 2t + 3t^2 exactly reproduced by BDF2
    lam, dt = -2.0, 0.1
    u = lambda s: 1 + 2 * s + 3 * s**2
    g = lambda s: 2 + 6 * s - lam * u(s)
    a = bdf_coefficients(2)
    hist = [u(0.1), u(0.0)]
    tn = 0.1
    for _ in range(5):
        tn += dt
        new = (dt * g(tn) - a[1] * hist[0] - a[2] * hist[1]) / (a[0] - dt * lam)
        hist = [new, hist[0]]
        assert new == pytest.approx(u(tn), rel=1e-13)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_ghost_elimination(p):
    for build in (cases.test1_problem, cases.test2_problem):
        assert harness.elimination_defect(build("bdf"), GridSpec(8 * p, 8 * p, p), n_fields=20, seed=p) <= 1e-12


# --- explicit schemes ----------------------------------------------------------------

def test_fe_zero_stays_zero():
    bd = {s: BoundarySpec(s, DIRICHLET) for s in SIDES}
    prob = PdeProblem(q=1, coeffs=laplacian(), f=zero_field, boundary=bd, u0=zero_field, T=0.05)
    disc = Discretization(prob, GridSpec(10, 10, 1), 2)
    res = run_scheme(disc, "fe")
    assert np.all(res.U == 0.0)


def test_fe_exact_in_time_for_linear_phi():
    # u = (x^2 + y^2)(t + 1): Q_2 exact in space, FE exact in time
    prob = manufactured_data((x**2 + y**2) * (t + 1), laplacian(), 1, ALL_D, T=0.02)
    disc = Discretization(prob, GridSpec(10, 10, 1), 2)
    res = run_scheme(disc, "fe")
    assert disc.max_error(res.U, res.t) < 1e-12


@pytest.mark.parametrize("d", [2, 4, 6])
def test_me_preserves_constant(d):
    prob = manufactured_data(sp.Integer(1) + 0 * x, laplacian(), 2, cases.SQUARE_KINDS, T=0.5)
    disc = Discretization(prob, GridSpec(4 * d, 4 * d, d // 2), d)
    res = run_scheme(disc, "me")
    assert np.max(np.abs(disc.domain_values(res.U) - 1.0)) < 1e-12


@pytest.mark.parametrize("d", [2, 4, 6])
def test_taylor_start_zero_data(d):
    disc = homogeneous_wave(d)
    U0, U1 = taylor_start(disc, 0.01)
    assert np.all(U0 == 0) and np.all(U1 == 0)


def test_taylor_start_quadratic_in_time():
    a = x**3 + x * y**2
    b = y**2 - x * y
    c = x**2 * y + 1
    prob = manufactured_data(a + t * b + t**2 * c, laplacian(), 2, ALL_D)
    disc = Discretization(prob, GridSpec(10, 10, 1), 2)
    _, U1 = taylor_start(disc, 0.03)
    assert disc.max_error(U1, 0.03) < 1e-13


def test_checkpoints_land_on_time_levels():
    prob = cases.test1_problem("me", T=1.0)
    disc = Discretization(prob, GridSpec(10, 10, 1), 2)
    res = run_scheme(disc, "me", checkpoints=(0.25, 0.6))
    assert set(res.snapshots) == {0.25, 0.6}
    for tc, U in res.snapshots.items():
        assert disc.max_error(U, tc) < 0.05
    k = round(0.25 / res.plan.dt)
    assert k * res.plan.dt == pytest.approx(0.25, abs=1e-13)


# --- modified-equation operators -----------------------------------------------------

def test_compact_q_squared_monomials():
    prob = manufactured_data(0 * x, laplacian(), 2, cases.SQUARE_KINDS)
    disc = Discretization(prob, GridSpec(16, 16, 3), 6)
    ext = disc.ext
    inner = (slice(6, -6), slice(6, -6))
    for m in range(8):
        for n in range(8 - m):
            e = x**m * y**n
            U = sp.lambdify((x, y), e)(ext.X, ext.Y) * np.ones(ext.shape)
            bih = sp.diff(e, x, 4) + 2 * sp.diff(e, x, 2, y, 2) + sp.diff(e, y, 4)
            ref = sp.lambdify((x, y), bih)(ext.X, ext.Y) * np.ones(ext.shape)
            got = (disc.qt2 @ U.ravel()).reshape(ext.shape)
            assert np.max(np.abs(got[inner] - ref[inner])) <= 1e-8 * (1 + np.max(np.abs(ref[inner]))), (m, n)
    U = sp.lambdify((x, y), x**4)(ext.X, ext.Y)
    assert (disc.qt2 @ U.ravel()).reshape(ext.shape)[9, 9] == pytest.approx(24.0, rel=1e-9)


def test_compact_q_squared_width():
    disc = Discretization(cases.test2_problem("me"), GridSpec(12, 12, 3), 6)
    A = disc.qt2.tocoo()
    ny = disc.ext.shape[1]
    assert np.max(np.abs(A.row // ny - A.col // ny)) <= 3
    assert np.max(np.abs(A.row % ny - A.col % ny)) <= 3


@pytest.mark.parametrize("d", [2, 4, 6])
def test_me_fourier_symbol_matches_closed_form(d):
    # one ME step on a Fourier mode multiplies it by 2b; compare against the closed-form b
    disc = homogeneous_wave(d, n=24)
    h = 1 / 24
    I, J = np.meshgrid(disc.ext.i, disc.ext.j, indexing="ij")
    c = np.ravel_multi_index((12 + d // 2, 12 + d // 2), I.shape)
    for lam in (0.3, 0.6):
        dt = lam * h
        corr = me_correction(disc, dt)
        for xi, eta in ((0.3, 1.1), (2.0, -0.7), (np.pi, np.pi), (-1.3, 0.2)):
            U = np.cos(xi * (I - 12 - d // 2) + eta * (J - 12 - d // 2)).ravel()
            rhs = disc.q_matrix(d) @ U
            if corr is not None:
                extra = np.zeros_like(U)
                extra[disc.unknowns] = corr @ U
                rhs = rhs + extra
            b = 1 + dt**2 * rhs[c] / U[c] / 2
            assert b == pytest.approx(analysis.wave_symbol(d // 2, lam, lam, xi, eta), abs=1e-12)


# --- elliptic ------------------------------------------------------------------------

@pytest.mark.parametrize("d", [2, 4, 6])
@pytest.mark.parametrize("combo", ["DDDD", "DNND"])
def test_elliptic_exact_on_total_degree_d(d, combo):
    rng = np.random.default_rng(d)
    e = sum(sp.Float(rng.standard_normal()) * x**a * y**b for a in range(d + 1) for b in range(d + 1 - a))
    prob = manufactured_data(e, laplacian(), 0, harness.KIND_COMBOS[combo])
    disc = Discretization(prob, GridSpec(4 * d, 4 * d, d // 2), d)
    assert disc.max_error(solve_elliptic(disc), 0.0) <= 1e-9


def test_elliptic_degree_above_d_not_exact_at_neumann():
    # the local ghost polynomial has degree 2p per direction, so y^(d+1) at a Neumann face is not reproduced
    prob = manufactured_data(y**3, laplacian(), 0, cases.SQUARE_KINDS)
    disc = Discretization(prob, GridSpec(8, 8, 1), 2)
    assert disc.max_error(solve_elliptic(disc), 0.0) > 1e-6
