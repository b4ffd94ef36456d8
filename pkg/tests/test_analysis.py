import numpy as np
import pytest
import scipy.special as ss
from hypothesis import given, settings, strategies as st

from lcbcfd import analysis, harness
from lcbcfd import cases
from lcbcfd.analysis import (ScatteringSeries, SeriesTruncation, bessel_JY, choose_truncation, fitted_order,
                             heat_gaussian_exact, richardson_rates, solvability_reference, stability_amplification,
                             wave_symbol)
from lcbcfd.model import GridSpec
from lcbcfd.steppers import Discretization, run_scheme


# --- Bessel functions ----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.05, 60.0))
def test_bessel_matches_scipy(x):
    J, Y = bessel_JY(60, x)
    n = np.arange(61)
    assert np.allclose(J, ss.jv(n, x), rtol=1e-11, atol=1e-14)
    # Y_n grows without bound for n >> x; compare relatively where it is representable
    ref = ss.yv(n, x)
    ok = np.abs(ref) < 1e250
    assert np.allclose(Y[ok], ref[ok], rtol=1e-10, atol=1e-13)


def test_wronskian_at_one():
    J, Y = bessel_JY(51, 1.0)
    n = np.arange(51)
    w = J[n + 1] * Y[n] - J[n] * Y[n + 1]
    assert np.allclose(w, 2 / np.pi, rtol=1e-10)


def test_jacobi_anger():
    x, th = 10.0, 0.7
    J, _ = bessel_JY(60, x)
    n = np.arange(1, 61)
    s = J[0] + 2 * np.sum(1j**n * J[1:] * np.cos(n * th))
    assert abs(s - np.exp(1j * x * np.cos(th))) < 1e-10


def test_normalization_at_thirty():
    J, _ = bessel_JY(100, 30.0)
    assert abs(J[0] ** 2 + 2 * np.sum(J[1:] ** 2) - 1) < 1e-10


def test_bessel_rejects_bad_input():
    with pytest.raises(ValueError):
        bessel_JY(10, 0.0)


# --- scattering ----------------------------------------------------------------------

@pytest.mark.parametrize("k", [10.0, 30.0])
def test_scattering_cancels_incident_at_cylinder(k):
    s = ScatteringSeries(k)
    th = np.linspace(0, np.pi, 41)
    for t in (0.0, 0.37):
        u = s.value(np.ones_like(th), th, t)
        assert np.max(np.abs(u + np.cos(k * (np.cos(th) - t)))) < 1e-9


def test_scattering_self_consistency():
    base = ScatteringSeries(10.0)
    fine = ScatteringSeries(10.0, truncation=SeriesTruncation(2 * base.trunc.n_max, 1e-15))
    v0 = base.value(1.5, np.pi / 3, 0.0)
    v1 = fine.value(1.5, np.pi / 3, 0.0)
    assert abs(v0 - v1) < 1e-9


def test_scattering_time_derivatives():
    s = ScatteringSeries(10.0)
    h = 1e-4
    r, th, t = 1.3, 0.4, 0.2
    fd = (s.value(r, th, t + h) - s.value(r, th, t - h)) / (2 * h)
    assert s.value(r, th, t, 1) == pytest.approx(fd, rel=1e-6)
    assert np.isrealobj(s.value(r, th, t))


def test_truncation_reaches_tolerance():
    tr = choose_truncation(10.0)
    J, Y = bessel_JY(tr.n_max, 10.0)
    assert abs(J[-1]) < tr.tol and abs(J[-1] / (J[-1] + 1j * Y[-1])) < tr.tol


# --- heat solution -------------------------------------------------------------------

def test_heat_initial_and_peak():
    x = np.linspace(-1, 1, 5)
    assert np.allclose(heat_gaussian_exact(x, 0.3 * x, 0.0), np.exp(-6 * (x**2 + 0.09 * x**2)))
    t = 0.4
    assert heat_gaussian_exact(0.5 * t, 0.3 * t, t) == pytest.approx(np.exp(t) / (1 + 4 * 6 * 0.2 * t))


def test_heat_pde_residual():
    D, v, g = 0.2, (0.5, 0.3), 1.0
    x0, y0, t0 = 0.2, -0.1, 0.3
    h = 1e-3
    u = heat_gaussian_exact
    w1 = np.array([1 / 12, -2 / 3, 0, 2 / 3, -1 / 12])
    w2 = np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12])
    o = np.arange(-2, 3) * h
    ut = w1 @ u(x0, y0, t0 + o) / h
    ux = w1 @ u(x0 + o, y0, t0) / h
    uy = w1 @ u(x0, y0 + o, t0) / h
    lap = (w2 @ u(x0 + o, y0, t0) + w2 @ u(x0, y0 + o, t0)) / h**2
    res = ut - D * lap + v[0] * ux + v[1] * uy - g * u(x0, y0, t0)
    assert abs(res) <= 1e-6


# --- stability -----------------------------------------------------------------------

def test_stable_inside_unit_circle():
    for p in (1, 2, 3):
        pt = stability_amplification(p, 0.99 / np.sqrt(2), 0.99 / np.sqrt(2))
        assert pt.a_max <= 1 + 1e-10


@pytest.mark.parametrize("p", [2, 3])
def test_unstable_outside(p):
    assert stability_amplification(p, 0.75, 0.75).a_max > 1
    assert stability_amplification(p, 1.1 / np.sqrt(2), 1.1 / np.sqrt(2)).a_max > 1


def test_b2_at_zero_mode_is_one():
    assert wave_symbol(2, 0.5, 0.5, 0.0, 0.0) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(lx=st.floats(0.01, 0.99), frac=st.floats(0.01, 0.99), xi=st.floats(-np.pi, np.pi), eta=st.floats(-np.pi, np.pi))
def test_b2_bounded_inside(lx, frac, xi, eta):
    ly = frac * np.sqrt(1 - lx**2)
    b = wave_symbol(2, lx, ly, xi, eta)
    assert abs(b) <= 1.0 + 1e-15
    if abs(xi) > 1e-3 or abs(eta) > 1e-3:
        assert abs(b) < 1.0


def test_amplification_roots_are_reciprocal():
    for p in (1, 2, 3):
        assert stability_amplification(p, 0.5, 0.6).reciprocal_defect < 1e-12


# --- solvability references ----------------------------------------------------------

def test_reference_polynomials():
    assert solvability_reference(1, "face-D", xi=2.0) == pytest.approx(0.0)
    assert solvability_reference(1, "face-D", xi=0.5) == pytest.approx((1 - 0.25) ** 3)
    assert solvability_reference(1, "corner-DD", gamma=0.5) == pytest.approx(0.0)
    g, s = 0.2, 1.7
    H2 = (1 - 4 * g**2) ** 2 * (1 - 28 * g**2 + 208 * g**4 - 256 * g**6)
    assert solvability_reference(2, "corner-DD", gamma=g, sigma=s) == pytest.approx(H2 * (3 * (s + 1 / s) - 4 * g))
    with pytest.raises(ValueError):
        solvability_reference(2, "edge")


# --- rates ---------------------------------------------------------------------------

def test_richardson_ratio_sixteen():
    # nested differences 16 and 1 give rate log2(16)
    c, m, f = np.zeros((3, 3)), np.full((5, 5), 16.0), np.full((9, 9), 17.0)
    est = richardson_rates(c, m, f, h=0.1)
    assert est.sigma == pytest.approx(4.0)
    assert est.deltas == (16.0, 1.0)
    with pytest.raises(ValueError):
        richardson_rates(c, np.zeros((5, 5)), np.zeros((9, 9)), h=0.1)


def test_richardson_estimate_tracks_true_error():
    # Test 1, d=2 ME: estimated middle-grid error within a factor 2 of the true error
    sols, errs = [], []
    for n in (20, 40, 80):
        disc = Discretization(cases.test1_problem("me", T=0.5), GridSpec(n, n, 1), 2)
        res = run_scheme(disc, "me")
        sols.append(disc.domain_values(res.U))
        errs.append(disc.max_error(res.U, res.t))
    est = richardson_rates(*sols, h=1 / 20)
    assert 0.5 <= est.error_estimates[1] / errs[1] <= 2.0


def test_fitted_order_exact_power():
    hs = np.array([0.1, 0.05, 0.025])
    assert fitted_order(hs, 3 * hs**4) == pytest.approx(4.0)


def test_harness_stability_suite_passes():
    assert all(r.passed for r in harness.stability_suite(n_sample=65))
