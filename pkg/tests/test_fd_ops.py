import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcbcfd import fd_ops
from lcbcfd.fd_ops import (X_AXIS, Y_AXIS, CoeffArrays, apply_first_derivative, apply_Q, apply_Q_corrected,
                           apply_Q_power, apply_second_derivative, first_weights, index_domain, second_weights,
                           tangential_derivative_pair)


def line(fn, h, n):
    x = (np.arange(n) - n // 2) * h
    return x, fn(x)


def d1(u, d, h):
    # derivative of a 1D line stored as a 1 x n field; NaN where the stencil does not fit
    return apply_first_derivative(np.asarray(u)[None, :], 1, d, h)[0]


def d2(u, d, h):
    return apply_second_derivative(np.asarray(u)[None, :], 1, d, h)[0]


def valid(a):
    return a[np.isfinite(a)]


def test_correction_coefficients():
    assert fd_ops.A_COEF[1:] == (-1 / 12, 1 / 90)
    assert fd_ops.B_COEF[1:] == (-1 / 6, 1 / 30)


@pytest.mark.parametrize("d", [2, 4, 6])
def test_first_derivative_of_linear(d):
    x, u = line(lambda x: 3.0 + x, 0.1, 21)
    assert np.allclose(valid(d1(u, d, 0.1)), 1.0, atol=1e-13)


def test_first_derivative_cos_ratio():
    def err(h):
        x = np.arange(-3, int(round(1 / h)) + 4) * h
        du = d1(np.cos(2 * np.pi * x), 4, h)
        return np.nanmax(np.abs(du + 2 * np.pi * np.sin(2 * np.pi * x)))
    assert 14 <= err(0.05) / err(0.025) <= 18


def test_d2_central_truncation_on_cubic():
    h = 0.1
    u = np.array([-h, 0.0, h]) ** 3
    assert d1(u, 2, h)[1] == pytest.approx(h**2, rel=1e-12)


def test_second_derivative_exact_cases():
    h = 0.1
    x = (np.arange(11) - 5) * h
    assert np.allclose(valid(d2(x**2, 2, h)), 2.0, atol=1e-12)
    assert abs(d2(x**4, 4, h)[5]) < 1e-12
    assert abs(d2(x**6, 6, h)[5]) < 1e-12


def test_literal_d4_weights():
    assert np.allclose(second_weights(4), [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12], rtol=0, atol=1e-15)
    assert np.allclose(first_weights(4), [1 / 12, -2 / 3, 0, 2 / 3, -1 / 12], rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(d=st.sampled_from([2, 4, 6]), coeffs=st.lists(st.floats(-2, 2), min_size=8, max_size=8),
       h=st.floats(0.05, 0.5))
def test_weights_exact_on_low_degree(d, coeffs, h):
    # order-d second derivative is exact to degree d + 1, first derivative to degree d
    p = d // 2
    x = (np.arange(-p, p + 1)) * h
    c2 = np.array(coeffs[: d + 2])
    c1 = np.array(coeffs[: d + 1])
    scale = 1 + np.sum(np.abs(coeffs)) * (1 + h**-2)
    assert abs(second_weights(d) @ np.polynomial.polynomial.polyval(x, c2) / h**2 - 2 * c2[2]) <= 1e-11 * scale
    assert abs(first_weights(d) @ np.polynomial.polynomial.polyval(x, c1) / h - c1[1]) <= 1e-11 * scale


def lap():
    return CoeffArrays(1.0, 0.0, 1.0, 0.0, 0.0, 0.0)


def test_apply_Q_laplacian_quadratic():
    h = 0.1
    x = np.arange(-1, 12) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    out = apply_Q(X**2 + Y**2, lap(), 2, h, h)
    assert np.allclose(valid(out), 4.0, atol=1e-12)


def test_apply_Q_reaction_only():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((13, 13))
    out = apply_Q(U, CoeffArrays(0.0, 0.0, 0.0, 0.0, 0.0, 3.0), 4, 0.1, 0.1)
    assert np.allclose(out[2:-2, 2:-2], 3 * U[2:-2, 2:-2], rtol=1e-15, atol=0)


def _oracle_q4(U, c, h):
    # explicit loops with literal order-4 weights
    w2 = [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]
    w1 = [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12]
    n, m = U.shape
    out = np.zeros((n - 4, m - 4))
    for i in range(2, n - 2):
        for j in range(2, m - 2):
            uxx = sum(w2[l] * U[i + l - 2, j] for l in range(5)) / h**2
            uyy = sum(w2[l] * U[i, j + l - 2] for l in range(5)) / h**2
            ux = sum(w1[l] * U[i + l - 2, j] for l in range(5)) / h
            uy = sum(w1[l] * U[i, j + l - 2] for l in range(5)) / h
            uxy = sum(w1[a] * w1[b] * U[i + a - 2, j + b - 2] for a in range(5) for b in range(5)) / h**2
            k = (i, j)
            out[i - 2, j - 2] = (c.c11[k] * uxx + 2 * c.c12[k] * uxy + c.c22[k] * uyy
                                 + c.c1[k] * ux + c.c2[k] * uy + c.c0[k] * U[k])
    return out


def test_apply_Q_variable_matches_composition_oracle():
    rng = np.random.default_rng(1)
    shape = (12, 11)
    c = CoeffArrays(*(rng.random(shape) + 0.5 for _ in range(6)))
    U = rng.standard_normal(shape)
    got = apply_Q(U, c, 4, 0.1, 0.1)[2:-2, 2:-2]
    ref = _oracle_q4(U, c, 0.1)
    assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_corrected_k1_equals_plain():
    rng = np.random.default_rng(2)
    shape = (9, 9)
    c = CoeffArrays(*(rng.random(shape) + 0.5 for _ in range(6)))
    U = rng.standard_normal(shape)
    a, b = apply_Q_corrected([U], c, 1, 0.1, 0.2), apply_Q(U, c, 2, 0.1, 0.2)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.allclose(valid(a), valid(b), rtol=1e-14, atol=1e-12)


def test_power_biharmonic_of_x4():
    h = 0.05
    x = np.arange(-6, 7) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    V = apply_Q_power(X**4, lap(), 2, 2, h, h)
    c = V.shape[0] // 2
    assert V[c, c] == pytest.approx(24.0, abs=1e-6)


def test_index_domain_shrink():
    assert index_domain(3, 2, 1) == (1, 4)


def test_tangential_pairs():
    y = (np.arange(7) - 3) * 0.1
    assert tangential_derivative_pair(y**2, 2, 2, 0.1) == pytest.approx((0.0, 2.0), abs=1e-12)
    assert tangential_derivative_pair(y, 1, 2, 0.1) == pytest.approx((0.0, 1.0), abs=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_tangential_convergence(k):
    def err(h):
        y = (np.arange(2 * 6 + 1) - 6) * h
        return abs(tangential_derivative_pair(np.sin(y + 0.3), 4, k, h)[1] - np.sin(0.3))
    ratio = err(0.1) / err(0.05)
    assert abs(np.log2(ratio) - 2 * k) < 0.2


def test_order_validation():
    with pytest.raises(ValueError):
        fd_ops.check_order(3)


def test_axis_constants_address_last_two_axes():
    U = np.zeros((2, 7, 9))
    ax = fd_ops.apply_stencil(U, second_weights(4), X_AXIS)
    ay = fd_ops.apply_stencil(U, second_weights(4), Y_AXIS)
    assert np.isnan(ax[:, :2]).all() and np.isfinite(ax[:, 2:-2]).all()
    assert np.isnan(ay[..., -2:]).all() and np.isfinite(ay[..., 2:-2]).all()


@pytest.mark.parametrize("d", [2, 4, 6])
def test_kernel_paths_agree_with_apply_Q(d):
    # both GridQ paths (numba when available, numpy fallback) against the reference operator
    from lcbcfd import kernels
    rng = np.random.default_rng(d)
    p = d // 2
    shape = (13 + 2 * p, 11 + 2 * p)
    c = [rng.random(shape) + 0.5 for _ in range(6)]
    U = rng.standard_normal(shape)
    inner = (slice(p, -p), slice(p, -p))
    ref = apply_Q(U, CoeffArrays(*c), d, 0.1, 0.12)[inner]
    for flag in (False, True):
        got = kernels.GridQ(tuple(c), d, 0.1, 0.12, use_numba=flag)(U)[inner]
        assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref))
    wx, wy = first_weights(d), second_weights(d)
    a = kernels.separable_apply(U, wx, wy, use_numba=False)
    b = kernels.separable_apply(U, wx, wy, use_numba=True)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-13, atol=1e-13)
