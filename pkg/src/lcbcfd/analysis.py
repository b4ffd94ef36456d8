"""Reference solutions, special functions, stability sampling and error estimation."""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np

EULER_GAMMA = 0.57721566490153286061


# --- Bessel functions ----------------------------------------------------------------

def _miller_J(n_max: int, x: np.ndarray) -> np.ndarray:
    """J_0..J_{n_max}(x) by downward recurrence, normalized with J0 + 2 sum J_2k = 1."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    top = max(n_max, int(np.max(x))) + 30 + int(sqrt(60 * max(n_max, float(np.max(x)), 1.0)))
    top += top % 2
    out = np.zeros((n_max + 1,) + x.shape)
    jp1 = np.zeros_like(x)
    j = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    for n in range(top, 0, -1):
        jm1 = 2.0 * n / x * j - jp1
        jp1, j = j, jm1
        # j now holds the unnormalized J_{n-1}
        if n - 1 <= n_max:
            out[n - 1] = j
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j
        big = np.abs(j) > 1e250
        if np.any(big):
            s = np.where(big, 1e-250, 1.0)
            j, jp1, norm = j * s, jp1 * s, norm * s
            out[n - 1:] *= s
    norm += j  # J_0
    return out / norm


def bessel_JY(n_max: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Arrays J[n], Y[n] for n = 0..n_max at x > 0 (x may be an array)."""
    if n_max > 200 or n_max < 1:
        raise ValueError("n_max must be in 1..200")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= 0):
        raise ValueError("Bessel functions need x > 0")
    # Neumann series for Y0 needs even-order J well past x
    n_ser = max(n_max + 1, int(np.max(xa)) + 40)
    n_ser += n_ser % 2
    J = _miller_J(n_ser + 1, xa)
    lg = np.log(xa / 2) + EULER_GAMMA
    k = np.arange(1, n_ser // 2 + 1)
    sgn = ((-1.0) ** k / k)[:, None]
    Y0 = 2 / np.pi * lg * J[0] - 4 / np.pi * np.sum(sgn * J[2 * k], axis=0)
    # Y1 = -Y0'; with J_n' = (J_{n-1} - J_{n+1}) / 2 and J_0' = -J_1
    dJ2k = 0.5 * (J[2 * k - 1] - J[2 * k + 1])
    dY0 = 2 / np.pi * (J[0] / xa - lg * J[1]) - 4 / np.pi * np.sum(sgn * dJ2k, axis=0)
    Y = np.zeros((n_max + 1,) + xa.shape)
    Y[0], Y[1] = Y0, -dY0
    for n in range(1, n_max):
        Y[n + 1] = 2.0 * n / xa * Y[n] - Y[n - 1]
    Jout = J[:n_max + 1]
    if np.ndim(x) == 0:
        return Jout[:, 0], Y[:, 0]
    return Jout, Y


# --- scattering from a cylinder ------------------------------------------------------

@dataclass(frozen=True)
class SeriesTruncation:
    n_max: int
    tol: float = 1e-12


def choose_truncation(k: float, tol: float = 1e-12, cap: int = 200) -> SeriesTruncation:
    J, Y = bessel_JY(cap, k)
    # terms behave like J_n(k) near rho = 1, so bound both
    ratio = np.abs(J / (J + 1j * Y))
    below = np.nonzero((ratio < tol) & (np.abs(J) < tol))[0]
    n = int(below[0]) if len(below) else cap
    return SeriesTruncation(n_max=min(max(n, 1), cap), tol=tol)


class ScatteringSeries:
    """Scattered field of a plane wave cos(k(x - ct)) off the unit cylinder (u = -u_inc there)."""

    def __init__(self, k: float, c: float = 1.0, truncation: SeriesTruncation | None = None):
        self.k, self.c = float(k), float(c)
        self.trunc = truncation or choose_truncation(k)
        n = self.trunc.n_max
        J, Y = bessel_JY(max(n, 1), self.k)
        H = J + 1j * Y
        w = np.where(np.arange(n + 1) == 0, 1.0, 2.0) * (1j ** np.arange(n + 1)) * J / H
        self.weights = w[:n + 1]

    def spatial(self, rho, theta) -> np.ndarray:
        """Complex S(rho, theta) with u = -Re[exp(-ikct) S]."""
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if np.any(rho < 1 - 1e-14):
            raise ValueError("scattering series is only valid for rho >= 1")
        n = self.trunc.n_max
        shape = np.broadcast(rho, theta).shape
        r = np.broadcast_to(rho, shape).ravel()
        th = np.broadcast_to(theta, shape).ravel()
        out = np.zeros(r.shape, dtype=complex)
        for rv in np.unique(r):
            sel = r == rv
            J, Y = bessel_JY(max(n, 1), self.k * rv)
            H = (J + 1j * Y)[:n + 1]
            out[sel] = np.cos(np.outer(th[sel], np.arange(n + 1))) @ (self.weights * H)
        return out.reshape(shape)

    def value(self, rho, theta, t: float, m: int = 0) -> np.ndarray:
        """d^m/dt^m of the scattered field."""
        fac = (-1j * self.k * self.c) ** m * np.exp(-1j * self.k * self.c * t)
        return -np.real(fac * self.spatial(rho, theta))


def scattering_exact(x, y, t: float, k: float = 10.0, c: float = 1.0,
                     truncation: SeriesTruncation | None = None) -> np.ndarray:
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    return ScatteringSeries(k, c, truncation).value(rho, theta, t)


# --- Gaussian heat solution ----------------------------------------------------------

def heat_gaussian_exact(x, y, t: float, D: float = 0.2, v=(0.5, 0.3), gamma: float = 1.0,
                        sigma: float = 6.0) -> np.ndarray:
    den = 1.0 + 4.0 * sigma * D * t
    r2 = (np.asarray(x) - v[0] * t) ** 2 + (np.asarray(y) - v[1] * t) ** 2
    return np.exp(gamma * t) / den * np.exp(-sigma * r2 / den)


# --- wave-scheme stability -----------------------------------------------------------

@dataclass(frozen=True)
class StabilityPoint:
    lam_x: float
    lam_y: float
    z: float
    a_max: float
    b_abs_max: float
    reciprocal_defect: float


def wave_symbol(p: int, lam_x, lam_y, xi_x, xi_y) -> np.ndarray:
    """b_p for the ME scheme with Q = c^2 Laplacian; lam = c dt / h, xi = wave angle."""
    sx = np.sin(np.asarray(xi_x) / 2) ** 2
    sy = np.sin(np.asarray(xi_y) / 2) ** 2
    lx, ly = lam_x**2 * sx, lam_y**2 * sy  # lambda-hat squared
    kx, ky = 4 * sx, 4 * sy  # (h k-hat)^2
    if p == 1:
        return 1 - 2 * (lx + ly)
    if p == 2:
        return 1 - 2 * (lx + ly + kx / 12 * lx + ky / 12 * ly) + 2 / 3 * (lx + ly) ** 2
    if p == 3:
        return (1 - 2 * (lx * (1 + kx / 12 + kx**2 / 90) + ly * (1 + ky / 12 + ky**2 / 90))
                + 2 / 3 * (lx**2 * (1 + kx / 6) + ly**2 * (1 + ky / 6)
                           + 2 * lx * ly * (1 + kx / 12) * (1 + ky / 12))
                - 4 / 45 * (lx + ly) ** 3)
    raise ValueError(f"p must be 1, 2 or 3, got {p}")


def stability_amplification(p: int, lam_x: float, lam_y: float, n_sample: int = 129) -> StabilityPoint:
    xi = np.linspace(-np.pi, np.pi, n_sample)
    XI, ETA = np.meshgrid(xi, xi, indexing="ij")
    b = wave_symbol(p, lam_x, lam_y, XI, ETA).astype(complex)
    root = np.sqrt(b * b - 1)
    ap, am = b + root, b - root
    a_max = float(max(np.max(np.abs(ap)), np.max(np.abs(am))))
    return StabilityPoint(lam_x, lam_y, lam_x**2 + lam_y**2, a_max, float(np.max(np.abs(b))),
                          float(np.max(np.abs(ap * am - 1))))


def stability_map(p: int, lam_max: float = 1.2, n_lam: int = 25, n_sample: int = 129) -> list[StabilityPoint]:
    lams = np.linspace(0.0, lam_max, n_lam)
    return [stability_amplification(p, lx, ly, n_sample) for lx in lams for ly in lams]


# --- solvability reference polynomials -----------------------------------------------

def _face_D(p, xi):
    if p == 1:
        return (1 - xi / 2) ** 3
    if p == 2:
        return (1 - 3 * xi / 2 + xi**2 / 2 - xi**3 / 18) ** 5
    return (1 - 3 * xi + 11 * xi**2 / 4 - 1691 * xi**3 / 1440 + 121 * xi**4 / 480
            - 11 * xi**5 / 400 + xi**6 / 800) ** 7


def _face_N(p, xi):
    if p == 1:
        return np.ones_like(np.asarray(xi, dtype=float))
    if p == 2:
        return (1 - 2 * xi / 9) ** 5
    return (1 - 23 * xi / 30 + 11 * xi**2 / 75 - xi**3 / 100) ** 7


def _sym(s, n):
    return s**n + s ** (-n)


def _corner_DD(p, g, s):
    if p == 1:
        return 1 - 4 * g**2
    if p == 2:
        H = (1 - 4 * g**2) ** 2 * (1 - 28 * g**2 + 208 * g**4 - 256 * g**6)
        return H * (3 * _sym(s, 1) - 4 * g)
    H = ((1 - 4 * g**2) ** 4 * (1 - 12 * g**2 + 16 * g**4) ** 2
         * (1 - 104 * g**2 + 3984 * g**4 - 68480 * g**6 + 509440 * g**8 - 1278976 * g**10 + 921600 * g**12))
    F = (7200 * (_sym(s, 3) + _sym(s, 1))
         - g * (3960 * _sym(s, 4) + 28070 * _sym(s, 2) + 26620)
         + g**2 * (13423 * _sym(s, 3) + 39483 * _sym(s, 1))
         - g**3 * (14399 * _sym(s, 2) + 28798)
         + g**4 * 5940 * _sym(s, 1))
    return H * F


def _corner_NN(p, g, s):
    if p == 1:
        return np.ones_like(np.asarray(g, dtype=float))
    if p == 2:
        return (1 - 4 * g**2) * (27 * _sym(s, 1) - 32 * g)
    H = (1 - 4 * g**2) ** 2 * (1 - 28 * g**2 + 208 * g**4 - 256 * g**6)
    F = (56250 * (_sym(s, 3) + _sym(s, 1))
         - g * (24750 * _sym(s, 4) + 194625 * _sym(s, 2) + 189750)
         + g**2 * (240310 * _sym(s, 1) + 25450 * _sym(s, 3))
         - g**3 * (71564 * _sym(s, 2) + 150040)
         + g**4 * 25344 * _sym(s, 1))
    return H * F


def _corner_DN(p, g, s):
    if p == 1:
        return np.ones_like(np.asarray(g, dtype=float))
    if p == 2:
        return (1 - 12 * g**2 + 32 * g**4) * (3 * _sym(s, 1) - 4 * g)
    H = (1 - 4 * g**2) ** 2 * (1 - 64 * g**2 + 1504 * g**4 - 16128 * g**6 + 80640 * g**8
                               - 171008 * g**10 + 122880 * g**12)
    F = (135000 * (_sym(s, 3) + _sym(s, 1))
         - 75 * g * (660 * s**4 + 7353 * s**2 + 6523 + 6418 * s**-2 + 1188 * s**-4)
         + 5 * g**2 * (35985 * s**3 + 158555 * s + 126287 / s + 54738 * s**-3)
         - g**3 * (215985 * s**2 + 520784 + 239532 * s**-2)
         + 35640 * g**4 * (3 * s + 2 / s))
    return H * F


SOLVABILITY_KINDS = ("face-D", "face-N", "corner-DD", "corner-NN", "corner-DN")


def solvability_reference(p: int, kind: str, xi: float = 0.0, gamma: float = 0.0, sigma: float = 1.0):
    """Closed-form determinant factor: G_p(xi) for faces, H_p(gamma) F_p(gamma, sigma) for corners.

    xi = c1 dx / c11 at a left face; gamma = c12 / sqrt(c11 c22) and
    sigma = sqrt((c11/dx^2) / (c22/dy^2)) at a corner.
    """
    if p not in (1, 2, 3):
        raise ValueError(f"p must be 1, 2 or 3, got {p}")
    if kind == "face-D":
        return _face_D(p, xi)
    if kind == "face-N":
        return _face_N(p, xi)
    if kind == "corner-DD":
        return _corner_DD(p, gamma, sigma)
    if kind == "corner-NN":
        return _corner_NN(p, gamma, sigma)
    if kind == "corner-DN":
        return _corner_DN(p, gamma, sigma)
    raise ValueError(f"unknown solvability kind {kind!r}")


# --- Richardson estimation -----------------------------------------------------------

@dataclass(frozen=True)
class RichardsonEstimate:
    sigma: float
    C: float
    deltas: tuple[float, float]
    error_estimates: tuple[float, float, float]


def restrict(fine: np.ndarray, factor: int = 2) -> np.ndarray:
    """Injection of a nested fine-grid field onto the coarse grid."""
    return fine[::factor, ::factor]


def richardson_rates(coarse: np.ndarray, medium: np.ndarray, fine: np.ndarray, h: float) -> RichardsonEstimate:
    """Rate and constant from solutions on grids h, h/2, h/4 (node values, no ghosts)."""
    d0 = float(np.max(np.abs(coarse - restrict(medium))))
    d1 = float(np.max(np.abs(medium - restrict(fine))))
    if d1 == 0.0 or d0 == 0.0:
        raise ValueError("degenerate Richardson data: identical solutions on nested grids")
    sigma = float(np.log2(d0 / d1))
    C = d0 / ((1 - 2.0**-sigma) * h**sigma)
    est = tuple(C * (h / 2**j) ** sigma for j in range(3))
    return RichardsonEstimate(sigma, C, (d0, d1), est)


def fitted_order(hs, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    lh, le = np.log(np.asarray(hs, float)), np.log(np.asarray(errors, float))
    return float(np.polyfit(lh, le, 1)[0])


def ceil_div(a: float, b: float) -> int:
    return int(ceil(a / b - 1e-12))
