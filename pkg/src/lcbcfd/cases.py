"""Named test problems and their grid families."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .analysis import ScatteringSeries
from .model import (BOTTOM, DIRICHLET, LEFT, NEUMANN, R_SYM, RIGHT, S_SYM, T_SYM, TOP, X_SYM, Y_SYM,
                    BoundarySpec, CoefficientField, GridSpec, PdeProblem, PhysicalOperator, SymbolicField,
                    annulus_mapping, laplacian, manufactured_data, mapped_coefficients, wavy_channel_mapping,
                    zero_field)

SPATIAL = sp.cos(2 * sp.pi * X_SYM) * sp.cos(sp.sqrt(2) * sp.pi * Y_SYM)
SCHEME_Q = {"elliptic": 0, "fe": 1, "bdf": 1, "me": 2}


def time_factor(scheme: str):
    """phi(t) of the manufactured solution; FE is exact in time for linear phi."""
    if scheme == "elliptic":
        return sp.Integer(1)
    if scheme == "fe":
        return T_SYM + 1
    return sp.cos(sp.pi * T_SYM)


def test2_coefficients() -> CoefficientField:
    r, s = R_SYM, S_SYM
    return CoefficientField.from_exprs(dict(
        c11=sp.exp(r) / (2 + r + s), c12=r * s * sp.exp(-r - s - 1), c22=sp.exp(r + s) / (2 + s),
        c1=1 + r * s, c2=1 + r / (1 + s), c0=2 + r - s))


SQUARE_KINDS = {LEFT: DIRICHLET, RIGHT: DIRICHLET, BOTTOM: NEUMANN, TOP: NEUMANN}
ANNULUS_KINDS = {LEFT: DIRICHLET, BOTTOM: DIRICHLET, RIGHT: NEUMANN, TOP: NEUMANN}


def test1_problem(scheme: str, T: float = 1.0) -> PdeProblem:
    return manufactured_data(SPATIAL * time_factor(scheme), laplacian(), SCHEME_Q[scheme], SQUARE_KINDS,
                             T=T, name="test1")


def test2_problem(scheme: str, T: float = 1.0) -> PdeProblem:
    return manufactured_data(SPATIAL * time_factor(scheme), test2_coefficients(), SCHEME_Q[scheme],
                             SQUARE_KINDS, T=T, name="test2")


def test3_problem(scheme: str, T: float = 1.0) -> PdeProblem:
    mp = annulus_mapping(1, 2, sp.pi / 2)
    coeffs = mapped_coefficients(mp, PhysicalOperator())
    return manufactured_data(SPATIAL * time_factor(scheme), coeffs, SCHEME_Q[scheme], ANNULUS_KINDS,
                             mapping=mp, T=T, name="test3")


class ScatteringField:
    """Scattered field in annulus coordinates rho = 1 + r, theta = pi s."""

    def __init__(self, series: ScatteringSeries):
        self.series = series
        self._cache: list = []

    def _spatial(self, r, s):
        for cr, cs, val in self._cache:
            if cr is r and cs is s:
                return val
        rr = np.asarray(r, dtype=float)
        val = self.series.spatial(1.0 + rr, np.pi * np.asarray(s, dtype=float))
        if isinstance(r, np.ndarray):
            self._cache = ([(r, s, val)] + self._cache)[:6]
        return val

    def __call__(self, r, s, t: float = 0.0, m: int = 0):
        k, c = self.series.k, self.series.c
        fac = (-1j * k * c) ** m * np.exp(-1j * k * c * t)
        return -np.real(fac * self._spatial(r, s))


def scattering_problem(k: float = 10.0, T: float = 1.0) -> PdeProblem:
    mp = annulus_mapping(1, 2, sp.pi)
    coeffs = mapped_coefficients(mp, PhysicalOperator())
    field_ = ScatteringField(ScatteringSeries(k))
    inner = SymbolicField(-sp.cos(k * (mp.x_expr - T_SYM)))
    boundary = {LEFT: BoundarySpec(LEFT, DIRICHLET, inner), RIGHT: BoundarySpec(RIGHT, DIRICHLET, field_),
                BOTTOM: BoundarySpec(BOTTOM, NEUMANN), TOP: BoundarySpec(TOP, NEUMANN)}
    return PdeProblem(q=2, coeffs=coeffs, f=zero_field, boundary=boundary,
                      u0=lambda x, y, t=0.0, m=0: field_(x, y, 0.0, m),
                      u1=lambda x, y, t=0.0, m=0: field_(x, y, 0.0, m + 1),
                      T=T, exact=field_, name="scattering", mapping=mp, meta={"k": k})


def heat_problem(D: float = 0.2, v=(0.5, 0.3), gamma: float = 1.0, sigma: float = 6.0, amp: float = 0.1,
                 T: float = 0.5) -> PdeProblem:
    mp = wavy_channel_mapping(amp=sp.nsimplify(amp))
    coeffs = mapped_coefficients(mp, PhysicalOperator(D, tuple(v), gamma))
    den = 1 + 4 * sigma * D * T_SYM
    ue = sp.exp(gamma * T_SYM) / den * sp.exp(-sigma * ((X_SYM - v[0] * T_SYM) ** 2 + (Y_SYM - v[1] * T_SYM) ** 2) / den)
    U = SymbolicField(mp.compose(ue))
    boundary = {side: BoundarySpec(side, DIRICHLET, U) for side in (LEFT, RIGHT, BOTTOM, TOP)}
    return PdeProblem(q=1, coeffs=coeffs, f=zero_field, boundary=boundary,
                      u0=lambda x, y, t=0.0, m=0: U(x, y, 0.0, m), T=T, exact=U, name="heat", mapping=mp,
                      meta={"D": D, "v": tuple(v), "gamma": gamma, "sigma": sigma, "amp": amp})


def pulse_problem(d: int, T: float = 6.0, beta: float = 50.0, t0: float = 1.0, omega: float = 6 * np.pi) -> PdeProblem:
    mp = annulus_mapping(1, 2, sp.pi / 2)
    coeffs = mapped_coefficients(mp, PhysicalOperator())
    z = d // 2
    g = (sp.exp(-beta * (T_SYM - t0) ** 2) * sp.sin(sp.nsimplify(omega) * T_SYM)
         * (sp.cos(2 * sp.pi * (Y_SYM - sp.Rational(3, 2))) / 2 - sp.Rational(1, 2)) ** (z + 1))
    G = SymbolicField(mp.compose(g))
    boundary = {LEFT: BoundarySpec(LEFT, NEUMANN), RIGHT: BoundarySpec(RIGHT, NEUMANN),
                BOTTOM: BoundarySpec(BOTTOM, NEUMANN), TOP: BoundarySpec(TOP, DIRICHLET, G)}
    return PdeProblem(q=2, coeffs=coeffs, f=zero_field, boundary=boundary, u0=zero_field, u1=zero_field,
                      T=T, exact=None, name="pulse", mapping=mp, meta={"beta": beta, "t0": t0, "omega": omega})


@dataclass(frozen=True)
class CaseInfo:
    name: str
    build: Callable  # (scheme, d, **overrides) -> PdeProblem
    schemes: tuple
    base: tuple  # (nx, ny) at j = 0
    h_axis: int  # which spacing is reported as h (0: dx, 1: dy)
    source: str  # manufactured | closed-form | richardson
    levels: tuple = (0, 1, 2, 3)
    options: dict = field(default_factory=dict)


CASES = {
    "test1": CaseInfo("test1", lambda scheme, d, **kw: test1_problem(scheme, **kw),
                      ("elliptic", "fe", "bdf", "me"), (10, 10), 0, "manufactured"),
    "test2": CaseInfo("test2", lambda scheme, d, **kw: test2_problem(scheme, **kw),
                      ("elliptic", "fe", "bdf", "me"), (10, 10), 0, "manufactured"),
    "test3": CaseInfo("test3", lambda scheme, d, **kw: test3_problem(scheme, **kw),
                      ("elliptic", "fe", "bdf", "me"), (10, 20), 1, "manufactured"),
    "scattering": CaseInfo("scattering", lambda scheme, d, **kw: scattering_problem(**kw),
                           ("me",), (20, 100), 1, "closed-form"),
    "heat": CaseInfo("heat", lambda scheme, d, **kw: heat_problem(**kw),
                     ("bdf",), (40, 40), 0, "closed-form"),
    "pulse": CaseInfo("pulse", lambda scheme, d, **kw: pulse_problem(d, **kw),
                      ("me",), (40, 80), 1, "richardson", levels=(1, 2, 3)),
}


def get_case(name: str) -> CaseInfo:
    try:
        return CASES[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; known: {', '.join(CASES)}") from None


def grid_for(case: CaseInfo, level: int, p: int) -> GridSpec:
    nx, ny = case.base
    return GridSpec(nx * 2**level, ny * 2**level, p)


def reported_h(case: CaseInfo, spec: GridSpec) -> float:
    return spec.dx if case.h_axis == 0 else spec.dy
