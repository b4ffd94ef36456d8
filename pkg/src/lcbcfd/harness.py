"""Convergence studies, property suites and report files."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import analysis
from .cases import SCHEME_Q, SQUARE_KINDS, get_case, grid_for, reported_h, test1_problem, test2_problem
from .lcbc import FULL, LADDER, SolvabilityError, BoundaryOperators, assemble_corner_system, assemble_side_system, \
    build_ghost_closure
from .model import (BOTTOM, DIRICHLET, LEFT, NEUMANN, RIGHT, SIDES, TOP, X_SYM, Y_SYM, T_SYM, BoundarySpec,
                    CoefficientField, ExtendedGrid, GridSpec, PdeProblem, laplacian, manufactured_data, zero_field)
from .steppers import Discretization, InstabilityError, run_scheme

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("case", "d", "q", "scheme", "h", "dt", "steps", "max_error", "fitted_order", "pass")


# --- convergence ---------------------------------------------------------------------

@dataclass
class ConvergenceRecord:
    level: int
    h: float
    dt: float
    steps: int
    max_error: float
    runtime: float
    kappa_max: float
    trimmed: bool = False


@dataclass
class ConvergenceReport:
    case: str
    d: int
    scheme: str
    source: str
    records: list = field(default_factory=list)
    fitted_order: float = float("nan")
    tol: float = 0.4
    passed: bool = False
    diagnostics: str = ""

    @property
    def q(self) -> int:
        return SCHEME_Q[self.scheme]

    def summary(self) -> str:
        errs = " ".join(f"{r.max_error:.3e}" for r in self.records if not r.trimmed)
        return (f"{self.case} d={self.d} {self.scheme}: order {self.fitted_order:.2f} "
                f"(target {self.d}+-{self.tol}) errors [{errs}] {'PASS' if self.passed else 'FAIL'}"
                + (f" ({self.diagnostics})" if self.diagnostics else ""))


def run_case(case_name: str, scheme: str, d: int, level: int, cfl: float = 0.9, overrides: dict | None = None,
             mode: str = LADDER) -> tuple[Discretization, object]:
    case = get_case(case_name)
    p = d // 2
    spec = grid_for(case, level, p)
    problem = case.build(scheme, d, **(overrides or {}))
    disc = Discretization(problem, spec, d, mode=mode)
    return disc, run_scheme(disc, scheme, cfl=cfl)


def run_convergence_study(case_name: str, d: int, scheme: str, levels=None, tol: float = 0.4, cfl: float = 0.9,
                          overrides: dict | None = None, budget: float = 600.0) -> ConvergenceReport:
    """Max error at the final time over nested grids and its least-squares order.

    A level is skipped (and marked trimmed) if its runtime, projected from the
    previous level, exceeds `budget` seconds.
    """
    case = get_case(case_name)
    if scheme not in case.schemes:
        raise ValueError(f"case {case_name} does not support scheme {scheme}")
    levels = tuple(case.levels if levels is None else levels)
    rep = ConvergenceReport(case_name, d, scheme, case.source, tol=tol)
    last = None
    for lev in levels:
        spec = grid_for(case, lev, d // 2)
        if last is not None and scheme != "elliptic":
            # points x4 and steps x2 (hyperbolic, BDF) or x4 (FE) per halving
            growth = 4 * (4 if scheme == "fe" else 2) * (lev - last.level)
            if last.runtime * growth > budget:
                rep.records.append(ConvergenceRecord(lev, reported_h(case, spec), float("nan"), 0,
                                                     float("nan"), 0.0, float("nan"), trimmed=True))
                continue
        t0 = time.perf_counter()
        try:
            disc, res = run_case(case_name, scheme, d, lev, cfl, overrides)
            err = disc.max_error(res.U, res.t)
        except (InstabilityError, SolvabilityError, RuntimeError, ValueError) as exc:
            rep.diagnostics = f"level {lev}: {exc}"
            rep.passed = False
            return rep
        dt = res.plan.dt if res.plan else 0.0
        steps = res.plan.n_steps if res.plan else 0
        last = ConvergenceRecord(lev, reported_h(case, spec), dt, steps, err, time.perf_counter() - t0,
                                 disc.closure.kappa_max)
        rep.records.append(last)
        log.info("%s d=%d %s level %d: err %.3e (%.1fs)", case_name, d, scheme, lev, err, last.runtime)
    done = [r for r in rep.records if not r.trimmed]
    if len(done) >= 2 and all(np.isfinite(r.max_error) and r.max_error > 0 for r in done):
        rep.fitted_order = analysis.fitted_order([r.h for r in done], [r.max_error for r in done])
        rep.passed = abs(rep.fitted_order - d) <= tol
    else:
        rep.diagnostics = rep.diagnostics or "fewer than two usable resolutions"
    return rep


@dataclass
class RichardsonReport:
    d: int
    levels: tuple
    estimates: dict  # t -> RichardsonEstimate
    tol: float
    passed: bool
    runtimes: list


def run_richardson_study(d: int, levels=(1, 2, 3), times=(3.0, 6.0), tol: float | None = None,
                         cfl: float = 0.9) -> RichardsonReport:
    """Self-convergence rates of the annular pulse from three nested grids."""
    case = get_case("pulse")
    if len(levels) != 3:
        raise ValueError("Richardson estimation needs exactly three nested levels")
    tol = tol if tol is not None else (0.5 if d < 6 else 0.7)
    sols = {t: [] for t in times}
    runtimes = []
    for lev in levels:
        t0 = time.perf_counter()
        spec = grid_for(case, lev, d // 2)
        disc = Discretization(case.build("me", d, T=max(times)), spec, d)
        res = run_scheme(disc, "me", cfl=cfl, checkpoints=tuple(times))
        for t in times:
            sols[t].append(disc.domain_values(res.snapshots[t]).copy())
        runtimes.append(time.perf_counter() - t0)
    h0 = reported_h(case, grid_for(case, levels[0], d // 2))
    est = {t: analysis.richardson_rates(*sols[t], h=h0) for t in times}
    passed = all(abs(e.sigma - d) <= tol for e in est.values())
    return RichardsonReport(d, tuple(levels), est, tol, passed, runtimes)


# --- property suites -----------------------------------------------------------------

@dataclass
class PropertyResult:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


def _homogeneous_problem(kinds: dict, coeffs: CoefficientField | None = None, q: int = 0) -> PdeProblem:
    coeffs = coeffs or laplacian()
    boundary = {s: BoundarySpec(s, kinds[s]) for s in SIDES}
    return PdeProblem(q=q, coeffs=coeffs, f=zero_field, boundary=boundary,
                      u0=zero_field if q else None, u1=zero_field if q == 2 else None)


KIND_COMBOS = {
    "DDDD": {LEFT: DIRICHLET, RIGHT: DIRICHLET, BOTTOM: DIRICHLET, TOP: DIRICHLET},
    "NNNN": {LEFT: NEUMANN, RIGHT: NEUMANN, BOTTOM: NEUMANN, TOP: NEUMANN},
    "DNND": {LEFT: DIRICHLET, RIGHT: NEUMANN, BOTTOM: NEUMANN, TOP: DIRICHLET},
}


def symmetry_defect(p: int, kinds: dict, n: int | None = None, seed: int = 0) -> float:
    """Max deviation of ghost values from the odd/even reflection rule.

    Homogeneous data, Q = Laplacian; the random field is projected onto the
    constraint set by zeroing Dirichlet boundary values.
    """
    n = n or 8 * p
    spec = GridSpec(n, n, p)
    cl = build_ghost_closure(_homogeneous_problem(kinds), spec)
    ext = ExtendedGrid(spec)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal(ext.shape)
    W[ext.ghost_mask()] = 0.0
    flat = W.reshape(-1)
    for idx, _, _ in cl.dirichlet.values():
        flat[idx] = 0.0
    vals = cl.Gu @ flat
    flat[cl.ghost_flat] = vals[cl.ghost_flat]
    sg = {s: (-1.0 if kinds[s] == DIRICHLET else 1.0) for s in SIDES}
    i = np.arange(-p, n + p + 1)
    ii = np.where(i < 0, -i, np.where(i > n, 2 * n - i, i))
    si = np.where(i < 0, sg[LEFT], np.where(i > n, sg[RIGHT], 1.0))
    sj = np.where(i < 0, sg[BOTTOM], np.where(i > n, sg[TOP], 1.0))
    mirror = W[np.ix_(ii + p, ii + p)] * si[:, None] * sj[None, :]
    return float(np.max(np.abs(W - mirror)))


def symmetry_suite(seed: int = 0) -> list[PropertyResult]:
    out = []
    for name, kinds in KIND_COMBOS.items():
        for p in (1, 2, 3):
            v = symmetry_defect(p, kinds, seed=seed)
            out.append(PropertyResult("symmetry", f"{name} d={2 * p}", v, 1e-12, v <= 1e-12))
    return out


def reproduction_errors(p: int, kinds: dict, n_trials: int = 100, seed: int = 0, n: int | None = None) -> dict:
    """Per system: (max ghost error / max|U| over trials, kappa) for random degree-2p tensor polynomials."""
    n = n or 8 * p
    spec = GridSpec(n, n, p)
    cl = build_ghost_closure(_homogeneous_problem(kinds), spec)
    ext = ExtendedGrid(spec)
    rng = np.random.default_rng(seed)
    ny_ext = ext.shape[1]
    owned = {}
    for s in cl.systems:
        key = s.where if s.where not in SIDES else s.where
        idx = [(s.center[0] + gm + p) * ny_ext + (s.center[1] + gn + p) for gm, gn in s.ghosts]
        owned.setdefault(key, ([], []))
        owned[key][0].extend(idx)
        owned[key][1].append(s.kappa)
    worst = {k: 0.0 for k in owned}
    for _ in range(n_trials):
        C = rng.standard_normal((2 * p + 1, 2 * p + 1))

        def poly(x, y, C=C):
            return np.polynomial.chebyshev.chebval2d(2 * np.asarray(x) - 1, 2 * np.asarray(y) - 1, C)

        U = poly(ext.X, ext.Y)
        V = U.copy()
        V[ext.ghost_mask()] = 0.0
        r = cl.data.tables_from_field(poly)
        flat = V.reshape(-1)
        vals = cl.Gu @ flat + cl.Gr @ r
        flat[cl.ghost_flat] = vals[cl.ghost_flat]
        scale = np.max(np.abs(U))
        for k, (idx, _) in owned.items():
            worst[k] = max(worst[k], float(np.max(np.abs(V.reshape(-1)[idx] - U.reshape(-1)[idx]))) / scale)
    return {k: (worst[k], max(owned[k][1])) for k in owned}


def reproduction_suite(n_trials: int = 100, seed: int = 0) -> list[PropertyResult]:
    out = []
    for name, kinds in KIND_COMBOS.items():
        for p in (1, 2, 3):
            for where, (err, kappa) in reproduction_errors(p, kinds, n_trials, seed).items():
                thr = kappa * 1e-13
                out.append(PropertyResult("reproduction", f"{name} d={2 * p} {where}", err, thr, err <= thr,
                                          f"kappa {kappa:.3g}"))
    return out


def equivalence_defect(problem: PdeProblem, spec: GridSpec, t: float = 0.3, seed: int = 0) -> tuple[float, float]:
    """(max |direct - stencil| over ghosts, max |U|) for a random field with the problem's data."""
    cl = build_ghost_closure(problem, spec)
    ext = ExtendedGrid(spec)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal(ext.shape)
    r = cl.data.tables(t)
    A = cl.fill(U.copy(), t, tables=r)
    B = cl.fill_direct(U.copy(), t, tables=r)
    g = ext.ghost_mask()
    return float(np.max(np.abs(A[g] - B[g]))), float(max(np.max(np.abs(A)), np.max(np.abs(B))))


def equivalence_suite(n: int = 20) -> list[PropertyResult]:
    out = []
    for label, build in (("test1", test1_problem), ("test2", test2_problem)):
        for scheme in ("elliptic", "me"):
            for p in (1, 2, 3):
                dv, um = equivalence_defect(build(scheme), GridSpec(n, n, p))
                thr = 1e-10 * (1 + um)
                out.append(PropertyResult("equivalence", f"{label} q={SCHEME_Q[scheme]} d={2 * p}", dv, thr, dv <= thr))
    return out


def stability_suite(n_sample: int = 129) -> list[PropertyResult]:
    out = []
    lam = np.linspace(0.0, 1.0, 41)
    for p in (1, 2, 3):
        worst = 0.0
        recip = 0.0
        for lx in lam:
            for ly in lam:
                if lx**2 + ly**2 > 0.99:
                    continue
                sp_ = analysis.stability_amplification(p, lx, ly, n_sample)
                worst = max(worst, sp_.a_max)
                recip = max(recip, sp_.reciprocal_defect)
        out.append(PropertyResult("stability", f"p={p} z<=0.99 A_max", worst, 1 + 1e-10, worst <= 1 + 1e-10))
        out.append(PropertyResult("stability", f"p={p} A+ A- = 1", recip, 1e-12, recip <= 1e-12))
    for p in (2, 3):
        a = analysis.stability_amplification(p, 0.75, 0.75, n_sample).a_max
        out.append(PropertyResult("stability", f"p={p} (0.75,0.75) unstable", a, 1.0, a > 1.0))
    out.append(b2_bound_result(n_sample))
    return out


def b2_bound_result(n_sample: int = 129, n_lam: int = 41) -> PropertyResult:
    """|b2| < 1 at every sampled nonzero mode when z < 1 and both ratios are positive.

    b2 = 1 at the zero mode, and along a whole axis when one ratio vanishes.
    """
    xi = np.linspace(-np.pi, np.pi, n_sample)
    XI, ETA = np.meshgrid(xi, xi, indexing="ij")
    nonzero = (XI != 0) | (ETA != 0)
    worst, at_zero = 0.0, 0.0
    for lx in np.linspace(0, 1, n_lam):
        for ly in np.linspace(0, 1, n_lam):
            if lx**2 + ly**2 >= 1 or lx == 0 or ly == 0:
                continue
            b = np.abs(analysis.wave_symbol(2, lx, ly, XI, ETA))
            worst = max(worst, float(np.max(b[nonzero])))
            at_zero = max(at_zero, float(np.max(b[~nonzero])))
    ok = worst < 1.0 and at_zero <= 1.0 + 1e-15
    return PropertyResult("stability", "|b2|<1 for z<1 (nonzero modes)", worst, 1.0, ok, f"zero mode |b2| = {at_zero}")


# --- solvability determinants --------------------------------------------------------

def face_determinant(p: int, kind: str, xi: float, n: int | None = None) -> float:
    """det of the unscaled left-face matrix for c11 = c22 = 1, c1 = xi/dx, full accuracy."""
    n = n or 4 * p
    spec = GridSpec(n, n, p)
    coeffs = CoefficientField.constants(c11=1.0, c22=1.0, c1=xi / spec.dx)
    ops = BoundaryOperators(_homogeneous_problem({s: kind for s in SIDES}, coeffs), spec, FULL)
    return float(np.linalg.det(assemble_side_system(ops, LEFT, n // 2, factor=False).A))


def corner_determinant(p: int, kinds: str, gamma: float, c22: float = 1.0, n: int | None = None) -> tuple[float, float]:
    """(det, sigma) of the unscaled bottom-left corner matrix with c11 = 1, c12 = gamma sqrt(c22)."""
    n = n or 4 * p
    spec = GridSpec(n, n, p)
    coeffs = CoefficientField.constants(c11=1.0, c22=c22, c12=gamma * np.sqrt(c22))
    km = {LEFT: kinds[0], RIGHT: kinds[0], BOTTOM: kinds[1], TOP: kinds[1]}
    ops = BoundaryOperators(_homogeneous_problem(km, coeffs), spec, FULL)
    det = float(np.linalg.det(assemble_corner_system(ops, "BL", factor=False).A))
    sigma = float(np.sqrt((1.0 / spec.dx**2) / (c22 / spec.dy**2)))
    return det, sigma


def _ratio_spread(vals) -> float:
    v = np.asarray(vals, dtype=float)
    return float(np.ptp(v) / np.max(np.abs(v)))


def solvability_suite() -> list[PropertyResult]:
    out = []
    xis = (-0.7, -0.3, 0.2, 0.5, 0.9)
    for kind, tag in ((DIRICHLET, "face-D"), (NEUMANN, "face-N")):
        for p in (1, 2, 3):
            rat = [face_determinant(p, kind, xi) / analysis.solvability_reference(p, tag, xi=xi) for xi in xis]
            s = _ratio_spread(rat)
            out.append(PropertyResult("solvability", f"{tag} p={p} ratio spread", s, 1e-6, s <= 1e-6))
    gammas = (-0.2, -0.1, 0.05, 0.15, 0.2)
    for p in (1, 2):
        for c22 in (0.5, 1.0, 2.0):
            rat = []
            for g in gammas:
                det, sig = corner_determinant(p, "DD", g, c22)
                rat.append(det / analysis.solvability_reference(p, "corner-DD", gamma=g, sigma=sig))
            s = _ratio_spread(rat)
            out.append(PropertyResult("solvability", f"corner-DD p={p} c22={c22} ratio spread", s, 1e-6, s <= 1e-6))
    scale = abs(face_determinant(1, DIRICHLET, 0.0))
    v = abs(face_determinant(1, DIRICHLET, 2.0)) / scale
    out.append(PropertyResult("solvability", "face-D p=1 singular at xi=2", v, 1e-8, v < 1e-8))
    scale = abs(corner_determinant(1, "DD", 0.0)[0])
    v = abs(corner_determinant(1, "DD", 0.5)[0]) / scale
    out.append(PropertyResult("solvability", "corner-DD p=1 singular at gamma=1/2", v, 1e-8, v < 1e-8))
    return out


# --- elimination, conditioning and long runs -----------------------------------------

def elimination_defect(problem: PdeProblem, spec: GridSpec, n_fields: int = 20, seed: int = 0,
                       t: float = 0.3) -> float:
    """Relative gap between the eliminated operator A u + Mq b(t) and fill-then-apply Q on random fields."""
    from .steppers import ImplicitOperator
    disc = Discretization(problem, spec)
    imp = ImplicitOperator(disc)
    rng = np.random.default_rng(seed)
    offset = imp.rhs_part(t)
    worst = 0.0
    for _ in range(n_fields):
        U = rng.standard_normal(disc.ext.shape)
        U = disc.fill(U, t)
        u = U.ravel()[disc.unknowns].copy()
        direct = disc.apply_q(U).ravel()[disc.unknowns]
        elim = imp.A @ u + offset
        worst = max(worst, float(np.max(np.abs(direct - elim)) / np.max(np.abs(direct))))
    return worst


def elimination_suite(n: int = 20, n_fields: int = 20) -> list[PropertyResult]:
    out = []
    for label, build in (("test1", test1_problem), ("test2", test2_problem)):
        for p in (1, 2, 3):
            v = elimination_defect(build("bdf"), GridSpec(n, n, p), n_fields)
            out.append(PropertyResult("elimination", f"{label} d={2 * p}", v, 1e-12, v <= 1e-12))
    return out


def conditioning_suite(levels=(0, 1, 2, 3)) -> list[PropertyResult]:
    out = []
    for p in (1, 2, 3):
        kap = []
        for lev in levels:
            n = 10 * 2**lev
            kap.append(build_ghost_closure(test1_problem("elliptic"), GridSpec(n, n, p)).kappa_max)
        ratios = [max(a / b, b / a) for a, b in zip(kap[:-1], kap[1:])]
        worst = max(ratios)
        out.append(PropertyResult("conditioning", f"d={2 * p} kappa_max change under halving", worst, 3.0,
                                  worst < 3.0, "kappa " + " ".join(f"{k:.3g}" for k in kap)))
    return out


def standing_mode_problem(T: float = 1.0) -> PdeProblem:
    """u = sin(pi x) cos(pi y) cos(sqrt(2) pi t): homogeneous Test-1 boundary data, f = 0."""
    u = sp.sin(sp.pi * X_SYM) * sp.cos(sp.pi * Y_SYM) * sp.cos(sp.sqrt(2) * sp.pi * T_SYM)
    prob = manufactured_data(u, laplacian(), 2, SQUARE_KINDS, T=T, name="standing")
    prob.f = zero_field
    return prob


def long_run_growth(d: int, n_steps: int = 2000, n: int = 20, cfl: float = 0.9) -> float:
    """max_t ||U||_inf / ||U^0||_inf for the ME scheme on the standing mode."""
    prob = standing_mode_problem()
    disc = Discretization(prob, GridSpec(n, n, d // 2), d)
    u0 = np.max(np.abs(disc.domain_values(disc.sample_domain(prob.u0))))
    res = run_scheme(disc, "me", cfl=cfl, n_steps=n_steps, monitor_every=1)
    return max(m[2] for m in res.max_norms) / u0


def fe_blowup(cfl: float = 1.5, n_steps: int = 2000, n: int = 20) -> tuple[float, int]:
    """(max norm reached, step) for the d=2 forward-Euler Test-1 run at the given cfl."""
    prob = test1_problem("fe", T=1.0)
    disc = Discretization(prob, GridSpec(n, n, 1), 2)
    res = run_scheme(disc, "fe", cfl=cfl, n_steps=n_steps, monitor_every=1)
    for step, _, v in res.max_norms:
        if not np.isfinite(v) or v > 1e3:
            return v, step
    return res.max_norms[-1][2], n_steps


def long_run_suite() -> list[PropertyResult]:
    out = []
    for d in (4, 6):
        g = long_run_growth(d)
        out.append(PropertyResult("long-run", f"ME d={d} cfl=0.9 2000 steps growth", g, 1.05, g <= 1.05))
    v, step = fe_blowup()
    out.append(PropertyResult("long-run", "FE d=2 cfl=1.5 diverges", v, 1e3, (not np.isfinite(v)) or v > 1e3,
                              f"step {step}"))
    return out


SUITES = {
    "symmetry": symmetry_suite,
    "reproduction": reproduction_suite,
    "equivalence": equivalence_suite,
    "stability": stability_suite,
    "solvability": solvability_suite,
    "elimination": elimination_suite,
    "conditioning": conditioning_suite,
    "long-run": long_run_suite,
}


def run_property_suite(name: str, **kw) -> list[PropertyResult]:
    if name == "all":
        return [r for s in SUITES.values() for r in s()]
    try:
        fn = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; known: {', '.join(SUITES)}") from None
    return fn(**kw)


# --- reports -------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.16e" % v
    return str(v)


def report_rows(reports: list[ConvergenceReport]) -> list[list[str]]:
    rows = []
    for rep in reports:
        for r in rep.records:
            ok = "trimmed" if r.trimmed else ("pass" if rep.passed else "fail")
            rows.append([rep.case, str(rep.d), str(rep.q), rep.scheme, _fmt(r.h), _fmt(r.dt), str(r.steps),
                         _fmt(r.max_error), _fmt(rep.fitted_order), ok])
    return rows


def write_report_csv(reports: list[ConvergenceReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        sources = sorted({f"{r.case}={r.source}" for r in reports})
        if sources:
            fh.write("# exact-solution source: " + " ".join(sources) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(report_rows(reports))


def write_property_csv(results: list[PropertyResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("suite", "name", "value", "threshold", "pass", "detail"))
        for r in results:
            w.writerow((r.suite, r.name, _fmt(r.value), _fmt(r.threshold), "pass" if r.passed else "fail", r.detail))
