"""Command-line front end: `lcbc converge --case test1 --order 4` etc."""
from __future__ import annotations

import csv
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import analysis, harness
from .cases import CASES, SCHEME_Q, get_case, grid_for
from .lcbc import build_ghost_closure
from .steppers import Discretization, run_scheme

log = logging.getLogger("lcbcfd")

OUTPUT_ENV = "LCBC_OUTPUT_DIR"
COMMANDS = ("converge", "solve", "stability-map", "cond-report", "symmetry-check", "property-suite")

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "case": {"enum": list(CASES)},
        "order": {"type": "integer", "enum": [2, 4, 6]},
        "q": {"type": "integer", "enum": [0, 1, 2]},
        "scheme": {"enum": ["elliptic", "fe", "bdf", "me"]},
        "cfl": {"type": "number", "exclusiveMinimum": 0},
        "resolutions": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "level": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
        "output": {"type": "string"},
        "jobs": {"type": "integer", "minimum": 1},
        "suite": {"enum": ["all", *harness.SUITES]},
        "dump_fields": {"type": "boolean"},
        "monitor": {"type": "integer", "minimum": 0},
        "overrides": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "D": {"type": "number", "exclusiveMinimum": 0},
                "v": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "gamma": {"type": "number"},
                "amp": {"type": "number"},
                "T": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

# which overrides each case builder accepts
CASE_OVERRIDES = {
    "test1": {"T"}, "test2": {"T"}, "test3": {"T"}, "pulse": {"T"},
    "scattering": {"k", "T"},
    "heat": {"sigma", "D", "v", "gamma", "amp", "T"},
}


class ConfigError(click.ClickException):
    pass


@dataclass
class RunConfig:
    command: str
    case: str = "test1"
    order: int | None = None
    q: int | None = None
    scheme: str | None = None
    cfl: float = 0.9
    resolutions: tuple | None = None
    level: int = 0
    seed: int = 0
    output: str = ""
    jobs: int = 1
    suite: str = "all"
    dump_fields: bool = False
    monitor: int = 0
    overrides: dict = field(default_factory=dict)

    @property
    def orders(self) -> tuple:
        return (self.order,) if self.order else (2, 4, 6)

    def schemes(self) -> tuple:
        case = get_case(self.case)
        if self.scheme:
            if self.scheme not in case.schemes:
                raise ConfigError(f"case {self.case} has no scheme {self.scheme}")
            return (self.scheme,)
        out = tuple(s for s in case.schemes if self.q is None or SCHEME_Q[s] == self.q)
        if not out:
            raise ConfigError(f"case {self.case} has no scheme with q={self.q}")
        return out


def validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        key = ".".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"config key {key}: {exc.message}") from None


def parse_config(command: str, path: str | None, flags: dict) -> RunConfig:
    """Merge a JSON file with command-line flags (flags win) and validate."""
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        validate(raw)
        if raw.get("command", command) != command:
            raise ConfigError(f"config is for command {raw['command']!r}, not {command!r}")
    for key, val in flags.items():
        if val is None or (isinstance(val, tuple) and not val):
            continue
        if key in raw and raw[key] != val:
            click.echo(f"warning: flag --{key} overrides config value {raw[key]!r} with {val!r}", err=True)
        raw[key] = list(val) if isinstance(val, tuple) else val
    raw["command"] = command
    validate(raw)
    cfg = RunConfig(**{k: v for k, v in raw.items()})
    if cfg.resolutions is not None:
        cfg.resolutions = tuple(cfg.resolutions)
    if cfg.case == "pulse" and cfg.resolutions is not None and len(cfg.resolutions) != 3:
        raise ConfigError("config key resolutions: Richardson estimation needs exactly three levels")
    bad = set(cfg.overrides) - CASE_OVERRIDES[cfg.case]
    if bad:
        raise ConfigError(f"config key overrides: case {cfg.case} does not accept {', '.join(sorted(bad))}")
    if "v" in cfg.overrides:
        cfg.overrides["v"] = tuple(cfg.overrides["v"])
    cfg.output = cfg.output or os.environ.get(OUTPUT_ENV, "lcbc-out")
    return cfg


def preflight(outdir: str) -> Path:
    """Fail before any computation if the output directory is not writable."""
    path = Path(outdir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as exc:
        raise click.FileError(str(path), hint=f"output directory not writable: {exc}") from None
    return path


def write_field(path: Path, disc: Discretization, U: np.ndarray, t: float) -> None:
    spec = disc.ext.spec
    vals = disc.domain_values(U)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"{spec.nx} {spec.ny} {spec.p} {2 * spec.p} {t!r}\n")
        fh.writelines("%.16e\n" % v for v in vals.ravel())


def _csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _convergence_task(args):
    case, d, scheme, levels, cfl, overrides = args
    return harness.run_convergence_study(case, d, scheme, levels, cfl=cfl, overrides=overrides)


def _richardson_task(args):
    d, levels, cfl = args
    return harness.run_richardson_study(d, levels, cfl=cfl)


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --- commands ------------------------------------------------------------------------

def do_converge(cfg: RunConfig, out: Path) -> bool:
    if cfg.case == "pulse":
        levels = cfg.resolutions or get_case("pulse").levels
        reps = _map(_richardson_task, [(d, levels, cfg.cfl) for d in cfg.orders], cfg.jobs)
        rows = []
        for rep in reps:
            for t, est in rep.estimates.items():
                rows.append([str(rep.d), "%.16e" % t, "%.16e" % est.sigma, *("%.16e" % e for e in est.error_estimates),
                             "%.16e" % rep.tol, "pass" if rep.passed else "fail"])
                click.echo(f"pulse d={rep.d} t={t:g}: sigma {est.sigma:.3f} (target {rep.d}+-{rep.tol}) "
                           f"{'PASS' if rep.passed else 'FAIL'}")
        _csv(out / "richardson.csv", ("d", "t", "sigma", "e_coarse", "e_medium", "e_fine", "tol", "pass"), rows)
        harness.write_report_csv([], out / "report.csv")
        return all(r.passed for r in reps)
    tasks = [(cfg.case, d, s, cfg.resolutions, cfg.cfl, cfg.overrides) for d in cfg.orders for s in cfg.schemes()]
    reps = _map(_convergence_task, tasks, cfg.jobs)
    for rep in reps:
        click.echo(rep.summary())
    harness.write_report_csv(reps, out / "report.csv")
    return all(r.passed for r in reps)


def do_solve(cfg: RunConfig, out: Path) -> bool:
    case = get_case(cfg.case)
    d = cfg.order or 4
    scheme = cfg.schemes()[0]
    disc = Discretization(case.build(scheme, d, **cfg.overrides), grid_for(case, cfg.level, d // 2), d)
    res = run_scheme(disc, scheme, cfl=cfg.cfl, monitor_every=cfg.monitor)
    for step, t, m in res.max_norms:
        click.echo(f"{step} {t:.16e} {m:.16e}")
    ok = bool(np.all(np.isfinite(disc.domain_values(res.U))))
    if disc.problem.exact is not None:
        click.echo(f"max error {disc.max_error(res.U, res.t):.6e} at t={res.t:g}")
    if cfg.dump_fields:
        write_field(out / f"{cfg.case}_{scheme}_d{d}_j{cfg.level}.txt", disc, res.U, res.t)
    return ok


def do_stability_map(cfg: RunConfig, out: Path) -> bool:
    ok = True
    for d in cfg.orders:
        pts = analysis.stability_map(d // 2)
        rows = [["%.16e" % s.lam_x, "%.16e" % s.lam_y, "%.16e" % s.a_max] for s in pts]
        _csv(out / f"stability_d{d}.csv", ("lam_x", "lam_y", "a_max"), rows)
        inside = [s.a_max for s in pts if s.z <= 0.99]
        good = max(inside) <= 1 + 1e-10
        click.echo(f"d={d}: max A over z<=0.99 is {max(inside):.16f} {'PASS' if good else 'FAIL'}")
        ok &= good
    return ok


def do_cond_report(cfg: RunConfig, out: Path) -> bool:
    case = get_case(cfg.case)
    ok = True
    for d in cfg.orders:
        scheme = cfg.schemes()[0]
        cl = build_ghost_closure(case.build(scheme, d, **cfg.overrides), grid_for(case, cfg.level, d // 2))
        rows = []
        for s in cl.systems:
            idx = s.center[1] if s.where in ("left", "right") else s.center[0]
            rows.append([s.where, str(idx if s.where in ("left", "right", "bottom", "top") else 0),
                         "%.16e" % s.kappa])
        _csv(out / f"cond_{cfg.case}_d{d}_j{cfg.level}.csv", ("side_or_corner", "index", "kappa"), rows)
        good = np.isfinite(cl.kappa_max)
        click.echo(f"{cfg.case} d={d} level {cfg.level}: kappa_max {cl.kappa_max:.6e}")
        ok &= bool(good)
    return ok


def _emit_properties(results, out: Path, name: str) -> bool:
    for r in results:
        click.echo(f"{r.suite:13s} {r.name:45s} {r.value:.3e} (limit {r.threshold:.3e}) "
                   f"{'PASS' if r.passed else 'FAIL'} {r.detail}")
    harness.write_property_csv(results, out / name)
    return all(r.passed for r in results)


def do_symmetry(cfg: RunConfig, out: Path) -> bool:
    return _emit_properties(harness.symmetry_suite(seed=cfg.seed), out, "symmetry.csv")


def do_property_suite(cfg: RunConfig, out: Path) -> bool:
    names = list(harness.SUITES) if cfg.suite == "all" else [cfg.suite]
    results = []
    for n in names:
        kw = {"seed": cfg.seed} if n in ("symmetry", "reproduction") else {}
        results += harness.run_property_suite(n, **kw)
    return _emit_properties(results, out, f"properties_{cfg.suite}.csv")


HANDLERS = {
    "converge": do_converge, "solve": do_solve, "stability-map": do_stability_map,
    "cond-report": do_cond_report, "symmetry-check": do_symmetry, "property-suite": do_property_suite,
}


# --- click wiring --------------------------------------------------------------------

def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config file."),
        click.option("--case", type=click.Choice(list(CASES)), default=None),
        click.option("--order", type=int, default=None, help="Accuracy order d (2, 4 or 6)."),
        click.option("--q", type=int, default=None, help="Time-derivative order of the PDE."),
        click.option("--scheme", type=click.Choice(["elliptic", "fe", "bdf", "me"]), default=None),
        click.option("--cfl", type=float, default=None),
        click.option("--resolutions", type=int, multiple=True, help="Grid levels j (h = base h / 2^j)."),
        click.option("--level", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--output", type=str, default=None, help=f"Output directory (default ${OUTPUT_ENV})."),
        click.option("--jobs", type=int, default=None, help="Worker processes for independent runs."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _run(command: str, config_path, **flags):
    cfg = parse_config(command, config_path, flags)
    out = preflight(cfg.output)
    ok = HANDLERS[command](cfg, out)
    click.echo("all assertions passed" if ok else "some assertions FAILED")
    sys.exit(0 if ok else 1)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool):
    """High-order finite differences with compatibility ghost closures."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
def schema():
    """Print the JSON config schema."""
    click.echo(json.dumps(CONFIG_SCHEMA, indent=2))


@main.command()
@_common
def converge(**kw):
    """Convergence study (or Richardson study for the pulse case); writes report.csv."""
    _run("converge", **kw)


@main.command()
@_common
@click.option("--dump-fields", "dump_fields", is_flag=True, default=None)
@click.option("--monitor", type=int, default=None, help="Print step, t, max|U| every N steps.")
def solve(**kw):
    """Single run; optional field dump."""
    _run("solve", **kw)


@main.command("stability-map")
@_common
def stability_map(**kw):
    """Raster of the max amplification factor over (lam_x, lam_y)."""
    _run("stability-map", **kw)


@main.command("cond-report")
@_common
def cond_report(**kw):
    """Per-system condition numbers."""
    _run("cond-report", **kw)


@main.command("symmetry-check")
@_common
def symmetry_check(**kw):
    """Reflection identities of the ghost values for the Laplacian."""
    _run("symmetry-check", **kw)


@main.command("property-suite")
@_common
@click.option("--suite", type=click.Choice(["all", *harness.SUITES]), default=None)
def property_suite(**kw):
    """Run one or all property suites."""
    _run("property-suite", **kw)


if __name__ == "__main__":
    main()
