"""Command line front end: ``pvsurf run | sweep | verify``.

Exit codes: 0 success, 1 a verification check failed, 2 bad input or a
failed integration. Errors are also printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .currents import (EpsilonSchedule, TestForm, VortexPath, chi_circle_sequence, chi_direct,
                       localized_residuals, random_smooth_field, random_test_form, weak_residual)
from .dynamics import SingularConfigurationError
from .forms import TestForm
from .geometry import FlatTorus, Sphere, Surface
from .greens import green_kernel, verify_poisson
from .integrate import IntegrationError, Trajectory, integrate, sweep
from .quadrature import loglog_slope, richardson
from .scenario import ConfigError, Scenario, expand_grid, load_grid, load_scenario, parse_grid_items

log = logging.getLogger("pvsurf")

TRAJECTORY_SCHEMA = "pvsurf.trajectory/1"
DIAGNOSTICS_SCHEMA = "pvsurf.diagnostics/1"
SWEEP_SCHEMA = "pvsurf.sweep/1"
VERIFY_SCHEMA = "pvsurf.verify/1"


# -- output formatting -------------------------------------------------------------

def fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_json(obj: Any, indent: int = 0, step: int = 2) -> str:
    """JSON with every float written to 17 significant digits (non-finite as null)."""
    pad = " " * (indent + step)
    end = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + step, step)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + step, step) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def write_json(path: str, obj: Any) -> None:
    with open(path, "w") as fh:
        fh.write(to_json(obj) + "\n")


def write_csv(path: str, schema: str, header: Sequence[str], rows: Sequence[Sequence[Any]], meta: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(f"# schema: {schema}{'; ' + meta if meta else ''}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    if v is None:
        return ""
    return str(v)


def _coord_names(surface: Surface, n: int) -> List[str]:
    axes = "xyz"[: surface.dim]
    return [f"q{i}_{a}" for i in range(n) for a in axes]


def _meta(sc: Scenario) -> str:
    desc = ",".join(f"{k}={v}" for k, v in sc.surface.descriptor().items())
    return f"surface {desc}; units length={sc.units['length']} time={sc.units['time']}"


def _outpath(sc: Scenario, args, suffix: str) -> str:
    directory = args.output_dir or sc.output_dir
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, f"{sc.prefix}_{suffix}")


# -- run -----------------------------------------------------------------------

def diagnostics(sc: Scenario, traj: Trajectory) -> Dict[str, Any]:
    h = None
    try:
        h = traj.hamiltonian()
    except ValueError:
        h = None
    return {
        "schema": DIAGNOSTICS_SCHEMA,
        "version": __version__,
        "surface": sc.surface.descriptor(),
        "background": sc.background.descriptor(),
        "growth_rate": {"beta_x": sc.beta.beta_x, "beta_omega": sc.beta.beta_omega},
        "units": sc.units,
        "status": "completed" if traj.completed else "close_approach",
        "events": [e.as_dict() for e in traj.events],
        "steps": {"accepted": traj.n_steps, "rejected": traj.n_rejected, "evaluations": traj.n_evals},
        "times": traj.times,
        "hamiltonian": None if h is None else h,
        "hamiltonian_drift": traj.hamiltonian_drift(),
        "moments": [m.as_dict() for m in traj.moments()],
        "min_separation": traj.min_separation(),
        "max_separation": traj.max_separation(),
    }


def cmd_run(args) -> int:
    sc = _load(args)
    traj = integrate(*_spec_args(sc.run_spec()))
    n = traj.positions.shape[1]
    rows = [[t] + list(q.ravel()) for t, q in zip(traj.times, traj.positions)]
    csv_path = _outpath(sc, args, "trajectory.csv")
    write_csv(csv_path, TRAJECTORY_SCHEMA, ["t"] + _coord_names(sc.surface, n), rows, _meta(sc))
    json_path = _outpath(sc, args, "diagnostics.json")
    write_json(json_path, diagnostics(sc, traj))
    log.info("wrote %s and %s", csv_path, json_path)
    print(json.dumps({"trajectory": csv_path, "diagnostics": json_path,
                      "status": "completed" if traj.completed else "close_approach"}))
    return 0


def _spec_args(spec):
    return spec.system, spec.positions, spec.t0, spec.t1, spec.config


# -- sweep ---------------------------------------------------------------------

def cmd_sweep(args) -> int:
    sc = _load(args)
    grid: Dict[str, list] = {}
    if args.grid_file:
        grid.update(load_grid(args.grid_file))
    grid.update(parse_grid_items(args.grid or []))
    points = expand_grid(grid)
    specs = [sc.with_overrides(p).run_spec() for p in points]
    res = sweep(specs, points, workers=args.workers)
    keys = list(grid)
    cols = ["mu_prime", "min_separation", "max_separation", "h_drift", "events", "error"]
    rows = [[row.get(k) for k in keys] + [row.get(c) for c in cols] for row in res.summary]
    path = _outpath(sc, args, "sweep.csv")
    write_csv(path, SWEEP_SCHEMA, keys + cols, rows, _meta(sc))
    print(json.dumps({"summary": path, "points": len(points)}))
    return 0


# -- verify --------------------------------------------------------------------

def _schedule(ver) -> EpsilonSchedule:
    e = ver.get("epsilon", {})
    return EpsilonSchedule(float(e.get("eps0", 0.032)), float(e.get("ratio", 0.5)), int(e.get("count", 6)))


def _scale(surface: Surface) -> float:
    if isinstance(surface, Sphere):
        return surface.radius
    if isinstance(surface, FlatTorus):
        return min(surface.periods)
    return 1.0


def verify_green(sc: Scenario, ver, rng) -> List[dict]:
    s = sc.surface
    k = green_kernel(s)
    tol = float(ver.get("green_tolerance", 1e-6))
    checks = []
    for i in range(int(ver.get("random_forms", 10))):
        phi = random_test_form(s, rng, radius_range=(0.3, 0.7) if not isinstance(s, FlatTorus) else (0.4, 0.8))
        e1, e2 = s.tangent_frame(phi.center)
        ang = rng.uniform(0, 2 * np.pi)
        dirv = np.cos(ang) * e1 + np.sin(ang) * e2
        inside = i % 2 == 0
        dist = phi.radius * (rng.uniform(0.0, 0.7) if inside else rng.uniform(1.5, 2.0))
        if isinstance(s, Sphere):
            dist = min(dist, 0.95 * np.pi * s.radius) if not inside else dist
        if isinstance(s, FlatTorus) and not inside:
            dist = min(dist, 0.5 * min(s.periods) - 1e-3)
            if dist < 1.1 * phi.radius:
                dist = 0.5 * phi.radius
        x0 = s.exp(phi.center, dirv, dist)
        r = verify_poisson(k, phi, x0)
        checks.append({"name": f"poisson_{i}", "residual": r.residual, "quadrature_error": r.quadrature_error,
                       "lhs": r.lhs, "rhs": r.rhs, "converged": r.converged,
                       "passed": bool(r.residual < tol and r.converged), "tol": tol})
    return checks


def verify_chi(sc: Scenario, ver, rng) -> List[dict]:
    s = sc.surface
    sched = _schedule(ver)
    tol = float(ver.get("chi_tolerance", 1e-6))
    checks = []
    for i in range(int(ver.get("random_forms", 10))):
        v = random_smooth_field(s, rng)
        phi = random_test_form(s, rng, degree=1)
        p = s.exp(phi.center, s.random_tangents(rng, phi.center), 0.5 * phi.radius / _scale(s))
        seq = chi_circle_sequence(v, p, phi, sched.radii)
        ex = richardson(sched.radii, seq)
        direct = chi_direct(v, p, phi)
        err = np.abs(seq - direct)
        slope = loglog_slope(sched.radii, err) if np.all(err > 0) else math.nan
        checks.append({"name": f"chi_{i}", "direct": direct, "extrapolated": ex.value,
                       "residual": abs(ex.value - direct), "sequence": seq, "radii": sched.radii,
                       "error_slope": slope, "passed": bool(abs(ex.value - direct) < tol), "tol": tol})
    return checks


def _forms_for(sc: Scenario, ver, q: np.ndarray, rng) -> List[TestForm]:
    s = sc.surface
    forms = []
    for f in ver.get("test_forms", []):
        forms.append(TestForm(s, np.asarray(f["center"], float), float(f["radius"]),
                              amplitude=float(f.get("amplitude", 1.0))))
    if not forms:
        # default: a bump near the first vortex, off-centre so d(phi) does not vanish there
        radius = 0.6 * _scale(s) if not isinstance(s, FlatTorus) else 0.4 * _scale(s)
        e1, _ = s.tangent_frame(q[0])
        forms.append(TestForm(s, s.exp(q[0], e1, 0.2 * radius), radius))
    return forms


def _check_times(sc: Scenario, ver) -> List[float]:
    times = ver.get("times")
    if not times:
        return [sc.t0 + 0.5 * sc.duration]
    for t in times:
        if not sc.t0 < t <= sc.t1:
            raise ConfigError("verification.times", f"time {t} outside ({sc.t0}, {sc.t1}]")
    return [float(t) for t in times]


def verify_currents(sc: Scenario, ver, rng, mode: str, perturb: bool) -> List[dict]:
    sched = _schedule(ver)
    tol = float(ver.get("tolerance", 1e-4))
    speed = float(ver.get("perturb_speed", 1.5)) if perturb else 1.0
    spec = sc.run_spec(speed)
    checks = []
    for t in _check_times(sc, ver):
        cfg = spec.config
        traj = integrate(spec.system, spec.positions, spec.t0, t,
                         type(cfg)(**{**cfg.__dict__, "sample_interval": None}))
        if not traj.completed:
            raise IntegrationError("close approach before the check time", traj.times[-1], traj.final)
        path = VortexPath(spec.system, t, traj.final)
        for j, phi in enumerate(_forms_for(sc, ver, traj.final, rng)):
            if mode == "lemma":
                rep = localized_residuals(path, phi, sched, tol=tol)
                d = rep.as_dict()
                d.update({"name": f"lemma_t{t}_phi{j}", "passed": not rep.failed(), "perturbed": perturb})
            else:
                rep = weak_residual(path, phi, sched, tol=tol)
                d = rep.as_dict()
                d.update({"name": f"weak_t{t}_phi{j}", "perturbed": perturb})
            d.pop("schema", None)
            checks.append(d)
    return checks


def cmd_verify(args) -> int:
    sc = _load(args)
    ver = dict(sc.verification)
    if args.tolerance is not None:
        ver["tolerance"] = ver["green_tolerance"] = ver["chi_tolerance"] = args.tolerance
    rng = np.random.default_rng(int(ver.get("seed", 0)))
    if args.mode == "green":
        checks = verify_green(sc, ver, rng)
    elif args.mode == "chi":
        checks = verify_chi(sc, ver, rng)
    else:
        checks = verify_currents(sc, ver, rng, args.mode, args.perturb)
    ok = all(c["passed"] for c in checks)
    report = {"schema": VERIFY_SCHEMA, "version": __version__, "mode": args.mode,
              "surface": sc.surface.descriptor(), "passed": ok, "checks": checks}
    path = _outpath(sc, args, f"verify_{args.mode}{'_perturbed' if args.perturb else ''}.json")
    write_json(path, report)
    print(json.dumps({"report": path, "mode": args.mode, "passed": ok,
                      "max_residual": max((c.get("residual", max(c.get("residuals", {0: 0}).values()))
                                           for c in checks), default=0.0)}))
    return 0 if ok else 1


# -- entry point ---------------------------------------------------------------

def _load(args) -> Scenario:
    return load_scenario(args.scenario)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pvsurf", description="Point vortices on the plane, sphere and flat torus.")
    p.add_argument("--version", action="version", version=f"pvsurf {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario YAML file")
        sp.add_argument("-o", "--output-dir", default=None, help="override output.directory")

    r = sub.add_parser("run", help="integrate a scenario, write trajectory CSV and diagnostics JSON")
    common(r)
    s = sub.add_parser("sweep", help="integrate a scenario over a parameter grid, write a summary CSV")
    common(s)
    s.add_argument("--grid", action="append", metavar="KEY=V1,V2,...",
                   help="dotted scenario key and its values (repeatable)")
    s.add_argument("--grid-file", help="YAML file with a 'parameters' mapping")
    s.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    v = sub.add_parser("verify", help="numerical checks of the kernel and current identities")
    common(v)
    v.add_argument("--mode", choices=("green", "chi", "lemma", "weak"), required=True)
    v.add_argument("--perturb", action="store_true", help="scale the vortex velocities (weak/lemma modes)")
    v.add_argument("--tolerance", type=float, default=None, help="override the pass/fail tolerance")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        err = exc.as_dict()
    except (IntegrationError, SingularConfigurationError) as exc:
        err = {"type": "integration", "message": str(exc)}
    except (ValueError, OSError) as exc:
        err = {"type": type(exc).__name__, "message": str(exc)}
    print(json.dumps({"error": err}), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
