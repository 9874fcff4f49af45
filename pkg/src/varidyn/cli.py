"""Command-line front end: ``varidyn <command> SCENARIO [--out DIR] ...``.

Exit codes: 0 when every check passes, 2 on a tolerance failure, 1 on error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import diagram as dg
from .errors import ScenarioError, VaridynError
from .integrate import integrate_el
from .jacobi import inverse_jacobi, jacobi_reduce
from .routh import inverse_routh, routh_reduce
from .scenario import ScenarioSpec, catalog_listing, load_scenario
from .systems import cyclic_momentum, newtonian_energy, quadratic_energy

EXIT_PASS, EXIT_ERROR, EXIT_TOLERANCE = 0, 1, 2
TABLE_POINTS = 1000
COMMANDS = ("reduce-routh", "reduce-jacobi", "lift-routh", "lift-jacobi", "integrate",
            "diagram", "energy-audit")


def _write_table(path: Path, names, columns):
    data = np.column_stack([np.asarray(c, float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def _grid_names(prefix_q, prefix_v, n, first=1):
    return ([f"{prefix_q}{k}" for k in range(first, first + n)]
            + [f"{prefix_v}{k}" for k in range(first, first + n)])


def _table_check(out: Path, stem: str, numeric, closed, grid, names, tol) -> dg.Check:
    q, v = grid
    a = np.asarray(numeric(q, v, 0.0), float)
    b = np.asarray(closed(q, v, 0.0), float)
    err = np.abs(a - b) / (1 + np.abs(b))
    _write_table(out / f"{stem}.csv", names + ["numeric", "closed", "error"],
                 list(q) + list(v) + [a, b, err])
    return dg.Check(stem, dg.discrepancy(a, b), tol, {"table": f"{stem}.csv"})


def _reduce_routh(spec: ScenarioSpec, P: dg.Pieces, out: Path, tol: float) -> dg.DiagramReport:
    rep = dg.DiagramReport(spec.name, P.seed, P.points)
    red = routh_reduce(P.quadratic, 0, spec.p0, seed=spec.E / spec.c)
    rep.checks["routh"] = _table_check(out, "routh", red.reduced, P.routh_closed, P.grid_n,
                                       _grid_names("q", "v", spec.n), tol)
    return rep


def _reduce_jacobi(spec, P, out, tol):
    rep = dg.DiagramReport(spec.name, P.seed, P.points)
    names = _grid_names("q", "v", spec.n)
    NJ, _ = P.newtonian_jacobi
    SJ, _ = P.stationary_jacobi
    rep.checks["jacobi-newtonian"] = _table_check(
        out, "jacobi-newtonian", jacobi_reduce(P.newtonian, spec.calE).reduced, NJ, P.grid_n,
        names, tol)
    rep.checks["jacobi-stationary"] = _table_check(
        out, "jacobi-stationary", jacobi_reduce(P.sqrt, spec.E).reduced, SJ, P.grid_n, names, tol)
    return rep


def _lift_routh(spec, P, out, tol):
    rep = dg.DiagramReport(spec.name, P.seed, P.points)
    N, offset = P.newtonian, spec.routh_offset
    shifted = N.replace(func=lambda q, v, t: N.func(q, v, t) + offset, energy=None,
                        name=f"{N.name}+const")
    lifted = inverse_routh(shifted, cyclic_momentum(spec.metric), spec.p0, seed=spec.E / spec.c)
    rep.checks["lift-routh"] = _table_check(out, "lift-routh", lifted, P.quadratic, P.grid_l,
                                            _grid_names("x", "u", spec.n + 1, first=0), tol)
    return rep


def _lift_jacobi(spec, P, out, tol):
    rep = dg.DiagramReport(spec.name, P.seed, P.points)
    NJ, _ = P.newtonian_jacobi
    lifted = inverse_jacobi(NJ, newtonian_energy(spec.newtonian), spec.calE)
    rep.checks["lift-jacobi"] = _table_check(out, "lift-jacobi", lifted, P.newtonian, P.grid_n,
                                             _grid_names("q", "v", spec.n), tol)
    lq = inverse_jacobi(P.homogeneous, quadratic_energy(spec.metric), spec.C)
    rep.checks["lift-jacobi-quadratic"] = _table_check(
        out, "lift-jacobi-quadratic", lq, P.quadratic, P.grid_l,
        _grid_names("x", "u", spec.n + 1, first=0), tol)
    return rep


def _integrate(spec, P, out, tol):
    rep = dg.DiagramReport(spec.name, P.seed, P.points)
    C = dg.Corners(P)
    for corner in ("newtonian", "jacobi", "quadratic", "routh", "sqrt", "homogeneous"):
        C.traj(corner).to_csv(out / f"trajectory-{corner}.csv")
    rep.orbits.update(dg._orbit_checks(C, ("jacobi", "quadratic", "routh", "sqrt", "homogeneous"),
                                       spec.tolerances["orbit"]))
    rep.drifts.update(dg._drift_checks(C, tol))
    return rep


def _diagram(spec, P, out, tol):
    return dg.verify_commuting_diagram(spec, P.points, P.seed)


def _energy_audit(spec, P, out, tol):
    return dg.energy_audit(spec)


_DISPATCH = {"reduce-routh": _reduce_routh, "reduce-jacobi": _reduce_jacobi,
             "lift-routh": _lift_routh, "lift-jacobi": _lift_jacobi, "integrate": _integrate,
             "diagram": _diagram, "energy-audit": _energy_audit}
# which tolerance --tol replaces for each command
_TOL_KEY = {"integrate": "drift", "energy-audit": "drift"}


def run_scenario(path, command: str, out_dir, tol: float | None = None, seed: int = 0,
                 points: int | None = None) -> int:
    """Run ``command`` on a scenario file (or catalog name); returns the exit code."""
    if command not in _DISPATCH:
        raise ValueError(f"unknown command {command!r}")
    spec = load_scenario(path)
    key = _TOL_KEY.get(command, "lagrangian")
    if tol is not None:
        spec = dataclasses.replace(spec, tolerances={**spec.tolerances, key: float(tol)})
    if points is None:
        points = dg.DEFAULT_POINTS if command == "diagram" else TABLE_POINTS
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    P = dg.Pieces(spec, points, seed)
    report = _DISPATCH[command](spec, P, out, spec.tolerances[key])
    (out / f"{command}-report.json").write_text(report.to_json())
    for name in report.failures():
        print(f"FAIL {name}", file=sys.stderr)
    print(f"{command} {spec.name}: {'pass' if report.passed else 'FAIL'}")
    return EXIT_PASS if report.passed else EXIT_TOLERANCE


def _origin(exc: BaseException) -> str:
    """Module (inside the package) where the error was raised."""
    frames = [f for f in traceback.extract_tb(exc.__traceback__) if "varidyn" in f.filename]
    return Path(frames[-1].filename).stem if frames else "varidyn"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varidyn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list-catalog", help="print catalog scenarios and their parameters")
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("scenario", help="scenario JSON file or catalog name")
        s.add_argument("--out", default="varidyn-out", help="output directory")
        s.add_argument("--tol", type=float, default=None,
                       help="override the pass threshold of the command's main metric")
        s.add_argument("--seed", type=int, default=0, help="seed of the comparison grid")
        s.add_argument("--points", type=int, default=None, help="comparison grid size")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-catalog":
        print(catalog_listing(), end="")
        return EXIT_PASS
    try:
        return run_scenario(args.scenario, args.command, args.out, args.tol, args.seed,
                            args.points)
    except ScenarioError as exc:
        print(f"error: scenario: {exc}", file=sys.stderr)
    except VaridynError as exc:
        print(f"error: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
