"""Command-line driver.

Commands::

    auxstokes example1 [flags]          adaptive L-shape run with exact errors
    auxstokes example2 [flags]          adaptive lid-driven cavity
    auxstokes solve MESH CONFIG [flags] adaptive run on a mesh file

Exit codes: 0 success, 1 numerical failure, 2 usage or parse error.
"""

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from . import solver as _solver
from .adapt import (RECORD_COLUMNS, LoopConfig, LoopError, StokesProblem,
                    adaptive_loop, write_records_csv)
from .bench import ConvergenceTable, LShapeSolution, cavity_problem, lid, lshape_problem
from .estimator import PROBLEMS, DegenerateBubbleError
from .mesh import MeshError, read_mesh, write_mesh

log = logging.getLogger(__name__)

REQUIRED_KEYS = ("theta", "eps", "max_iter")
KNOWN_KEYS = REQUIRED_KEYS + ("quad_degree", "error_quad_degree", "error_problem",
                              "threads", "problem")
PROBLEM_KINDS = ("example1", "cavity", "custom")

DEFAULTS = {
    "example1": dict(theta=0.7, eps=1e-3, max_iter=15),
    "example2": dict(theta=0.7, eps=1e-6, max_iter=10),
}


class UsageError(Exception):
    pass


class ConfigError(UsageError):
    def __init__(self, msg, lineno=None):
        super().__init__(f"line {lineno}: {msg}" if lineno else msg)
        self.lineno = lineno


def parse_config(text):
    """Parse ``key = value`` lines (``#`` starts a comment).

    Returns ``(settings, boundary)`` where ``boundary`` maps tag names from
    ``g.<tag> = ux, uy`` lines to velocity pairs.
    """
    settings, boundary = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key.startswith("g."):
            tag = key[2:]
            parts = [s.strip() for s in value.split(",")]
            try:
                vals = tuple(float(s) for s in parts)
            except ValueError:
                vals = ()
            if len(vals) != 2 or not all(map(math.isfinite, vals)):
                raise ConfigError(f"boundary value for {tag!r} must be 'ux, uy'", lineno)
            boundary[tag] = vals
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in settings:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            settings[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
    return settings, boundary


def _convert(key, value):
    if key in ("theta", "eps"):
        return float(value)
    if key in ("max_iter", "quad_degree", "error_quad_degree", "threads"):
        return int(value)
    if key == "error_problem" and value not in PROBLEMS:
        raise ValueError(f"expected one of {', '.join(PROBLEMS)}")
    if key == "problem" and value not in PROBLEM_KINDS:
        raise ValueError(f"expected one of {', '.join(PROBLEM_KINDS)}")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--theta", type=float, help="marking fraction in (0, 1)")
    common.add_argument("--eps", type=float, help="stop once the global estimate is below this")
    common.add_argument("--max-iter", type=int, dest="max_iter", help="refinement steps")
    common.add_argument("--quad-degree", type=int, dest="quad_degree")
    common.add_argument("--error-quad-degree", type=int, dest="error_quad_degree")
    common.add_argument("--error-problem", choices=PROBLEMS, dest="error_problem")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--no-timings", action="store_true", dest="no_timings",
                        help="leave timing columns empty (reproducible output)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="auxstokes", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("example1", parents=[common], help="L-shape corner singularity")
    sub.add_parser("example2", parents=[common], help="lid-driven cavity")
    s = sub.add_parser("solve", parents=[common], help="adaptive run on a mesh file")
    s.add_argument("mesh")
    s.add_argument("config")
    return p


def _loop_config(settings, args):
    merged = dict(settings)
    for key in ("theta", "eps", "max_iter", "quad_degree", "error_quad_degree",
                "error_problem", "threads"):
        v = getattr(args, key)
        if v is not None:
            merged[key] = v
    kw = dict(theta=merged["theta"], eps=merged["eps"], max_iterations=merged["max_iter"])
    for src, dst in (("quad_degree", "quad_degree"), ("error_quad_degree", "error_quad_degree"),
                     ("error_problem", "error_problem"), ("threads", "threads")):
        if src in merged:
            kw[dst] = merged[src]
    try:
        return LoopConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _write_table(records, path, timings):
    table = ConvergenceTable.from_records(records)
    cols = RECORD_COLUMNS + ("order_error", "order_eta")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for rec, row in zip(records, table.rows):
            vals = []
            for name in cols:
                v = row[name] if name.startswith("order_") else getattr(rec, name)
                if name.startswith("t_") and not timings:
                    v = None
                vals.append(_cell(v))
            wr.writerow(vals)
    return table


def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_pressure(mesh, p, path):
    """One ``x y p`` line per mesh vertex."""
    with open(path, "w") as fh:
        for (x, y), v in zip(mesh.points, p):
            fh.write(f"{float(x)!r} {float(y)!r} {float(v)!r}\n")


def read_pressure(path):
    return np.loadtxt(path, ndmin=2)


def _run(problem, config, out, timings, pressure_at=()):
    os.makedirs(os.path.join(out, "meshes"), exist_ok=True)
    result = adaptive_loop(problem, config)
    for m, mesh in enumerate(result.meshes):
        write_mesh(mesh, os.path.join(out, "meshes", f"m{m}.txt"))
    for m in pressure_at:
        m = min(m, len(result.meshes) - 1)
        write_pressure(result.meshes[m], result.pressures[m],
                       os.path.join(out, f"pressure_m{m}.txt"))
    write_records_csv(result.records, os.path.join(out, "records.csv"), timings)
    table = _write_table(result.records, os.path.join(out, "table.csv"), timings)
    _summary(result, table)
    return result


def _summary(result, table):
    last = result.records[-1]
    msg = f"{len(result.records)} iterations, final dof {last.dof}, eta_G {last.eta_g:.4e}"
    if last.error is not None:
        msg += f", error {last.error:.4e}, kappa {last.kappa:.3f}"
    print(msg)
    print(f"{'dof':>8} {'error':>11} {'eta_G':>11} {'kappa':>6}")
    for row in table.rows:
        err = "" if row["error"] is None else f"{row['error']:.4e}"
        kap = "" if row["kappa"] is None else f"{row['kappa']:.3f}"
        print(f"{row['dof']:>8} {err:>11} {row['eta_g']:>11.4e} {kap:>6}")


def problem_from_config(mesh, settings, boundary):
    kind = settings.get("problem", "custom")
    if kind == "example1":
        sol = LShapeSolution()
        return StokesProblem("example1", mesh, sol.boundary_data, None, sol)
    if kind == "cavity":
        return StokesProblem("example2", mesh, lid, None, None)
    unknown = sorted(set(boundary) - set(mesh.boundary_tags.values()))
    if unknown:
        raise ConfigError(f"boundary tag {unknown[0]!r} does not occur in the mesh")
    return StokesProblem("custom", mesh, boundary, None, None)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    timings = not args.no_timings
    try:
        if args.command == "solve":
            mesh = read_mesh(args.mesh)
            with open(args.config) as fh:
                settings, boundary = parse_config(fh.read())
            missing = [k for k in REQUIRED_KEYS if k not in settings]
            if missing:
                raise ConfigError(f"missing required key {missing[0]!r}")
            problem = problem_from_config(mesh, settings, boundary)
            pressure_at = (0, settings["max_iter"]) if problem.name == "example2" else ()
        else:
            settings = DEFAULTS[args.command]
            if args.command == "example1":
                problem, pressure_at = lshape_problem(), ()
            else:
                problem, pressure_at = cavity_problem(), (0, 10)
        config = _loop_config(settings, args)
        if args.command == "example2" and args.max_iter is not None:
            pressure_at = (0, config.max_iterations)
        out = args.out or os.path.join("out", args.command)
        _run(problem, config, out, timings, pressure_at)
    except (UsageError, MeshError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"auxstokes: error: {exc}", file=sys.stderr)
        return 2
    except (LoopError, _solver.SingularSystemError, DegenerateBubbleError,
            FloatingPointError) as exc:
        print(f"auxstokes: numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
