"""Dörfler marking and the SOLVE-ESTIMATE-MARK-REFINE loop."""

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import solver as _solver
from .assembly import (apply_dirichlet, assemble_rhs, assemble_taylor_hood,
                       attach_mean_zero)
from .estimator import PROBLEMS, effectivity, estimate
from .mesh import refine, refine_uniform
from .quadrature import rule as quad_rule
from .spaces import (P2_BASIS, build_dof_maps, element_geometry,
                     p2_gradients, physical_gradients, tabulate)

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("m", "nt", "dof", "eta_g", "error", "kappa", "marked",
                  "t_solve", "t_estimate", "t_mark", "t_refine")


class LoopError(RuntimeError):
    """A phase of the adaptive loop failed; ``iteration`` says where."""

    def __init__(self, msg, iteration):
        super().__init__(f"iteration {iteration}: {msg}")
        self.iteration = iteration


@dataclass(frozen=True)
class LoopConfig:
    theta: float = 0.7
    eps: float = 1e-3
    max_iterations: int = 10
    quad_degree: int = 8
    error_quad_degree: int = 12
    error_problem: str = "third"
    # the full bubble saddle solve is only attempted below this many bubble dofs
    first_problem_max_dofs: int = 20000
    uniform: bool = False
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta!r}")
        if not self.eps > 0.0:
            raise ValueError(f"eps must be positive, got {self.eps!r}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 0:
            raise ValueError(f"max_iterations must be a non-negative integer, got {self.max_iterations!r}")
        if self.error_problem not in PROBLEMS:
            raise ValueError(f"error_problem must be one of {PROBLEMS}, got {self.error_problem!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class StokesProblem:
    """Body force, Dirichlet data and (optionally) the exact solution.

    ``boundary`` is either a callable ``g(x, y) -> (n, 2)`` or a mapping from
    boundary tag to a constant velocity. ``force=None`` means ``f = 0``.
    """

    name: str
    mesh: object
    boundary: object = None
    force: Optional[Callable] = None
    exact: object = None


@dataclass
class IterationRecord:
    m: int
    nt: int
    dof: int
    n_bubble: int
    eta_g: float
    error: Optional[float] = None
    kappa: Optional[float] = None
    marked: int = 0
    t_solve: float = 0.0
    t_estimate: float = 0.0
    t_mark: float = 0.0
    t_refine: float = 0.0
    error_problem: str = "third"
    identity_error: float = math.nan
    divergence_integral: float = math.nan
    solve_residual: float = math.nan


@dataclass
class LoopResult:
    records: list
    mesh: object
    dofmap: object
    velocity: np.ndarray
    pressure: np.ndarray
    estimate: object
    meshes: list = field(default_factory=list)
    marked: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    converged: bool = False


def dorfler_mark(eta_sq, theta):
    """Smallest set of elements carrying a ``theta`` share of ``sum eta_sq``.

    Sorting is descending and stable, so ties go to the smaller element id.
    Returns ``(ids, converged)``; all-zero input gives an empty set and
    ``converged=True``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta!r}")
    e = np.asarray(eta_sq, dtype=float)
    if e.ndim != 1 or np.any(~np.isfinite(e)) or np.any(e < 0):
        raise ValueError("estimates must be a finite non-negative vector")
    total = float(e.sum())
    if total == 0.0:
        return np.empty(0, dtype=np.int64), True
    order = np.argsort(-e, kind="stable")
    csum = np.cumsum(e[order])
    k = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:min(k, e.size)]), False


def convergence_orders(dof, values):
    """``log(v_i / v_{i+1}) / log(dof_{i+1} / dof_i)``; first entry is None."""
    out = [None]
    for i in range(len(dof) - 1):
        a, b = values[i], values[i + 1]
        if a is None or b is None or not (a > 0 and b > 0) or dof[i + 1] == dof[i]:
            out.append(None)
        else:
            out.append(math.log(a / b) / math.log(dof[i + 1] / dof[i]))
    return out


def tagged_boundary_values(mesh, dofmap, values):
    """Nodal Dirichlet vector from per-tag constant velocities.

    Edge midpoints take their edge's value. A vertex where differently
    valued tags meet gets zero, which keeps corners of driven lids
    watertight. Untagged boundary edges are no-slip.
    """
    e = mesh.edges
    nv = mesh.n_vertices
    g = np.zeros((nv + e.n_edges, 2))
    seen = {}
    for k in np.flatnonzero(e.boundary):
        a, b = (int(v) for v in e.edges[k])
        val = np.asarray(values.get(mesh.boundary_tags.get((a, b)), (0.0, 0.0)), dtype=float)
        g[nv + k] = val
        for v in (a, b):
            if v in seen and not np.array_equal(seen[v], val):
                seen[v] = np.zeros(2)
            else:
                seen.setdefault(v, val)
    for v, val in seen.items():
        g[v] = val
    return g.ravel()


def solve_stokes(mesh, problem, rule, threads=1, dofmap=None):
    """Taylor-Hood solve. Returns ``(dofmap, u, p, residual)``."""
    dofmap = dofmap or build_dof_maps(mesh)
    sysm = assemble_taylor_hood(mesh, dofmap, rule, threads)
    if problem.force is not None:
        sysm = _with_rhs(sysm, assemble_rhs(problem.force, mesh, dofmap, rule))
    g = problem.boundary
    if isinstance(g, dict):
        g = tagged_boundary_values(mesh, dofmap, g)
    aug = attach_mean_zero(apply_dirichlet(sysm, g, dofmap))
    x = _solver.solve(_solver.factor(aug.matrix), aug.rhs)
    _, res = _solver.residual_ok(aug.matrix, x, aug.rhs)
    u, p, _ = aug.split(x)
    return dofmap, u, p, float(res)


def _with_rhs(sysm, rhs_v):
    return replace(sysm, rhs_v=sysm.rhs_v + rhs_v)


def divergence_integral(u, mesh, dofmap, rule):
    """``int_Omega div u_h``."""
    area, G = element_geometry(mesh)
    gu = p2_gradients(u, dofmap, physical_gradients(tabulate(P2_BASIS, rule.points), G))
    w = area[:, None] * rule.weights
    return float(np.sum(w * (gu[..., 0, 0] + gu[..., 1, 1])))


def adaptive_loop(problem, config, callback=None, keep_history=True):
    """Run SOLVE, ESTIMATE, MARK, REFINE until ``eta_G <= eps`` or the budget ends.

    ``config.max_iterations`` counts refinement steps, so a run that never
    converges produces ``max_iterations + 1`` records. ``callback(m, state)``
    receives a dict with the current mesh, solution, estimate and marks.
    """
    from .bench import error_norms  # bench imports this module

    rule = quad_rule(config.quad_degree)
    err_rule = quad_rule(config.error_quad_degree)
    mesh = problem.mesh
    records, meshes, marks_hist, pressures = [], [], [], []
    converged = False
    m = 0
    while True:
        t0 = time.perf_counter()
        try:
            dofmap, u, p, res = solve_stokes(mesh, problem, rule, config.threads)
        except _solver.SingularSystemError as exc:
            raise LoopError(f"Stokes solve failed: {exc}", m) from exc
        t1 = time.perf_counter()

        which = config.error_problem
        if which == "first" and dofmap.N_v + dofmap.N_p > config.first_problem_max_dofs:
            warnings.warn(f"iteration {m}: {dofmap.N_v + dofmap.N_p} bubble dofs exceed the "
                          "full error-problem limit; using the diagonal problem", RuntimeWarning)
            which = "third"
        try:
            est = estimate(mesh, dofmap, u, p, problem.force, rule, which, config.threads)
        except (ArithmeticError, _solver.SingularSystemError) as exc:
            raise LoopError(f"estimator failed: {exc}", m) from exc
        eta_g = est.global_.eta_g
        error = kappa = None
        if problem.exact is not None:
            error = error_norms(u, p, problem.exact, mesh, dofmap, err_rule).total
            kappa = effectivity(eta_g, error)
        t2 = time.perf_counter()

        done = eta_g <= config.eps or m >= config.max_iterations
        marked = np.empty(0, dtype=np.int64)
        if not done:
            if config.uniform:
                marked = np.arange(mesh.n_triangles)
            else:
                marked, zero = dorfler_mark(est.local.eta_sq, config.theta)
                done = zero
        t3 = time.perf_counter()

        rec = IterationRecord(
            m=m, nt=mesh.n_triangles, dof=dofmap.n_dofs, n_bubble=dofmap.N_v + dofmap.N_p,
            eta_g=eta_g, error=error, kappa=kappa, marked=int(marked.size),
            t_solve=t1 - t0, t_estimate=t2 - t1, t_mark=t3 - t2,
            error_problem=which, identity_error=est.global_.identity_error,
            divergence_integral=divergence_integral(u, mesh, dofmap, rule),
            solve_residual=res)
        log.info("m=%d nt=%d dof=%d eta_G=%.4e error=%s", m, rec.nt, rec.dof, eta_g,
                 "-" if error is None else f"{error:.4e}")
        if keep_history:
            meshes.append(mesh)
            marks_hist.append(marked)
            pressures.append(p)
        if callback is not None:
            callback(m, dict(mesh=mesh, dofmap=dofmap, velocity=u, pressure=p,
                             estimate=est, marked=marked, record=rec))
        if done:
            records.append(rec)
            converged = eta_g <= config.eps or marked.size == 0 and m < config.max_iterations
            break
        t3 = time.perf_counter()
        mesh = refine_uniform(mesh) if config.uniform else refine(mesh, marked)
        rec.t_refine = time.perf_counter() - t3
        records.append(rec)
        m += 1
    return LoopResult(records, mesh, dofmap, u, p, est, meshes, marks_hist, pressures,
                      converged)


def write_records_csv(records, path, timings=True):
    """Records CSV; timing fields are left empty when ``timings`` is False."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RECORD_COLUMNS)
        for r in records:
            row = []
            for name in RECORD_COLUMNS:
                v = getattr(r, name)
                if name.startswith("t_") and not timings:
                    v = None
                elif isinstance(v, float) and math.isnan(v):
                    v = None
                row.append("" if v is None else (repr(float(v)) if isinstance(v, float) else str(v)))
            wr.writerow(row)


def record_fields():
    return [f.name for f in fields(IterationRecord)]
