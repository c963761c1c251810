"""Hierarchical auxiliary-subspace error estimator for Taylor-Hood Stokes.

The residual of a discrete solution ``(u_h, p_h)`` is tested against the
bubble space ``W`` (nine velocity modes per element and component, one
pressure bubble per element). Writing ``A`` for the bubble stiffness and
``B[l, j] = -int psi_j div phi_l``, the error problems are

* first:  ``[[A, B], [-B^T, 0]] x = F`` (full saddle solve, validation only)
* second: ``A`` replaced by its diagonal ``D_v``; the pressure Schur system
  ``B^T D_v^-1 B x_p = F_p + B^T D_v^-1 F_v`` is solved exactly
* third:  the Schur matrix is further replaced by ``c_s diag(B^T D_v^-1 B)``
  so both solves are diagonal.

Local indicators are ``eta_T^2 = eta_p^2 + eta_v^2 + eta_d^2`` with the
pressure error L2 norm, the diagonal velocity seminorm and ``||div u_h||``
on ``T``.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import solver as _solver
from .assembly import map_elements, scatter_matrix, scatter_vector
from .spaces import (BUBBLE_MODES, ELEMENT_BUBBLE, P1_BASIS, P2_BASIS,
                     element_geometry, p1_values, p2_gradients,
                     physical_gradients, tabulate)

log = logging.getLogger(__name__)

PROBLEMS = ("first", "second", "third")


class DegenerateBubbleError(ArithmeticError):
    """A diagonal entry of ``D_v`` or ``D_p`` is not positive."""

    def __init__(self, msg, dof):
        super().__init__(msg)
        self.dof = dof


@dataclass(frozen=True, eq=False)
class ResidualVectors:
    F_v: np.ndarray
    F_p: np.ndarray


@dataclass(frozen=True, eq=False)
class ErrorMatrices:
    D_v: np.ndarray            # diag of the bubble stiffness, (N_v,)
    B: sp.csr_matrix           # (N_v, N_p)
    D_p: np.ndarray            # diag(B^T D_v^-1 B), (N_p,)
    c_s: int
    local_diag: np.ndarray     # (nt, 9) int_T |grad phi_a|^2 per scalar mode
    local_stiffness: np.ndarray  # (nt, 9, 9)
    pressure_mass: np.ndarray  # (N_p,) int psi_j^2
    pressure_mean: np.ndarray  # (N_p,) int psi_j

    @property
    def N_v(self):
        return len(self.D_v)

    @property
    def N_p(self):
        return len(self.D_p)


@dataclass(frozen=True, eq=False)
class ErrorCoefficients:
    x_u: np.ndarray
    x_p: np.ndarray
    problem: str = "third"
    multiplier: float = 0.0


@dataclass(frozen=True, eq=False)
class LocalEstimates:
    eta_p: np.ndarray
    eta_v: np.ndarray
    eta_d: np.ndarray

    @property
    def eta(self):
        return np.sqrt(self.eta_p**2 + self.eta_v**2 + self.eta_d**2)

    @property
    def eta_sq(self):
        return self.eta_p**2 + self.eta_v**2 + self.eta_d**2


@dataclass(frozen=True, eq=False)
class GlobalEstimate:
    eta_g: float
    error_norm_sq: float = math.nan   # ||(e_u, e_p)||_D^2 (or _V^2 for the first problem)
    div_sq: float = math.nan          # ||div u_h||^2

    @property
    def identity_error(self):
        """Relative gap between sum of local indicators and the norm breakdown."""
        if self.eta_g == 0.0:
            return abs(self.error_norm_sq + self.div_sq)
        return abs(self.eta_g**2 - (self.error_norm_sq + self.div_sq)) / self.eta_g**2


@dataclass(frozen=True, eq=False)
class Estimate:
    residuals: ResidualVectors
    matrices: ErrorMatrices
    coefficients: ErrorCoefficients
    local: LocalEstimates
    global_: GlobalEstimate
    extra: dict = field(default_factory=dict)


def _bubble_tabulation(G, dofmap, rule, s=slice(None)):
    """Signed bubble values (nt, nq, 9) and gradients (nt, nq, 9, 2)."""
    tab = tabulate(BUBBLE_MODES, rule.points)
    sign = dofmap.bubble_sign[s]
    vals = tab.values[None, :, :] * sign[:, None, :]
    grads = physical_gradients(tab, G[s]) * sign[:, None, :, None]
    return vals, grads


def assemble_error_residuals(mesh, dofmap, u_hat, p_hat, f, rule, threads=1):
    """Residuals of ``(u_hat, p_hat)`` tested on the bubble bases.

    ``F_v[j] = int f.phi_j - int grad u_h : grad phi_j + int p_h div phi_j``
    and ``F_p[j] = -int psi_j div u_h``. ``f=None`` means zero body force.
    """
    area_all, G_all = element_geometry(mesh)
    tab2 = tabulate(P2_BASIS, rule.points)
    tab1 = tabulate(P1_BASIS, rule.points)
    bq = ELEMENT_BUBBLE(rule.points)
    if f is not None:
        xq = rule.physical_points(mesh.points[mesh.triangles])
        fq_all = np.asarray(f(xq[..., 0].ravel(), xq[..., 1].ravel()), dtype=float)
        fq_all = fq_all.reshape(mesh.n_triangles, len(rule), 2)

    def kernel(s):
        vals, gb = _bubble_tabulation(G_all, dofmap, rule, s)
        w = area_all[s, None] * rule.weights
        sub = _Sub(dofmap, s)
        gu = p2_gradients(u_hat, sub, physical_gradients(tab2, G_all[s]))
        pq = p1_values(p_hat, sub, tab1)
        Fv = (-np.einsum("tq,tqcd,tqad->tac", w, gu, gb)
              + np.einsum("tq,tq,tqac->tac", w, pq, gb))
        if f is not None:
            Fv += np.einsum("tq,tqa,tqc->tac", w, vals, fq_all[s])
        div = gu[..., 0, 0] + gu[..., 1, 1]
        Fp = -np.einsum("tq,q,tq->t", w, bq, div)
        return Fv.reshape(-1, 18), Fp

    Fv_loc, Fp = map_elements(kernel, mesh.n_triangles, threads)
    F_v = scatter_vector(Fv_loc, dofmap.bubble_velocity_dofs, dofmap.N_v)
    return ResidualVectors(F_v, Fp)


class _Sub:
    """Row slice of a DofMap, enough for the p2/p1 evaluation helpers."""

    def __init__(self, dofmap, s):
        self.velocity_dofs = dofmap.velocity_dofs[s]
        self.pressure_dofs = dofmap.pressure_dofs[s]
        self.n_triangles = len(self.pressure_dofs)


def assemble_error_matrices(mesh, dofmap, rule, threads=1):
    """Diagonal ``D_v``, coupling ``B``, ``D_p`` and ``c_s`` on the bubble space."""
    area, G = element_geometry(mesh)
    bq = ELEMENT_BUBBLE(rule.points)

    def kernel(s):
        _, gb = _bubble_tabulation(G, dofmap, rule, s)
        w = area[s, None] * rule.weights
        K = np.einsum("tq,tqad,tqbd->tab", w, gb, gb)
        Bloc = -np.einsum("tq,q,tqac->tac", w, bq, gb).reshape(-1, 18)
        mass = np.einsum("tq,q->t", w, bq**2)
        mean = np.einsum("tq,q->t", w, bq)
        return K, Bloc, mass, mean

    K, Bloc, mass, mean = map_elements(kernel, mesh.n_triangles, threads)
    bd = dofmap.bubble_velocity_dofs
    nt = mesh.n_triangles
    local_diag = np.einsum("taa->ta", K)
    D_v = scatter_vector(np.repeat(local_diag, 2, axis=1), bd, dofmap.N_v)
    B = scatter_matrix(Bloc[:, :, None], bd, np.arange(nt)[:, None], (dofmap.N_v, nt))
    with np.errstate(divide="ignore"):
        Dinv = np.where(D_v > 0, 1.0 / D_v, 0.0)
    D_p = np.asarray(B.multiply(B).T @ Dinv).ravel()
    # pressure bubble j lives on element j only
    c_s = int(np.bincount(np.arange(nt), minlength=nt).max()) if nt else 0
    return ErrorMatrices(D_v, B, D_p, c_s, local_diag, K, mass, mean)


def assemble_bubble_stiffness(mesh, dofmap, matrices):
    """Full vector bubble stiffness from the stored local matrices."""
    K = matrices.local_stiffness
    Kv = np.einsum("tab,cd->tacbd", K, np.eye(2)).reshape(-1, 18, 18)
    bd = dofmap.bubble_velocity_dofs
    return scatter_matrix(Kv, bd, bd, (dofmap.N_v, dofmap.N_v))


def _check_diagonals(matrices):
    bad = np.flatnonzero(~(matrices.D_v > 0))
    if bad.size:
        raise DegenerateBubbleError(f"D_v[{bad[0]}] = {matrices.D_v[bad[0]]!r} is not positive",
                                    int(bad[0]))
    bad = np.flatnonzero(~(matrices.D_p > 0))
    if bad.size:
        raise DegenerateBubbleError(f"D_p[{bad[0]}] = {matrices.D_p[bad[0]]!r} is not positive",
                                    int(bad[0]))


def solve_third_problem(matrices, residuals):
    """Two diagonal solves and two sparse mat-vecs."""
    _check_diagonals(matrices)
    Dinv = 1.0 / matrices.D_v
    B = matrices.B
    rhs_p = residuals.F_p + B.T @ (Dinv * residuals.F_v)
    x_p = rhs_p / (matrices.c_s * matrices.D_p)
    x_u = Dinv * (residuals.F_v - B @ x_p)
    return ErrorCoefficients(x_u, x_p, "third")


def schur_matrix(matrices):
    Dinv = sp.diags(1.0 / matrices.D_v)
    S = (matrices.B.T @ Dinv @ matrices.B).tocsr()
    S.sort_indices()
    return S


def solve_second_problem(matrices, residuals):
    """Exact pressure Schur solve with the diagonal velocity block."""
    _check_diagonals(matrices)
    Dinv = 1.0 / matrices.D_v
    B = matrices.B
    S = schur_matrix(matrices)
    rhs_p = residuals.F_p + B.T @ (Dinv * residuals.F_v)
    try:
        x_p = _solver.solve(_solver.factor(S), rhs_p)
    except _solver.SingularSystemError as exc:
        raise _solver.SingularSystemError(f"singular Schur complement: {exc}", exc.dof) from None
    x_u = Dinv * (residuals.F_v - B @ x_p)
    return ErrorCoefficients(x_u, x_p, "second")


def first_problem_matrix(mesh, dofmap, matrices):
    """Symmetric bordered matrix of the full bubble saddle problem.

    Rows are ``[A B 0; B^T 0 m; 0 m^T 0]`` with ``m_j = int psi_j``; the
    pressure rows carry ``-F_p`` on the right-hand side.
    """
    A = assemble_bubble_stiffness(mesh, dofmap, matrices)
    m = matrices.pressure_mean.reshape(-1, 1)
    K = sp.bmat([[A, matrices.B, None],
                 [matrices.B.T, None, sp.csr_matrix(m)],
                 [None, sp.csr_matrix(m.T), None]], format="csr")
    return K


def solve_first_problem(mesh, dofmap, matrices, residuals):
    """Full saddle solve over the bubble space with a pressure-mean multiplier."""
    K = first_problem_matrix(mesh, dofmap, matrices)
    rhs = np.concatenate([residuals.F_v, -residuals.F_p, [0.0]])
    x = _solver.solve(_solver.factor(K), rhs)
    nv = matrices.N_v
    return ErrorCoefficients(x[:nv], x[nv:-1], "first", float(x[-1]))


def local_estimators(coefficients, u_hat, mesh, dofmap, rule, matrices):
    """Per-element pressure, velocity and divergence indicators.

    For the second and third problems the velocity part is the diagonal
    seminorm ``sqrt(sum_j |x_j phi_j|_{1,T}^2)``; for the first problem it
    is the true ``|e_u|_{1,T}``.
    """
    area, G = element_geometry(mesh)
    w = area[:, None] * rule.weights
    bq = ELEMENT_BUBBLE(rule.points)
    ep = coefficients.x_p[:, None] * bq[None, :]
    eta_p = np.sqrt(np.einsum("tq,tq->t", w, ep**2))

    bd = dofmap.bubble_velocity_dofs
    xu = np.where(bd >= 0, coefficients.x_u[np.maximum(bd, 0)], 0.0).reshape(-1, 9, 2)
    if coefficients.problem == "first":
        eta_v_sq = np.einsum("tac,tab,tbc->t", xu, matrices.local_stiffness, xu)
    else:
        eta_v_sq = np.einsum("tac,ta->t", xu**2, matrices.local_diag)
    eta_v = np.sqrt(np.maximum(eta_v_sq, 0.0))

    gu = p2_gradients(u_hat, dofmap, physical_gradients(tabulate(P2_BASIS, rule.points), G))
    div = gu[..., 0, 0] + gu[..., 1, 1]
    eta_d = np.sqrt(np.einsum("tq,tq->t", w, div**2))
    return LocalEstimates(eta_p, eta_v, eta_d)


def global_estimator(local, coefficients=None, matrices=None, div_sq=None, A_W=None):
    """``eta_G = sqrt(sum_T eta_T^2)`` plus an independent norm breakdown.

    The breakdown ``||(e_u, e_p)||_D^2 + ||div u_h||^2`` is recomputed from
    the global coefficient vectors when they are supplied (``A_W`` switches
    the velocity part to the full stiffness, for the first problem).
    """
    eta_g = float(np.sqrt(np.sum(local.eta_sq)))
    if coefficients is None or matrices is None:
        return GlobalEstimate(eta_g)
    x_u, x_p = coefficients.x_u, coefficients.x_p
    vel = float(x_u @ (A_W @ x_u)) if A_W is not None else float(x_u @ (matrices.D_v * x_u))
    pres = float(x_p @ (matrices.pressure_mass * x_p))
    return GlobalEstimate(eta_g, vel + pres,
                          float(div_sq) if div_sq is not None else math.nan)


_VERTICES = np.eye(3)


def divergence_norm_sq(u_hat, mesh, dofmap, rule=None):
    """``||div u_h||^2`` without quadrature.

    ``div u_h`` is linear on each element, so its square integrates exactly
    from the three vertex values: ``|T|/12 (sum d_i^2 + (sum d_i)^2)``.
    ``rule`` is accepted for signature symmetry and ignored.
    """
    area, G = element_geometry(mesh)
    gu = p2_gradients(u_hat, dofmap, physical_gradients(tabulate(P2_BASIS, _VERTICES), G))
    d = gu[..., 0, 0] + gu[..., 1, 1]
    return float(np.sum(area / 12.0 * (np.sum(d**2, axis=1) + np.sum(d, axis=1) ** 2)))


def estimate(mesh, dofmap, u_hat, p_hat, f, rule, problem="third", threads=1,
             check_identity=True):
    """Residuals, error matrices, chosen error problem and indicators."""
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}")
    res = assemble_error_residuals(mesh, dofmap, u_hat, p_hat, f, rule, threads)
    mats = assemble_error_matrices(mesh, dofmap, rule, threads)
    A_W = None
    if problem == "third":
        coef = solve_third_problem(mats, res)
    elif problem == "second":
        coef = solve_second_problem(mats, res)
    else:
        coef = solve_first_problem(mesh, dofmap, mats, res)
        A_W = assemble_bubble_stiffness(mesh, dofmap, mats)
    loc = local_estimators(coef, u_hat, mesh, dofmap, rule, mats)
    div_sq = divergence_norm_sq(u_hat, mesh, dofmap, rule) if check_identity else None
    glob = global_estimator(loc, coef, mats, div_sq, A_W)
    return Estimate(res, mats, coef, loc, glob)


def oscillation(f, mesh, rule):
    """Data oscillation ``h_T ||f - Pi_1 f||_T`` per element and globally.

    ``Pi_1`` is the elementwise L2 projection onto linear vector fields.
    Returns ``(osc, osc_T)``.
    """
    area, _ = element_geometry(mesh)
    xq = rule.physical_points(mesh.points[mesh.triangles])
    fq = np.asarray(f(xq[..., 0].ravel(), xq[..., 1].ravel()), dtype=float)
    fq = fq.reshape(mesh.n_triangles, len(rule), 2)
    lam = tabulate(P1_BASIS, rule.points).values     # (nq, 3)
    w = area[:, None] * rule.weights
    M = np.einsum("tq,qa,qb->tab", w, lam, lam)
    rhs = np.einsum("tq,qa,tqc->tac", w, lam, fq)
    coef = np.linalg.solve(M, rhs)
    proj = np.einsum("qa,tac->tqc", lam, coef)
    l2 = np.einsum("tq,tqc->t", w, (fq - proj) ** 2)
    osc_T = mesh.diameters * np.sqrt(l2)
    return float(np.sqrt(np.sum(osc_T**2))), osc_T


def effectivity(eta_g, true_error):
    """``eta_G / ||(u - u_h, p - p_h)||_V``; NaN when the true error is zero."""
    if not true_error > 0.0:
        log.warning("effectivity undefined for true error %r", true_error)
        return math.nan
    return float(eta_g) / float(true_error)


def discrete_inf_sup_probe(mesh, dofmap, rule, drop_edge_modes=False):
    """Smallest generalized singular value of the bubble coupling.

    ``mu_h^2 = min eig (B^T A_W^-1 B, M_p)`` with ``M_p`` the bubble pressure
    mass matrix. Dense, for meshes of a few dozen elements.
    """
    mats = assemble_error_matrices(mesh, dofmap, rule)
    A = assemble_bubble_stiffness(mesh, dofmap, mats).toarray()
    B = mats.B.toarray()
    if drop_edge_modes:
        keep = np.repeat(np.arange(dofmap.n_bubble_scalar) >= 2 * dofmap.n_interior_edges, 2)
        A, B = A[np.ix_(keep, keep)], B[keep]
    S = B.T @ sla.solve(A, B, assume_a="pos")
    ev = sla.eigh(0.5 * (S + S.T), np.diag(mats.pressure_mass), eigvals_only=True)
    return float(np.sqrt(max(ev[0], 0.0)))


def write_estimates_csv(local, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["element_id", "eta_p", "eta_v", "eta_d", "eta_total"])
        for t, row in enumerate(zip(local.eta_p, local.eta_v, local.eta_d, local.eta)):
            wr.writerow([t] + [repr(float(v)) for v in row])
