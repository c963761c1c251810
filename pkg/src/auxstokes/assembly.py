"""Taylor-Hood assembly of the Stokes saddle-point system.

Blocks follow ``A[l, j] = a(phi_j, phi_l)`` and ``B[l, j] = -b(psi_j, phi_l)``
with ``a(w, v) = int grad w : grad v`` and ``b(v, q) = int q div v``. The
solved system is the symmetric form::

    [ A   B   0 ] [u]   [f  ]
    [ B^T 0   m ] [p] = [g_p]
    [ 0   m^T 0 ] [mu]  [0  ]

where ``m_j = int psi_j`` pins the pressure mean to zero.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .spaces import (P1_BASIS, P2_BASIS, element_geometry, physical_gradients,
                     tabulate)


def map_elements(kernel, n, threads=1):
    """Run ``kernel(slice)`` over contiguous element blocks and concatenate.

    Blocks are joined in element order, so the result does not depend on
    ``threads``.
    """
    if threads is None or threads <= 1 or n < 2 * threads:
        return kernel(slice(0, n))
    bounds = np.linspace(0, n, threads + 1).astype(int)
    blocks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(kernel, blocks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


def scatter_matrix(local, rows, cols, shape):
    """Sum (nt, r, c) local matrices into a CSR matrix; negative ids are dropped."""
    R = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    C = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    V = local.ravel()
    keep = (R >= 0) & (C >= 0)
    M = sp.coo_matrix((V[keep], (R[keep], C[keep])), shape=shape).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return M


def scatter_vector(local, ids, n):
    ids = ids.ravel()
    keep = ids >= 0
    return np.bincount(ids[keep], weights=local.ravel()[keep], minlength=n)


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    m: np.ndarray
    rhs_v: np.ndarray
    rhs_p: np.ndarray
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray

    @property
    def n_velocity(self):
        return self.A.shape[0]

    @property
    def n_pressure(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_velocity: int
    n_pressure: int

    def split(self, x):
        nu, npr = self.n_velocity, self.n_pressure
        return x[:nu], x[nu:nu + npr], float(x[nu + npr])


def assemble_taylor_hood(mesh, dofmap, rule, threads=1):
    """Assemble A, B and the pressure mean vector on Taylor-Hood bases."""
    if np.any(mesh.signed_areas <= 0.0):
        raise ValueError("degenerate element (non-positive area)")
    area, G = element_geometry(mesh)
    tab2 = tabulate(P2_BASIS, rule.points)
    tab1 = tabulate(P1_BASIS, rule.points)
    nt = mesh.n_triangles

    def kernel(s):
        grads = physical_gradients(tab2, G[s])
        w = area[s, None] * rule.weights
        K = np.einsum("tq,tqad,tqbd->tab", w, grads, grads)
        Aloc = np.einsum("tab,cd->tacbd", K, np.eye(2)).reshape(-1, 12, 12)
        Bloc = -np.einsum("tq,qj,tqac->tacj", w, tab1.values, grads).reshape(-1, 12, 3)
        return Aloc, Bloc

    Aloc, Bloc = map_elements(kernel, nt, threads)
    vd = dofmap.velocity_dofs
    pd = dofmap.pressure_dofs
    nu, npr = dofmap.n_velocity, dofmap.n_pressure
    A = scatter_matrix(Aloc, vd, vd, (nu, nu))
    B = scatter_matrix(Bloc, vd, pd, (nu, npr))
    m = scatter_vector(np.repeat(area[:, None] / 3.0, 3, axis=1), pd, npr)
    return SaddleSystem(A, B, m, np.zeros(nu), np.zeros(npr),
                        dofmap.dirichlet.copy(), np.zeros(nu))


def assemble_rhs(f, mesh, dofmap, rule):
    """Load vector ``int f . phi_l`` over velocity dofs.

    ``f(x, y)`` returns an (n, 2) array.
    """
    area, _ = element_geometry(mesh)
    tab2 = tabulate(P2_BASIS, rule.points)
    xq = rule.physical_points(mesh.points[mesh.triangles])
    fq = np.asarray(f(xq[..., 0].ravel(), xq[..., 1].ravel()), dtype=float)
    fq = fq.reshape(mesh.n_triangles, len(rule), 2)
    w = area[:, None] * rule.weights
    Floc = np.einsum("tq,qa,tqc->tac", w, tab2.values, fq).reshape(-1, 12)
    return scatter_vector(Floc, dofmap.velocity_dofs, dofmap.n_velocity)


def interpolate_velocity(g, dofmap):
    """Nodal P2 interpolant of ``g(x, y) -> (n, 2)`` as a velocity vector."""
    xy = dofmap.node_coords
    return np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float).reshape(-1, 2).ravel()


def apply_dirichlet(system, g=None, dofmap=None):
    """Pin boundary velocity dofs to the nodal interpolant of ``g``.

    Coupling to pinned dofs moves to the right-hand side and their rows and
    columns become identity. ``g`` is a callable ``g(x, y) -> (n, 2)``, a
    full-length velocity vector, or ``None`` for homogeneous data.
    """
    D = system.dirichlet_mask
    gD = np.zeros(system.n_velocity)
    if callable(g):
        gD[D] = interpolate_velocity(g, dofmap)[D]
    elif g is not None:
        gD[D] = np.asarray(g, dtype=float)[D]
    rhs_v = system.rhs_v - system.A @ gD
    rhs_v[D] = gD[D]
    rhs_p = system.rhs_p - system.B.T @ gD
    P = sp.diags((~D).astype(float))
    A = (P @ system.A @ P + sp.diags(D.astype(float))).tocsr()
    A.sort_indices()
    B = (P @ system.B).tocsr()
    return replace(system, A=A, B=B, rhs_v=rhs_v, rhs_p=rhs_p, dirichlet_values=gD)


def attach_mean_zero(system):
    """Border the system with the pressure-mean multiplier row and column."""
    m = system.m.reshape(-1, 1)
    K = sp.bmat([[system.A, system.B, None],
                 [system.B.T, None, sp.csr_matrix(m)],
                 [None, sp.csr_matrix(m.T), None]], format="csr")
    K.sort_indices()
    rhs = np.concatenate([system.rhs_v, system.rhs_p, [0.0]])
    return AugmentedSystem(K, rhs, system.n_velocity, system.n_pressure)


def assemble_divergence_gram(mesh, dofmap, rule):
    """Matrix of ``int div(phi_i) div(phi_j)`` on velocity dofs."""
    area, G = element_geometry(mesh)
    grads = physical_gradients(tabulate(P2_BASIS, rule.points), G)
    div = grads.reshape(mesh.n_triangles, len(rule), 12)  # d(phi_a)/dx_c at 2a+c
    w = area[:, None] * rule.weights
    loc = np.einsum("tq,tqi,tqj->tij", w, div, div)
    vd = dofmap.velocity_dofs
    return scatter_matrix(loc, vd, vd, (dofmap.n_velocity,) * 2)


def write_coo(matrix, path):
    """Debug dump: one ``i j value`` line per stored entry, 17 significant digits."""
    M = sp.coo_matrix(matrix)
    order = np.lexsort((M.col, M.row))
    with open(path, "w") as fh:
        for i, j, v in zip(M.row[order], M.col[order], M.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")
