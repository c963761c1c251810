"""Barycentric polynomial bases and degree-of-freedom maps.

Velocity/pressure approximation uses Taylor-Hood P2/P1 Lagrange bases. The
auxiliary (error) space uses, per velocity component and element, nine
bubble modes spanning a complement of the quadratic edge bubbles inside the
quartic edge+element bubbles:

* per edge ``(i, j)``: ``l_i l_j (l_i - l_j)`` and ``l_i^2 l_j^2``
* per element: ``b``, ``b l_0``, ``b l_1`` with ``b = l_0 l_1 l_2``

and a single pressure bubble ``b`` per element. Local edge ``k`` is the edge
opposite local vertex ``k``, i.e. between local vertices ``k+1`` and ``k+2``
(mod 3).
"""

from dataclasses import dataclass
from math import factorial

import numpy as np

# local vertex pair (i, j) of the edge opposite vertex k
EDGE_VERTICES = ((1, 2), (2, 0), (0, 1))


class BaryPoly:
    """Polynomial in the three barycentric coordinates.

    Stored as ``{(a, b, c): coefficient}`` for monomials
    ``l_0^a l_1^b l_2^c``.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        clean = {}
        for exps, coef in dict(terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if coef != 0:
                clean[exps] = clean.get(exps, 0) + coef
        self.terms = {e: c for e, c in clean.items() if c != 0}

    @classmethod
    def lam(cls, i):
        e = [0, 0, 0]
        e[i] = 1
        return cls({tuple(e): 1.0})

    @classmethod
    def const(cls, c):
        return cls({(0, 0, 0): float(c)})

    def __repr__(self):
        if not self.terms:
            return "BaryPoly(0)"
        parts = [f"{c:+g}*l^{e}" for e, c in sorted(self.terms.items())]
        return "BaryPoly(" + " ".join(parts) + ")"

    @property
    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def __add__(self, other):
        if not isinstance(other, BaryPoly):
            other = BaryPoly.const(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return BaryPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return BaryPoly({e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, BaryPoly):
            return BaryPoly({e: c * other for e, c in self.terms.items()})
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = (e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2])
                out[e] = out.get(e, 0) + c1 * c2
        return BaryPoly(out)

    __rmul__ = __mul__

    def __pow__(self, n):
        out = BaryPoly.const(1.0)
        for _ in range(n):
            out = out * self
        return out

    def __call__(self, lam):
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        val = np.zeros(len(lam))
        for (a, b, c), coef in self.terms.items():
            val += coef * lam[:, 0] ** a * lam[:, 1] ** b * lam[:, 2] ** c
        return val

    def diff(self, i):
        """Formal partial derivative with respect to ``l_i``."""
        out = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            e2 = list(e)
            e2[i] -= 1
            out[tuple(e2)] = out.get(tuple(e2), 0) + c * e[i]
        return BaryPoly(out)

    def grad_bary(self, lam):
        """(n, 3) formal derivatives with respect to the barycentrics."""
        return np.column_stack([self.diff(i)(lam) for i in range(3)])

    def gradient(self, lam, grad_lambda):
        """Cartesian gradient, (n, 2), given the (3, 2) gradients of ``l_i``."""
        return self.grad_bary(lam) @ np.asarray(grad_lambda)

    def integrate(self, area):
        """Exact integral over a triangle of the given area."""
        return sum(c * 2.0 * area * factorial(a) * factorial(b) * factorial(d)
                   / factorial(a + b + d + 2) for (a, b, d), c in self.terms.items())


L0, L1, L2 = (BaryPoly.lam(i) for i in range(3))
_L = (L0, L1, L2)

P1_BASIS = (L0, L1, L2)
P2_BASIS = tuple(
    [_L[i] * (2 * _L[i] - 1) for i in range(3)]
    + [4 * _L[i] * _L[j] for i, j in EDGE_VERTICES]
)
ELEMENT_BUBBLE = L0 * L1 * L2


def p2_eval(local_index, point):
    """Value and reference-coordinate gradient of a P2 shape function.

    The reference triangle is (0,0), (1,0), (0,1) with ``l_1 = xi``,
    ``l_2 = eta``. Indices 0..2 are vertex functions, 3..5 the midpoint of
    the edge opposite vertex 0..2.
    """
    if not 0 <= local_index < 6:
        raise IndexError(f"P2 local index {local_index} out of range 0..5")
    phi = P2_BASIS[local_index]
    lam = np.asarray(point, dtype=float).reshape(1, 3)
    g = phi.grad_bary(lam)[0]
    return float(phi(lam)[0]), np.array([g[1] - g[0], g[2] - g[0]])


def bubble_velocity_modes(vertex_ids=None):
    """The nine scalar velocity bubble modes of one element.

    Returns a list of ``(poly, kind, index)`` where ``kind`` is ``"edge"``
    (``index`` = local edge) or ``"element"``. If global ``vertex_ids`` are
    given, each antisymmetric cubic edge mode is oriented from the smaller
    global vertex id so neighbouring elements produce matching traces.
    """
    modes = []
    for k, (i, j) in enumerate(EDGE_VERTICES):
        cubic = _L[i] * _L[j] * (_L[i] - _L[j])
        if vertex_ids is not None and vertex_ids[i] > vertex_ids[j]:
            cubic = -cubic
        modes.append((cubic, "edge", k))
        modes.append((_L[i] ** 2 * _L[j] ** 2, "edge", k))
    b = ELEMENT_BUBBLE
    modes += [(b, "element", None), (b * L0, "element", None), (b * L1, "element", None)]
    return modes


BUBBLE_MODES = tuple(m for m, _, _ in bubble_velocity_modes())


def bubble_pressure_mode():
    return ELEMENT_BUBBLE


# monomial list l0l1l2, l_i^2 l_j, l_i^2 l_j^2, b l_i: linearly dependent and
# containing the quadratic edge bubbles; kept only for rank diagnostics
LISTED_MONOMIALS = (
    (1, 1, 1), (0, 2, 1), (0, 1, 2), (2, 0, 1), (1, 0, 2), (2, 1, 0), (1, 2, 0),
    (0, 2, 2), (2, 0, 2), (2, 2, 0), (2, 1, 1), (1, 2, 1), (1, 1, 2),
)


@dataclass(frozen=True)
class Tabulation:
    values: np.ndarray   # (nq, nb)
    dlam: np.ndarray     # (nq, nb, 3)


def tabulate(polys, points):
    values = np.column_stack([p(points) for p in polys])
    dlam = np.stack([p.grad_bary(points) for p in polys], axis=1)
    return Tabulation(values, dlam)


def element_geometry(mesh):
    """Areas (nt,) and barycentric gradients (nt, 3, 2)."""
    p = mesh.points[mesh.triangles]
    area = mesh.signed_areas
    g = np.empty((len(p), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / (2 * area)
        g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / (2 * area)
    return area, g


def physical_gradients(tab, grad_lambda):
    """(nt, nq, nb, 2) Cartesian gradients of tabulated functions."""
    return np.einsum("qbi,tid->tqbd", tab.dlam, grad_lambda)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering for Taylor-Hood and bubble spaces.

    Velocity dofs are ``2 * node + component`` with P2 nodes numbered
    vertices first, then edges. Bubble velocity dofs are ``2 * mode +
    component`` with scalar modes numbered over interior edges (two each, in
    edge order) and then elements (three each). Bubble modes on boundary
    edges are excluded.
    """

    n_vertices: int
    n_edges: int
    n_triangles: int
    p2_nodes: np.ndarray        # (nt, 6)
    node_coords: np.ndarray     # (nv + ne, 2)
    dirichlet: np.ndarray       # (n_velocity,) bool
    pressure_dofs: np.ndarray   # (nt, 3)
    bubble_nodes: np.ndarray    # (nt, 9), -1 for excluded modes
    bubble_sign: np.ndarray     # (nt, 9) orientation of each mode
    n_bubble_scalar: int
    n_interior_edges: int

    @property
    def n_velocity(self):
        return 2 * (self.n_vertices + self.n_edges)

    @property
    def n_pressure(self):
        return self.n_vertices

    @property
    def n_dofs(self):
        """Taylor-Hood dofs including boundary ones."""
        return self.n_velocity + self.n_pressure

    @property
    def N_v(self):
        return 2 * self.n_bubble_scalar

    @property
    def N_p(self):
        return self.n_triangles

    @property
    def velocity_dofs(self):
        """(nt, 12) global velocity dofs, local order ``2 * node + comp``."""
        n = self.p2_nodes
        return np.stack([2 * n, 2 * n + 1], axis=-1).reshape(len(n), 12)

    @property
    def bubble_velocity_dofs(self):
        """(nt, 18) bubble velocity dofs in local order ``2 * mode + comp``; -1 if excluded."""
        n = self.bubble_nodes
        d = np.stack([2 * n, 2 * n + 1], axis=-1).reshape(len(n), 18)
        d[np.repeat(n < 0, 2, axis=1)] = -1
        return d


def build_dof_maps(mesh):
    e = mesh.edges
    nv, ne, nt = mesh.n_vertices, e.n_edges, mesh.n_triangles
    tri = mesh.triangles
    p2_nodes = np.hstack([tri, nv + e.element_edges])
    mids = 0.5 * (mesh.points[e.edges[:, 0]] + mesh.points[e.edges[:, 1]])
    node_coords = np.vstack([mesh.points, mids])

    bnodes = np.zeros(nv + ne, dtype=bool)
    bnodes[e.edges[e.boundary].ravel()] = True
    bnodes[nv + np.flatnonzero(e.boundary)] = True
    dirichlet = np.repeat(bnodes, 2)

    interior = ~e.boundary
    n_int = int(interior.sum())
    edge_rank = np.full(ne, -1, dtype=np.int64)
    edge_rank[interior] = np.arange(n_int)
    bubble = np.empty((nt, 9), dtype=np.int64)
    sign = np.ones((nt, 9))
    for k, (i, j) in enumerate(EDGE_VERTICES):
        r = edge_rank[e.element_edges[:, k]]
        bubble[:, 2 * k] = np.where(r >= 0, 2 * r, -1)
        bubble[:, 2 * k + 1] = np.where(r >= 0, 2 * r + 1, -1)
        sign[:, 2 * k] = np.where(tri[:, i] < tri[:, j], 1.0, -1.0)
    bubble[:, 6:9] = 2 * n_int + 3 * np.arange(nt)[:, None] + np.arange(3)
    return DofMap(nv, ne, nt, p2_nodes, node_coords, dirichlet, tri.copy(),
                  bubble, sign, 2 * n_int + 3 * nt, n_int)


def p2_local(u, dofmap):
    """Per-element P2 velocity coefficients, (nt, 6, 2)."""
    return np.asarray(u)[dofmap.velocity_dofs].reshape(dofmap.n_triangles, 6, 2)


def p2_values(u, dofmap, tab):
    """Velocity values at tabulated points, (nt, nq, 2)."""
    return np.einsum("qa,tac->tqc", tab.values, p2_local(u, dofmap))


def p2_gradients(u, dofmap, grads):
    """Velocity gradients ``du_c/dx_d`` at tabulated points, (nt, nq, 2, 2)."""
    return np.einsum("tqad,tac->tqcd", grads, p2_local(u, dofmap))


def p1_values(p, dofmap, tab):
    """Pressure values at tabulated points, (nt, nq)."""
    return np.einsum("qa,ta->tq", tab.values, np.asarray(p)[dofmap.pressure_dofs])
