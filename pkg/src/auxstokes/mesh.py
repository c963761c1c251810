"""Conforming triangle meshes with red-green refinement.

A :class:`Mesh` is immutable. Refinement keeps a forest of red (regular)
refinements; the conforming mesh is the set of red leaves plus a green
closure that bisects every leaf with exactly one hanging midpoint. Green
triangles are recomputed from scratch on every call to :func:`refine`, so a
green pair is implicitly coarsened back to its parent before that parent is
red-refined, and greens are never refined again.

Plain-text format written by :func:`format_mesh`::

    nv nt ne
    v x y            (nv lines)
    t i j k state    (nt lines; state is unrefined, red or green)
    e i j tag        (ne lines; tag is a boundary tag or "interior")
"""

import logging
import warnings
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)

UNREFINED, RED, GREEN = 0, 1, 2
STATE_NAMES = ("unrefined", "red", "green")
INTERIOR = "interior"
MIN_ANGLE_FLOOR = 10.0


class MeshError(ValueError):
    """Structural problem with a mesh (degenerate, non-manifold, bad ids)."""


class MeshFormatError(MeshError):
    """Parse error in a mesh file; carries the offending line number."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _key(a, b):
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class EdgeTable:
    """Edges of a triangulation.

    ``edges`` holds sorted vertex pairs ordered by (min id, max id).
    ``element_edges[t, k]`` is the edge of triangle ``t`` opposite its local
    vertex ``k``. ``neighbors`` lists the one or two adjacent triangles
    (``-1`` padded).
    """

    edges: np.ndarray
    neighbors: np.ndarray
    boundary: np.ndarray
    element_edges: np.ndarray
    tags: tuple

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_boundary(self):
        return int(self.boundary.sum())


@dataclass(frozen=True)
class _Hierarchy:
    leaves: np.ndarray        # red leaves, (nl, 3)
    leaf_state: np.ndarray    # UNREFINED or RED per leaf
    midpoints: dict           # sorted edge key -> midpoint vertex id
    mid_parent: dict          # midpoint vertex id -> sorted edge key


class Mesh:
    """Conforming triangulation of a polygonal domain.

    Parameters
    ----------
    points : array_like, shape (nv, 2)
        Vertex coordinates.
    triangles : array_like, shape (nt, 3)
        Counter-clockwise vertex ids.
    boundary_tags : dict, optional
        Maps sorted vertex pairs to a tag name. Boundary edges without an
        entry are tagged ``"boundary"``. Entries for non-edges are ignored
        (refinement keeps the tags of ancestor edges around).
    state : array_like, optional
        Refinement state per triangle (``UNREFINED``, ``RED``, ``GREEN``).
    """

    def __init__(self, points, triangles, boundary_tags=None, state=None,
                 *, _hierarchy=None, _leaf_of=None):
        self.points = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        self.points.setflags(write=False)
        self.triangles.setflags(write=False)
        nv = len(self.points)
        if not np.all(np.isfinite(self.points)):
            raise MeshError("non-finite vertex coordinates")
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= nv:
                raise MeshError("triangle references a missing vertex")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise MeshError("triangle with repeated vertex ids")
            bad = np.flatnonzero(self.signed_areas <= 0.0)
            if bad.size:
                raise MeshError(f"triangle {bad[0]} is degenerate or clockwise")
        self.boundary_tags = dict(boundary_tags or {})
        if state is None:
            state = np.zeros(len(self.triangles), dtype=np.int8)
        self.state = np.asarray(state, dtype=np.int8)
        if _hierarchy is None:
            _hierarchy = _Hierarchy(self.triangles.copy(), self.state.copy(), {}, {})
            _leaf_of = np.arange(len(self.triangles))
        self._hier = _hierarchy
        self.leaf_of = _leaf_of

    def __repr__(self):
        return f"Mesh(nv={self.n_vertices}, nt={self.n_triangles})"

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def signed_areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths(self):
        """(nt, 3) lengths; column k is the edge opposite local vertex k."""
        p = self.points[self.triangles]
        return np.stack([
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        ], axis=1)

    @property
    def diameters(self):
        return self.edge_lengths.max(axis=1)

    @property
    def centroids(self):
        return self.points[self.triangles].mean(axis=1)

    @cached_property
    def edges(self):
        return build_edges(self)

    def angles(self):
        """Interior angles in degrees, (nt, 3), angle k at local vertex k."""
        a, b, c = self.edge_lengths.T
        cos = np.stack([
            (b**2 + c**2 - a**2) / (2 * b * c),
            (c**2 + a**2 - b**2) / (2 * c * a),
            (a**2 + b**2 - c**2) / (2 * a * b),
        ], axis=1)
        return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))

    def min_angle(self):
        return float(self.angles().min())

    def boundary_vertices(self):
        e = self.edges
        return np.unique(e.edges[e.boundary])


def build_edges(mesh):
    """Build the :class:`EdgeTable` of ``mesh``.

    Raises
    ------
    MeshError
        If an edge is shared by more than two triangles.
    """
    t = mesh.triangles
    nt = len(t)
    if nt == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return EdgeTable(empty, empty, np.zeros(0, bool), np.zeros((0, 3), np.int64), ())
    pairs = np.stack([t[:, [1, 2, 0]], t[:, [2, 0, 1]]], axis=-1).reshape(-1, 2)
    keys = np.sort(pairs, axis=1)
    edges, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if np.any(counts > 2):
        e = edges[np.argmax(counts > 2)]
        raise MeshError(f"non-manifold edge ({e[0]}, {e[1]}) shared by more than two triangles")
    owner = np.repeat(np.arange(nt), 3)
    order = np.argsort(inv, kind="stable")
    sinv = inv[order]
    first = np.r_[True, sinv[1:] != sinv[:-1]]
    neighbors = np.full((len(edges), 2), -1, dtype=np.int64)
    neighbors[sinv[first], 0] = owner[order][first]
    neighbors[sinv[~first], 1] = owner[order][~first]
    boundary = counts == 1
    tags = tuple(
        mesh.boundary_tags.get((int(a), int(b)), "boundary") if bd else INTERIOR
        for (a, b), bd in zip(edges, boundary)
    )
    return EdgeTable(edges, neighbors, boundary, inv.reshape(nt, 3), tags)


def hanging_vertices(mesh):
    """Vertices sitting at the midpoint of a one-sided edge.

    Red-green refinement can only produce hanging nodes at edge midpoints,
    so this scan is exhaustive for meshes produced by :func:`refine`.
    """
    e = mesh.edges
    lookup = {tuple(p): i for i, p in enumerate(mesh.points.tolist())}
    p = mesh.points
    out = []
    for a, b in e.edges[e.boundary]:
        m = ((p[a, 0] + p[b, 0]) / 2, (p[a, 1] + p[b, 1]) / 2)
        if m in lookup:
            out.append(lookup[m])
    return sorted(out)


def shape_regularity(mesh):
    """Largest ratio of element diameter to inradius.

    Raises
    ------
    MeshError
        For a degenerate triangle.
    """
    area = mesh.areas
    if np.any(area <= 0.0):
        raise MeshError("degenerate triangle")
    s = 0.5 * mesh.edge_lengths.sum(axis=1)
    return float(np.max(mesh.diameters * s / area))


def make_unit_square_mesh(n, pattern="diagonal"):
    """Structured mesh of (0,1)^2.

    ``pattern="diagonal"`` cuts each cell along its lower-left to upper-right
    diagonal (``2 n^2`` triangles); ``"cross"`` adds the cell centre and
    splits each cell into four (``4 n^2`` triangles, mirror symmetric).
    Boundary edges are tagged ``bottom``, ``right``, ``top`` and ``left``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if pattern not in ("diagonal", "cross"):
        raise ValueError(f"unknown pattern {pattern!r}")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x)
    points = np.column_stack([X.ravel(), Y.ravel()])
    nc = (n + 1) ** 2
    if pattern == "cross":
        h = 0.5 / n
        C = np.meshgrid(x[:-1] + h, x[:-1] + h)
        points = np.vstack([points, np.column_stack([C[0].ravel(), C[1].ravel()])])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            if pattern == "diagonal":
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                c = nc + j * n + i
                ring = (v00, v10, v11, v01)
                tris.extend((c, ring[k], ring[(k + 1) % 4]) for k in range(4))
    tags = {}
    for i in range(n):
        tags[_key(i, i + 1)] = "bottom"
        top = n * (n + 1)
        tags[_key(top + i, top + i + 1)] = "top"
        tags[_key(i * (n + 1), (i + 1) * (n + 1))] = "left"
        tags[_key(i * (n + 1) + n, (i + 1) * (n + 1) + n)] = "right"
    return Mesh(points, tris, tags)


def make_lshape_mesh(refinements=1):
    """Mesh of the L-shape (-1,1)^2 minus [0,1)x(-1,0].

    The base mesh splits each of the three unit squares into four triangles
    around its centre (12 triangles, reentrant corner at the origin). It is
    uniformly red-refined ``refinements`` times and returned as a fresh
    hierarchy root. All boundary edges are tagged ``dirichlet``.
    """
    corners = [(-1, -1), (0, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    centres = [(-0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
    points = np.array(corners + centres, dtype=float)
    squares = [(0, 1, 3, 2), (2, 3, 6, 5), (3, 4, 7, 6)]  # CCW corner ids
    tris = []
    for c, sq in zip((8, 9, 10), squares):
        for k in range(4):
            tris.append((c, sq[k], sq[(k + 1) % 4]))
    base = Mesh(points, tris)
    tags = {(int(a), int(b)): "dirichlet" for a, b in base.edges.edges[base.edges.boundary]}
    mesh = Mesh(points, tris, tags)
    for _ in range(refinements):
        mesh = refine(mesh, range(mesh.n_triangles))
    return Mesh(mesh.points, mesh.triangles, mesh.boundary_tags)


def refine(mesh, marks):
    """Red-refine the marked triangles and close with red-green rules.

    Marked green triangles refine their red parent instead. Leaves with two
    or more split edges, or with a split edge whose half is split again,
    are red-refined until a fixpoint; leaves with a single split edge are
    bisected (green) towards its midpoint.

    Returns a new :class:`Mesh`; ``mesh`` is untouched.
    """
    if mesh.n_triangles == 0:
        raise MeshError("cannot refine an empty mesh")
    marks = np.unique(np.fromiter((int(m) for m in marks), dtype=np.int64))
    if marks.size == 0:
        return mesh
    if marks[0] < 0 or marks[-1] >= mesh.n_triangles:
        raise MeshError(f"invalid triangle id in marks (have {mesh.n_triangles} triangles)")

    h = mesh._hier
    leaves = h.leaves.tolist()
    nl = len(leaves)
    mid = dict(h.midpoints)
    mid_parent = dict(h.mid_parent)
    tags = dict(mesh.boundary_tags)
    pts = mesh.points.tolist()

    owner = {}
    for L, (a, b, c) in enumerate(leaves):
        for k in (_key(a, b), _key(b, c), _key(c, a)):
            owner.setdefault(k, []).append(L)

    def needs_red(L):
        a, b, c = leaves[L]
        n = 0
        for x, y in ((a, b), (b, c), (c, a)):
            m = mid.get(_key(x, y))
            if m is None:
                continue
            n += 1
            if _key(x, m) in mid or _key(m, y) in mid:
                return True
        return n >= 2

    def coarse_edge(x, y):
        pk = mid_parent.get(y)
        if pk is not None and x in pk:
            return pk
        pk = mid_parent.get(x)
        if pk is not None and y in pk:
            return pk
        return None

    refined = np.zeros(nl, dtype=bool)
    queue = deque(sorted(set(mesh.leaf_of[marks].tolist())))
    while queue:
        L = queue.popleft()
        if refined[L]:
            continue
        refined[L] = True
        a, b, c = leaves[L]
        for x, y in ((a, b), (b, c), (c, a)):
            k = _key(x, y)
            if k in mid:
                continue
            m = len(pts)
            pts.append([(pts[x][0] + pts[y][0]) / 2, (pts[x][1] + pts[y][1]) / 2])
            mid[k] = m
            mid_parent[m] = k
            if k in tags:
                tags[_key(x, m)] = tags[k]
                tags[_key(m, y)] = tags[k]
            for N in owner.get(k, ()):
                if not refined[N] and needs_red(N):
                    queue.append(N)
            pk = coarse_edge(x, y)
            if pk is not None:
                queue.extend(N for N in owner.get(pk, ()) if not refined[N])

    new_leaves, new_lstate = [], []
    for L, (a, b, c) in enumerate(leaves):
        if refined[L]:
            mab, mbc, mca = mid[_key(a, b)], mid[_key(b, c)], mid[_key(c, a)]
            new_leaves += [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mbc, mca, mab)]
            new_lstate += [RED] * 4
        else:
            new_leaves.append((a, b, c))
            new_lstate.append(int(h.leaf_state[L]))

    tris, state, leaf_of = [], [], []
    for L, v in enumerate(new_leaves):
        split = [k for k in range(3) if _key(v[(k + 1) % 3], v[(k + 2) % 3]) in mid]
        if len(split) > 1:
            raise MeshError("red closure left a leaf with two split edges")
        if split:
            k = split[0]
            vk, v1, v2 = v[k], v[(k + 1) % 3], v[(k + 2) % 3]
            m = mid[_key(v1, v2)]
            tris += [(vk, v1, m), (vk, m, v2)]
            state += [GREEN, GREEN]
            leaf_of += [L, L]
        else:
            tris.append(v)
            state.append(new_lstate[L])
            leaf_of.append(L)

    hier = _Hierarchy(np.array(new_leaves, dtype=np.int64),
                      np.array(new_lstate, dtype=np.int8), mid, mid_parent)
    out = Mesh(pts, tris, tags, state, _hierarchy=hier,
               _leaf_of=np.array(leaf_of, dtype=np.int64))
    amin = out.min_angle()
    if amin < MIN_ANGLE_FLOOR:
        warnings.warn(f"minimum angle {amin:.2f} deg below {MIN_ANGLE_FLOOR} deg floor",
                      RuntimeWarning, stacklevel=2)
    log.debug("refine: %d marked -> %d leaves red, nt %d -> %d",
              marks.size, int(refined.sum()), mesh.n_triangles, out.n_triangles)
    return out


def refine_uniform(mesh, times=1):
    for _ in range(times):
        mesh = refine(mesh, range(mesh.n_triangles))
    return mesh


# -- text and VTK formats ---------------------------------------------------

def format_mesh(mesh):
    e = mesh.edges
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {e.n_edges}"]
    lines += [f"v {x!r} {y!r}" for x, y in mesh.points.tolist()]
    lines += [f"t {i} {j} {k} {STATE_NAMES[s]}"
              for (i, j, k), s in zip(mesh.triangles.tolist(), mesh.state.tolist())]
    lines += [f"e {i} {j} {tag}" for (i, j), tag in zip(e.edges.tolist(), e.tags)]
    return "\n".join(lines) + "\n"


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(format_mesh(mesh))


def parse_mesh(text):
    """Parse the plain-text mesh format. Imported meshes start a fresh
    refinement hierarchy; their triangle states are kept for export."""
    lines = text.splitlines()
    if not lines:
        raise MeshFormatError(1, "empty file")
    try:
        nv, nt, ne = (int(s) for s in lines[0].split())
    except ValueError:
        raise MeshFormatError(1, "header must be 'nv nt ne'") from None
    if len(lines) < 1 + nv + nt + ne:
        raise MeshFormatError(len(lines), f"expected {1 + nv + nt + ne} lines")
    points, tris, states, tags = [], [], [], {}
    for lineno in range(2, 2 + nv + nt + ne):
        tok = lines[lineno - 1].split()
        kind = "v" if lineno < 2 + nv else ("t" if lineno < 2 + nv + nt else "e")
        try:
            if kind == "v":
                if len(tok) != 3 or tok[0] != "v":
                    raise ValueError
                points.append((float(tok[1]), float(tok[2])))
            elif kind == "t":
                if len(tok) != 5 or tok[0] != "t" or tok[4] not in STATE_NAMES:
                    raise ValueError
                tris.append((int(tok[1]), int(tok[2]), int(tok[3])))
                states.append(STATE_NAMES.index(tok[4]))
            else:
                if len(tok) != 4 or tok[0] != "e":
                    raise ValueError
                i, j = int(tok[1]), int(tok[2])
                if tok[3] != INTERIOR:
                    tags[_key(i, j)] = tok[3]
        except ValueError:
            raise MeshFormatError(lineno, f"malformed '{kind}' line: {lines[lineno - 1]!r}") from None
    for extra in range(2 + nv + nt + ne, len(lines) + 1):
        if lines[extra - 1].strip():
            raise MeshFormatError(extra, "trailing content")
    mesh = Mesh(points, tris, tags, states)
    if mesh.edges.n_edges != ne:
        raise MeshFormatError(1, f"header says {ne} edges, triangles define {mesh.edges.n_edges}")
    return mesh


def read_mesh(path):
    with open(path) as fh:
        return parse_mesh(fh.read())


def write_vtk(mesh, path, point_data=None, cell_data=None, title="auxstokes mesh"):
    """Legacy ASCII VTK unstructured grid (cell type 5 = triangle)."""
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_vertices} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.points.tolist()]
    out.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {mesh.n_triangles}")
    out += ["5"] * mesh.n_triangles
    for header, n, data in (("POINT_DATA", mesh.n_vertices, point_data),
                            ("CELL_DATA", mesh.n_triangles, cell_data)):
        if not data:
            continue
        out.append(f"{header} {n}")
        for name, values in data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(float(v)) for v in np.asarray(values).ravel()]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
