import numpy as np
import pytest
import scipy.sparse as sp

from auxstokes.adapt import StokesProblem, solve_stokes, tagged_boundary_values
from auxstokes.assembly import (apply_dirichlet, assemble_rhs, assemble_taylor_hood,
                                attach_mean_zero, interpolate_velocity, write_coo)
from auxstokes.bench import LShapeSolution, lid
from auxstokes.mesh import Mesh, make_lshape_mesh, make_unit_square_mesh, refine
from auxstokes.quadrature import rule
from auxstokes.solver import factor, solve
from auxstokes.spaces import build_dof_maps

Q = rule(8)
REF = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def system(mesh):
    d = build_dof_maps(mesh)
    return d, assemble_taylor_hood(mesh, d, Q)


class Patch:
    """u = (x^2, -2xy), p = x + y - 1 on the unit square."""

    @staticmethod
    def velocity(x, y):
        return np.stack([x**2, -2 * x * y], axis=-1)

    @staticmethod
    def velocity_gradient(x, y):
        out = np.zeros(np.shape(x) + (2, 2))
        out[..., 0, 0] = 2 * x
        out[..., 1, 0] = -2 * y
        out[..., 1, 1] = -2 * x
        return out

    @staticmethod
    def pressure(x, y):
        return x + y - 1.0

    @staticmethod
    def force(x, y):
        return np.stack([-np.ones_like(x), np.ones_like(x)], axis=-1)


def test_symmetry():
    _, s = system(refine(make_lshape_mesh(1), [0, 7]))
    A = s.A
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_reference_diagonal():
    _, s = system(REF)
    # vertex 0 and vertex 1 quadratic shapes, x-component
    assert s.A[0, 0] == pytest.approx(1.0, rel=1e-13)
    assert s.A[2, 2] == pytest.approx(0.5, rel=1e-13)
    assert s.A[1, 1] == s.A[0, 0]


def test_row_sums_vanish():
    _, s = system(make_unit_square_mesh(3))
    A = s.A.toarray()
    np.testing.assert_allclose(A[:, 0::2].sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(A[:, 1::2].sum(axis=1), 0.0, atol=1e-12)


def test_constant_pressure_annihilates_zero_trace_fields():
    d, s = system(make_lshape_mesh(1))
    s = apply_dirichlet(s, None, d)
    # B^T 1 over interior velocity dofs
    np.testing.assert_allclose(s.B.T @ np.ones(s.n_velocity) @ np.ones(s.n_pressure), 0.0, atol=1e-12)
    col = s.B @ np.ones(s.n_pressure)
    np.testing.assert_allclose(col, 0.0, atol=1e-12)


def test_scaling():
    pts = np.array([[0.1, 0.2], [1.3, 0.4], [0.5, 1.1]])
    d = build_dof_maps(Mesh(pts, [[0, 1, 2]]))
    s1 = assemble_taylor_hood(Mesh(pts, [[0, 1, 2]]), d, Q)
    s3 = assemble_taylor_hood(Mesh(3 * pts, [[0, 1, 2]]), d, Q)
    np.testing.assert_allclose(s3.A.toarray(), s1.A.toarray(), atol=1e-12)
    np.testing.assert_allclose(s3.B.toarray(), 3 * s1.B.toarray(), atol=1e-12)


def test_degenerate_rejected():
    m = make_unit_square_mesh(1)
    d = build_dof_maps(m)
    flat = Mesh.__new__(Mesh)
    flat.__dict__.update(m.__dict__)
    flat.__dict__["signed_areas"] = np.zeros(2)
    with pytest.raises(ValueError):
        assemble_taylor_hood(flat, d, Q)


def test_rhs_values():
    d = build_dof_maps(REF)
    F = assemble_rhs(lambda x, y: np.stack([np.ones_like(x), np.zeros_like(x)], -1), REF, d, Q)
    np.testing.assert_allclose(F[0:6:2], 0.0, atol=1e-15)      # vertex shapes
    np.testing.assert_allclose(F[6::2], 0.5 / 3, rtol=1e-14)   # edge shapes
    np.testing.assert_allclose(F[1::2], 0.0, atol=1e-15)


def test_rhs_zero_and_linear():
    m = make_lshape_mesh(1)
    d = build_dof_maps(m)

    def f(x, y):
        return np.stack([np.sin(x), x * y], -1)

    assert not np.any(assemble_rhs(lambda x, y: np.zeros((len(x), 2)), m, d, Q))
    np.testing.assert_allclose(assemble_rhs(lambda x, y: -2.5 * f(x, y), m, d, Q),
                               -2.5 * assemble_rhs(f, m, d, Q), rtol=1e-14, atol=1e-16)


def test_homogeneous_dirichlet_rows():
    d, s = system(make_unit_square_mesh(2))
    s0 = apply_dirichlet(s, None, d)
    D = d.dirichlet
    np.testing.assert_array_equal(s0.rhs_v, np.zeros(s.n_velocity))
    A = s0.A.toarray()
    np.testing.assert_array_equal(A[D][:, D], np.eye(D.sum()))
    assert not np.any(A[D][:, ~D]) and not np.any(A[~D][:, D])
    assert not np.any(s0.B.toarray()[D])


def test_lshape_boundary_values():
    m = make_lshape_mesh(1)
    d = build_dof_maps(m)
    sol = LShapeSolution()
    s = apply_dirichlet(assemble_taylor_hood(m, d, Q), sol.boundary_data, d)
    D = d.dirichlet
    xy = np.repeat(d.node_coords, 2, axis=0)[D]
    exact = sol.velocity(d.node_coords[:, 0], d.node_coords[:, 1]).ravel()[D]
    np.testing.assert_allclose(s.rhs_v[D], exact, atol=1e-14)
    assert len(xy) == D.sum()


def test_cavity_boundary_values():
    m = make_unit_square_mesh(4, "cross")
    d = build_dof_maps(m)
    g = interpolate_velocity(lid, d).reshape(-1, 2)
    xy = d.node_coords
    top = (xy[:, 1] == 1.0) & (xy[:, 0] > 0) & (xy[:, 0] < 1)
    np.testing.assert_array_equal(g[top], np.tile([1.0, 0.0], (top.sum(), 1)))
    for corner in ([0, 1], [1, 1], [0, 0], [1, 0]):
        k = np.flatnonzero(np.all(xy == corner, axis=1))[0]
        np.testing.assert_array_equal(g[k], [0.0, 0.0])
    tagged = tagged_boundary_values(m, d, {"top": (1.0, 0.0)}).reshape(-1, 2)
    bd = np.repeat(d.dirichlet.reshape(-1, 2)[:, 0:1], 2, axis=1)
    np.testing.assert_array_equal(tagged[bd[:, 0]], g[bd[:, 0]])


def test_mean_vector():
    m = make_lshape_mesh(1)
    _, s = system(m)
    assert s.m @ np.ones(s.n_pressure) == pytest.approx(3.0, rel=1e-14)


def test_patch():
    m = refine(make_unit_square_mesh(3, "cross"), [0, 5, 11])
    prob = StokesProblem("patch", m, Patch.velocity, Patch.force, Patch)
    d, u, p, res = solve_stokes(m, prob, Q)
    xy = d.node_coords
    np.testing.assert_allclose(u, Patch.velocity(xy[:, 0], xy[:, 1]).ravel(), atol=1e-9)
    np.testing.assert_allclose(p, Patch.pressure(m.points[:, 0], m.points[:, 1]), atol=1e-9)
    assert res <= 1e-10


def test_pressure_mean_zero_after_solve():
    for prob in ("cavity", "lshape"):
        if prob == "cavity":
            m, g = make_unit_square_mesh(4, "cross"), lid
        else:
            m, g = make_lshape_mesh(1), LShapeSolution().boundary_data
        d, s = system(m)
        aug = attach_mean_zero(apply_dirichlet(s, g, d))
        x = solve(factor(aug.matrix), aug.rhs)
        _, p, _ = aug.split(x)
        assert abs(s.m @ p) <= 1e-10


def test_augmented_layout():
    d, s = system(make_unit_square_mesh(1))
    aug = attach_mean_zero(apply_dirichlet(s, None, d))
    n = s.n_velocity + s.n_pressure + 1
    assert aug.matrix.shape == (n, n)
    K = aug.matrix.toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-15)
    np.testing.assert_allclose(K[-1, s.n_velocity:-1], s.m)
    assert K[-1, -1] == 0.0


def test_threads_bit_identical():
    m = refine(make_lshape_mesh(2), [0, 3, 9])
    d = build_dof_maps(m)
    a = assemble_taylor_hood(m, d, Q, threads=1)
    b = assemble_taylor_hood(m, d, Q, threads=4)
    for X, Y in ((a.A, b.A), (a.B, b.B)):
        assert (X != Y).nnz == 0
    np.testing.assert_array_equal(a.m, b.m)


def test_write_coo(tmp_path):
    M = sp.csr_matrix(np.array([[1.0, 0.0], [1 / 3, 2.0]]))
    path = tmp_path / "a.coo"
    write_coo(M, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "0 0 1"
    assert lines[1] == "1 0 0.33333333333333331"
    assert len(lines) == 3
