import math
from dataclasses import replace

import numpy as np
import pytest

from auxstokes.adapt import StokesProblem, solve_stokes
from auxstokes.assembly import interpolate_velocity
from auxstokes.bench import SmoothSolution, lid
from auxstokes.estimator import (DegenerateBubbleError, ErrorCoefficients, LocalEstimates,
                                 ResidualVectors, assemble_error_matrices,
                                 assemble_error_residuals, discrete_inf_sup_probe,
                                 divergence_norm_sq, effectivity, estimate, global_estimator,
                                 local_estimators, oscillation, schur_matrix,
                                 solve_first_problem, solve_second_problem, solve_third_problem,
                                 write_estimates_csv)
from auxstokes.mesh import Mesh, make_lshape_mesh, make_unit_square_mesh, refine, refine_uniform
from auxstokes.quadrature import rule
from auxstokes.spaces import BUBBLE_MODES, build_dof_maps, element_geometry

from test_assembly import Patch

Q = rule(8)
REF = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def tiny_meshes():
    yield make_unit_square_mesh(1)
    yield make_unit_square_mesh(2)
    yield make_unit_square_mesh(2, "cross")
    yield make_lshape_mesh(0)
    yield refine(make_lshape_mesh(0), [0, 4])
    yield refine(make_unit_square_mesh(3), [2, 7, 11])


def random_residuals(d, rng):
    return ResidualVectors(rng.standard_normal(d.N_v), rng.standard_normal(d.N_p))


def dense_bubble_stiffness(mesh, d):
    """Independent element loop over the vector bubble stiffness."""
    area, G = element_geometry(mesh)
    q = rule(6)
    A = np.zeros((d.N_v, d.N_v))
    for t in range(mesh.n_triangles):
        g = [d.bubble_sign[t, a] * BUBBLE_MODES[a].gradient(q.points, G[t]) for a in range(9)]
        for a in range(9):
            for b in range(9):
                ia, ib = d.bubble_nodes[t, a], d.bubble_nodes[t, b]
                if ia < 0 or ib < 0:
                    continue
                v = area[t] * np.sum(q.weights * np.sum(g[a] * g[b], axis=-1))
                for c in range(2):
                    A[2 * ia + c, 2 * ib + c] += v
    return A


def cavity_solution(mesh):
    prob = StokesProblem("cavity", mesh, lid)
    d, u, p, _ = solve_stokes(mesh, prob, Q)
    return d, u, p


# -- residuals ---------------------------------------------------------------

def test_zero_residuals():
    m = make_lshape_mesh(0)
    d = build_dof_maps(m)
    r = assemble_error_residuals(m, d, np.zeros(d.n_velocity), np.zeros(d.n_pressure), None, Q)
    assert not np.any(r.F_v) and not np.any(r.F_p)
    mats = assemble_error_matrices(m, d, Q)
    for coef in (solve_third_problem(mats, r), solve_second_problem(mats, r),
                 solve_first_problem(m, d, mats, r)):
        assert not np.any(coef.x_u) and not np.any(coef.x_p)


def test_patch_residuals_and_estimate():
    m = refine(make_unit_square_mesh(3, "cross"), [0, 5, 11])
    prob = StokesProblem("patch", m, Patch.velocity, Patch.force, Patch)
    d, u, p, _ = solve_stokes(m, prob, Q)
    r = assemble_error_residuals(m, d, u, p, Patch.force, Q)
    assert np.abs(r.F_v).max() <= 1e-9 and np.abs(r.F_p).max() <= 1e-9
    est = estimate(m, d, u, p, Patch.force, Q)
    assert est.global_.eta_g <= 1e-9


def test_galerkin_orthogonality_on_taylor_hood_space():
    from auxstokes.assembly import assemble_taylor_hood
    m = make_unit_square_mesh(4, "cross")
    d, u, p = cavity_solution(m)
    s = assemble_taylor_hood(m, d, Q)
    free = ~d.dirichlet
    r_v = (s.A @ u + s.B @ p)[free]
    r_p = s.B.T @ u
    assert np.abs(r_v).max() <= 1e-9 and np.abs(r_p).max() <= 1e-9


def test_pressure_residual_sign():
    m = make_unit_square_mesh(2)
    d = build_dof_maps(m)
    u = interpolate_velocity(lambda x, y: np.stack([x, np.zeros_like(x)], -1), d)
    r = assemble_error_residuals(m, d, u, np.zeros(d.n_pressure), None, Q)
    # div u = 1, so F_p = -int b_T = -|T|/60
    np.testing.assert_allclose(r.F_p, -m.areas / 60, rtol=1e-13)
    assert np.all(r.F_p < 0)


# -- matrices ------------------------------------------------------------------

def test_matrix_invariants():
    for m in tiny_meshes():
        d = build_dof_maps(m)
        mats = assemble_error_matrices(m, d, Q)
        assert mats.c_s == 1
        assert np.all(mats.D_v > 0) and np.all(mats.D_p > 0)
        assert mats.B.shape == (d.N_v, d.N_p)
        np.testing.assert_allclose(mats.pressure_mean, m.areas / 60, rtol=1e-13)
        np.testing.assert_allclose(mats.pressure_mass, m.areas / 2520, rtol=1e-13)
        np.testing.assert_allclose(np.diag(dense_bubble_stiffness(m, d)), mats.D_v, rtol=1e-12)


def test_reference_element_bubble_diagonal():
    d = build_dof_maps(REF)
    mats = assemble_error_matrices(REF, d, Q)
    assert mats.local_diag[0, 6] == pytest.approx(1 / 90, rel=1e-13)
    assert mats.local_diag[0, 7] == pytest.approx(1 / 630, rel=1e-13)   # b l0
    assert mats.local_diag[0, 8] == pytest.approx(1 / 504, rel=1e-13)   # b l1
    # single triangle: only element modes survive, first is b
    assert mats.D_v[0] == pytest.approx(1 / 90, rel=1e-13)


def test_coupling_support():
    m = make_unit_square_mesh(2, "cross")
    d = build_dof_maps(m)
    B = assemble_error_matrices(m, d, Q).B.tocsc()
    for j in range(m.n_triangles):
        rows = B.indices[B.indptr[j]:B.indptr[j + 1]]
        own = set(d.bubble_velocity_dofs[j][d.bubble_velocity_dofs[j] >= 0].tolist())
        assert set(rows.tolist()) <= own


def test_schur_symmetry():
    m = refine(make_lshape_mesh(0), [1, 2])
    S = schur_matrix(assemble_error_matrices(m, build_dof_maps(m), Q))
    assert abs(S - S.T).max() <= 1e-12 * abs(S).max()


# -- error problems against dense oracles -------------------------------------

def test_third_problem_dense_oracle(rng):
    for m in tiny_meshes():
        assert m.n_triangles <= 50
        d = build_dof_maps(m)
        mats = assemble_error_matrices(m, d, Q)
        r = random_residuals(d, rng)
        x = solve_third_problem(mats, r)
        Dv = np.diag(mats.D_v)
        B = mats.B.toarray()
        S = B.T @ np.linalg.solve(Dv, B)
        M = np.block([[Dv, B], [-B.T, mats.c_s * np.diag(mats.D_p) - S]])
        ref = np.linalg.solve(M, np.concatenate([r.F_v, r.F_p]))
        got = np.concatenate([x.x_u, x.x_p])
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_second_problem_dense_oracle(rng):
    for m in tiny_meshes():
        d = build_dof_maps(m)
        mats = assemble_error_matrices(m, d, Q)
        r = random_residuals(d, rng)
        x = solve_second_problem(mats, r)
        Dv = np.diag(mats.D_v)
        B = mats.B.toarray()
        M = np.block([[Dv, B], [-B.T, np.zeros((d.N_p, d.N_p))]])
        ref = np.linalg.solve(M, np.concatenate([r.F_v, r.F_p]))
        got = np.concatenate([x.x_u, x.x_p])
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_first_problem_dense_oracle(rng):
    for m in tiny_meshes():
        d = build_dof_maps(m)
        mats = assemble_error_matrices(m, d, Q)
        r = random_residuals(d, rng)
        x = solve_first_problem(m, d, mats, r)
        A = dense_bubble_stiffness(m, d)
        B = mats.B.toarray()
        mv = mats.pressure_mean[:, None]
        K = np.block([[A, B, np.zeros((d.N_v, 1))],
                      [B.T, np.zeros((d.N_p, d.N_p)), mv],
                      [np.zeros((1, d.N_v)), mv.T, np.zeros((1, 1))]])
        ref = np.linalg.solve(K, np.concatenate([r.F_v, -r.F_p, [0.0]]))
        got = np.concatenate([x.x_u, x.x_p, [x.multiplier]])
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)
        assert abs(mats.pressure_mean @ x.x_p) <= 1e-12 * np.linalg.norm(ref)


def test_single_pressure_bubble_second_equals_third(rng):
    d = build_dof_maps(REF)
    mats = assemble_error_matrices(REF, d, Q)
    assert d.N_p == 1 and mats.c_s == 1
    r = random_residuals(d, rng)
    a, b = solve_third_problem(mats, r), solve_second_problem(mats, r)
    np.testing.assert_allclose(a.x_p, b.x_p, rtol=1e-13)
    np.testing.assert_allclose(a.x_u, b.x_u, rtol=1e-13, atol=1e-15)


def test_degenerate_diagonal_named():
    m = make_unit_square_mesh(1)
    d = build_dof_maps(m)
    mats = assemble_error_matrices(m, d, Q)
    Dv = mats.D_v.copy()
    Dv[5] = 0.0
    r = ResidualVectors(np.ones(d.N_v), np.ones(d.N_p))
    with pytest.raises(DegenerateBubbleError) as exc:
        solve_third_problem(replace(mats, D_v=Dv), r)
    assert exc.value.dof == 5 and "5" in str(exc.value)
    Dp = mats.D_p.copy()
    Dp[1] = -1.0
    with pytest.raises(DegenerateBubbleError) as exc:
        solve_third_problem(replace(mats, D_p=Dp), r)
    assert exc.value.dof == 1


# -- indicators ----------------------------------------------------------------

def test_local_pressure_indicator():
    d = build_dof_maps(REF)
    mats = assemble_error_matrices(REF, d, Q)
    coef = ErrorCoefficients(np.zeros(d.N_v), np.array([-3.0]))
    loc = local_estimators(coef, np.zeros(d.n_velocity), REF, d, Q, mats)
    expected = 3.0 * math.sqrt(2 * 0.5 * 8 / math.factorial(8))
    assert loc.eta_p[0] == pytest.approx(expected, rel=1e-13)
    assert loc.eta_v[0] == 0.0 and loc.eta_d[0] == 0.0


def test_velocity_indicator_regrouping(rng):
    m = refine(make_lshape_mesh(0), [3])
    d = build_dof_maps(m)
    mats = assemble_error_matrices(m, d, Q)
    coef = ErrorCoefficients(rng.standard_normal(d.N_v), rng.standard_normal(d.N_p))
    loc = local_estimators(coef, np.zeros(d.n_velocity), m, d, Q, mats)
    assert np.sum(loc.eta_v**2) == pytest.approx(np.sum(coef.x_u**2 * mats.D_v), rel=1e-12)
    np.testing.assert_allclose(loc.eta**2, loc.eta_p**2 + loc.eta_v**2 + loc.eta_d**2)


def test_zero_indicators():
    m = make_unit_square_mesh(2)
    d = build_dof_maps(m)
    mats = assemble_error_matrices(m, d, Q)
    coef = ErrorCoefficients(np.zeros(d.N_v), np.zeros(d.N_p))
    loc = local_estimators(coef, np.zeros(d.n_velocity), m, d, Q, mats)
    assert not np.any(loc.eta)
    assert global_estimator(loc).eta_g == 0.0


@pytest.mark.parametrize("problem", ["first", "second", "third"])
def test_identity(problem):
    m = refine(make_unit_square_mesh(3, "cross"), [0, 1, 2])
    d, u, p = cavity_solution(m)
    est = estimate(m, d, u, p, None, Q, problem)
    g = est.global_
    assert g.eta_g > 0
    assert abs(g.eta_g**2 - (g.error_norm_sq + g.div_sq)) <= 1e-12 * g.eta_g**2
    assert g.identity_error <= 1e-12


def test_divergence_norm_is_exact():
    m = refine(make_lshape_mesh(0), [0, 5])
    d = build_dof_maps(m)
    u = interpolate_velocity(lambda x, y: np.stack([x**2 * y, x * y**2], -1), d)
    from auxstokes.estimator import local_estimators as _le
    mats = assemble_error_matrices(m, d, Q)
    loc = _le(ErrorCoefficients(np.zeros(d.N_v), np.zeros(d.N_p)), u, m, d, rule(12), mats)
    assert divergence_norm_sq(u, m, d) == pytest.approx(np.sum(loc.eta_d**2), rel=1e-13)


def test_threads_identical():
    m = refine(make_lshape_mesh(1), [0, 9, 30])
    d, u, p = cavity_solution(m)
    a = estimate(m, d, u, p, None, Q, threads=1)
    b = estimate(m, d, u, p, None, Q, threads=3)
    np.testing.assert_array_equal(a.local.eta_sq, b.local.eta_sq)


def test_unknown_problem():
    m = make_unit_square_mesh(1)
    d = build_dof_maps(m)
    with pytest.raises(ValueError):
        estimate(m, d, np.zeros(d.n_velocity), np.zeros(d.n_pressure), None, Q, "fourth")


# -- oscillation, effectivity, inf-sup ---------------------------------------

def test_oscillation_zero_and_linear():
    m = make_lshape_mesh(1)
    osc, osc_T = oscillation(lambda x, y: np.zeros((len(x), 2)), m, Q)
    assert osc == 0.0 and not np.any(osc_T)
    osc, _ = oscillation(lambda x, y: np.stack([1 + 2 * x - y, 3 * y], -1), m, Q)
    assert osc <= 1e-13


def test_oscillation_quadratic_on_reference():
    # ||x^2 - (4x/5 - 1/10)||^2 = 1/600 on the reference triangle, h = sqrt(2)
    osc, osc_T = oscillation(lambda x, y: np.stack([x**2, np.zeros_like(x)], -1), REF, Q)
    assert osc == pytest.approx(math.sqrt(2) * math.sqrt(1 / 600), rel=1e-12)
    assert osc_T[0] == pytest.approx(osc)


def test_effectivity():
    assert effectivity(0.3, 0.3) == 1.0
    assert effectivity(0.6, 0.3) == pytest.approx(2 * effectivity(0.3, 0.3))
    assert math.isnan(effectivity(1.0, 0.0))


def test_inf_sup_probe():
    m0 = make_lshape_mesh(0)
    m1 = refine_uniform(m0)
    mu0 = discrete_inf_sup_probe(m0, build_dof_maps(m0), Q)
    mu1 = discrete_inf_sup_probe(m1, build_dof_maps(m1), Q)
    assert mu0 > 0 and mu1 > 0
    assert abs(mu1 - mu0) / mu0 <= 0.3
    assert discrete_inf_sup_probe(m0, build_dof_maps(m0), Q, drop_edge_modes=True) < mu0


def test_first_to_third_norm_ratio_is_stable():
    S = SmoothSolution()
    m = make_unit_square_mesh(2)
    ratios = []
    for _ in range(4):
        prob = StokesProblem("smooth", m, S.boundary_data, S.body_force, S)
        d, u, p, _ = solve_stokes(m, prob, Q)
        e1 = estimate(m, d, u, p, S.body_force, Q, "first").global_
        e3 = estimate(m, d, u, p, S.body_force, Q, "third").global_
        ratios.append(math.sqrt(e1.error_norm_sq / e3.error_norm_sq))
        m = refine_uniform(m)
    assert (max(ratios) - min(ratios)) / min(ratios) <= 0.2


def test_estimates_csv(tmp_path):
    loc = LocalEstimates(np.array([3.0, 0.0]), np.array([4.0, 0.0]), np.array([0.0, 1.0]))
    path = tmp_path / "eta.csv"
    write_estimates_csv(loc, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "element_id,eta_p,eta_v,eta_d,eta_total"
    assert lines[1] == "0,3.0,4.0,0.0,5.0"
