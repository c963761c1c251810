"""
Three error problems
====================

The estimator can solve the bubble error problem fully (a saddle system),
with the velocity block diagonalized (a pressure Schur solve), or with
both blocks diagonal. Only the last is cheap enough for the adaptive
loop; this script shows the three give similar numbers.
"""

import numpy as np

from auxstokes.adapt import StokesProblem, solve_stokes
from auxstokes.bench import LShapeSolution, error_norms
from auxstokes.estimator import estimate
from auxstokes.mesh import make_lshape_mesh, refine_uniform
from auxstokes.quadrature import rule

sol = LShapeSolution()
q, qe = rule(8), rule(12)
mesh = make_lshape_mesh(1)
for level in range(3):
    d, u, p, _ = solve_stokes(mesh, StokesProblem("ex1", mesh, sol.boundary_data), q)
    err = error_norms(u, p, sol, mesh, d, qe).total
    line = f"dof={d.n_dofs:6d} error={err:.4f}"
    for which in ("first", "second", "third"):
        eta = estimate(mesh, d, u, p, None, q, which).global_.eta_g
        line += f"  {which}: {eta:.4f} (kappa {eta / err:.3f})"
    print(line)
    if level < 2:
        mesh = refine_uniform(mesh)

# on the last mesh the largest indicators sit next to the corner
est = estimate(mesh, d, u, p, None, q)
top = np.argsort(est.local.eta)[::-1][:4]
print("largest indicators at distance", np.round(np.linalg.norm(mesh.centroids[top], axis=1), 3),
      "from the corner")
