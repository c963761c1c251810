"""
Bubble bases and quadrature on one triangle
===========================================

Walks through the pieces the estimator is built from: a quadrature rule,
the quadratic Lagrange basis, and the nine bubble modes per velocity
component.
"""

import math

import numpy as np

from auxstokes.mesh import Mesh
from auxstokes.quadrature import integrate, rule
from auxstokes.spaces import (BUBBLE_MODES, LISTED_MONOMIALS, P2_BASIS, BaryPoly,
                              bubble_velocity_modes, element_geometry)

# a rule of degree 8 integrates every barycentric monomial up to degree 8 exactly
q = rule(8)
print(f"degree-8 rule: {len(q)} points, weights sum to {q.weights.sum():.16f}")

T = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
got = integrate(lambda l: l[:, 1] ** 4 * l[:, 2] ** 4, T, q)
exact = 2 * 0.5 * math.factorial(4) ** 2 / math.factorial(10)
print(f"int l1^4 l2^4 = {got:.16e}  (closed form {exact:.16e})")

# the bubble modes, and which edge or element each belongs to
for poly, kind, idx in bubble_velocity_modes():
    where = f"edge {idx}" if kind == "edge" else "element"
    print(f"  {where:8s} degree {poly.degree}")

# Gram rank: bubbles alone, then together with the quadratic basis
q10 = rule(10)
_, G = element_geometry(Mesh(T, [[0, 1, 2]]))


def h1_rank(polys):
    V = np.column_stack([p(q10.points) for p in polys])
    D = np.stack([p.gradient(q10.points, G[0]) for p in polys], axis=1)
    Gm = V.T @ (q10.weights[:, None] * V) + np.einsum("q,qad,qbd->ab", q10.weights, D, D)
    s = np.linalg.svd(Gm, compute_uv=False)
    return int(np.sum(s > 1e-11 * s[0]))


print("rank of bubbles:", h1_rank(BUBBLE_MODES))
print("rank of bubbles + P2:", h1_rank(BUBBLE_MODES + P2_BASIS))

# the 13-term monomial list is not a basis: it has a dependency and reaches into P2
L = [BaryPoly.lam(i) for i in range(3)]
listed = [L[0] ** a * L[1] ** b * L[2] ** c for a, b, c in LISTED_MONOMIALS]
print("rank of the 13-term monomial list:", h1_rank(listed))
