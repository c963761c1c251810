"""Symmetric quadrature rules on triangles in barycentric form.

Rules come from the Xiao-Gimbutas tables shipped with :mod:`modepy`: fully
symmetric, positive weights, interior nodes. Weights are normalised to sum
to one; integrals are ``area * sum(w * f(points))``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MIN_DEGREE = 1
MAX_DEGREE = 14


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray     # (n, 3) barycentric coordinates
    weights: np.ndarray    # (n,) summing to one
    exact_degree: int

    def __len__(self):
        return len(self.weights)

    def physical_points(self, vertices):
        """Map the rule to triangles given as (..., 3, 2) vertex arrays."""
        return np.einsum("qi,...ij->...qj", self.points, vertices)


@lru_cache(maxsize=None)
def rule(exact_degree):
    """Positive-weight rule exact for polynomials of total degree ``exact_degree``.

    Raises
    ------
    ValueError
        If the degree is outside ``MIN_DEGREE..MAX_DEGREE``.
    """
    d = int(exact_degree)
    if not MIN_DEGREE <= d <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {exact_degree}; "
                         f"supported range is {MIN_DEGREE}..{MAX_DEGREE}")
    import modepy

    q = modepy.XiaoGimbutasSimplexQuadrature(d, 2)
    # biunit triangle (-1,-1), (1,-1), (-1,1)
    l1 = (q.nodes[0] + 1.0) / 2.0
    l2 = (q.nodes[1] + 1.0) / 2.0
    pts = np.column_stack([1.0 - l1 - l2, l1, l2])
    w = np.asarray(q.weights, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError(f"degree {d} rule has non-positive weights")
    pts = np.clip(pts, 0.0, 1.0)
    pts.setflags(write=False)
    w = w / w.sum()
    w.setflags(write=False)
    return QuadratureRule(pts, w, d)


def integrate(f, vertices, qrule):
    """Integrate ``f`` over one triangle.

    Parameters
    ----------
    f : callable
        Takes an (n, 3) array of barycentric points, returns (n,) values.
    vertices : array_like, shape (3, 2)
    qrule : QuadratureRule
    """
    v = np.asarray(vertices, dtype=float)
    d1, d2 = v[1] - v[0], v[2] - v[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    return area * float(np.dot(qrule.weights, f(qrule.points)))
