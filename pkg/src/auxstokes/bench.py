"""Benchmark problems: L-shape corner singularity and lid-driven cavity.

The L-shape solution is the classical reentrant-corner Stokes solution with
aperture ``omega = 3 pi / 2``. Polar angles are measured counter-clockwise
from the positive x-axis, in ``[0, 2 pi)``, so the two edges meeting at the
corner sit at ``phi = 0`` and ``phi = omega``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .adapt import LoopConfig, StokesProblem, adaptive_loop, convergence_orders
from .mesh import make_lshape_mesh, make_unit_square_mesh
from .spaces import (P1_BASIS, P2_BASIS, element_geometry, p1_values,
                     p2_gradients, physical_gradients, tabulate)

log = logging.getLogger(__name__)

OMEGA = 1.5 * math.pi
LAMBDA_REFERENCE = 0.54448373678246


@dataclass(frozen=True)
class SingularExponent:
    lam: float
    omega: float = OMEGA

    @property
    def residual(self):
        return math.sin(self.lam * self.omega) + self.lam * math.sin(self.omega)


def solve_lambda(lo=0.4, hi=0.9, tol=1e-15, omega=OMEGA):
    """Smallest positive root of ``sin(l omega) + l sin(omega) = 0`` by bisection."""
    def g(x):
        return math.sin(x * omega) + x * math.sin(omega)

    glo = g(lo)
    if glo * g(hi) > 0:
        raise ValueError("root not bracketed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0.0:
            return SingularExponent(mid, omega)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return SingularExponent(0.5 * (lo + hi), omega)


class LShapeSolution:
    """Closed-form velocity, gradient and pressure of the L-shape benchmark."""

    def __init__(self, lam=None):
        self.lam = solve_lambda().lam if lam is None else lam
        self.omega = OMEGA

    def polar(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.hypot(x, y), np.mod(np.arctan2(y, x), 2 * np.pi)

    def psi(self, phi, order=0):
        """``Psi`` and its derivatives up to third order."""
        l, w = self.lam, self.omega
        a, b = 1 + l, 1 - l
        cw = math.cos(l * w)
        s1, c1 = np.sin(a * phi), np.cos(a * phi)
        s2, c2 = np.sin(b * phi), np.cos(b * phi)
        if order == 0:
            return s1 * cw / a - c1 - s2 * cw / b + c2
        if order == 1:
            return c1 * cw + a * s1 - c2 * cw - b * s2
        if order == 2:
            return -a * s1 * cw + a**2 * c1 + b * s2 * cw - b**2 * c2
        if order == 3:
            return -a**2 * c1 * cw - a**3 * s1 + b**2 * c2 * cw + b**3 * s2
        raise ValueError("order must be 0..3")

    def _angular(self, phi):
        l = self.lam
        P, P1, P2 = self.psi(phi), self.psi(phi, 1), self.psi(phi, 2)
        s, c = np.sin(phi), np.cos(phi)
        g1 = (1 + l) * s * P + c * P1
        g2 = s * P1 - (1 + l) * c * P
        dg1 = (1 + l) * (c * P + s * P1) - s * P1 + c * P2
        dg2 = c * P1 + s * P2 + (1 + l) * (s * P - c * P1)
        return g1, g2, dg1, dg2

    def velocity(self, x, y):
        r, phi = self.polar(x, y)
        g1, g2, _, _ = self._angular(phi)
        rl = r**self.lam
        return np.stack([rl * g1, rl * g2], axis=-1)

    def velocity_gradient(self, x, y):
        """(..., 2, 2) array with ``[..., c, d] = du_c / dx_d``."""
        r, phi = self.polar(x, y)
        g1, g2, dg1, dg2 = self._angular(phi)
        l = self.lam
        with np.errstate(divide="ignore", invalid="ignore"):
            rl1 = r ** (l - 1)
        s, c = np.sin(phi), np.cos(phi)
        out = np.empty(np.shape(r) + (2, 2))
        for k, (g, dg) in enumerate(((g1, dg1), (g2, dg2))):
            # d/dx = cos d/dr - sin/r d/dphi ; d/dy = sin d/dr + cos/r d/dphi
            out[..., k, 0] = rl1 * (c * l * g - s * dg)
            out[..., k, 1] = rl1 * (s * l * g + c * dg)
        return out

    def velocity_gradient_fd(self, x, y, rel_step=1e-6):
        """Central-difference gradient with step ``rel_step * r``; for cross-checks."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = rel_step * np.hypot(x, y)
        out = np.empty(np.shape(x) + (2, 2))
        out[..., :, 0] = (self.velocity(x + h, y) - self.velocity(x - h, y)) / (2 * h)[..., None]
        out[..., :, 1] = (self.velocity(x, y + h) - self.velocity(x, y - h)) / (2 * h)[..., None]
        return out

    def pressure(self, x, y):
        r, phi = self.polar(x, y)
        if np.any(r == 0.0):
            raise ValueError("pressure is singular at the origin")
        l = self.lam
        return -r ** (l - 1) * ((1 + l) ** 2 * self.psi(phi, 1) + self.psi(phi, 3)) / (1 - l)

    def boundary_data(self, x, y):
        return self.velocity(x, y)


class SmoothSolution:
    """Smooth manufactured solution on the unit square.

    Stream function ``sin^2(pi x) sin^2(pi y)`` (zero velocity on the
    boundary) and pressure ``cos(pi x) cos(pi y)`` (zero mean).
    """

    @staticmethod
    def _S(t, k):
        pi = np.pi
        return (np.sin(pi * t) ** 2, pi * np.sin(2 * pi * t),
                2 * pi**2 * np.cos(2 * pi * t), -4 * pi**3 * np.sin(2 * pi * t))[k]

    def velocity(self, x, y):
        S = self._S
        return np.stack([S(x, 0) * S(y, 1), -S(x, 1) * S(y, 0)], axis=-1)

    def velocity_gradient(self, x, y):
        S = self._S
        out = np.empty(np.shape(x) + (2, 2))
        out[..., 0, 0] = S(x, 1) * S(y, 1)
        out[..., 0, 1] = S(x, 0) * S(y, 2)
        out[..., 1, 0] = -S(x, 2) * S(y, 0)
        out[..., 1, 1] = -S(x, 1) * S(y, 1)
        return out

    def pressure(self, x, y):
        return np.cos(np.pi * x) * np.cos(np.pi * y)

    def body_force(self, x, y):
        S, pi = self._S, np.pi
        lap1 = S(x, 2) * S(y, 1) + S(x, 0) * S(y, 3)
        lap2 = -(S(x, 3) * S(y, 0) + S(x, 1) * S(y, 2))
        px = -pi * np.sin(pi * x) * np.cos(pi * y)
        py = -pi * np.cos(pi * x) * np.sin(pi * y)
        return np.stack([-lap1 + px, -lap2 + py], axis=-1)

    def boundary_data(self, x, y):
        return self.velocity(x, y)


@dataclass(frozen=True)
class ErrorNorms:
    velocity_h1: float   # ||grad(u - u_h)||
    pressure_l2: float   # ||p - p_h|| after matching the mean
    pressure_mean: float

    @property
    def total(self):
        return math.hypot(self.velocity_h1, self.pressure_l2)


def error_norms(u_hat, p_hat, exact, mesh, dofmap, rule):
    """``||(u - u_h, p - p_h)||_V`` by elementwise quadrature.

    The exact pressure is shifted by its quadrature mean so both pressures
    live in the same zero-mean gauge.
    """
    area, G = element_geometry(mesh)
    xq = rule.physical_points(mesh.points[mesh.triangles])
    X, Y = xq[..., 0], xq[..., 1]
    w = area[:, None] * rule.weights
    grads = physical_gradients(tabulate(P2_BASIS, rule.points), G)
    gu_h = p2_gradients(u_hat, dofmap, grads)
    gu = exact.velocity_gradient(X, Y)
    e1 = float(np.einsum("tq,tqcd->", w, (gu - gu_h) ** 2))
    p = exact.pressure(X, Y)
    ph = p1_values(p_hat, dofmap, tabulate(P1_BASIS, rule.points))
    pmean = float(np.sum(w * p) / np.sum(w))
    e2 = float(np.einsum("tq,tq->", w, (p - pmean - ph) ** 2))
    return ErrorNorms(math.sqrt(e1), math.sqrt(e2), pmean)


def lshape_problem(initial_refinements=1):
    sol = LShapeSolution()
    return StokesProblem(
        name="example1",
        mesh=make_lshape_mesh(initial_refinements),
        boundary=sol.boundary_data,
        force=None,
        exact=sol,
    )


def lid(x, y):
    """Lid velocity (1, 0) on the open top edge, zero elsewhere (corners included)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    on_lid = (y == 1.0) & (x > 0.0) & (x < 1.0)
    return np.stack([np.where(on_lid, 1.0, 0.0), np.zeros_like(x)], axis=-1)


def cavity_problem(n=4, pattern="cross"):
    return StokesProblem(name="example2", mesh=make_unit_square_mesh(n, pattern),
                         boundary=lid, force=None, exact=None)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)   # dicts with dof, error, order_error, eta_g, order_eta, kappa

    @classmethod
    def from_records(cls, records):
        dof = [r.dof for r in records]
        err = [r.error for r in records]
        eta = [r.eta_g for r in records]
        oe = convergence_orders(dof, err) if all(e is not None for e in err) else [None] * len(dof)
        on = convergence_orders(dof, eta)
        rows = [dict(dof=r.dof, error=r.error, order_error=a, eta_g=r.eta_g,
                     order_eta=b, kappa=r.kappa) for r, a, b in zip(records, oe, on)]
        return cls(rows)

    def column(self, name):
        return [row[name] for row in self.rows]


def run_example1(config=None, initial_refinements=1, callback=None):
    """Adaptive L-shape run with exact-error tracking. Returns ``(table, result)``."""
    config = config or LoopConfig(theta=0.7, eps=1e-3, max_iterations=10)
    result = adaptive_loop(lshape_problem(initial_refinements), config, callback=callback)
    return ConvergenceTable.from_records(result.records), result


def run_example2(config=None, n=4, callback=None, pattern="cross"):
    """Adaptive lid-driven cavity run (no exact solution)."""
    config = config or LoopConfig(theta=0.7, eps=1e-6, max_iterations=10)
    return adaptive_loop(cavity_problem(n, pattern), config, callback=callback)
