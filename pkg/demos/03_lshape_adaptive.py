"""
Adaptive run on the L-shape
===========================

The exact solution has a corner singularity with exponent lambda, so
uniform refinement converges slowly. The adaptive loop concentrates
elements at the corner and recovers the optimal rate. The estimate tracks
the true error throughout; kappa is their ratio.
"""

from auxstokes.adapt import LoopConfig
from auxstokes.bench import run_example1, solve_lambda

print(f"lambda = {solve_lambda().lam:.14f}")


def show(title, table):
    print(title)
    print(f"{'dof':>7} {'error':>10} {'order':>6} {'eta_G':>10} {'order':>6} {'kappa':>6}")
    for row in table.rows:
        oe = "" if row["order_error"] is None else f"{row['order_error']:.3f}"
        on = "" if row["order_eta"] is None else f"{row['order_eta']:.3f}"
        print(f"{row['dof']:7d} {row['error']:10.4e} {oe:>6} {row['eta_g']:10.4e} {on:>6} "
              f"{row['kappa']:6.3f}")


table, _ = run_example1(LoopConfig(theta=0.7, eps=1e-6, max_iterations=12))
show("adaptive, theta = 0.7", table)

table, _ = run_example1(LoopConfig(eps=1e-6, max_iterations=3, uniform=True))
show("uniform", table)
