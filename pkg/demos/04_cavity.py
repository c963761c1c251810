"""
Lid-driven cavity
=================

No exact solution here, so only the estimate is available. The lid data
jumps at the two top corners, and that is where the marked elements go.
"""

import numpy as np

from auxstokes.adapt import LoopConfig
from auxstokes.bench import run_example2

corners = np.array([[0.0, 1.0], [1.0, 1.0]])


def report(m, state):
    mesh, marked, rec = state["mesh"], state["marked"], state["record"]
    if marked.size:
        c = mesh.centroids[marked]
        dist = np.min(np.linalg.norm(c[:, None] - corners[None], axis=-1), axis=1)
        share = np.mean(dist <= 0.15)
    else:
        share = float("nan")
    near = np.linalg.norm(mesh.centroids - corners[0], axis=1) <= 0.15
    print(f"m={m:2d} nt={rec.nt:4d} dof={rec.dof:5d} eta_G={rec.eta_g:.4f} "
          f"marked={rec.marked:2d} near corners={share:.2f} "
          f"h_min at (0,1)={mesh.diameters[near].min():.2e}")


result = run_example2(LoopConfig(theta=0.7, eps=1e-6, max_iterations=10), callback=report)
p = result.pressures[-1]
print(f"final pressure range [{p.min():.2f}, {p.max():.2f}]")
