"""
Red-green refinement
====================

Marks a few triangles of the L-shape repeatedly and checks conformity,
area and shape regularity after each step. The last mesh is written in
the plain-text and VTK formats.
"""

import os
import sys

import numpy as np

from auxstokes.mesh import (GREEN, RED, hanging_vertices, make_lshape_mesh, refine,
                            shape_regularity, write_mesh, write_vtk)

out = sys.argv[1] if len(sys.argv) > 1 else "out/demo_refinement"
os.makedirs(out, exist_ok=True)

mesh = make_lshape_mesh(0)
ratio0 = shape_regularity(mesh)
print(f"start: {mesh.n_triangles} triangles, shape ratio {ratio0:.3f}")

for step in range(6):
    # mark the triangles whose centroid is closest to the reentrant corner
    d = np.linalg.norm(mesh.centroids, axis=1)
    marks = np.argsort(d, kind="stable")[:3]
    mesh = refine(mesh, marks)
    n_red = int(np.sum(mesh.state == RED))
    n_green = int(np.sum(mesh.state == GREEN))
    print(f"step {step + 1}: nt={mesh.n_triangles:4d} red={n_red:4d} green={n_green:3d} "
          f"area={mesh.areas.sum():.15f} hanging={len(hanging_vertices(mesh))} "
          f"ratio={shape_regularity(mesh) / ratio0:.3f}x min angle={mesh.min_angle():.1f}")

write_mesh(mesh, os.path.join(out, "mesh.txt"))
write_vtk(mesh, os.path.join(out, "mesh.vtk"), cell_data={"state": mesh.state})
print("wrote", out)
