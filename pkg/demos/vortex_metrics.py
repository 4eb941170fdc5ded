"""
Metrics from quadratic differentials
====================================

Each holomorphic quadratic differential A determines a conformal metric
whose curvature is -1 + |A|^2.  Larger differentials push the curvature
towards zero and inflate the area.
"""

import numpy as np

from anosovlab.mesh_calculus import KSection, build_bolza_mesh
from anosovlab.vortex_solver import (geometric_tolerance, holomorphic_differentials, solve_vortex,
                                     vortex_residual)

mesh = build_bolza_mesh(2)
B = holomorphic_differentials(mesh, 2)
print("quadratic differentials:", len(B))

for scale in (0.0, 0.3, 0.6, 1.2):
    sol = solve_vortex(mesh, KSection(2, scale * B[0].values))
    K = sol.K.values
    area = sol.mesh.with_conformal(sol.u.values).area()
    print(f"scale {scale:3.1f}: K in [{K.min():+.4f}, {K.max():+.4f}], area {area:8.4f}, "
          f"residual {vortex_residual(sol.mesh, sol):.2e} (tol {geometric_tolerance(mesh):.2e})")
