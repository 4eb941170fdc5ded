"""
Stable and unstable slopes
==========================

Integrating the Riccati equation forward and backward along orbits gives
the slopes of the unstable and stable bundles.  For the thermostat built
from a quadratic differential they are known in closed form, 1 + V lambda/2
and -1 + V lambda/2.
"""

import numpy as np

from anosovlab.mesh_calculus import KSection, build_bolza_mesh
from anosovlab.thermostat_dynamics import holo_spec, random_phase_points, riccati_limits
from anosovlab.vortex_solver import holomorphic_differentials, solve_vortex

mesh = build_bolza_mesh(2)
sol = solve_vortex(mesh, KSection(2, 0.6 * holomorphic_differentials(mesh, 2)[0].values))
spec = holo_spec(sol)

pts = random_phase_points(spec, 12, seed=1)
r_u, r_s = riccati_limits(spec, pts)
z = np.array([p.z for p in pts])
theta = np.array([p.theta for p in pts])
vlam = spec.field().evaluate(z, theta).vlam

print(" r_u        exact      r_s        exact")
for a, b, c in zip(r_u, r_s, vlam):
    print(f"{a:+.6f}  {1 + c / 2:+.6f}  {b:+.6f}  {-1 + c / 2:+.6f}")
print("max deviation:", max(np.abs(r_u - 1 - vlam / 2).max(), np.abs(r_s + 1 - vlam / 2).max()))
