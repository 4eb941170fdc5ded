"""
Helicity of null-homologous flows
=================================

When both winding cycles vanish the helicity is defined.  For the geodesic
flow it is exactly 1/(8 pi^2).  Along the family A(s) = s A it stays below
1/(s pi int |A|).
"""

import math

import numpy as np

from anosovlab.mesh_calculus import KSection, build_bolza_mesh
from anosovlab.resonance_helicity import helicity
from anosovlab.thermostat_dynamics import VectorFieldSpec, holo_spec
from anosovlab.vortex_solver import holomorphic_differentials, solve_vortex

mesh = build_bolza_mesh(2)
est = helicity(VectorFieldSpec(mesh), T=100.0, n_orbits=32)
print(f"geodesic: {est.mean:.12f}   1/(8 pi^2) = {1 / (8 * math.pi ** 2):.12f}")

A = 0.6 * holomorphic_differentials(mesh, 2)[0].values
mass = float(np.sum(mesh.vertex_areas() * np.abs(A)))
for s in (1.0, 2.0, 4.0):
    sol = solve_vortex(mesh, KSection(2, s * A))
    est = helicity(holo_spec(sol), T=100.0, n_orbits=32, n_a=16)
    print(f"s = {s}: H = {est.mean:.5f} +- {est.stderr:.5f}, volume {est.volume:.3f}, "
          f"bound {1 / (s * math.pi * mass):.5f}")
