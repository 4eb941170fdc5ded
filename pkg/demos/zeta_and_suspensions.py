"""
Periodic orbits and zeta products
=================================

The suspension of the cat map has |tr A^n - 2| periodic points of period n.
On the Bolza surface partial zeta products over closed geodesics settle as
the length cutoff grows, and closed-orbit averages of a constant are one.
"""

from anosovlab.hyperbolic_core import bolza_group, enumerate_primitive_classes
from anosovlab.mesh_calculus import build_bolza_mesh
from anosovlab.orbits_suspension import (CatMapSuspension, cat_fixed_count, suspension_invariants,
                                         weighted_orbit_average, zeta_partial)

cat = CatMapSuspension(((2, 1), (1, 1)))
print("fixed points:", [cat_fixed_count(cat, n) for n in range(1, 11)])
print("invariants:", suspension_invariants(cat))

classes = enumerate_primitive_classes(bolza_group(), 7.0)
for L in (4.0, 5.0, 6.0, 7.0):
    print(f"L = {L}: zeta_L(2) = {zeta_partial(classes, 2.0, L, complete_to=7.0).real:.10f}")

avg = weighted_orbit_average(classes, "harmonic:0", T=5.0, mesh=build_bolza_mesh(2))
print("harmonic:0 over lengths in (4, 5]:", avg.to_json())
