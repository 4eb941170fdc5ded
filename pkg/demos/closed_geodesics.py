"""
Closed geodesics on the Bolza surface
=====================================

The surface is the regular hyperbolic octagon with opposite sides glued.
We check the gluing relation, then list primitive closed geodesics by length.
"""

from collections import Counter

from anosovlab.hyperbolic_core import (BOLZA_SYSTOLE, MobiusMap, bolza_group,
                                       enumerate_primitive_classes)

group = bolza_group()

# the product of the generators along the relation word must be the identity
rel = MobiusMap.identity()
for i in group.relation_word:
    rel = rel @ group.generators[i]
print("relation closes:", rel.is_close(MobiusMap.identity(), 1e-10))

###############################################################################
# Oriented primitive classes up to length 6, grouped by length.

classes = enumerate_primitive_classes(group, 6.0)
for length, n in sorted(Counter(round(c.length, 6) for c in classes).items()):
    print(f"length {length:9.6f}  classes {n}")
print(f"systole {BOLZA_SYSTOLE:.6f}")
