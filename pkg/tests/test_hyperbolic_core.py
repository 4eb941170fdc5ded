import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosovlab.errors import PointTooFar
from anosovlab.hyperbolic_core import (BOLZA_SYSTOLE, DiskPoint, MobiusMap, bolza_group,
                                       classes_to_json,
                                       enumerate_primitive_classes, geodesic_point,
                                       hyperbolic_distance, in_fundamental_domain, mobius_apply,
                                       reduce, reduce_many)

BOLZA = bolza_group()

disk_points = st.builds(lambda r, t: r * complex(math.cos(t), math.sin(t)),
                        st.floats(0.0, 0.9), st.floats(0.0, 2 * math.pi))
maps = st.builds(lambda l, d, p: MobiusMap.rotation(p) @ MobiusMap.translation(l, d),
                 st.floats(0.0, 3.0), st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))


@given(maps, maps, maps)
def test_composition_is_associative(f, g, h):
    assert ((f @ g) @ h).is_close(f @ (g @ h), 1e-9)


@given(maps)
def test_inverse_and_determinant(g):
    assert abs(np.linalg.det(g.matrix) - 1) < 1e-12
    assert (g @ g.inverse()).is_close(MobiusMap.identity(), 1e-10)


@given(maps, disk_points, disk_points)
def test_maps_are_isometries(g, z, w):
    d0 = hyperbolic_distance(z, w)
    d1 = hyperbolic_distance(g(z), g(w))
    assert d1 == pytest.approx(d0, rel=1e-7, abs=1e-9)


def test_determinant_is_checked():
    with pytest.raises(ValueError):
        MobiusMap(np.array([[2.0, 0.0], [0.0, 1.0]]))


def test_disk_point_rejects_boundary():
    with pytest.raises(ValueError):
        DiskPoint(1.0)
    assert mobius_apply(MobiusMap.identity(), DiskPoint(0.5j)) == pytest.approx(0.5j)


def test_translation_length_matches_trace():
    g = MobiusMap.translation(2.5, 0.3)
    assert g.translation_length == pytest.approx(2.5, abs=1e-12)
    assert g.translation_length == pytest.approx(2 * math.acosh(abs(g.trace) / 2), abs=1e-12)


def test_bolza_relation_and_pairings(group):
    rel = MobiusMap.identity()
    for i in group.relation_word:
        rel = rel @ group.generators[i]
    assert rel.is_close(MobiusMap.identity(), 1e-10)
    n = group.n_sides
    v = group.fundamental_domain
    for k in range(n):
        # the generator pushing across side k carries it onto the opposite side
        g = group.generators[group.side_generator(k)]
        a, b = v[(k - 1) % n], v[k]
        images = sorted([g(a), g(b)], key=lambda z: (round(z.real, 9), round(z.imag, 9)))
        j = (k + n // 2) % n
        target = sorted([v[(j - 1) % n], v[j]], key=lambda z: (round(z.real, 9), round(z.imag, 9)))
        assert np.allclose(images, target, atol=1e-10)


def test_inverse_generators(group):
    for k in range(4):
        assert (group.generators[k] @ group.generators[k + 4]).is_close(MobiusMap.identity())


@settings(max_examples=60)
@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 4.0), st.floats(0.0, 2 * math.pi))
def test_reduction_lands_in_domain_and_is_equivariant(direction, dist, theta):
    group = BOLZA
    z = geodesic_point(0.1 + 0.05j, direction, dist)[0]
    q, th, word = reduce(group, z, theta)
    assert in_fundamental_domain(group, np.array([complex(q)]), 1e-9)[0]
    # applying the recorded deck maps reproduces the reduced point and frame
    p, a = complex(z), float(theta)
    for gi in word:
        if isinstance(gi, tuple):
            g = group.vertex_deck[gi[1]].inverse()
        else:
            g = group.generators[gi]
        a += float(g.angle_shift(p))
        p = g(p)
    assert p == pytest.approx(complex(q), abs=1e-9)
    assert math.remainder(a - th, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)
    zb, tb = reduce_many(group, np.array([z]), np.array([theta]))
    assert zb[0] == pytest.approx(complex(q), abs=1e-12)


def test_reduction_budget(group):
    far = geodesic_point(0.0, 0.2, 30.0)[0]
    with pytest.raises(PointTooFar):
        reduce(group, far, 0.0, max_steps=2)


def test_systole_count(group):
    # the Bolza surface has 12 systoles, 24 with orientation
    classes = enumerate_primitive_classes(group, 3.1)
    assert len(classes) == 24
    for c in classes:
        assert c.length == pytest.approx(BOLZA_SYSTOLE, abs=1e-10)
        assert c.length == pytest.approx(2 * math.acosh(c.trace / 2), abs=1e-12)
    assert BOLZA_SYSTOLE == pytest.approx(2 * math.acosh(1 + math.sqrt(2)), abs=1e-14)


def _brute_force_lengths(group, max_word, max_length):
    mats = [g.matrix for g in group.generators]
    lengths = set()
    frontier = [(np.eye(2), -1)]
    for _ in range(max_word):
        nxt = []
        for m, last in frontier:
            for i in range(8):
                if last >= 0 and i == (last + 4) % 8:
                    continue
                mm = m @ mats[i]
                nxt.append((mm, i))
                t = abs(np.trace(mm))
                if t > 2 + 1e-9 and 2 * math.acosh(t / 2) <= max_length:
                    lengths.add(round(2 * math.acosh(t / 2), 6))
        frontier = nxt
    return lengths


def test_length_spectrum_against_word_search(group):
    classes = enumerate_primitive_classes(group, 5.5)
    found = {round(c.length, 6) for c in classes}
    assert found == _brute_force_lengths(group, 6, 5.5)
    counts = Counter(round(c.length, 6) for c in classes)
    # classes come in orientation pairs
    assert all(v % 2 == 0 for v in counts.values())


def test_classes_are_primitive_and_sorted(group):
    classes = enumerate_primitive_classes(group, 6.0)
    lengths = [c.length for c in classes]
    assert lengths == sorted(lengths)
    for c in classes:
        assert abs(c.trace) > 2


def test_classes_json_round_trip(group):
    classes = enumerate_primitive_classes(group, 3.1)
    data = json.loads(classes_to_json(classes))
    assert len(data) == 24
    m = MobiusMap(np.array(data[0]["matrix"]).reshape(2, 2))
    assert m.is_close(classes[0].representative)
    assert data[0]["length"] == classes[0].length


def test_empty_enumeration(group):
    assert enumerate_primitive_classes(group, 0.0) == []
