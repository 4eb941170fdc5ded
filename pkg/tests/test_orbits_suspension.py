import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anosovlab.errors import EmptyWindow, IncompleteClasses
from anosovlab.hyperbolic_core import enumerate_primitive_classes
from anosovlab.orbits_suspension import (CatMapSuspension, cat_fixed_count, homology_class,
                                         matrix_power, orbit_means, suspension_invariants,
                                         weighted_orbit_average, zeta_partial,
                                         zeta_tail_differences)
from anosovlab.thermostat_dynamics import VectorFieldSpec

CAT = CatMapSuspension(((2, 1), (1, 1)))


@pytest.fixture(scope="module")
def classes(group):
    return enumerate_primitive_classes(group, 5.5)


def _grid_fixed_points(A, n):
    """Count x in [0,1)^2 with A^n x = x mod 1 by scanning the lattice (1/D) Z^2."""
    P = np.array(matrix_power(A, n), dtype=np.int64) - np.eye(2, dtype=np.int64)
    D = abs(int(round(np.linalg.det(P))))
    y = np.stack(np.meshgrid(np.arange(D), np.arange(D), indexing="ij"), -1).reshape(-1, 2)
    return int(np.all((y @ P.T) % D == 0, axis=1).sum())


@pytest.mark.parametrize("n", range(1, 7))
def test_fixed_points_match_lattice_scan(n):
    assert cat_fixed_count(CAT, n) == _grid_fixed_points(CAT.A, n)


def test_cat_counts():
    assert [cat_fixed_count(CAT, n) for n in (1, 2, 3, 4)] == [1, 5, 16, 45]


SL2_GENERATORS = (((1, 1), (0, 1)), ((1, 0), (1, 1)), ((0, -1), (1, 0)))


@given(st.lists(st.integers(0, 2), min_size=1, max_size=8), st.integers(1, 8))
def test_counts_follow_the_trace_on_sl2z(letters, n):
    A = ((1, 0), (0, 1))
    for i in letters:
        A = tuple(tuple(sum(A[r][k] * SL2_GENERATORS[i][k][c] for k in range(2)) for c in range(2))
                  for r in range(2))
    if abs(A[0][0] + A[1][1]) <= 2:
        with pytest.raises(ValueError):
            CatMapSuspension(A)
        return
    P = np.linalg.matrix_power(np.array(A, dtype=float), n)
    assert cat_fixed_count(CatMapSuspension(A), n) == pytest.approx(abs(np.trace(P) - 2), rel=1e-9)


def test_suspension_rejects_bad_matrices():
    with pytest.raises(ValueError):
        CatMapSuspension(((1, 1), (0, 1)))
    with pytest.raises(ValueError):
        CatMapSuspension(((2, 0), (0, 1)))
    with pytest.raises(ValueError):
        CatMapSuspension.parse("1,2,3")
    assert CatMapSuspension.parse("2,1,1,1") == CAT
    with pytest.raises(ValueError):
        cat_fixed_count(CAT, 0)


def test_suspension_invariants():
    inv = suspension_invariants(CAT)
    assert inv["b1"] == 1 and inv["winding_nonzero"]
    assert inv["ruelle_order"] == -2
    assert inv["m10"] == 0 and inv["m1"] == 1


def test_empty_zeta_is_one():
    assert zeta_partial([], 1.0, 10.0) == 1


def test_zeta_demands_complete_classes(classes):
    with pytest.raises(IncompleteClasses):
        zeta_partial(classes, 1.0, 8.0)


def test_zeta_factors_directly(classes):
    expected = np.prod([1 - math.exp(-2.0 * c.length) for c in classes if c.length <= 4.0])
    assert zeta_partial(classes, 2.0, 4.0) == pytest.approx(expected, rel=1e-14)


def test_zeta_tails_shrink(classes):
    diffs = zeta_tail_differences(classes, 2.0, [3.0, 4.0, 5.0], complete_to=5.5)
    assert diffs[1] < diffs[0]


def test_homology_of_words():
    assert np.array_equal(homology_class([0, 4, 1, 1, 7]), [0, 2, 0, -1])


def test_form_periods_are_linear_in_homology(mesh2, classes):
    # integrating a closed form over a closed geodesic only sees its homology class
    spec = VectorFieldSpec(mesh2)
    vals = orbit_means(spec, classes, [f"form:{i}" for i in range(4)] + ["one"], dt=0.01)
    lengths = np.array([c.length for c in classes])
    periods = (vals[:4] * lengths).T
    H = np.array([homology_class(c.word) for c in classes])
    coef, *_ = np.linalg.lstsq(H, periods, rcond=None)
    assert np.abs(H @ coef - periods).max() < 0.05 * np.abs(periods).max()
    assert np.array_equal(vals[4], np.ones(len(classes)))


def test_weighted_average_of_constant(mesh2, classes):
    avg = weighted_orbit_average(classes, "one", T=4.0, mesh=mesh2)
    assert avg.mean == pytest.approx(1.0, abs=1e-12) and avg.spread < 1e-6
    assert avg.n_classes == 24 and avg.window == (3.0, 4.0)


def test_empty_window(mesh2, classes):
    with pytest.raises(EmptyWindow):
        weighted_orbit_average(classes, "one", T=1.0, mesh=mesh2)
    with pytest.raises(ValueError):
        weighted_orbit_average(classes, "one", T=4.0)
