import numpy as np
import pytest

from anosovlab.errors import NotHolomorphic
from anosovlab.mesh_calculus import KSection, smooth_test_section
from anosovlab.vortex_solver import (VortexSolution, geometric_tolerance, holomorphic_differentials,
                                     solve_vortex, vortex_residual)


def test_zero_differential_gives_hyperbolic_metric(mesh2):
    sol = solve_vortex(mesh2, KSection(2, np.zeros(mesh2.n_vertices)))
    assert np.abs(sol.u.values).max() <= 1e-12
    assert np.allclose(sol.K.values, -1.0)


def test_quadratic_differentials_span_three_dimensions(mesh2):
    assert len(holomorphic_differentials(mesh2, 2)) == 3


def test_curvature_relation(qf3):
    sol = qf3
    K = -1.0 + np.abs(sol.A.values) ** 2 * np.exp(-4 * sol.u.values)
    assert np.allclose(sol.K.values, K, atol=1e-12)
    assert np.all(sol.K.values < 0) and np.all(sol.K.values >= -1 - 1e-12)
    assert vortex_residual(sol.mesh, sol) < geometric_tolerance(sol.mesh)


def test_volume_grows_with_the_differential(solutions):
    # e^{2u} > |A| pointwise, so the area exceeds the integral of |A|
    sol = solutions(2, 1.2)
    mesh = sol.mesh.with_conformal(sol.u.values)
    assert np.all(np.exp(2 * sol.u.values) > np.abs(sol.A.values) - 1e-9)
    assert mesh.area() > 4 * np.pi


def test_rejects_non_holomorphic_data(mesh2):
    f = smooth_test_section(mesh2, 2)
    with pytest.raises(NotHolomorphic):
        solve_vortex(mesh2, KSection(2, f / np.abs(f).max()))


def test_rejects_first_order_data(mesh2):
    with pytest.raises(ValueError):
        solve_vortex(mesh2, KSection(1, np.zeros(mesh2.n_vertices)))


def test_json_round_trip(solutions):
    sol = solutions(2)
    back = VortexSolution.from_json(sol.to_json(), sol.mesh)
    assert back.m == 2
    assert np.array_equal(back.u.values, sol.u.values)
    assert np.array_equal(back.A.values, sol.A.values)
