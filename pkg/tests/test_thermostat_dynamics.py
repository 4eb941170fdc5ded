import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosovlab.errors import BudgetExceeded, RiccatiBlowup
from anosovlab.hyperbolic_core import MobiusMap, geodesic_point
from anosovlab.mesh_calculus import KSection, build_bolza_mesh, harmonic_one_form_basis
from anosovlab.thermostat_dynamics import (A_TOL, GaussianThermostat, Geodesic, SMPoint,
                                           VectorFieldSpec, a_function, a_function_invariance,
                                           birkhoff, entropy_production, flip_equivariance,
                                           holo_spec,
                                           integrate, orbit_averages, random_phase_points,
                                           rescaling_check, riccati_limits,
                                           riccati_substitution_residual, time_change_averages)
from anosovlab.vortex_solver import solve_vortex

SHORT = {"T": 20.0, "n_orbits": 16, "T_burn": 2.0}
_GEO = VectorFieldSpec(build_bolza_mesh(2))


@pytest.fixture(scope="module")
def geodesic2(mesh2):
    return VectorFieldSpec(mesh2)


@pytest.fixture(scope="module")
def gaussian2(mesh2):
    H = harmonic_one_form_basis(mesh2)
    return VectorFieldSpec(mesh2, GaussianThermostat(H @ np.array([0.3, 0.0, 0.0, 0.0])))


def _lifted_end(orb, p0, T):
    """Closed-form endpoint pushed through the recorded deck map."""
    z, th = geodesic_point(p0.z, p0.theta, T)
    g = MobiusMap.from_disk(*orb.deck)
    return g(complex(z)), float(th) + float(g.angle_shift(complex(z)))


def test_geodesic_matches_closed_form(geodesic2):
    p0 = SMPoint(0.1 + 0.2j, 0.7)
    orb = integrate(geodesic2, p0, 10.0, dt=0.005)
    z, th = _lifted_end(orb, p0, 10.0)
    assert abs(orb.end.z - z) < 1e-8
    assert abs(math.remainder(orb.end.theta - th, 2 * math.pi)) < 1e-8


@settings(max_examples=10)
@given(st.floats(0.0, 0.5), st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))
def test_forward_backward_round_trip(r, phi, theta):
    spec = _GEO
    p0 = SMPoint(r * complex(math.cos(phi), math.sin(phi)), theta)
    start = integrate(spec, p0, 0.0).end
    mid = integrate(spec, p0, 3.0, dt=0.01).end
    back = integrate(spec, mid, -3.0, dt=0.01).end
    assert abs(back.z - start.z) < 1e-6
    assert abs(math.remainder(back.theta - start.theta, 2 * math.pi)) < 1e-6


def test_budget_is_enforced(geodesic2):
    with pytest.raises(BudgetExceeded):
        integrate(geodesic2, SMPoint(0j, 0.0), 1e6)
    with pytest.raises(BudgetExceeded):
        birkhoff(geodesic2, "one", T=-1.0, n_orbits=2)


def test_constant_observable_averages_to_one(geodesic2):
    est = birkhoff(geodesic2, "one", **SHORT)
    assert est.mean == pytest.approx(1.0, abs=1e-12)


def test_ensembles_do_not_depend_on_workers(gaussian2):
    kw = dict(T=5.0, n_orbits=130, seed=3, T_burn=1.0)
    one = orbit_averages(gaussian2, ["lambda", "divergence"], workers=1, **kw)
    three = orbit_averages(gaussian2, ["lambda", "divergence"], workers=3, **kw)
    assert np.array_equal(one, three)


def test_ensembles_depend_on_seed(gaussian2):
    a = birkhoff(gaussian2, "lambda", seed=0, **SHORT)
    b = birkhoff(gaussian2, "lambda", seed=1, **SHORT)
    assert a.mean != b.mean


def test_random_points_are_reproducible(gaussian2):
    a = random_phase_points(gaussian2, 5, seed=7)
    b = random_phase_points(gaussian2, 5, seed=7)
    assert a == b


def test_geodesic_entropy_production_is_exactly_zero(geodesic2):
    e_plus, e_minus = entropy_production(geodesic2, **SHORT)
    assert e_plus.mean == 0.0 and e_plus.stderr == 0.0


def test_flip_equivariance_for_reversible_fields(gaussian2):
    fwd, bwd = flip_equivariance(gaussian2, "divergence", T=100.0, n_orbits=32)
    assert abs(fwd.mean - bwd.mean) <= 3 * math.hypot(fwd.stderr, bwd.stderr)


def test_time_change_reweights_averages(gaussian2):
    direct, num, den = time_change_averages(gaussian2, 0.3, "lambda", T=100.0, n_orbits=32)
    ratio = num.mean / den.mean
    err = abs(ratio) * math.hypot(num.stderr / max(abs(num.mean), 1e-12), den.stderr / den.mean)
    assert abs(direct.mean - ratio) <= 3 * math.hypot(direct.stderr, err) + 1e-4


def test_geodesic_riccati_solutions_are_constant(geodesic2):
    pts = random_phase_points(geodesic2, 8)
    r_u, r_s = riccati_limits(geodesic2, pts)
    assert np.abs(r_u - 1).max() < 1e-6
    assert np.abs(r_s + 1).max() < 1e-6


def test_riccati_relaxation_length_is_checked(geodesic2):
    with pytest.raises(ValueError):
        riccati_limits(geodesic2, [SMPoint(0j, 0.0)], T_relax=5.0)


def test_riccati_initial_values_must_converge(geodesic2):
    with pytest.raises(RiccatiBlowup):
        riccati_limits(geodesic2, [SMPoint(0j, 0.0)], check_tol=0.0)


def test_riccati_substitution_for_quadratic_thermostat(specs):
    spec = specs["quasi-fuchsian"]
    pts = random_phase_points(spec, 20, seed=2)
    z = np.array([p.z for p in pts])
    th = np.array([p.theta for p in pts])
    res = riccati_substitution_residual(spec, z, th)
    assert np.abs(res).max() < 0.02


def test_a_function_vanishes_without_twist(mesh2):
    sol = solve_vortex(mesh2, KSection(2, np.zeros(mesh2.n_vertices)))
    spec = holo_spec(sol)
    res = a_function(spec, random_phase_points(spec, 4))
    assert np.all(res.values == 0)


def test_a_function_transport_equation(specs):
    spec = specs["quasi-fuchsian"]
    res = a_function_invariance(spec, random_phase_points(spec, 6, seed=4))
    assert res.invariance_residual < 10 * A_TOL
    assert res.tail_bound <= A_TOL


def test_a_function_needs_quadratic_thermostat(geodesic2):
    with pytest.raises(ValueError):
        a_function(geodesic2, [SMPoint(0j, 0.0)])


def test_conformal_rescaling_matches_geodesic_flow(mesh2):
    x = mesh2.points
    f = 0.1 * np.cos(2 * x.real) * np.exp(-np.abs(x) ** 2)
    a, b = rescaling_check(mesh2, f, SMPoint(0.05 + 0.1j, 1.0), T=2.0)
    assert abs(a.z - b.z) < 1e-4
    assert abs(math.remainder(a.theta - b.theta, 2 * math.pi)) < 1e-4


def test_geodesic_is_the_default_kind(mesh2):
    spec = VectorFieldSpec(mesh2)
    assert isinstance(spec.kind, Geodesic) and spec.is_thermostat and spec.is_reversible
