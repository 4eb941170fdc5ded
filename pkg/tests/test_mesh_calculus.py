import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anosovlab.errors import CurvatureNotNegative, NoSpectralGap
from anosovlab.mesh_calculus import (KSection, build_bolza_mesh, codifferential, cotan_laplacian,
                                     curvature, dbar_operator, eta_commutator_residual, exterior_derivative,
                                     harmonic_one_form_basis, harmonic_star, intersection_matrix,
                                     hodge_star, kernel_basis, mu_operators, smooth_test_section,
                                     wedge_pairing)

COARSE = build_bolza_mesh(1)


def test_topology(mesh2):
    assert mesh2.euler_characteristic == -2
    assert mesh2.level == 2


def test_faces_grow_fourfold(meshes):
    assert meshes(2).n_faces == 4 * meshes(1).n_faces


def test_area_is_gauss_bonnet(mesh2, mesh3):
    # exact geodesic triangles: area = -2 pi chi = 4 pi
    for m in (mesh2, mesh3):
        assert m.area() == pytest.approx(4 * math.pi, abs=1e-10)


def test_d_squared_vanishes(mesh2):
    d0, d1 = exterior_derivative(mesh2, 0), exterior_derivative(mesh2, 1)
    assert abs(d1 @ d0).max() == 0


def test_codifferential_is_adjoint(mesh2):
    rng = np.random.default_rng(1)
    f = rng.standard_normal(mesh2.n_vertices)
    w = rng.standard_normal(mesh2.n_edges)
    d0 = exterior_derivative(mesh2, 0)
    lhs = np.sum(mesh2.vertex_areas() * f * (codifferential(mesh2, 1) @ w))
    rhs = np.sum(hodge_star(mesh2, 1) * (d0 @ f) * w)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_laplacian_constants_in_kernel(mesh2):
    L = cotan_laplacian(mesh2)
    assert np.abs(L @ np.ones(mesh2.n_vertices)).max() < 1e-10


def test_harmonic_basis(mesh2):
    H = harmonic_one_form_basis(mesh2)
    assert H.shape == (mesh2.n_edges, 4)
    assert np.abs(exterior_derivative(mesh2, 1) @ H).max() < 1e-10
    assert np.abs(codifferential(mesh2, 1) @ H).max() < 1e-8


def test_intersection_form_is_symplectic(mesh2):
    Q = intersection_matrix(mesh2)
    assert np.allclose(Q, -Q.T, atol=1e-10)
    assert abs(np.linalg.det(Q)) > 1e-3


def test_harmonic_star_squares_to_minus_one(mesh3):
    J = harmonic_star(mesh3)
    assert np.abs(J @ J + np.eye(4)).max() < 0.05


@given(st.integers(0, 3), st.integers(0, 3))
def test_wedge_is_antisymmetric(i, j):
    m = COARSE
    H = harmonic_one_form_basis(m)
    assert wedge_pairing(m, H[:, i], H[:, j]) == pytest.approx(-wedge_pairing(m, H[:, j], H[:, i]),
                                                                abs=1e-12)


def test_eta_commutator_on_smooth_data(mesh3):
    for k in (-1, 0, 1, 2):
        f = smooth_test_section(mesh3, k)
        # the level-4 bound of 1e-2 is checked by the acceptance suite
        assert eta_commutator_residual(mesh3, k, f) < 3e-2


def test_holomorphic_kernels(mesh2):
    assert kernel_basis(dbar_operator(mesh2, 0)).dimension == 1
    assert kernel_basis(dbar_operator(mesh2, 1)).dimension == 2
    assert kernel_basis(dbar_operator(mesh2, 2)).dimension == 3


def test_kernel_demands_gap(mesh2):
    with pytest.raises(NoSpectralGap):
        kernel_basis(dbar_operator(mesh2, 1), dim=1)


def test_twist_must_keep_curvature_negative(mesh2):
    with pytest.raises(CurvatureNotNegative):
        mu_operators(mesh2, lam2=np.full(mesh2.n_vertices, 0.6 + 0j))


def test_curvature_of_hyperbolic_metric(mesh3):
    K = curvature(mesh3).values
    assert np.abs(K + 1).max() < 0.05 * mesh3.mesh_size


def test_section_json_round_trip():
    s = KSection(2, np.array([1 + 2j, -0.5j]))
    t = KSection.from_json(s.to_json())
    assert t.degree == 2 and np.array_equal(t.values, s.values)


def test_mesh_json_schema(mesh2):
    data = mesh2.to_json()
    assert {"vertices", "faces", "pairings", "psi"} <= set(data)
    assert len(data["vertices"]) == mesh2.n_vertices
    assert len(data["psi"]) == mesh2.n_vertices
