import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anosovlab.hyperbolic_core import bolza_group
from anosovlab.mesh_calculus import KSection, build_bolza_mesh, harmonic_one_form_basis
from anosovlab.thermostat_dynamics import (GaussianThermostat, VectorFieldSpec, XsFamily,
                                           holo_spec)
from anosovlab.vortex_solver import holomorphic_differentials, solve_vortex

QF_SCALE = 0.6

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def group():
    return bolza_group()


@pytest.fixture(scope="session")
def meshes():
    cache = {}

    def get(level):
        if level not in cache:
            cache[level] = build_bolza_mesh(level)
        return cache[level]
    return get


@pytest.fixture(scope="session")
def mesh2(meshes):
    return meshes(2)


@pytest.fixture(scope="session")
def mesh3(meshes):
    return meshes(3)


def quadratic_solution(mesh, scale=QF_SCALE, index=0):
    B = holomorphic_differentials(mesh, 2)
    return solve_vortex(mesh, KSection(2, scale * B[index].values))


@pytest.fixture(scope="session")
def solutions(meshes):
    cache = {}

    def get(level, scale=QF_SCALE):
        key = (level, scale)
        if key not in cache:
            cache[key] = quadratic_solution(meshes(level), scale)
        return cache[key]
    return get


@pytest.fixture(scope="session")
def qf3(solutions):
    return solutions(3)


@pytest.fixture(scope="session")
def specs(mesh3, qf3):
    H = harmonic_one_form_basis(mesh3)
    return {
        "geodesic": VectorFieldSpec(mesh3),
        "gaussian": VectorFieldSpec(mesh3, GaussianThermostat(H @ np.array([0.3, 0.0, 0.0, 0.0]))),
        "quasi-fuchsian": holo_spec(qf3),
        "xs": VectorFieldSpec(mesh3, XsFamily(H @ np.array([1.0, 0.0, 0.0, 0.0]), 0.1)),
    }
