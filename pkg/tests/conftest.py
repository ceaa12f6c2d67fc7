import numpy as np
import pytest
import scipy.linalg as sla

from platehomog.material import (ElasticityTensor, build_field,
                                 make_isotropic)
from platehomog.mesh import build_mesh

_VOIGT_WEIGHT = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])


def _finish_tensor(C):
    ev = sla.eigh(C, _VOIGT_WEIGHT, eigvals_only=True)
    return ElasticityTensor(C, ev[0], ev[-1])


def random_monoclinic(rng, scale=1.0):
    """Random planar-symmetric (monoclinic) positive definite tensor."""
    C = np.zeros((6, 6))
    idx = [0, 1, 2, 5]
    A = rng.standard_normal((4, 4))
    A = A @ A.T + 4.0 * np.eye(4)
    B = rng.standard_normal((2, 2))
    B = B @ B.T + 4.0 * np.eye(2)
    for i, a in enumerate(idx):
        for j, b in enumerate(idx):
            C[a, b] = scale * A[i, j]
    C[3:5, 3:5] = scale * B
    return _finish_tensor(C)


def random_triclinic(rng, scale=1.0):
    """Random fully anisotropic positive definite tensor."""
    A = rng.standard_normal((6, 6))
    C = scale * (A @ A.T + 6.0 * np.eye(6))
    return _finish_tensor(C)


@pytest.fixture(scope="session")
def mesh8():
    return build_mesh(8, 8, 8)


@pytest.fixture(scope="session")
def mesh_small():
    return build_mesh(4, 4, 4)


@pytest.fixture(scope="session")
def iso_field():
    """Homogeneous isotropic lambda = mu = 1."""
    return build_field([[0]], [make_isotropic(1.0, 1.0)])


@pytest.fixture(scope="session")
def two_phase_field():
    """Asymmetric two-phase raster of isotropic phases."""
    return build_field([[0, 1], [1, 1]],
                       [make_isotropic(1.0, 1.0), make_isotropic(5.0, 2.0)])


@pytest.fixture(scope="session")
def checkerboard_field():
    """Contrast-10 checkerboard."""
    return build_field([[0, 1], [1, 0]],
                       [make_isotropic(1.0, 1.0),
                        make_isotropic(10.0, 10.0)])


@pytest.fixture(scope="session")
def monoclinic_field():
    rng = np.random.default_rng(7)
    return build_field([[0, 1], [1, 1]],
                       [random_monoclinic(rng, 1.0),
                        random_monoclinic(rng, 3.0)])


@pytest.fixture(scope="session")
def triclinic_field():
    rng = np.random.default_rng(11)
    return build_field([[0, 1], [1, 1]],
                       [random_triclinic(rng, 1.0),
                        random_triclinic(rng, 2.5)])
