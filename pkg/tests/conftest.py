import numpy as np
import pytest

from cutiga.geometry import BackgroundMesh, HalfSpace, ImplicitDomain
from cutiga.splines import build_open_uniform_basis


@pytest.fixture
def unit_square_basis():
    def make(n=4, p=2):
        return build_open_uniform_basis([n, n], p, [[0.0, 1.0], [0.0, 1.0]])
    return make


def half_plane_domain(normal, offset, tag="dirichlet", d=2):
    box = np.array([[0.0, 1.0]] * d)
    return ImplicitDomain(HalfSpace(tag=tag, normal=tuple(normal), offset=offset), box)


def mesh_for(basis):
    return BackgroundMesh.from_basis(basis)
