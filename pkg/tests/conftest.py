import numpy as np
import pytest

from femchp.mesh import Mesh, build_structured_mesh


@pytest.fixture(scope="session")
def right2d_n2():
    return build_structured_mesh("right2d", 2)


@pytest.fixture(scope="session")
def right2d_n4():
    return build_structured_mesh("right2d", 4)


@pytest.fixture(scope="session")
def equilateral_n4():
    return build_structured_mesh("equilateral2d", 4)


@pytest.fixture(scope="session")
def kuhn_n2():
    return build_structured_mesh("kuhn3d", 2)


@pytest.fixture
def ref_triangle():
    # unit right triangle, all three vertices on the boundary
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(2, verts, np.array([[0, 1, 2]]))


@pytest.fixture
def ref_tet():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return Mesh(3, verts, np.array([[0, 1, 2, 3]]))
