import numpy as np
import pytest

from polyfv.generate import FAMILIES, GenSpec, generate
from polyfv.mesh import Mesh

SMALL_N = {"hex": 4, "hexskew": 4, "triprism": 4, "polyprism": 4, "tet": 4, "poly": 4}


def two_cube_mesh(cell_centers=None):
    """Two unit cubes [0,1]x[0,1]^2 and [1,2]x[0,1]^2 sharing the face x=1.

    12 points, 11 faces, 1 internal face; every loop is outward from its owner.
    """
    pts = []
    for k in range(2):
        for j in range(2):
            for i in range(3):
                pts.append((i, j, k))
    pid = {p: m for m, p in enumerate(pts)}

    def q(*corners):
        return [pid[c] for c in corners]

    faces = [
        q((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),  # internal x=1, normal +x
        q((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),  # x=0, -x
        q((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),  # y=0, -y
        q((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),  # y=1, +y
        q((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),  # z=0, -z
        q((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),  # z=1, +z
        q((2, 0, 0), (2, 1, 0), (2, 1, 1), (2, 0, 1)),  # x=2, +x
        q((1, 0, 0), (2, 0, 0), (2, 0, 1), (1, 0, 1)),
        q((1, 1, 0), (1, 1, 1), (2, 1, 1), (2, 1, 0)),
        q((1, 0, 0), (1, 1, 0), (2, 1, 0), (2, 0, 0)),
        q((1, 0, 1), (2, 0, 1), (2, 1, 1), (1, 1, 1)),
    ]
    owner = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
    return Mesh.from_faces(np.array(pts, float), faces, owner, [1], 1, cell_centers)


@pytest.fixture(scope="session")
def two_cubes():
    return two_cube_mesh()


@pytest.fixture(scope="session")
def small_meshes():
    return {fam: generate(GenSpec.default(fam, SMALL_N[fam])) for fam in FAMILIES}


@pytest.fixture(params=FAMILIES)
def family_mesh(request, small_meshes):
    return request.param, small_meshes[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
