import math

import numpy as np
import pytest

from hermdec.geometry import MetricField
from hermdec.meshgen import Mesh, grid_mesh, random_mesh
from hermdec.solver import build_stack

PI = math.pi
SQUARE = ((0.0, PI), (0.0, PI))


def make_stack(mesh: Mesh, epsilon=None):
    dim = mesh.vertices.shape[1] if mesh.vertices.ndim > 1 else 1
    return build_stack(mesh.complex(), mesh.vertices, MetricField.euclidean(dim, epsilon))


def random_square_mesh(m, seed=0, box=SQUARE):
    verts, tris, stitches = random_mesh(m, box, seed=seed)
    return Mesh(verts, tris, stitches)


def obtuse_mesh():
    """Small fan containing obtuse triangles (circumcenters outside)."""
    verts = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 0.6], [2.0, 3.0], [5.0, 2.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3], [2, 1, 4], [2, 4, 3]])
    return Mesh(verts, tris)


def equilateral_mesh(rows=6, cols=6):
    """Triangular lattice of equilateral triangles; every simplex is well centered."""
    verts = np.array([[c + 0.5 * (r % 2), r * math.sqrt(3) / 2] for r in range(rows) for c in range(cols)])
    tris = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a, b = r * cols + c, r * cols + c + 1
            u, v = a + cols, b + cols
            if r % 2 == 0:
                tris += [[a, b, u], [b, v, u]]
            else:
                tris += [[a, v, u], [a, b, v]]
    return Mesh(verts, np.array(tris))


@pytest.fixture
def square20():
    return grid_mesh((20, 20), SQUARE)


@pytest.fixture(params=["symmetric", "asymmetric"])
def grid_style(request):
    return request.param
