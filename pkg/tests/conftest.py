import numpy as np
import pytest

from baropc.mesh import build_rect_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_cell_field(mesh, rng, base=1.0, amp=0.3):
    """Positive cell field from a few random low modes."""
    x0, x1, y0, y1 = mesh.domain
    x = (mesh.cell_centroids[:, 0] - x0) / (x1 - x0)
    y = (mesh.cell_centroids[:, 1] - y0) / (y1 - y0)
    a = rng.uniform(-1.0, 1.0, 4)
    shape = (a[0] * np.sin(np.pi * x) * np.sin(np.pi * y)
             + a[1] * np.cos(np.pi * x) + a[2] * np.sin(2 * np.pi * y)
             + a[3] * np.cos(np.pi * x) * np.cos(np.pi * y))
    shape /= max(1.0, np.abs(shape).max())
    return base + amp * shape


def zero_boundary_velocity(mesh, rng, amp=0.3):
    u = amp * rng.uniform(-1.0, 1.0, (mesh.nedges, 2))
    u[mesh.boundary_edges] = 0.0
    return u


def meshes_for_tests():
    return [
        build_rect_mesh(3, 3),
        build_rect_mesh(5, 4, (0.0, 1.3, -0.2, 0.9)),
        build_rect_mesh(6, 6, (0.0, 1.0, -0.5, 0.5)),
    ]
