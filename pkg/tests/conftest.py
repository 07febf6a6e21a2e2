import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from meshwss.mesh import INLET, OUTLET, BoundaryLoop, TriangleMesh
from meshwss.synth import SingleArterySpec, Stenosis, loft_single


def grid_mesh(nx=4, ny=4, spacing=1.0, jitter=0.0, seed=0):
    """Flat z=0 grid of right triangles, counterclockwise seen from +z."""
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="xy")
    pos = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], axis=1)
    if jitter:
        pos[:, :2] += rng.uniform(-jitter, jitter, (nx * ny, 2)) * spacing
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a, b, c, d = j * nx + i, j * nx + i + 1, (j + 1) * nx + i + 1, (j + 1) * nx + i
            tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(pos, np.array(tris))


def fan_mesh(k=6, radius=1.0, height=0.0, phase=0.0):
    """Apex vertex 0 surrounded by a closed ring of ``k`` vertices (a cone when height > 0)."""
    t = phase + 2 * np.pi * np.arange(k) / k
    ring = np.stack([radius * np.cos(t), radius * np.sin(t), np.full(k, -height)], axis=1)
    pos = np.vstack([[0.0, 0.0, 0.0], ring])
    tris = [(0, 1 + i, 1 + (i + 1) % k) for i in range(k)]
    return TriangleMesh(pos, np.array(tris))


def icosphere(n=200, seed=0):
    """Unit sphere triangulated as the convex hull of Fibonacci points, outward winding."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5**0.5) * i
    pos = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    tris = ConvexHull(pos).simplices.copy()
    a, b, c = pos[tris[:, 0]], pos[tris[:, 1]], pos[tris[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    tris[flip] = tris[flip][:, ::-1]
    return TriangleMesh(pos, tris)


def straight_spec(radius=1.0, length=10.0, stenoses=()):
    x = np.linspace(0.0, length, 5)
    control = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    return SingleArterySpec(control, radius, tuple(stenoses))


def tube_mesh(radius=1.0, length=10.0, edge_length=0.4, stenoses=()):
    return loft_single(straight_spec(radius, length, stenoses), edge_length)


def random_rotation(seed):
    from scipy.spatial.transform import Rotation
    return Rotation.random(random_state=seed).as_matrix()


@pytest.fixture(scope="session")
def tube():
    return tube_mesh()


@pytest.fixture(scope="session")
def stenosed_tube():
    st = Stenosis(center=10.0, length=6.0, severity=0.5, eccentricity=0.0, direction=0.0)
    return straight_spec(1.5, 20.0, (st,))


def tag_grid_loops(mesh):
    """Tag the left column of a grid mesh as inlet and the right column as outlet.

    Only used by code paths that need an inlet set; the loops are not
    closed boundary cycles, so such meshes do not pass full validation.
    """
    pos = mesh.positions
    left = tuple(np.flatnonzero(np.isclose(pos[:, 0], pos[:, 0].min())).tolist())
    right = tuple(np.flatnonzero(np.isclose(pos[:, 0], pos[:, 0].max())).tolist())
    return mesh.with_loops([BoundaryLoop(left, INLET), BoundaryLoop(right, OUTLET)])


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Ten coarse single-artery samples on disk."""
    from meshwss.dataset import generate_dataset
    out = tmp_path_factory.mktemp("single10")
    generate_dataset("single", 10, 3, out, edge_length=1.0)
    return out


_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record ``(number, title, passed, detail)`` for the end-of-run acceptance summary."""
    def record(number, title, passed, detail=""):
        _CRITERIA[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
