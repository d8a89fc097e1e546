import logging

import numpy as np
import pytest
from scipy.spatial import cKDTree

from banf.analysis.mesh import Mesh, extract_mesh, grid_points, marching_cubes, sample_mesh_surface
from banf.analysis.metrics import chamfer_l2
from banf.errors import ConfigError, NumericError
from banf.tasks import Sphere, Torus


def _edges(mesh):
    e = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def test_single_inside_corner_gives_one_triangle():
    v = np.ones((2, 2, 2))
    v[0, 0, 0] = -1.0
    mesh = marching_cubes(v)
    assert mesh.triangles.shape == (1, 3)
    got = sorted(map(tuple, mesh.vertices))
    assert got == sorted([(0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5)])


def test_no_crossing_is_empty():
    assert marching_cubes(np.ones((3, 3, 3))).empty


def test_vertices_interpolate_iso_level():
    src = Sphere(radius=0.31)
    mesh = extract_mesh(src, 24)
    assert np.max(np.abs(src(mesh.vertices))) < 2e-3


@pytest.mark.parametrize("src", [Sphere(), Torus()], ids=["sphere", "torus"])
def test_watertight_and_outward(src):
    mesh = extract_mesh(src, 32)
    assert np.all(_edges(mesh) == 2)
    tri = mesh.vertices[mesh.triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centers = tri.mean(axis=1)
    # normals point toward increasing SDF, i.e. outward
    assert np.mean(np.sum(normals * src.gradient(centers), axis=1) > 0) == 1.0


def test_sphere_area():
    src = Sphere(radius=0.3)
    assert extract_mesh(src, 64).area() == pytest.approx(src.area(), rel=0.01)


def test_matches_skimage():
    measure = pytest.importorskip("skimage.measure")
    src = Torus()
    res = 20
    values = src(grid_points(res)).reshape((res + 1,) * 3)
    ours = marching_cubes(values, spacing=1.0 / res)
    verts, faces, _, _ = measure.marching_cubes(values, 0.0, spacing=(1.0 / res,) * 3)
    ref = Mesh(verts, faces)
    # scikit-image interpolates edge crossings in single precision
    assert len(ours.vertices) == len(verts) and len(ours.triangles) == len(faces)
    assert ours.area() == pytest.approx(ref.area(), rel=1e-6)
    dist, _ = cKDTree(verts).query(ours.vertices)
    assert dist.max() < 1e-6


def test_grid_points_layout():
    g = grid_points(2)
    assert g.shape == (27, 3)
    np.testing.assert_array_equal(g[:2], [[0, 0, 0], [0, 0, 0.5]])


def test_empty_extraction_warns(caplog):
    with caplog.at_level(logging.WARNING):
        mesh = extract_mesh(lambda p: np.ones(len(p)), 4)
    assert mesh.empty and "empty" in caplog.text


class TestSurfaceSampling:
    def test_points_lie_on_triangles(self):
        mesh = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
        pts = sample_mesh_surface(mesh, 1000, seed=0)
        assert np.all(pts[:, 2] == 0) and np.all(pts[:, 0] + pts[:, 1] <= 1 + 1e-12) and pts.min() >= 0

    def test_area_weighting(self):
        # triangles of area 1/2 and 3/2 in disjoint half-planes
        v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 5], [3, 0, 5], [0, 1, 5]])
        mesh = Mesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
        n = 20000
        frac = np.mean(sample_mesh_surface(mesh, n, seed=1)[:, 2] == 0)
        assert abs(frac - 0.25) <= 3 * np.sqrt(0.25 * 0.75 / n)

    def test_sphere_samples_close_to_truth(self):
        src = Sphere()
        pts = sample_mesh_surface(extract_mesh(src, 48), 20000, seed=2)
        assert chamfer_l2(pts, src.surface_points(np.random.default_rng(3), 20000)) < 1e-4

    def test_empty_mesh(self):
        with pytest.raises(ConfigError):
            sample_mesh_surface(Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)), 10)

    def test_degenerate_mesh(self):
        with pytest.raises(NumericError):
            sample_mesh_surface(Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]])), 10)


def test_mesh_validation():
    with pytest.raises(ConfigError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(ConfigError):
        Mesh(np.array([[np.nan, 0, 0]]), np.zeros((0, 3), dtype=int))


def test_obj_output(tmp_path):
    mesh = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    mesh.write_obj(tmp_path / "m.obj")
    lines = (tmp_path / "m.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 3
    assert "f 1 2 3" in lines
