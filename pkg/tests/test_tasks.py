import numpy as np
import pytest

from banf.errors import ConfigError
from banf.tasks import (
    BumpySphere,
    Image2D,
    MultiTone1D,
    PointBudget,
    Sphere,
    Torus,
    make_source,
    pixel_centers,
    read_pnm,
    read_sdf_csv,
    ring_card,
    sample_image_point,
    sample_sdf_points,
    write_pnm,
    write_sdf_csv,
)


class TestMultiTone:
    def test_zero_frequency_is_constant(self):
        sig = MultiTone1D.of((0.7, 0.0, 0.5))
        np.testing.assert_allclose(sig(np.linspace(0, 1, 11)), 0.7 * np.sin(0.5), atol=1e-15)

    def test_values(self):
        sig = MultiTone1D.of((1.0, 3.0), (0.5, 24.0))
        x = np.array([0.0, 1 / 12, 0.1])
        np.testing.assert_allclose(sig(x), np.sin(6 * np.pi * x) + 0.5 * np.sin(48 * np.pi * x), atol=1e-15)

    def test_bad_tone(self):
        with pytest.raises(ConfigError):
            MultiTone1D(((1.0, 2.0),))


class TestImage:
    def test_pixel_center_exact(self):
        px = np.random.default_rng(0).uniform(size=(4, 5, 3))
        img = Image2D(px)
        np.testing.assert_allclose(sample_image_point(img, pixel_centers(4, 5)), px.reshape(-1, 3), atol=1e-15)

    def test_pixel_center_order(self):
        np.testing.assert_allclose(pixel_centers(2, 2), [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])

    def test_bilinear_midpoint_and_clamp(self):
        img = Image2D(np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(img(np.array([[0.5, 0.5], [0.0, 0.5], [1.0, 0.5]]))[:, 0], [0.5, 0.0, 1.0])

    @pytest.mark.parametrize("bad", [np.full((2, 2), 1.5), np.zeros((2, 2, 2, 2))])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            Image2D(bad)

    def test_ring_card(self):
        img = ring_card(64)
        assert img.resolution == (64, 64) and img.channels == 3
        assert 0.0 <= img.pixels.min() and img.pixels.max() <= 1.0


class TestSDFs:
    def test_sphere_values(self):
        s = Sphere(radius=0.4)
        assert s(np.array([0.5, 0.5, 0.5])) == pytest.approx(-0.4)
        assert s(np.array([0.9, 0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)

    def test_torus_center(self):
        t = Torus(major=0.3, minor=0.1)
        assert t(np.array([0.5, 0.5, 0.5])) == pytest.approx(0.3 - 0.1)
        assert t(np.array([0.8, 0.5, 0.5])) == pytest.approx(-0.1)

    def test_flat_bumpy_sphere_is_sphere(self):
        pts = np.random.default_rng(0).uniform(size=(200, 3))
        np.testing.assert_allclose(BumpySphere(radius=0.3, amplitude=0.0)(pts), Sphere(radius=0.3)(pts), atol=1e-14)

    @pytest.mark.parametrize("src", [Sphere(), Torus(), BumpySphere()], ids=["sphere", "torus", "bumpy"])
    def test_surface_points_on_zero_set(self, src):
        pts = src.surface_points(np.random.default_rng(1), 500)
        assert pts.shape == (500, 3)
        assert np.max(np.abs(src(pts))) < 1e-9

    @pytest.mark.parametrize("src", [Sphere(), Torus(), BumpySphere()], ids=["sphere", "torus", "bumpy"])
    def test_unit_gradient(self, src):
        pts = np.random.default_rng(2).uniform(size=(500, 3))
        norms = np.linalg.norm(src.gradient(pts), axis=1)
        # stay away from the medial axis (centers and the torus axis)
        keep = np.abs(src(pts)) < 0.15
        np.testing.assert_allclose(norms[keep], 1.0, atol=1e-3)


class TestPointBudget:
    def test_default_counts(self):
        assert PointBudget(1000).counts() == (400, 400, 200)

    def test_bad_fractions(self):
        with pytest.raises(ConfigError):
            PointBudget(fractions=(0.5, 0.5, 0.5))

    def test_uniform_only_labels_are_exact(self):
        src = Sphere()
        data = sample_sdf_points(src, PointBudget(500, (0.0, 0.0, 1.0)), seed=3)
        np.testing.assert_array_equal(data.values, src(data.points))
        assert len(data) == 500

    def test_split_and_determinism(self):
        src = Torus()
        a = sample_sdf_points(src, PointBudget(1000), seed=4)
        b = sample_sdf_points(src, PointBudget(1000), seed=4)
        np.testing.assert_array_equal(a.points, b.points)
        assert np.max(np.abs(a.values[:400])) < 1e-9
        near = np.abs(a.values[400:800])
        assert 0.004 < np.median(near) < 0.01
        assert a.points.min() >= 0.0 and a.points.max() <= 1.0


def test_make_source():
    assert make_source("sphere", radius=0.2).radius == 0.2
    assert make_source("multitone", tones=[[1, 3]]).tones == ((1.0, 3.0, 0.0),)
    with pytest.raises(LookupError):
        make_source("teapot")
    with pytest.raises(ConfigError):
        make_source("sphere", colour=1)


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_pnm_round_trip(tmp_path, shape):
    img = np.random.default_rng(0).integers(0, 256, size=shape) / 255.0
    write_pnm(tmp_path / "x.pnm", img)
    np.testing.assert_allclose(read_pnm(tmp_path / "x.pnm"), img, atol=1e-15)


def test_pnm_rejects_other_formats(tmp_path):
    (tmp_path / "a.pnm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ConfigError):
        read_pnm(tmp_path / "a.pnm")


def test_sdf_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts, vals = rng.uniform(size=(20, 3)), rng.normal(size=20)
    write_sdf_csv(tmp_path / "d.csv", pts, vals)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x,y,z,sdf"
    p2, v2 = read_sdf_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(p2, pts)
    np.testing.assert_array_equal(v2, vals)
