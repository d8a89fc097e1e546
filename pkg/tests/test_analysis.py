import math

import numpy as np
import pytest

from banf.analysis.lsq import interpolation_matrix, ls_projection
from banf.analysis.metrics import chamfer_l2, nearest_sq_brute, nearest_sq_tree, psnr
from banf.analysis.spectral import band_energy, dft_spectrum, lowpass_reference, radial_spectrum
from banf.bandlimit import Kernel, Lattice
from banf.errors import ConfigError, NumericError


class TestSpectrum:
    def test_constant(self):
        s = dft_spectrum(np.full(64, 2.0))
        assert s.magnitudes[0] == pytest.approx(128.0)
        assert np.max(s.magnitudes[1:]) < 1e-12

    @pytest.mark.parametrize("k", [1, 5, 31])
    def test_unit_sine_peak(self, k):
        x = np.arange(64) / 64
        s = dft_spectrum(np.sin(2 * np.pi * k * x))
        assert s.magnitudes[k] == pytest.approx(32.0)
        assert s.amplitude(k) == pytest.approx(1.0)

    def test_band_energy_split(self):
        x = np.arange(256) / 256
        s = dft_spectrum(np.sin(2 * np.pi * 3 * x) + np.sin(2 * np.pi * 24 * x))
        assert band_energy(s, 0, 16) == pytest.approx(0.5)
        assert band_energy(s, 16, 128, closed="both") == pytest.approx(0.5)

    @pytest.mark.parametrize("closed,expected", [("left", 0.0), ("right", 1.0), ("both", 1.0)])
    def test_band_edges(self, closed, expected):
        x = np.arange(64) / 64
        s = dft_spectrum(np.sin(2 * np.pi * 8 * x))
        assert band_energy(s, 4, 8, closed=closed) == pytest.approx(expected)

    def test_zero_signal_has_no_energy(self):
        assert band_energy(dft_spectrum(np.zeros(16)), 0, 8) == 0.0

    def test_invalid_band(self):
        with pytest.raises(ConfigError):
            band_energy(dft_spectrum(np.ones(8)), 4, 4)

    def test_radial_spectrum_peak(self):
        n = 64
        u = (np.arange(n) + 0.5) / n
        img = np.cos(2 * np.pi * 5 * u)[None, :] * np.ones((n, 1))
        rad, mag = radial_spectrum(img)
        assert rad[np.argmax(mag[1:]) + 1] == 5


class TestLowpass:
    def test_ideal_removes_high_tone(self):
        x = np.arange(512) / 512
        low = np.sin(2 * np.pi * 3 * x)
        out = lowpass_reference(low + np.sin(2 * np.pi * 24 * x), 16)
        np.testing.assert_allclose(out, low, atol=1e-12)

    def test_linear_response(self):
        x = np.arange(512) / 512
        out = lowpass_reference(np.sin(2 * np.pi * 8 * x), 16, filter="linear")
        np.testing.assert_allclose(out, np.sinc(8 / 32) ** 2 * np.sin(2 * np.pi * 8 * x), atol=1e-12)

    def test_separable_2d(self):
        n = 64
        u = np.arange(n) / n
        img = np.sin(2 * np.pi * 3 * u)[:, None] * np.sin(2 * np.pi * 20 * u)[None, :]
        assert np.max(np.abs(lowpass_reference(img, 10))) < 1e-12

    def test_cutoff_above_nyquist_warns(self):
        with pytest.warns(UserWarning):
            out = lowpass_reference(np.ones(8), 10)
        np.testing.assert_array_equal(out, 1.0)

    @pytest.mark.parametrize("cutoff,kind", [(0.0, "ideal"), (4.0, "box")])
    def test_invalid(self, cutoff, kind):
        with pytest.raises(ConfigError):
            lowpass_reference(np.ones(16), cutoff, filter=kind)


class TestLeastSquares:
    @pytest.mark.parametrize("kernel", [Kernel("linear"), Kernel("sinc"), Kernel("bicubic")], ids=lambda k: k.kind)
    def test_reproduces_representable_target(self, kernel):
        lat = Lattice(8, 1)
        truth = np.random.default_rng(0).normal(size=lat.size)
        xs = np.random.default_rng(1).uniform(size=(400, 1))
        b = interpolation_matrix(lat, kernel, xs) @ truth
        proj = ls_projection(lat, kernel, xs, b)
        np.testing.assert_allclose(proj.values, truth, atol=1e-9)
        assert proj.residual_norm < 1e-9

    def test_sparse_route_matches_dense(self):
        # 2-D lattice large enough to take the sparse path; compare against a dense solve
        lat = Lattice(48, 2)
        xs = np.random.default_rng(2).uniform(size=(12000, 2))
        b = np.sin(7 * xs[:, 0]) * np.cos(5 * xs[:, 1])
        proj = ls_projection(lat, Kernel("linear"), xs, b)
        A = interpolation_matrix(lat, Kernel("linear"), xs).toarray()
        ref = np.linalg.lstsq(A, b, rcond=None)[0]
        np.testing.assert_allclose(proj.values, ref, atol=1e-9)
        assert proj.optimality < 1e-9

    def test_underdetermined(self):
        with pytest.raises(NumericError):
            ls_projection(Lattice(8, 1), Kernel("linear"), np.random.default_rng(0).uniform(size=(4, 1)), np.zeros(4))

    def test_empty_node_reported(self):
        xs = np.linspace(0.0, 0.4, 50)[:, None]
        with pytest.raises(NumericError, match="no samples"):
            ls_projection(Lattice(4, 1), Kernel("linear"), xs, np.zeros(50))


class TestPSNR:
    def test_known_value(self):
        a = np.zeros((4, 4))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)

    def test_identical_is_infinite(self):
        assert psnr(np.ones(5), np.ones(5)) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            psnr(np.zeros(3), np.zeros(4))


class TestChamfer:
    def test_identical_sets(self):
        p = np.random.default_rng(0).uniform(size=(100, 3))
        assert chamfer_l2(p, p) == 0.0

    def test_single_points(self):
        assert chamfer_l2(np.array([[0.0, 0, 0]]), np.array([[0.3, 0.4, 0]])) == pytest.approx(0.25)

    def test_asymmetric_sets(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[0.0, 0.0], [1.0, 0.0]])
        # a -> b: 0; b -> a: (0 + 1) / 2
        assert chamfer_l2(a, b) == pytest.approx(0.25)

    @pytest.mark.parametrize("sizes", [(50, 70), (3000, 2000)])
    def test_tree_and_brute_routes_agree_exactly(self, sizes):
        rng = np.random.default_rng(sizes[0])
        a, b = rng.uniform(size=(sizes[0], 3)), rng.uniform(size=(sizes[1], 3))
        np.testing.assert_array_equal(nearest_sq_brute(a, b), nearest_sq_tree(a, b))
        assert chamfer_l2(a, b, "brute") == chamfer_l2(a, b, "tree")

    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros(3)])
    def test_empty_or_flat(self, bad):
        with pytest.raises(ConfigError):
            chamfer_l2(bad, np.zeros((2, 3)))

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            chamfer_l2(np.zeros((1, 3)), np.zeros((1, 3)), method="grid")
