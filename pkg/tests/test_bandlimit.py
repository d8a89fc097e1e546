import math

import numpy as np
import pytest

from banf import diffcore as dc
from banf.analysis.lsq import interpolation_matrix, ls_projection
from banf.analysis.spectral import dft_spectrum
from banf.bandlimit import (
    BandLimitedField,
    Kernel,
    Lattice,
    bandlimited_eval,
    contributing_nodes,
    cutoff_frequency,
    interpolation_weights,
    kernel_eval,
)
from banf.errors import ConfigError
import banf.bandlimit as bl
from banf.fields import Direct, FieldArch, HashGrid, HeadSpec, InitPolicy, eval_field, init_field

KERNELS = [
    Kernel("linear"),
    Kernel("sinc", order=6),
    Kernel("bicubic"),
    Kernel("lanczos", a=2),
    Kernel("lanczos", a=3),
]


def _direct(values, lattice):
    arch = FieldArch(lattice.dim, Direct(lattice.resolution), head=None)
    return arch, dc.ParamStore({"direct.values": np.asarray(values, dtype=np.float64).reshape(lattice.size, -1)})


class TestLattice:
    def test_vertex_nodes(self):
        lat = Lattice(4, 1)
        np.testing.assert_allclose(lat.axis_coords(), [0, 0.25, 0.5, 0.75, 1.0])
        assert lat.size == 5

    def test_cell_nodes(self):
        lat = Lattice(4, 2, centering="cell")
        np.testing.assert_allclose(lat.axis_coords(), [0.125, 0.375, 0.625, 0.875])
        assert lat.size == 16

    def test_node_coords_row_major(self):
        lat = Lattice(2, 2)
        np.testing.assert_allclose(lat.node_coords([0, 1, 3]), [[0, 0], [0, 0.5], [0.5, 0]])

    @pytest.mark.parametrize("res", [0, 1])
    def test_minimum_resolution(self, res):
        with pytest.raises(ConfigError):
            Lattice(res, 1)


class TestCutoff:
    def test_r64(self):
        omega, nyq = cutoff_frequency(Lattice(64, 2))
        assert Lattice(64).period == 1 / 64
        assert omega == pytest.approx(128 * math.pi)
        assert nyq == 32

    def test_r2(self):
        omega, nyq = cutoff_frequency(Lattice(2))
        assert omega == pytest.approx(4 * math.pi) and nyq == 1

    def test_doubling(self):
        assert cutoff_frequency(Lattice(32))[0] == pytest.approx(2 * cutoff_frequency(Lattice(16))[0])


class TestKernels:
    def test_linear_values(self):
        k = Kernel("linear")
        np.testing.assert_allclose(k([0.0, 1.0, -1.0, 0.5]), [1.0, 0.0, 0.0, 0.5])

    def test_lanczos2_zeros(self):
        k = Kernel("lanczos", a=2)
        assert k(0.0) == 1.0
        np.testing.assert_allclose(k([1.0, -1.0, 2.0, -2.0]), 0.0, atol=1e-16)

    @pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: f"{k.kind}{k.order if k.kind == 'sinc' else k.a}")
    def test_interpolating(self, kernel):
        assert kernel(0.0) == 1.0
        np.testing.assert_allclose(kernel(np.arange(1, kernel.radius + 1)), 0.0, atol=1e-15)
        assert np.all(kernel(np.array([kernel.radius, kernel.radius + 0.3])) == 0.0)

    def test_linear_spectrum_is_sinc_squared(self):
        # dense samples of the triangle kernel; its continuous transform is sinc^2(f)
        m, span = 256, 64
        x = (np.arange(span * m) - span * m // 2) / m
        tri = kernel_eval(Kernel("linear"), x)
        spec = np.abs(np.fft.fft(np.fft.ifftshift(tri))) / m
        f = np.fft.fftfreq(len(x), d=1.0 / m)
        band = np.abs(f) <= 4.0
        rms = np.sqrt(np.mean((spec[band] - np.sinc(f[band]) ** 2) ** 2))
        assert rms <= 0.01

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            Kernel("gauss")
        with pytest.raises(ConfigError):
            Kernel("sinc", order=5)


class TestContributingNodes:
    def test_on_node(self):
        assert contributing_nodes([0.25], Lattice(4), Kernel("linear")) == [((1,), 1.0)]

    def test_bilinear(self):
        nodes = contributing_nodes([0.1, 0.3], Lattice(4, 2), Kernel("linear"))
        assert len(nodes) == 4
        got = dict(nodes)
        fx, fy = 0.4, 0.2
        assert got[(0, 1)] == pytest.approx((1 - fx) * (1 - fy))
        assert got[(1, 2)] == pytest.approx(fx * fy)

    def test_sinc6_interior(self):
        nodes = contributing_nodes([0.53], Lattice(16), Kernel("sinc", order=6))
        assert len(nodes) == 6
        assert abs(sum(w for _, w in nodes) - 1.0) <= 1e-12


@pytest.mark.parametrize("kernel", KERNELS + [Kernel("sinc", circular=True), Kernel("lanczos", a=3, circular=True)])
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_weights_partition_of_unity_including_boundary(kernel, dim):
    rng = np.random.default_rng(dim)
    pts = np.concatenate([rng.uniform(size=(500, dim)), rng.choice([0.0, 1.0, 1e-3, 1 - 1e-3], size=(100, dim))])
    _, w = interpolation_weights(pts, Lattice(8, dim), kernel)
    assert np.max(np.abs(w.sum(axis=1) - 1.0)) <= 1e-12


def test_circular_support_drops_corner_taps():
    lat = Lattice(16, 2)
    _, w_box = interpolation_weights(np.array([[0.52, 0.47]]), lat, Kernel("sinc"))
    _, w_circ = interpolation_weights(np.array([[0.52, 0.47]]), lat, Kernel("sinc", circular=True))
    assert np.count_nonzero(w_circ) < np.count_nonzero(w_box)


class TestBandLimitedField:
    @pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
    def test_node_identity(self, kernel):
        arch = FieldArch(2, HashGrid(4, 512, 2, 4, 32), HeadSpec((16,)))
        params = init_field(arch, InitPolicy("standard", seed=1))
        lat = Lattice(8, 2)
        f = BandLimitedField(arch, params, lat, kernel)
        np.testing.assert_allclose(bandlimited_eval(f, lat.nodes()), eval_field(arch, params, lat.nodes()), atol=1e-12, rtol=0)

    def test_linear_midpoint(self):
        lat = Lattice(2, 1)
        arch, params = _direct([2.0, 4.0, 6.0], lat)
        f = BandLimitedField(arch, params, lat, Kernel("linear"))
        assert f(np.array([[0.25]]))[0, 0] == 3.0

    @pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
    def test_constant_field(self, kernel):
        lat = Lattice(6, 2)
        arch, params = _direct(np.full(lat.size, -1.25), lat)
        f = BandLimitedField(arch, params, lat, kernel)
        pts = np.random.default_rng(0).uniform(size=(300, 2))
        assert np.max(np.abs(f(pts) + 1.25)) <= 1e-12

    def test_chunked_evaluation_matches_recorded_path(self):
        arch = FieldArch(2, HashGrid(4, 512, 2, 4, 32), HeadSpec((16,)))
        params = init_field(arch, InitPolicy("standard", seed=4))
        f = BandLimitedField(arch, params, Lattice(16, 2), Kernel("bicubic"))
        pts = np.random.default_rng(1).uniform(size=(5000, 2))
        ref = f.node(dc.Tape(record=False), pts).value
        np.testing.assert_allclose(f(pts, chunk=512), ref, rtol=0, atol=1e-13)

    @pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
    def test_gradients(self, kernel):
        arch = FieldArch(2, HashGrid(3, 64, 2, 4, 16), HeadSpec((8,), activation="softplus"))
        params = init_field(arch, InitPolicy("standard", seed=2))
        for n in params.names():
            params.assign(n, params[n] + np.random.default_rng(3).normal(0, 0.1, params[n].shape))
        f = BandLimitedField(arch, params, Lattice(8, 2), kernel)
        xs = np.random.default_rng(4).uniform(size=(30, 2))

        def loss(tape, p):
            f.params = p
            return dc.sse(f.node(tape, xs), np.zeros((30, 1)))

        assert dc.gradcheck(loss, params, probes=60) <= 1e-4

    def test_inner_field_only_read_at_nodes(self):
        # the recorded inner evaluations are exactly the lattice nodes used
        arch = FieldArch(1, None, HeadSpec((4,)))
        params = init_field(arch, InitPolicy("standard", seed=0))
        seen = []
        orig = bl.field_node

        def spy(tape, a, p, xs):
            seen.append(np.array(xs))
            return orig(tape, a, p, xs)

        bl.field_node = spy
        try:
            BandLimitedField(arch, params, Lattice(64, 1), Kernel("linear"))(np.array([[0.1], [0.33]]))
        finally:
            bl.field_node = orig
        nodes = np.concatenate(seen)[:, 0] * 64
        np.testing.assert_allclose(nodes, np.round(nodes), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            BandLimitedField(FieldArch(2, None, HeadSpec()), dc.ParamStore(), Lattice(4, 3))


def _direct_fit(k, kernel, r=16):
    lat = Lattice(r, 1)
    xs = ((np.arange(4096) + 0.5) / 4096)[:, None]
    proj = ls_projection(lat, kernel, xs, np.sin(2 * np.pi * k * xs[:, 0]))
    arch, params = _direct(proj.values, lat)
    return BandLimitedField(arch, params, lat, kernel)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_spectral_bound_passband_sinc(k):
    # Direct node values at their least-squares optimum, i.e. the converged fit
    f = _direct_fit(k, Kernel("sinc"))
    x = (np.arange(1024) / 1024)[:, None]
    rms = np.sqrt(np.mean((f(x)[:, 0] - np.sin(2 * np.pi * k * x[:, 0])) ** 2))
    assert rms <= 0.02


@pytest.mark.parametrize("k", [24, 30, 40])
@pytest.mark.parametrize("kind", ["sinc", "linear"])
def test_spectral_bound_stopband(kind, k):
    f = _direct_fit(k, Kernel(kind))
    x = (np.arange(1024) / 1024)[:, None]
    amp = dft_spectrum(f(x)[:, 0]).amplitude(k)
    limit = 0.05 if kind == "sinc" else np.sinc(k / 16) ** 2 + 0.05
    assert amp <= limit


def test_interpolation_matrix_matches_field():
    lat = Lattice(8, 2)
    kernel = Kernel("lanczos", a=2)
    vals = np.random.default_rng(0).normal(size=lat.size)
    arch, params = _direct(vals, lat)
    pts = np.random.default_rng(1).uniform(size=(100, 2))
    np.testing.assert_allclose(interpolation_matrix(lat, kernel, pts) @ vals, BandLimitedField(arch, params, lat, kernel)(pts)[:, 0], atol=1e-13)


def test_node_value_cache_tracks_parameter_updates():
    arch = FieldArch(2, HashGrid(2, 64, 2, 4, 8), HeadSpec((4,)))
    params = init_field(arch, InitPolicy("standard", seed=0))
    f = BandLimitedField(arch, params, Lattice(8, 2), Kernel("linear"))
    pts = np.random.default_rng(0).uniform(size=(600, 2))
    before = f(pts, chunk=100)
    assert f.node_values() is f.node_values()
    params.subtract_("head.1.bias", np.ones(1))
    np.testing.assert_allclose(f(pts, chunk=100), before - 1.0, atol=1e-12)
    f.params = params.copy()
    np.testing.assert_allclose(f(pts, chunk=100), before - 1.0, atol=1e-12)
    f.lattice = Lattice(4, 2)
    assert f.node_values().shape == (25, 1)
