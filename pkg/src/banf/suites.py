"""Verification suites: each one trains or evaluates a fixed experiment and
compares its metrics against thresholds.

Every suite is a pure function of ``(seed, budget)``; ``budget`` scales the
optimizer iteration counts, so reduced runs exercise the same code path.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import diffcore as dc
from .analysis.lsq import interpolation_matrix, ls_projection
from .analysis.mesh import extract_mesh, grid_points, sample_mesh_surface
from .analysis.metrics import chamfer_l2, psnr
from .analysis.spectral import band_energy, dft_spectrum, lowpass_reference
from .bandlimit import BandLimitedField, Kernel, Lattice, interpolation_weights
from .cascade import (
    CascadeModel,
    DatasetSampler,
    FunctionSampler,
    LevelSchedule,
    LevelSpec,
    OptimConfig,
    superpose,
    train_level,
    train_plain,
)
from .errors import ConfigError
from .fields import Direct, DenseGrid, FieldArch, HashGrid, HeadSpec, InitPolicy, eval_field, init_field
from .tasks import BumpySphere, MultiTone1D, PointBudget, Sphere, pixel_centers, ring_card, sample_sdf_points

DENSE_1D = 1024


@dataclass
class Check:
    name: str
    value: float
    op: str  # "<", "<=", ">="
    threshold: float

    @property
    def passed(self) -> bool:
        if math.isnan(self.value):
            return False
        return {
            "<": self.value < self.threshold,
            "<=": self.value <= self.threshold,
            ">=": self.value >= self.threshold,
        }[self.op]

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.6g} {self.op} {self.threshold:.6g}"


@dataclass
class SuiteResult:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, value: float, op: str, threshold: float) -> Check:
        c = Check(name, float(value), op, float(threshold))
        self.checks.append(c)
        return c

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["suite", "check", "value", "op", "threshold", "passed"])
        for c in self.checks:
            w.writerow([self.suite, c.name, repr(c.value), c.op, repr(c.threshold), int(c.passed)])
        return buf.getvalue()

    def report(self) -> str:
        return "\n".join(c.line() for c in self.checks)


def _iters(n: int, budget: float) -> int:
    return max(1, int(round(n * budget)))


def _tone_signal() -> MultiTone1D:
    return MultiTone1D.of((1.0, 3.0), (1.0, 24.0))


def _dense_1d() -> np.ndarray:
    return (np.arange(DENSE_1D) / DENSE_1D)[:, None]


def field_arch_1d() -> FieldArch:
    return FieldArch(1, HashGrid(levels=4, table_size=256, features=2, res_min=8, res_max=64), HeadSpec((32, 32, 32)))


# ------------------------------------------------------------------ oracle


def suite_oracle_ls(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """SGD on Direct node values against the exact least-squares solution."""
    res = SuiteResult("oracle-ls")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 1.0, size=(512, 1))
    sig = MultiTone1D.of((1.0, 3.0), (0.5, 7.0), (0.25, 24.0))
    b = sig(xs)
    lattice, kernel = Lattice(16, 1), Kernel("linear")
    exact = ls_projection(lattice, kernel, xs, b)

    arch = FieldArch(1, Direct(16), head=None)
    optim = OptimConfig("sgd", lr=1.0, lr_final=1e-5)
    spec = LevelSpec(16, kernel, _iters(4000, budget), 128, optim, InitPolicy())
    model = CascadeModel(LevelSchedule(arch, (spec,), warmup=(0.0, 0.0)), seed)
    train_level(model, 0, DatasetSampler(xs, b))
    nodes = model.levels[0].node_values()[:, 0]
    res.add("sgd_vs_ls_node_rms", np.sqrt(np.mean((nodes - exact.values) ** 2)), "<=", 1e-3)
    res.add("ls_optimality", exact.optimality, "<=", 1e-8)
    return res


def _fit_1d(resolutions, kernel: Kernel, seed: int, iterations: int) -> CascadeModel:
    optim = OptimConfig("adam", lr=1e-2, lr_final=1e-4)
    levels = tuple(LevelSpec(r, kernel, iterations, 1024, optim) for r in resolutions)
    model = CascadeModel(LevelSchedule(field_arch_1d(), levels), seed)
    sampler = FunctionSampler(_tone_signal(), 1)
    for k in range(len(levels)):
        train_level(model, k, sampler)
    return model


def suite_lowpass(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """A single r=16 band-limited field keeps the 3-cycle tone and suppresses the 24-cycle one."""
    res = SuiteResult("lowpass")
    xs = _dense_1d()
    gt = dft_spectrum(_tone_signal()(xs))
    leak_linear = float(np.sinc(24.0 / 16.0) ** 2)
    for kernel, limit in ((Kernel("linear"), leak_linear + 0.05), (Kernel("sinc"), 0.05)):
        model = _fit_1d((16,), kernel, seed, _iters(2000, budget))
        s = dft_spectrum(superpose(model, xs, 0)[:, 0])
        res.add(f"{kernel.kind}_bin3_ratio", s.amplitude(3) / gt.amplitude(3), ">=", 0.9)
        res.add(f"{kernel.kind}_bin24_amplitude", s.amplitude(24), "<=", limit)
        # the exact projection must satisfy the same bounds
        dense_samples = (np.arange(8 * DENSE_1D) + 0.5) / (8 * DENSE_1D)
        proj = ls_projection(Lattice(16, 1), kernel, dense_samples[:, None], _tone_signal()(dense_samples))
        ls_rec = interpolation_matrix(Lattice(16, 1), kernel, xs) @ proj.values
        ls_s = dft_spectrum(ls_rec)
        res.add(f"{kernel.kind}_ls_bin3_ratio", ls_s.amplitude(3) / gt.amplitude(3), ">=", 0.9)
        res.add(f"{kernel.kind}_ls_bin24_amplitude", ls_s.amplitude(24), "<=", limit)
    return res


def suite_cascade1d(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """Two-level cascade r={8, 32}: band concentration of level 1 and total error."""
    res = SuiteResult("cascade1d")
    xs = _dense_1d()
    gt = _tone_signal()(xs)
    for kernel, share in ((Kernel("linear"), 0.6), (Kernel("sinc"), 0.8)):
        model = _fit_1d((8, 32), kernel, seed, _iters(2000, budget))
        level1 = dft_spectrum(model.level_output(1, xs)[:, 0])
        res.add(f"{kernel.kind}_level1_energy_4_16", band_energy(level1, 4.0, 16.0, closed="right"), ">=", share)
        mse = float(np.mean((superpose(model, xs, 1)[:, 0] - gt) ** 2))
        res.add(f"{kernel.kind}_superposition_mse", mse, "<", 1e-3)
    return res


# -------------------------------------------------------------- invariants


def _kernels() -> list[Kernel]:
    return [
        Kernel("linear"),
        Kernel("sinc", order=6),
        Kernel("bicubic"),
        Kernel("lanczos", a=2),
        Kernel("lanczos", a=3),
        Kernel("sinc", order=6, circular=True),
        Kernel("lanczos", a=3, circular=True),
    ]


def _kernel_label(k: Kernel) -> str:
    extra = {"sinc": f"{k.order}", "lanczos": f"{k.a}"}.get(k.kind, "")
    return f"{k.kind}{extra}" + ("_circ" if k.circular else "")


def _random_field(dim: int, seed: int, channels: int = 1) -> tuple[FieldArch, dc.ParamStore]:
    arch = FieldArch(dim, HashGrid(4, 2**10, 2, 4, 32), HeadSpec((16, 16), activation="softplus", out_channels=channels))
    return arch, init_field(arch, InitPolicy("standard", seed=seed))


def suite_superposition(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    res = SuiteResult("superposition")
    arch, _ = _random_field(2, seed)
    levels = tuple(LevelSpec(r, Kernel("linear"), 1, 1, init=InitPolicy("standard")) for r in (8, 16, 32))
    model = CascadeModel(LevelSchedule(arch, levels), seed)
    pts = np.random.default_rng(seed).uniform(0.0, 1.0, size=(1000, 2))
    for upto in range(len(levels)):
        direct = sum(model.levels[k](pts) for k in range(upto + 1))
        res.add(f"upto{upto}_max_abs_diff", np.max(np.abs(superpose(model, pts, upto) - direct)), "<=", 1e-12)
    return res


def suite_invariants(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """Node identity and partition of unity for every kernel in 1-3 dimensions."""
    res = SuiteResult("invariants")
    rng = np.random.default_rng(seed)
    for dim, r in ((1, 16), (2, 8), (3, 4)):
        arch, params = _random_field(dim, seed + dim)
        pts = rng.uniform(0.0, 1.0, size=(1000, dim))
        for kernel in _kernels():
            if kernel.circular and dim == 1:
                continue
            lat = Lattice(r, dim)
            f = BandLimitedField(arch, params, lat, kernel)
            nodes = lat.nodes()
            ident = np.max(np.abs(f(nodes) - eval_field(arch, params, nodes)))
            _, w = interpolation_weights(pts, lat, kernel)
            pou = np.max(np.abs(w.sum(axis=1) - 1.0))
            const_arch = FieldArch(dim, Direct(r), head=None)
            const_params = dc.ParamStore({"direct.values": np.full((lat.size, 1), 0.7)})
            const = BandLimitedField(const_arch, const_params, lat, kernel)
            const_err = np.max(np.abs(const(pts) - 0.7))
            label = f"{dim}d_{_kernel_label(kernel)}"
            res.add(f"{label}_node_identity", ident, "<=", 1e-12)
            res.add(f"{label}_partition_of_unity", max(pou, const_err), "<=", 1e-12)
    return res


# --------------------------------------------------------------- gradients


def _store(rng, **shapes) -> dc.ParamStore:
    return dc.ParamStore({k: rng.normal(size=s) for k, s in shapes.items()})


def gradient_cases(seed: int = 0) -> dict[str, tuple[Callable, dc.ParamStore]]:
    """Named ``(loss_fn, params)`` pairs covering every primitive and composite."""
    rng = np.random.default_rng(seed)
    cases: dict[str, tuple[Callable, dc.ParamStore]] = {}
    t4 = rng.normal(size=(8, 4))
    t3 = rng.normal(size=(8, 3))

    cases["affine"] = (
        lambda tp, p: dc.sse(dc.affine(tp.param(p, "x"), tp.param(p, "w"), tp.param(p, "b")), t3),
        _store(rng, x=(8, 4), w=(4, 3), b=(3,)),
    )
    # entries kept away from the kink so central differences stay one-sided
    x_relu = rng.normal(size=(8, 4))
    x_relu += np.sign(x_relu) * 0.1
    cases["relu"] = (lambda tp, p: dc.sse(dc.relu(tp.param(p, "x")), t4), dc.ParamStore({"x": x_relu}))
    cases["softplus"] = (
        lambda tp, p: dc.sse(dc.softplus(tp.param(p, "x")), t4),
        dc.ParamStore({"x": rng.normal(0.0, 0.05, size=(8, 4))}),
    )
    idx = rng.integers(0, 6, size=(8, 3))
    wts = rng.uniform(size=(8, 3))
    cases["gather"] = (lambda tp, p: dc.sse(dc.gather(tp.param(p, "t"), idx, wts), t4), _store(rng, t=(6, 4)))
    cases["concat"] = (
        lambda tp, p: dc.sse(dc.concat([tp.param(p, "a"), tp.param(p, "b")], axis=1), t4),
        _store(rng, a=(8, 1), b=(8, 3)),
    )
    cases["add_sub_scale"] = (
        lambda tp, p: dc.sse(
            dc.scale(dc.sub(dc.add(tp.param(p, "a"), tp.param(p, "b")), tp.param(p, "c")), -1.7), t4
        ),
        _store(rng, a=(8, 4), b=(8, 4), c=(8, 4)),
    )
    cases["mse"] = (lambda tp, p: dc.mse(tp.param(p, "a"), t4), _store(rng, a=(8, 4)))

    xs = rng.uniform(size=(32, 2))
    spec = dc.MLPSpec((2, 16, 16, 1), activation="softplus")
    mlp_params = dc.ParamStore({n: rng.normal(0.0, 0.7, size=s) for n, s in spec.param_shapes().items()})
    target = rng.normal(size=(32, 1))
    cases["mlp"] = (lambda tp, p: dc.sse(dc.mlp_forward(tp, p, spec, xs), target), mlp_params)

    for name, backbone in (("direct", Direct(8)), ("dense_grid", DenseGrid(8)), ("hash_grid", HashGrid(4, 64, 2, 4, 32))):
        head = None if name == "direct" else HeadSpec((16,), activation="softplus")
        arch = FieldArch(2, backbone, head)
        params = init_field(arch, InitPolicy("standard", seed=seed))
        for n in params.names():
            params.assign(n, params[n] + rng.normal(0.0, 0.1, size=params[n].shape))
        cases[f"field_{name}"] = (_field_loss(arch, None, xs, target), params)

    for kernel in (Kernel("linear"), Kernel("sinc"), Kernel("bicubic"), Kernel("lanczos", a=3)):
        arch = FieldArch(2, HashGrid(4, 64, 2, 4, 32), HeadSpec((16,), activation="softplus"))
        params = init_field(arch, InitPolicy("standard", seed=seed))
        for n in params.names():
            params.assign(n, params[n] + rng.normal(0.0, 0.1, size=params[n].shape))
        cases[f"bandlimited_{_kernel_label(kernel)}"] = (
            _field_loss(arch, BandLimitedField(arch, params, Lattice(8, 2), kernel), xs, target),
            params,
        )
    return cases


def _field_loss(arch, blf, xs, target):
    from .fields import field_node

    def loss(tape, params):
        if blf is None:
            return dc.sse(field_node(tape, arch, params, xs), target)
        blf.params = params
        return dc.sse(blf.node(tape, xs), target)

    return loss


def suite_gradcheck(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    res = SuiteResult("gradcheck")
    for name, (loss_fn, params) in gradient_cases(seed).items():
        err = dc.gradcheck(loss_fn, params, probes=100, h=1e-5, rtol=1e-4, atol=1e-9, seed=seed)
        res.add(f"{name}_max_rel_err", err, "<=", 1e-4)
    return res


# --------------------------------------------------------------- 2-D, 3-D


def image_schedule(budget: float = 1.0) -> LevelSchedule:
    arch = FieldArch(2, HashGrid(8, 2**14, 2, 16, 512), HeadSpec((32, 32, 32), out_channels=3))
    optim = OptimConfig("adam", lr=1e-2, lr_final=3e-4)
    # a zeroed output layer starts each level silent; near-zero hidden layers stall a 3-layer head
    silent = InitPolicy("standard", zero_output=True)
    levels = tuple(
        LevelSpec(r, Kernel("linear"), _iters(n, budget), 4096, optim, silent)
        for r, n in ((64, 2000), (128, 1000), (256, 300))
    )
    return LevelSchedule(arch, levels)


def suite_image2d(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """Ring test card with a 64/128/256 cascade."""
    res = SuiteResult("image2d")
    img = ring_card(256)
    model = CascadeModel(image_schedule(budget), seed)
    sampler = FunctionSampler(img, 2)
    for k in range(len(model)):
        train_level(model, k, sampler)
    xs = pixel_centers(256)
    gt = img.pixels.reshape(-1, 3)
    ideal = np.stack([lowpass_reference(img.pixels[:, :, c], 32.0) for c in range(3)], axis=-1).reshape(-1, 3)
    res.add("superposition_psnr_db", psnr(superpose(model, xs, len(model) - 1), gt), ">=", 30.0)
    res.add("level0_vs_ideal32_psnr_db", psnr(superpose(model, xs, 0), ideal), ">=", 24.0)
    return res


SDF_SOURCE = BumpySphere(radius=0.35, amplitude=0.015, frequency=40)


def sdf_setup(budget: float = 1.0) -> tuple[LevelSchedule, OptimConfig, InitPolicy, int]:
    arch = FieldArch(3, HashGrid(8, 2**18, 2, 16, 256), HeadSpec((64, 64), activation="softplus"))
    optim = OptimConfig("adam", lr=1e-2, lr_final=3.3e-4)
    # residual targets are ~100x smaller than the SDF itself; eps=1e-8 would swamp their Adam steps
    residual = replace(optim, eps=1e-15)
    sphere = InitPolicy("sphere_sdf", radius=SDF_SOURCE.radius, pretrain_steps=300)
    iters = [_iters(n, budget) for n in (600, 600, 1200)]
    levels = (LevelSpec(32, Kernel("linear"), iters[0], 2048, optim, sphere),) + tuple(
        LevelSpec(r, Kernel("linear"), n, 2048, residual) for r, n in zip((64, 128), iters[1:])
    )
    return LevelSchedule(arch, levels), optim, sphere, sum(iters)


def _sdf_problem(seed: int):
    data = sample_sdf_points(SDF_SOURCE, PointBudget(100_000), seed)
    surface = SDF_SOURCE.surface_points(np.random.default_rng([seed, 1]), 50_000)

    def cd(fn, resolution):
        mesh = extract_mesh(fn, resolution)
        if mesh.empty:
            return math.inf
        return chamfer_l2(sample_mesh_surface(mesh, 50_000, seed), surface)

    return DatasetSampler(data.points, data.values), cd


def _train_sdf_cascade(schedule: LevelSchedule, sampler, seed: int) -> CascadeModel:
    model = CascadeModel(schedule, seed)
    for k in range(len(model)):
        train_level(model, k, sampler)
    return model


def suite_sdf3d(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """Cascade versus an unfiltered field of the same backbone and total step count."""
    res = SuiteResult("sdf3d")
    sampler, cd = _sdf_problem(seed)
    schedule, optim, sphere, total = sdf_setup(budget)
    model = _train_sdf_cascade(schedule, sampler, seed)
    params = init_field(schedule.arch, sphere)
    train_plain(schedule.arch, params, sampler, total, schedule.levels[0].batch_size, optim, seed)

    top = len(model) - 1
    a32 = cd(lambda p: superpose(model, p, 0), 32)
    b32 = cd(lambda p: eval_field(schedule.arch, params, p), 32)
    a128 = cd(lambda p: superpose(model, p, top), 128)
    b128 = cd(lambda p: eval_field(schedule.arch, params, p), 128)
    res.add("cd32_banf", a32, "<", b32)
    res.add("cd128_relative_gap", abs(a128 - b128) / b128, "<=", 0.25)
    res.add("cd32_baseline", b32, ">=", 0.0)
    res.add("cd128_banf", a128, ">=", 0.0)
    res.add("cd128_baseline", b128, ">=", 0.0)
    return res


def suite_arch_swap(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    """The SDF cascade with a dense-grid backbone in place of the hash grid."""
    res = SuiteResult("arch-swap")
    sampler, cd = _sdf_problem(seed)
    schedule, _, sphere, _ = sdf_setup(budget)
    # a dense backbone has no coarse shared levels; it needs the full pretraining to hold the sphere
    first = replace(schedule.levels[0], init=replace(sphere, pretrain_steps=2000))
    schedule = replace(schedule, levels=(first,) + schedule.levels[1:])
    dense = replace(schedule, arch=replace(schedule.arch, backbone=DenseGrid(64, 8)))
    top = len(schedule.levels) - 1
    results = {}
    for label, sched in (("hash", schedule), ("dense", dense)):
        model = _train_sdf_cascade(sched, sampler, seed)
        results[label] = cd(lambda p: superpose(model, p, top), 128)
        res.add(f"cd128_{label}", results[label], ">=", 0.0)
    hi, lo = max(results.values()), min(results.values())
    res.add("cd128_ratio", hi / lo, "<", 2.0)
    return res


def suite_marching_cubes(seed: int = 0, budget: float = 1.0) -> SuiteResult:
    res = SuiteResult("marching-cubes")
    sphere = Sphere(radius=0.3)
    mesh = extract_mesh(sphere, 64)
    exact = 4.0 * np.pi * 0.3**2
    res.add("sphere64_area_rel_err", abs(mesh.area() - exact) / exact, "<=", 0.02)
    rng = np.random.default_rng(seed)
    cd = chamfer_l2(sample_mesh_surface(mesh, 50_000, seed), sphere.surface_points(rng, 50_000))
    res.add("sphere64_chamfer", cd, "<=", (2.0 / 64.0) ** 2)
    vals = sphere(grid_points(64)).reshape((65,) * 3)
    t = mesh.vertices * 64.0
    # every vertex lies on a grid edge where linear interpolation hits the level set
    lo = np.floor(t + 1e-9).astype(np.int64)
    frac = t - lo
    axis = np.argmax(frac, axis=1)
    hi = lo.copy()
    hi[np.arange(len(hi)), axis] += 1
    f = frac[np.arange(len(frac)), axis]
    interp = (1 - f) * vals[tuple(lo.T)] + f * vals[tuple(hi.T)]
    res.add("vertex_interpolation_residual", np.max(np.abs(interp)), "<=", 1e-9)
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "oracle-ls": suite_oracle_ls,
    "lowpass": suite_lowpass,
    "cascade1d": suite_cascade1d,
    "superposition": suite_superposition,
    "invariants": suite_invariants,
    "gradcheck": suite_gradcheck,
    "image2d": suite_image2d,
    "sdf3d": suite_sdf3d,
    "arch-swap": suite_arch_swap,
    "marching-cubes": suite_marching_cubes,
}


def run_suite(name: str, seed: int = 0, budget: float = 1.0) -> SuiteResult:
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; available: {', '.join(SUITES)}")
    start = time.perf_counter()
    result = SUITES[name](seed=seed, budget=budget)
    result.seconds = time.perf_counter() - start
    return result
