"""Cascaded residual training of band-limited levels.

Level ``k`` is a band-limited field on a lattice of resolution ``r_k`` trained
on what the frozen levels ``0..k-1`` leave unexplained. Because each level is
low-pass with cutoff set by its lattice and its target has had the coarser
bands removed, level ``k`` ends up holding the band between the Nyquist
frequencies of ``r_{k-1}`` and ``r_k``. Any level of detail is the sum of the
levels up to it.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Protocol

import numpy as np

from . import diffcore as dc
from .bandlimit import BandLimitedField, Kernel, Lattice
from .errors import ConfigError, NumericError, UsageError
from .fields import FieldArch, InitPolicy, field_node, init_field, load_params, save_params

log = logging.getLogger(__name__)

EVAL_CHUNK = 16384


@dataclass(frozen=True)
class OptimConfig:
    algorithm: str = "adam"
    lr: float = 1e-3
    lr_final: float | None = None  # exponential decay target; None keeps lr fixed
    eps: float = 1e-8

    def make_state(self) -> dc.OptState:
        return dc.OptState(self.algorithm, lr=self.lr, eps=self.eps)

    def lr_at(self, step: int, total: int) -> float:
        if self.lr_final is None or total <= 1:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** (step / (total - 1))


@dataclass(frozen=True)
class LevelSpec:
    resolution: int
    kernel: Kernel = Kernel()
    iterations: int = 2000
    batch_size: int = 4096
    optim: OptimConfig = OptimConfig()
    init: InitPolicy = InitPolicy()
    arch: FieldArch | None = None  # overrides the schedule-wide architecture


@dataclass(frozen=True)
class LevelSchedule:
    """Ordered levels plus the warm-up plan of level 0.

    ``warmup`` gives the fractions of level-0 iterations run on lattices of
    ``r_0 / 4`` and ``r_0 / 2`` before switching to ``r_0``.
    """

    arch: FieldArch
    levels: tuple[LevelSpec, ...]
    warmup: tuple[float, float] = (0.25, 0.25)
    centering: str = "vertex"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ConfigError("schedule needs at least one level")
        res = [lv.resolution for lv in self.levels]
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ConfigError(f"level resolutions must be strictly increasing, got {res}")
        if any(lv.iterations <= 0 or lv.batch_size <= 0 for lv in self.levels):
            raise ConfigError("iterations and batch sizes must be positive")
        if len(self.warmup) != 2 or min(self.warmup) < 0 or sum(self.warmup) >= 1:
            raise ConfigError(f"warm-up fractions must be >= 0 and sum below 1, got {self.warmup}")
        for lv in self.levels:
            if self.level_arch(lv).domain_dim != self.arch.domain_dim:
                raise ConfigError("all levels must share the domain dimension")

    @property
    def dim(self) -> int:
        return self.arch.domain_dim

    def level_arch(self, spec: LevelSpec) -> FieldArch:
        return spec.arch if spec.arch is not None else self.arch

    def lattice(self, k: int, resolution: int | None = None) -> Lattice:
        return Lattice(resolution or self.levels[k].resolution, self.dim, self.centering)

    def resolution_at(self, k: int, step: int) -> int:
        """Lattice resolution used by level ``k`` at optimizer step ``step``."""
        r = self.levels[k].resolution
        if k != 0:
            return r
        n = self.levels[0].iterations
        quarter = int(round(self.warmup[0] * n))
        half = quarter + int(round(self.warmup[1] * n))
        if step < quarter:
            return max(2, r // 4)
        if step < half:
            return max(2, r // 2)
        return r

    def to_dict(self) -> dict:
        levels = []
        for lv in self.levels:
            d = asdict(lv)
            d["kernel"] = lv.kernel.to_dict()
            d["arch"] = None if lv.arch is None else lv.arch.to_dict()
            d["init"]["center"] = list(lv.init.center)
            levels.append(d)
        return {
            "arch": self.arch.to_dict(),
            "levels": levels,
            "warmup": list(self.warmup),
            "centering": self.centering,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LevelSchedule":
        known = {"arch", "levels", "warmup", "centering"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown schedule keys: {sorted(extra)}")
        try:
            arch = FieldArch.from_dict(data["arch"])
            levels = []
            for raw in data["levels"]:
                raw = dict(raw)
                unknown = set(raw) - {f for f in LevelSpec.__dataclass_fields__}
                if unknown:
                    raise ConfigError(f"unknown level keys: {sorted(unknown)}")
                kernel = Kernel.from_dict(raw.pop("kernel", {"kind": "linear"}))
                optim = OptimConfig(**raw.pop("optim", {}))
                init = dict(raw.pop("init", {}))
                if "center" in init:
                    init["center"] = tuple(init["center"])
                lv_arch = raw.pop("arch", None)
                lv_arch = None if lv_arch is None else FieldArch.from_dict(lv_arch)
                levels.append(LevelSpec(kernel=kernel, optim=optim, init=InitPolicy(**init), arch=lv_arch, **raw))
            return cls(arch, tuple(levels), tuple(data.get("warmup", (0.25, 0.25))), data.get("centering", "vertex"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from exc


# ---------------------------------------------------------------- samplers


class TargetSampler(Protocol):
    dim: int

    def __call__(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        ...

    def stream(self, rng: np.random.Generator, n: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        ...


@dataclass
class FunctionSampler:
    """Uniform random points in the unit cube labelled by ``fn``."""

    fn: Callable[[np.ndarray], np.ndarray]
    dim: int

    def __call__(self, rng, n):
        pts = rng.uniform(0.0, 1.0, size=(n, self.dim))
        return pts, _as_column(self.fn(pts))

    def stream(self, rng, n):
        while True:
            yield self(rng, n)


@dataclass
class DatasetSampler:
    """Minibatches drawn from a fixed labelled point set.

    Calling the sampler draws with replacement; :meth:`stream` walks shuffled
    epochs without replacement. ``n >= len(points)`` always yields the whole
    set in stored order.
    """

    points: np.ndarray
    values: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(len(self.points), -1)
        self.values = _as_column(self.values)
        self.dim = self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def __call__(self, rng, n):
        if n >= len(self.points):
            return self.points, self.values
        idx = rng.integers(0, len(self.points), size=n)
        return self.points[idx], self.values[idx]

    def stream(self, rng, n):
        total = len(self.points)
        if n >= total:
            while True:
                yield self.points, self.values
        while True:
            perm = rng.permutation(total)
            for start in range(0, total - n + 1, n):
                idx = perm[start : start + n]
                yield self.points[idx], self.values[idx]


def _as_column(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


# ------------------------------------------------------------------ model


class CascadeModel:
    """Per-level band-limited fields built from a schedule."""

    def __init__(self, schedule: LevelSchedule, seed: int = 0):
        self.schedule = schedule
        self.seed = seed
        self.levels: list[BandLimitedField] = []
        self.trained: list[bool] = []
        for k, spec in enumerate(schedule.levels):
            policy = replace(spec.init, seed=seed * 1000 + k)
            arch = schedule.level_arch(spec)
            self.levels.append(BandLimitedField(arch, init_field(arch, policy), schedule.lattice(k), spec.kernel))
            self.trained.append(False)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def out_channels(self) -> int:
        return self.levels[0].arch.out_channels

    def level_output(self, k: int, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if len(pts) == 0:
            return np.zeros((0, self.out_channels))
        return self.levels[k](pts, chunk=EVAL_CHUNK)


def superpose(model: CascadeModel, points, upto: int) -> np.ndarray:
    """Sum of level outputs ``0..upto`` at ``points``."""
    if not 0 <= upto < len(model):
        raise UsageError(f"level {upto} out of range for a {len(model)}-level cascade")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, model.schedule.dim)
    total = model.level_output(0, pts)
    for k in range(1, upto + 1):
        total = total + model.level_output(k, pts)
    return total


def residual_target(gt, model: CascadeModel, k: int, points) -> np.ndarray:
    """Ground truth minus the frozen levels below ``k``."""
    gt = _as_column(gt)
    if k == 0:
        return gt
    untrained = [l for l in range(k) if not model.trained[l]]
    if untrained:
        raise UsageError(f"level {k} needs trained levels below it; untrained: {untrained}")
    return gt - superpose(model, points, k - 1)


@dataclass
class LevelTrace:
    losses: list[float] = field(default_factory=list)
    resolutions: list[int] = field(default_factory=list)


def train_level(model: CascadeModel, k: int, sampler: TargetSampler, callback=None) -> LevelTrace:
    """Fit level ``k`` to the residual of the frozen levels below it."""
    if k > 0 and not all(model.trained[:k]):
        raise UsageError(f"cannot train level {k} before levels 0..{k - 1}")
    spec = model.schedule.levels[k]
    blf = model.levels[k]
    rng = np.random.default_rng([model.seed, k])
    state = spec.optim.make_state()
    trace = LevelTrace()

    # a fixed point set gets its residual computed once; identical to recomputing per batch
    cached = None
    if isinstance(sampler, DatasetSampler) and k > 0:
        cached = DatasetSampler(sampler.points, residual_target(sampler.values, model, k, sampler.points))

    batches = (cached or sampler).stream(rng, spec.batch_size)
    for step in range(spec.iterations):
        res = model.schedule.resolution_at(k, step)
        if res != blf.lattice.resolution:
            blf.lattice = model.schedule.lattice(k, res)
        pts, target = next(batches)
        if cached is None:
            target = residual_target(target, model, k, pts)
        state.lr = spec.optim.lr_at(step, spec.iterations)
        tape = dc.Tape()
        loss = dc.mse(blf.node(tape, pts), target)
        value = float(loss.value)
        if not math.isfinite(value):
            raise NumericError(f"level {k}: loss diverged at step {step}")
        grads = tape.backward(loss, params=blf.params)
        try:
            dc.optimizer_step(blf.params, grads, state)
        except NumericError as exc:
            raise NumericError(f"level {k}, step {step}: {exc}") from exc
        trace.losses.append(value)
        trace.resolutions.append(res)
        if callback is not None:
            callback(k, step, value)
    blf.lattice = model.schedule.lattice(k)
    model.trained[k] = True
    return trace


def train_cascade(model: CascadeModel, sampler: TargetSampler, callback=None) -> list[LevelTrace]:
    return [train_level(model, k, sampler, callback) for k in range(len(model))]


def train_plain(
    arch: FieldArch,
    params: dc.ParamStore,
    sampler: TargetSampler,
    iterations: int,
    batch_size: int,
    optim: OptimConfig = OptimConfig(),
    seed: int = 0,
) -> list[float]:
    """Fit an unfiltered field directly to the target (the baseline)."""
    rng = np.random.default_rng([seed, 7919])
    state = optim.make_state()
    losses = []
    batches = sampler.stream(rng, batch_size)
    for step in range(iterations):
        pts, target = next(batches)
        state.lr = optim.lr_at(step, iterations)
        tape = dc.Tape()
        loss = dc.mse(field_node(tape, arch, params, pts), target)
        if not math.isfinite(float(loss.value)):
            raise NumericError(f"baseline: loss diverged at step {step}")
        dc.optimizer_step(params, tape.backward(loss, params=params), state)
        losses.append(float(loss.value))
    return losses


# -------------------------------------------------------------- snapshots

MANIFEST = "manifest.json"


def save_cascade(model: CascadeModel, directory, **extra) -> Path:
    """Write ``level_<k>.bin`` per level plus a JSON manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, blf in enumerate(model.levels):
        name = f"level_{k}.bin"
        save_params(out / name, blf.params, blf.arch, seed=model.seed, level=k)
        files.append(name)
    manifest = {
        "schedule": model.schedule.to_dict(),
        "seed": model.seed,
        "resolutions": [lv.resolution for lv in model.schedule.levels],
        "kernels": [lv.kernel.kind for lv in model.schedule.levels],
        "trained": list(model.trained),
        "files": files,
        **extra,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_cascade(directory) -> tuple[CascadeModel, dict]:
    path = Path(directory)
    if not (path / MANIFEST).is_file():
        raise ConfigError(f"{path}: no {MANIFEST}")
    manifest = json.loads((path / MANIFEST).read_text())
    schedule = LevelSchedule.from_dict(manifest["schedule"])
    model = CascadeModel.__new__(CascadeModel)
    model.schedule, model.seed = schedule, manifest["seed"]
    model.levels, model.trained = [], list(manifest["trained"])
    for k, name in enumerate(manifest["files"]):
        params, header = load_params(path / name)
        arch = FieldArch.from_dict(header["arch"])
        model.levels.append(BandLimitedField(arch, params, schedule.lattice(k), schedule.levels[k].kernel))
    return model, manifest
