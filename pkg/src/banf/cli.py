"""``banf`` command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis.mesh import extract_mesh, sample_mesh_surface
from .analysis.metrics import chamfer_l2, psnr
from .analysis.spectral import dft_spectrum
from .bandlimit import Kernel
from .cascade import (
    CascadeModel,
    DatasetSampler,
    FunctionSampler,
    LevelSchedule,
    load_cascade,
    save_cascade,
    superpose,
    train_level,
)
from .errors import ConfigError, NumericError, UsageError
from .suites import SUITES, run_suite
from .tasks import (
    AnalyticSDF,
    Image2D,
    PointBudget,
    make_source,
    pixel_centers,
    read_pnm,
    read_sdf_csv,
    sample_sdf_points,
    write_pnm,
)

log = logging.getLogger("banf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
TASK_DIMS = {"fit1d": 1, "fit2d": 2, "fitsdf": 3}
DENSE_1D = 1024
METRICS_HEADER = ("level", "resolution", "kernel", "metric_name", "value")


@dataclass
class RunConfig:
    """One training run, stored as a single JSON document."""

    task: str
    source: dict
    schedule: LevelSchedule
    kernel: str | None = None  # overrides every level's kernel kind
    seed: int = 0
    out: str | None = None
    optim: dict = field(default_factory=dict)  # overrides every level's optimizer fields
    budget: dict = field(default_factory=dict)  # PointBudget fields for fitsdf
    eval_samples: int = 50_000

    def __post_init__(self):
        if self.task not in TASK_DIMS:
            raise ConfigError(f"task: expected one of {sorted(TASK_DIMS)}, got {self.task!r}")
        if not isinstance(self.source, dict) or "id" not in self.source:
            raise ConfigError("source: expected an object with an 'id' field")
        if self.schedule.dim != TASK_DIMS[self.task]:
            raise ConfigError(f"schedule: task {self.task} needs a {TASK_DIMS[self.task]}-D architecture")
        levels = self.schedule.levels
        if self.kernel is not None:
            levels = tuple(replace(lv, kernel=Kernel(self.kernel)) for lv in levels)
        if self.optim:
            try:
                levels = tuple(replace(lv, optim=replace(lv.optim, **self.optim)) for lv in levels)
            except TypeError as exc:
                raise ConfigError(f"optim: {exc}") from exc
        self.schedule = replace(self.schedule, levels=levels)
        if self.eval_samples < 1:
            raise ConfigError("eval_samples must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"task", "source", "schedule"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        if not isinstance(data["schedule"], dict):
            raise ConfigError("schedule: expected an object")
        body = dict(data)
        body["schedule"] = LevelSchedule.from_dict(data["schedule"])
        try:
            return cls(**body)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "source": self.source,
            "schedule": self.schedule.to_dict(),
            "kernel": self.kernel,
            "seed": self.seed,
            "out": self.out,
            "optim": self.optim,
            "budget": self.budget,
            "eval_samples": self.eval_samples,
        }


def load_config(path: Path) -> RunConfig:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data)


# ------------------------------------------------------------------- fit


@dataclass
class Task:
    sampler: object
    evaluate: object  # (model, k) -> (metric_name, value)


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _source_params(source: dict) -> dict:
    return {k: v for k, v in source.items() if k not in ("id", "path")}


def build_task(cfg: RunConfig, base: Path) -> Task:
    sid = cfg.source["id"]
    if cfg.task == "fit1d":
        signal = make_source(sid, **_source_params(cfg.source))
        if sid != "multitone":
            raise ConfigError(f"source: fit1d needs a 1-D signal, got {sid!r}")
        xs = (np.arange(DENSE_1D) / DENSE_1D)[:, None]
        gt = signal(xs)[:, None]

        def evaluate(model, k):
            return "mse", float(np.mean((superpose(model, xs, k) - gt) ** 2))

        return Task(FunctionSampler(signal, 1), evaluate)

    if cfg.task == "fit2d":
        if sid == "image":
            if "path" not in cfg.source:
                raise ConfigError("source: image needs a 'path'")
            img = Image2D(read_pnm(_resolve(cfg.source["path"], base)))
        elif sid == "ring_card":
            img = make_source(sid, **_source_params(cfg.source))
        else:
            raise ConfigError(f"source: fit2d needs 'image' or 'ring_card', got {sid!r}")
        if img.channels != cfg.schedule.arch.out_channels:
            raise ConfigError(
                f"schedule: image has {img.channels} channels, architecture outputs {cfg.schedule.arch.out_channels}"
            )
        h, w = img.resolution
        xs = pixel_centers(h, w)
        gt = img.pixels.reshape(-1, img.channels)

        def evaluate(model, k):
            return "psnr", psnr(superpose(model, xs, k), gt)

        return Task(FunctionSampler(img, 2), evaluate)

    try:
        budget = PointBudget(**{k: tuple(v) if k == "fractions" else v for k, v in cfg.budget.items()})
    except TypeError as exc:
        raise ConfigError(f"budget: {exc}") from exc
    if sid == "sdf_csv":
        if "path" not in cfg.source:
            raise ConfigError("source: sdf_csv needs a 'path'")
        pts, vals = read_sdf_csv(_resolve(cfg.source["path"], base))

        def evaluate(model, k):
            return "mse", float(np.mean((superpose(model, pts, k)[:, 0] - vals) ** 2))

        return Task(DatasetSampler(pts, vals), evaluate)

    shape = make_source(sid, **_source_params(cfg.source))
    if not isinstance(shape, AnalyticSDF):
        raise ConfigError(f"source: fitsdf needs an SDF source, got {sid!r}")
    data = sample_sdf_points(shape, budget, cfg.seed)
    surface = shape.surface_points(np.random.default_rng([cfg.seed, 1]), cfg.eval_samples)

    def evaluate(model, k):
        mesh = extract_mesh(lambda p: superpose(model, p, k), model.schedule.levels[k].resolution)
        if mesh.empty:
            return "chamfer_l2", math.inf
        return "chamfer_l2", chamfer_l2(sample_mesh_surface(mesh, cfg.eval_samples, cfg.seed), surface)

    return Task(DatasetSampler(data.points, data.values), evaluate)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for level, res, kernel, name, value in rows:
        w.writerow([level, res, kernel, name, repr(float(value))])
    return buf.getvalue()


def cmd_fit(args) -> int:
    path = Path(args.config)
    cfg = load_config(path)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out or Path("runs") / path.stem)
    task = build_task(cfg, path.parent)
    model = CascadeModel(cfg.schedule, cfg.seed)
    rows = []
    for k, spec in enumerate(cfg.schedule.levels):
        log.info("training level %d (resolution %d, %d steps)", k, spec.resolution, spec.iterations)
        train_level(model, k, task.sampler)
        name, value = task.evaluate(model, k)
        rows.append((k, spec.resolution, spec.kernel.kind, name, value))
        log.info("level %d: %s = %.6g", k, name, value)
    # outputs are written only after training succeeded
    save_cascade(model, out, task=cfg.task)
    resolved = cfg.to_dict()
    resolved["out"] = str(out)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    (out / "metrics.csv").write_text(metrics_csv(rows))
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- export


def _mesh_arg(text: str) -> tuple[int, float]:
    parts = text.split(",")
    if len(parts) > 2:
        raise argparse.ArgumentTypeError("expected RES or RES,ISO")
    try:
        return int(parts[0]), float(parts[1]) if len(parts) == 2 else 0.0
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _selected(model: CascadeModel, level: int | None, upto: int | None):
    n = len(model)
    k = level if level is not None else (upto if upto is not None else n - 1)
    if not 0 <= k < n:
        raise UsageError(f"level {k} out of range; the cascade has levels 0..{n - 1}")
    if level is not None:
        return f"level{k}", lambda p: model.level_output(k, p)
    return f"upto{k}", lambda p: superpose(model, p, k)


def cmd_export(args) -> int:
    model, _ = load_cascade(args.run_dir)
    tag, fn = _selected(model, args.level, args.upto)
    dim = model.schedule.dim
    exports = Path(args.run_dir) / "exports"

    if args.mesh is not None:
        res, iso = args.mesh
        if res < 1:
            raise UsageError("mesh resolution must be positive")
        if dim != 3 or model.out_channels != 1:
            raise UsageError("mesh export needs a scalar 3-D cascade")
        mesh = extract_mesh(lambda p: fn(p)[:, 0], res, iso)
        exports.mkdir(exist_ok=True)
        target = exports / f"mesh_{tag}_r{res}.obj"
        mesh.write_obj(target)
    elif args.image is not None:
        res = args.image
        if res < 1:
            raise UsageError("image resolution must be positive")
        if dim != 2 or model.out_channels not in (1, 3):
            raise UsageError("image export needs a 2-D cascade with 1 or 3 channels")
        img = np.clip(fn(pixel_centers(res)), 0.0, 1.0).reshape(res, res, model.out_channels)
        exports.mkdir(exist_ok=True)
        target = exports / f"image_{tag}_r{res}.{'ppm' if model.out_channels == 3 else 'pgm'}"
        write_pnm(target, img)
    else:
        n = args.spectrum
        if n < 2:
            raise UsageError("spectrum needs at least 2 samples")
        if dim != 1:
            raise UsageError("spectrum export needs a 1-D cascade")
        values = fn((np.arange(n) / n)[:, None])
        exports.mkdir(exist_ok=True)
        target = exports / f"spectrum_{tag}_n{n}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["channel", "bin", "frequency", "magnitude"])
        for c in range(values.shape[1]):
            freqs, mags = dft_spectrum(values[:, c]).one_sided()
            for b, (f, m) in enumerate(zip(freqs, mags)):
                w.writerow([c, b, repr(float(f)), repr(float(m))])
        target.write_text(buf.getvalue())
    print(f"wrote {target}")
    return EXIT_OK


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if args.suite != "all" and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; available: all, {', '.join(SUITES)}")
    ok = True
    for name in names:
        result = run_suite(name, seed=args.seed, budget=args.budget)
        print(f"[{name}] {'PASS' if result.passed else 'FAIL'} ({result.seconds:.1f} s)")
        print(result.report())
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"verify_{name}.csv").write_text(result.to_csv())
        ok = ok and result.passed
    return EXIT_OK if ok else 1


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="banf", description="Band-limited coordinate fields.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a cascade from a JSON config")
    fit.add_argument("config")
    fit.add_argument("--out", help="output directory (overrides the config)")
    fit.add_argument("--seed", type=int, help="random seed (overrides the config)")
    fit.set_defaults(func=cmd_fit)

    exp = sub.add_parser("export", help="export a mesh, image or spectrum from a trained run")
    exp.add_argument("run_dir")
    what = exp.add_mutually_exclusive_group(required=True)
    what.add_argument("--mesh", type=_mesh_arg, metavar="RES[,ISO]")
    what.add_argument("--image", type=int, metavar="RES")
    what.add_argument("--spectrum", type=int, metavar="N")
    sel = exp.add_mutually_exclusive_group()
    sel.add_argument("--level", type=int, metavar="K", help="a single level")
    sel.add_argument("--upto", type=int, metavar="K", help="superposition of levels 0..K (default: all)")
    exp.set_defaults(func=cmd_export)

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", help=f"one of: all, {', '.join(SUITES)}")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--budget", type=float, default=1.0, help="iteration multiplier")
    ver.add_argument("--out", help="directory for the suite's CSV report")
    ver.set_defaults(func=cmd_verify)
    return parser


def _thread_limit() -> int | None:
    raw = os.environ.get("BANF_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BANF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"BANF_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
