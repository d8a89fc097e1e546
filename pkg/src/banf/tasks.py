"""Ground-truth signals and samplers for the 1-D, 2-D and 3-D experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------- 1-D


@dataclass(frozen=True)
class MultiTone1D:
    """``sum_i a_i sin(2 pi k_i x + phase_i)`` on the unit interval."""

    tones: tuple[tuple[float, float, float], ...] = ((1.0, 3.0, 0.0), (1.0, 24.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(tuple(float(v) for v in t) for t in self.tones))
        if any(len(t) != 3 for t in self.tones):
            raise ConfigError("tones are (amplitude, frequency, phase) triples")

    @classmethod
    def of(cls, *pairs) -> "MultiTone1D":
        """Build from ``(amplitude, frequency)`` or ``(amplitude, frequency, phase)``."""
        return cls(tuple((*p, 0.0) if len(p) == 2 else tuple(p) for p in pairs))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        x = x[:, 0] if x.ndim == 2 else x
        out = np.zeros_like(x)
        for a, k, phase in self.tones:
            out = out + a * np.sin(2.0 * np.pi * k * x + phase)
        return out


# ---------------------------------------------------------------------- 2-D


@dataclass
class Image2D:
    """Pixel image on the unit square, sampled by bilinear interpolation.

    ``pixels`` is (H, W) or (H, W, C) with values in [0, 1]. Pixel ``(i, j)``
    sits at ``u = (j + 1/2) / W``, ``v = (i + 1/2) / H``; points are ``(u, v)``.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ConfigError(f"image must be (H, W) or (H, W, C), got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ConfigError("image values must lie in [0, 1]")
        self.pixels = px

    @property
    def resolution(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __call__(self, uv) -> np.ndarray:
        return sample_image_point(self, uv)


def pixel_centers(height: int, width: int | None = None) -> np.ndarray:
    """(H*W, 2) array of ``(u, v)`` pixel centers in row-major pixel order."""
    width = width or height
    v, u = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)


def sample_image_point(img: Image2D, uv) -> np.ndarray:
    """Bilinear color at ``uv``, (n, C). Exact at pixel centers; edges clamp."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    h, w = img.resolution
    x = np.clip(uv[:, 0] * w - 0.5, 0.0, w - 1.0)
    y = np.clip(uv[:, 1] * h - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (x - x0)[:, None], (y - y0)[:, None]
    p = img.pixels
    top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
    bottom = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def ring_card(size: int = 256) -> Image2D:
    """RGB test card: color gradients plus concentric rings of rising frequency.

    Ring frequency grows linearly from 4 cycles per unit at the center to
    about 44 at the rim of the ring disk (radius 0.42).
    """
    uv = pixel_centers(size)
    u, v = uv[:, 0], uv[:, 1]
    rho = np.hypot(u - 0.5, v - 0.5)
    window = 0.5 * (1.0 - np.tanh((rho - 0.42) / 0.02))
    rings = np.cos(2.0 * np.pi * (4.0 * rho + 48.0 * rho**2)) * window
    r = 0.5 + 0.3 * rings + 0.15 * (u - 0.5)
    g = 0.3 + 0.4 * v + 0.1 * rings
    b = 0.5 + 0.2 * rings - 0.2 * (u - 0.5) * (v - 0.5) * 4.0
    img = np.clip(np.stack([r, g, b], axis=1), 0.0, 1.0).reshape(size, size, 3)
    return Image2D(img)


# ---------------------------------------------------------------------- SDFs


class AnalyticSDF:
    """Signed distance (negative inside) with optional exact surface projection.

    Subclasses with a closed-form surface parametrization override
    :meth:`surface_points` and set ``analytic_projection = True``.
    """

    center: np.ndarray
    analytic_projection = False

    def sdf(self, p) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, p) -> np.ndarray:
        return self.sdf(p)

    def gradient(self, p, h: float = 1e-6) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        g = np.empty_like(p)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            g[:, axis] = (self.sdf(p + e) - self.sdf(p - e)) / (2 * h)
        return g

    def surface_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Points on the zero level set; generic fallback by Newton projection."""
        log.warning("%s has no analytic projection; using rejection sampling", type(self).__name__)
        rounds = 0
        out = []
        while sum(len(o) for o in out) < n:
            p = rng.uniform(0.0, 1.0, size=(4 * n, 3))
            p = p[np.abs(self.sdf(p)) < 0.05]
            for _ in range(20):
                g = self.gradient(p)
                p = p - (self.sdf(p) / np.maximum(np.sum(g * g, axis=1), 1e-12))[:, None] * g
            out.append(p[np.abs(self.sdf(p)) <= 1e-9])
            rounds += 1
            if rounds > 100:
                raise ConfigError(f"{type(self).__name__}: rejection sampling found no surface")
        return np.concatenate(out)[:n]


def _directions(rng, n) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass
class Sphere(AnalyticSDF):
    analytic_projection = True
    radius: float = 0.3
    center: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)

    def sdf(self, p):
        return np.linalg.norm(np.asarray(p, dtype=np.float64) - self.center, axis=-1) - self.radius

    def surface_points(self, rng, n):
        return self.center + self.radius * _directions(rng, n)

    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2


@dataclass
class Torus(AnalyticSDF):
    """Torus around the z axis through ``center``."""

    analytic_projection = True
    major: float = 0.3
    minor: float = 0.1
    center: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not 0 < self.minor < self.major:
            raise ConfigError("torus needs 0 < minor < major")

    def sdf(self, p):
        q = np.asarray(p, dtype=np.float64) - self.center
        ring = np.hypot(q[..., 0], q[..., 1]) - self.major
        return np.hypot(ring, q[..., 2]) - self.minor

    def surface_points(self, rng, n):
        # area element is proportional to (major + minor cos v); rejection keeps it uniform
        out = []
        while sum(len(o) for o in out) < n:
            u = rng.uniform(0, 2 * np.pi, 2 * n)
            v = rng.uniform(0, 2 * np.pi, 2 * n)
            keep = rng.uniform(0, self.major + self.minor, 2 * n) < self.major + self.minor * np.cos(v)
            u, v = u[keep], v[keep]
            rad = self.major + self.minor * np.cos(v)
            out.append(np.stack([rad * np.cos(u), rad * np.sin(u), self.minor * np.sin(v)], 1))
        return self.center + np.concatenate(out)[:n]


@dataclass
class BumpySphere(AnalyticSDF):
    """Sphere whose radius is modulated by ``amplitude sin(B theta) sin(B phi)``.

    ``theta`` is the polar angle from +z and ``phi`` the azimuth. The function
    is exact on the zero set but is not a true distance away from it when
    ``amplitude > 0``.
    """

    analytic_projection = True
    radius: float = 0.35
    amplitude: float = 0.015
    frequency: int = 40
    center: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)

    def _angles(self, q):
        rho = np.linalg.norm(q, axis=-1)
        theta = np.arccos(np.clip(q[..., 2] / np.maximum(rho, 1e-300), -1.0, 1.0))
        phi = np.arctan2(q[..., 1], q[..., 0])
        return rho, theta, phi

    def surface_radius(self, theta, phi):
        b = self.frequency
        return self.radius + self.amplitude * np.sin(b * theta) * np.sin(b * phi)

    def sdf(self, p):
        rho, theta, phi = self._angles(np.asarray(p, dtype=np.float64) - self.center)
        return rho - self.surface_radius(theta, phi)

    def surface_points(self, rng, n):
        """Area-weighted samples: directions are accepted in proportion to the
        local surface area element of the radial graph."""
        out, total = [], 0
        bound = None
        while total < n:
            d = _directions(rng, 4 * n)
            _, theta, phi = self._angles(d)
            r = self.surface_radius(theta, phi)
            # dA/dOmega = r * sqrt(r^2 + r_theta^2 + r_phi^2 / sin^2 theta)
            b, a = self.frequency, self.amplitude
            r_t = a * b * np.cos(b * theta) * np.sin(b * phi)
            r_p = a * b * np.sin(b * theta) * np.cos(b * phi) / np.maximum(np.sin(theta), 1e-12)
            dens = r * np.sqrt(r**2 + r_t**2 + r_p**2)
            if bound is None:
                bound = float(dens.max()) * 1.5
            keep = rng.uniform(0.0, bound, len(d)) < dens
            pts = self.center + d[keep] * r[keep, None]
            out.append(pts)
            total += len(pts)
        return np.concatenate(out)[:n]


# ------------------------------------------------------------------ sampling


@dataclass(frozen=True)
class PointBudget:
    """Split of SDF training points into on-surface, near-surface and uniform."""

    total: int = 100_000
    fractions: tuple[float, float, float] = (0.4, 0.4, 0.2)
    sigma: float = 0.01

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"fractions must be three non-negative numbers summing to 1, got {self.fractions}")
        if self.total < 1:
            raise ConfigError("total must be positive")

    def counts(self) -> tuple[int, int, int]:
        on = int(np.floor(self.fractions[0] * self.total + 1e-9))
        near = int(np.floor(self.fractions[1] * self.total + 1e-9))
        return on, near, self.total - on - near


@dataclass
class SampledSDF:
    """Point/value pairs; ``rejection_fallback`` flags surface points found
    by rejection sampling instead of an analytic projection."""

    points: np.ndarray
    values: np.ndarray
    rejection_fallback: bool = False

    def __iter__(self):
        return iter((self.points, self.values))

    def __len__(self) -> int:
        return len(self.values)


def sample_sdf_points(src: AnalyticSDF, budget: PointBudget, seed: int = 0) -> SampledSDF:
    """Training points with their signed distances.

    Near-surface points are surface points offset along the unit normal by a
    Gaussian distance of std ``budget.sigma``; their labels are recomputed from
    the analytic SDF. Points are clamped into the unit cube.
    """
    rng = np.random.default_rng(seed)
    n_on, n_near, n_uni = budget.counts()
    on = src.surface_points(rng, n_on)
    base = src.surface_points(rng, n_near)
    normal = src.gradient(base)
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-12)
    near = np.clip(base + normal * rng.normal(0.0, budget.sigma, size=(n_near, 1)), 0.0, 1.0)
    uni = rng.uniform(0.0, 1.0, size=(n_uni, 3))
    pts = np.concatenate([on, near, uni])
    return SampledSDF(pts, src.sdf(pts), rejection_fallback=not src.analytic_projection)


def analytic_sources() -> dict[str, type]:
    """Catalog of built-in signal constructors by id."""
    return {
        "multitone": MultiTone1D,
        "ring_card": ring_card,
        "sphere": Sphere,
        "torus": Torus,
        "bumpy_sphere": BumpySphere,
    }


def make_source(source_id: str, **params):
    catalog = analytic_sources()
    if source_id not in catalog:
        raise LookupError(f"unknown source {source_id!r}; available: {sorted(catalog)}")
    if source_id == "multitone" and "tones" in params:
        return MultiTone1D.of(*params["tones"])
    try:
        return catalog[source_id](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {source_id!r}: {exc}") from exc


# ------------------------------------------------------------------- file IO


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) with maxval 255; values in [0, 1]."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ConfigError(f"{path}: unsupported image format {magic!r}")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    if int(maxval) != 255:
        raise ConfigError(f"{path}: only maxval 255 is supported")
    w, h, c = int(w), int(h), 3 if magic == b"P6" else 1
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=pos + 1)
    img = raw.reshape(h, w, c).astype(np.float64) / 255.0
    return img[:, :, 0] if c == 1 else img


def write_pnm(path, image) -> None:
    """Write (H, W) as P5 or (H, W, 3) as P6, quantizing [0, 1] to 8 bits."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ConfigError(f"cannot write image of shape {img.shape}")
    q = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    header = magic + f"\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + q.tobytes())


def write_sdf_csv(path, points, values) -> None:
    pts = np.asarray(points, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    np.savetxt(path, np.hstack([pts, vals]), delimiter=",", header="x,y,z,sdf", comments="", fmt="%.17g")


def read_sdf_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 4:
        raise ConfigError(f"{path}: expected columns x,y,z,sdf")
    return data[:, :3], data[:, 3]
