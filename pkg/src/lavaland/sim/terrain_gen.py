"""Procedural lava-flow heightfields with ground-truth feature annotations.

A gently undulating base surface carries four kinds of feature: level
plateaus (the landing candidates), cracks (narrow deep trenches), rough
patches (high-frequency relief) and boulders (hemi-ellipsoidal bumps).
Hazard features are placed clear of every plateau and of the pad apron.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rng import stream


class InvalidSpec(ValueError):
    pass


def _range(v, name, allow_zero=False):
    lo, hi = v
    if lo > hi or lo < 0 or (not allow_zero and lo <= 0):
        raise InvalidSpec(f"{name} range {v!r} is invalid")


@dataclass(frozen=True)
class TerrainSpec:
    width: float = 48.0              # east extent, m
    height: float = 32.0             # north extent, m
    resolution: float = 0.1
    origin: tuple = (0.0, 0.0)
    base_amplitude: float = 0.25     # RMS of the undulating base, m
    base_scale: float = 4.0          # correlation length of the base, m
    base_roughness: float = 0.005    # RMS of fine texture on the base, m
    focus: tuple = (34.0, 16.0)      # plateaus are placed near this point
    focus_radius: float = 4.0
    feature_zone: tuple = (22.0, 2.0, 46.0, 30.0)   # east0, north0, east1, north1
    pad_apron: tuple | None = (6.0, 16.0, 4.0)      # east, north, radius: flattened
    plateaus: tuple = (1, 2)
    plateau_radius: tuple = (3.0, 4.5)
    plateau_lift: tuple = (0.1, 0.4)
    plateau_skirt: float = 1.5
    cracks: tuple = (1, 3)
    crack_width: tuple = (0.3, 1.0)
    crack_depth: tuple = (0.5, 1.5)
    crack_length: tuple = (4.0, 10.0)
    rough_patches: tuple = (1, 3)
    rough_radius: tuple = (1.5, 3.0)
    rough_rms: tuple = (0.12, 0.3)
    boulders: tuple = (2, 6)
    boulder_height: tuple = (0.3, 1.0)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.resolution <= 0:
            raise InvalidSpec("extent and resolution must be positive")
        if self.base_amplitude < 0 or self.base_scale <= 0 or self.base_roughness < 0:
            raise InvalidSpec("base parameters must be non-negative")
        for name in ("plateaus", "cracks", "rough_patches", "boulders"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo or int(lo) != lo or int(hi) != hi:
                raise InvalidSpec(f"{name} count range {getattr(self, name)!r} is invalid")
        for name in ("plateau_radius", "plateau_lift", "crack_width", "crack_depth", "crack_length",
                     "rough_radius", "rough_rms", "boulder_height"):
            _range(getattr(self, name), name, allow_zero=(name == "plateau_lift"))
        e0, n0, e1, n1 = self.feature_zone
        if not (e1 > e0 and n1 > n0):
            raise InvalidSpec("feature_zone must have positive extent")


@dataclass(frozen=True)
class Feature:
    kind: str                    # plateau | crack | rough_patch | boulder
    center: tuple
    radius: float                # footprint radius (cracks: half width)
    height: float = 0.0          # plateau level / crack depth / boulder height / rough rms
    p0: tuple | None = None      # crack segment ends
    p1: tuple | None = None

    def distance(self, east, north) -> np.ndarray:
        east, north = np.asarray(east, dtype=float), np.asarray(north, dtype=float)
        if self.kind == "crack":
            return _segment_distance(east, north, np.asarray(self.p0), np.asarray(self.p1))
        return np.hypot(east - self.center[0], north - self.center[1])

    def contains(self, east, north) -> np.ndarray:
        return self.distance(east, north) <= self.radius

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "center": list(self.center), "radius": self.radius, "height": self.height}
        if self.kind == "crack":
            d["p0"], d["p1"] = list(self.p0), list(self.p1)
        return d


def _segment_distance(e, n, p0, p1) -> np.ndarray:
    d = p1 - p0
    L2 = float(d @ d)
    t = np.clip(((e - p0[0]) * d[0] + (n - p0[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(e - (p0[0] + t * d[0]), n - (p0[1] + t * d[1]))


@dataclass(eq=False)
class Heightfield:
    """Heights sampled on a regular grid; row i is north = origin_n + i*res, column j east."""

    resolution: float
    heights: np.ndarray
    origin: tuple = (0.0, 0.0)
    features: list = field(default_factory=list)

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=float)
        if self.heights.ndim != 2 or not np.all(np.isfinite(self.heights)):
            raise ValueError("heights must be a finite 2-D array")
        self.hmin = float(self.heights.min())
        self.hmax = float(self.heights.max())

    @property
    def shape(self):
        return self.heights.shape

    @property
    def extent(self) -> tuple:
        ny, nx = self.heights.shape
        return (self.origin[0], self.origin[1],
                self.origin[0] + (nx - 1) * self.resolution, self.origin[1] + (ny - 1) * self.resolution)

    def sample_coords(self):
        ny, nx = self.heights.shape
        e = self.origin[0] + np.arange(nx) * self.resolution
        n = self.origin[1] + np.arange(ny) * self.resolution
        return np.meshgrid(e, n)

    def _locate(self, east, north):
        ny, nx = self.heights.shape
        fx = np.clip((np.asarray(east, dtype=float) - self.origin[0]) / self.resolution, 0.0, nx - 1.000001)
        fy = np.clip((np.asarray(north, dtype=float) - self.origin[1]) / self.resolution, 0.0, ny - 1.000001)
        j = fx.astype(np.int64)
        i = fy.astype(np.int64)
        return i, j, fx - j, fy - i

    def height_at(self, east, north):
        """Bilinear surface height; positions outside the field clamp to the border."""
        i, j, tx, ty = self._locate(east, north)
        h = self.heights
        h00, h01 = h[i, j], h[i, j + 1]
        h10, h11 = h[i + 1, j], h[i + 1, j + 1]
        return (h00 * (1 - tx) + h01 * tx) * (1 - ty) + (h10 * (1 - tx) + h11 * tx) * ty

    def gradient_at(self, east, north):
        """(dh/de, dh/dn) of the bilinear patch."""
        i, j, tx, ty = self._locate(east, north)
        h = self.heights
        h00, h01 = h[i, j], h[i, j + 1]
        h10, h11 = h[i + 1, j], h[i + 1, j + 1]
        ge = ((h01 - h00) * (1 - ty) + (h11 - h10) * ty) / self.resolution
        gn = ((h10 - h00) * (1 - tx) + (h11 - h01) * tx) / self.resolution
        return ge, gn

    def feature_at(self, east: float, north: float) -> str:
        """Ground-truth label at a point: the hazard kind if inside one, else plateau or base."""
        hazard = [f.kind for f in self.features if f.kind != "plateau" and f.contains(east, north)]
        if hazard:
            for kind in ("boulder", "crack", "rough_patch"):
                if kind in hazard:
                    return kind
        if any(f.kind == "plateau" and f.contains(east, north) for f in self.features):
            return "plateau"
        return "base"

    def feature_mask(self, kinds) -> np.ndarray:
        e, n = self.sample_coords()
        mask = np.zeros(self.heights.shape, dtype=bool)
        for f in self.features:
            if f.kind in kinds:
                mask |= f.contains(e, n)
        return mask


def _smooth_noise(rng, shape, sigma_cells: float, rms: float) -> np.ndarray:
    if rms == 0:
        return np.zeros(shape)
    z = ndimage.gaussian_filter(rng.standard_normal(shape), sigma_cells, mode="reflect")
    z -= z.mean()
    s = z.std()
    return z * (rms / s) if s > 0 else z


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def generate_terrain(seed: int, spec: TerrainSpec = TerrainSpec()) -> Heightfield:
    spec.validate()
    rng = stream(seed, "terrain")
    res = spec.resolution
    nx = int(round(spec.width / res)) + 1
    ny = int(round(spec.height / res)) + 1
    shape = (ny, nx)
    e = spec.origin[0] + np.arange(nx) * res
    n = spec.origin[1] + np.arange(ny) * res
    E, N = np.meshgrid(e, n)

    base = _smooth_noise(rng, shape, spec.base_scale / res, spec.base_amplitude)
    base += _smooth_noise(rng, shape, 0.15 / res, spec.base_roughness)
    h = base.copy()
    features: list[Feature] = []

    if spec.pad_apron is not None:
        pe, pn, pr = spec.pad_apron
        d = np.hypot(E - pe, N - pn)
        level = float(base[int(round((pn - spec.origin[1]) / res)), int(round((pe - spec.origin[0]) / res))])
        w = _smoothstep((d - pr) / 2.0)
        h = level * (1 - w) + h * w

    keepout = []
    if spec.pad_apron is not None:
        keepout.append((spec.pad_apron[0], spec.pad_apron[1], spec.pad_apron[2] + 2.0))

    zone = spec.feature_zone
    n_plat = int(rng.integers(spec.plateaus[0], spec.plateaus[1] + 1))
    for k in range(n_plat):
        radius = rng.uniform(*spec.plateau_radius)
        for _ in range(200):
            if k == 0:
                ang = rng.uniform(0, 2 * np.pi)
                r = spec.focus_radius * np.sqrt(rng.uniform())
                c = (spec.focus[0] + r * np.cos(ang), spec.focus[1] + r * np.sin(ang))
            else:
                c = (rng.uniform(zone[0], zone[2]), rng.uniform(zone[1], zone[3]))
            if all(np.hypot(c[0] - x, c[1] - y) > radius + rr + spec.plateau_skirt for x, y, rr in keepout):
                break
        ci = int(np.clip(round((c[1] - spec.origin[1]) / res), 0, ny - 1))
        cj = int(np.clip(round((c[0] - spec.origin[0]) / res), 0, nx - 1))
        level = float(base[ci, cj]) + rng.uniform(*spec.plateau_lift)
        d = np.hypot(E - c[0], N - c[1])
        w = _smoothstep((d - radius) / spec.plateau_skirt)
        h = level * (1 - w) + h * w
        features.append(Feature("plateau", (float(c[0]), float(c[1])), float(radius), level))
        keepout.append((c[0], c[1], radius + spec.plateau_skirt))

    def clear(c, r):
        return all(np.hypot(c[0] - x, c[1] - y) > r + rr + 0.5 for x, y, rr in keepout)

    def place(r_fn):
        for _ in range(200):
            r = r_fn()
            c = (rng.uniform(zone[0] + r, zone[2] - r), rng.uniform(zone[1] + r, zone[3] - r))
            if clear(c, r):
                return c, r
        return None

    n_rough = int(rng.integers(spec.rough_patches[0], spec.rough_patches[1] + 1))
    for _ in range(n_rough):
        got = place(lambda: rng.uniform(*spec.rough_radius))
        rms = rng.uniform(*spec.rough_rms)
        if got is None:
            continue
        c, r = got
        tex = _smooth_noise(rng, shape, 0.12 / res, rms)
        d = np.hypot(E - c[0], N - c[1])
        taper = 1.0 - _smoothstep((d - (r - 0.3)) / 0.3)
        h = h + tex * taper
        features.append(Feature("rough_patch", (float(c[0]), float(c[1])), float(r), float(rms)))

    n_crack = int(rng.integers(spec.cracks[0], spec.cracks[1] + 1))
    for _ in range(n_crack):
        width = rng.uniform(*spec.crack_width)
        depth = rng.uniform(*spec.crack_depth)
        length = rng.uniform(*spec.crack_length)
        for _ in range(200):
            theta = rng.uniform(0, np.pi)
            c = (rng.uniform(zone[0], zone[2]), rng.uniform(zone[1], zone[3]))
            half = 0.5 * length * np.array([np.cos(theta), np.sin(theta)])
            p0, p1 = np.array(c) - half, np.array(c) + half
            inside = all(zone[0] <= p[0] <= zone[2] and zone[1] <= p[1] <= zone[3] for p in (p0, p1))
            if inside and all(_segment_distance(np.array(x), np.array(y), p0, p1) > rr + width + 0.5
                              for x, y, rr in keepout):
                break
        else:
            continue
        d = _segment_distance(E, N, p0, p1)
        h = np.where(d <= width / 2, h - depth, h)
        features.append(Feature("crack", (float(c[0]), float(c[1])), float(width / 2), float(depth),
                                (float(p0[0]), float(p0[1])), (float(p1[0]), float(p1[1]))))

    n_boulder = int(rng.integers(spec.boulders[0], spec.boulders[1] + 1))
    for _ in range(n_boulder):
        bh = rng.uniform(*spec.boulder_height)
        got = place(lambda: bh * rng.uniform(1.0, 1.5))
        if got is None:
            continue
        c, r = got
        d = np.hypot(E - c[0], N - c[1])
        h = h + bh * np.sqrt(np.clip(1.0 - (d / r) ** 2, 0.0, None))
        features.append(Feature("boulder", (float(c[0]), float(c[1])), float(r), float(bh)))

    return Heightfield(res, h, tuple(spec.origin), features)
