"""Gravity-aligned elevation grid built from depth frames, and landing-site selection.

The pipeline is a chain of grid -> grid functions::

    grid = TerrainGrid.empty(origin, shape, cell_size)
    for frame, pose in frames:
        grid = integrate_frame(grid, frame, pose)
    grid = fill_transient_holes(grid, k_min_samples, persistence_ratio)
    grid = classify_cells(grid, slope_max, roughness_max, obstacle_height, window)
    grid = dilate_hazards(grid, radius)
    regions = extract_safe_regions(grid, min_area)
    site = select_landing_site(regions, drone_xy)

Rows index north and columns index east: cell (r, c) spans
``origin + (c, r) * cell_size`` to one cell further. A cell with no returns
is never evidence of safe ground; it stays Unknown and counts as a hazard.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geom import CameraIntrinsics, RigidTransform, camera_rotation, pixel_rays, rotation_angle

MIN_RANGE = 0.1
MAX_RANGE = 20.0


class AttitudeMismatch(ValueError):
    pass


class FrameOutsideGrid(ValueError):
    pass


class NoViableRegion(LookupError):
    """No safe region is large enough; keep searching, never land anyway."""


class CellClass(enum.IntEnum):
    UNKNOWN = 0
    SAFE = 1
    ROUGH = 2
    STEEP = 3
    OBSTACLE = 4
    MARGIN = 5


HAZARD_CLASSES = (CellClass.UNKNOWN, CellClass.ROUGH, CellClass.STEEP, CellClass.OBSTACLE)


@dataclass(frozen=True)
class TerrainConfig:
    cell_size: float = 0.25
    slope_max: float = 10.0
    roughness_max: float = 0.05
    obstacle_height: float = 0.2
    window: int = 5
    drone_radius: float = 0.4
    safety_margin: float = 0.5
    min_area: float = 4.0
    k_min_samples: int = 3
    persistence_ratio: float = 0.2

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.k_min_samples < 1:
            raise ValueError("k_min_samples must be >= 1")
        if not 0.0 <= self.persistence_ratio <= 1.0:
            raise ValueError("persistence_ratio must be in [0, 1]")
        for name in ("slope_max", "roughness_max", "obstacle_height", "min_area",
                     "drone_radius", "safety_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def dilation_radius(self) -> float:
        return self.drone_radius + self.safety_margin


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Per-pixel ray distances in metres, row-major; 0.0 marks an undefined pixel."""

    depths: np.ndarray
    intrinsics: CameraIntrinsics
    attitude: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        d = np.array(self.depths, dtype=float)
        intr = self.intrinsics
        if d.size != intr.width * intr.height:
            raise ValueError(f"expected {intr.width * intr.height} depths, got {d.size}")
        d = d.reshape(intr.height, intr.width)
        bad = (d != 0.0) & ~((d > MIN_RANGE) & (d < MAX_RANGE))
        if np.any(bad):
            raise ValueError("defined depths must lie in (0.1, 20.0) m")
        d.setflags(write=False)
        object.__setattr__(self, "depths", d)
        object.__setattr__(self, "attitude", np.asarray(self.attitude, dtype=float))

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def defined(self) -> np.ndarray:
        return self.depths > 0.0


@dataclass(eq=False)
class TerrainGrid:
    origin: np.ndarray
    cell_size: float
    count: np.ndarray
    mean: np.ndarray
    hmin: np.ndarray
    hmax: np.ndarray
    miss: np.ndarray
    cls: np.ndarray
    measurable: np.ndarray
    frames: int = 0
    slope_deg: np.ndarray | None = None
    roughness: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, origin, shape, cell_size: float = 0.25) -> "TerrainGrid":
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        rows, cols = shape
        return cls(
            origin=np.asarray(origin, dtype=float).copy(),
            cell_size=float(cell_size),
            count=np.zeros((rows, cols), dtype=np.int64),
            mean=np.zeros((rows, cols)),
            hmin=np.full((rows, cols), np.inf),
            hmax=np.full((rows, cols), -np.inf),
            miss=np.zeros((rows, cols), dtype=np.int64),
            cls=np.zeros((rows, cols), dtype=np.uint8),
            measurable=np.zeros((rows, cols), dtype=bool),
        )

    @classmethod
    def around(cls, center, size_m: float, cell_size: float = 0.25) -> "TerrainGrid":
        n = int(np.ceil(size_m / cell_size))
        origin = np.asarray(center, dtype=float) - 0.5 * n * cell_size
        return cls.empty(origin, (n, n), cell_size)

    @property
    def shape(self) -> tuple:
        return self.count.shape

    def copy(self) -> "TerrainGrid":
        def c(a):
            return None if a is None else a.copy()
        return replace(self, origin=self.origin.copy(), count=self.count.copy(), mean=self.mean.copy(),
                       hmin=self.hmin.copy(), hmax=self.hmax.copy(), miss=self.miss.copy(),
                       cls=self.cls.copy(), measurable=self.measurable.copy(),
                       slope_deg=c(self.slope_deg), roughness=c(self.roughness), extras=dict(self.extras))

    def cell_center(self, row, col) -> np.ndarray:
        return self.origin + (np.stack([col, row], axis=-1) + 0.5) * self.cell_size

    def cell_centers(self) -> np.ndarray:
        rows, cols = self.shape
        rr, cc = np.mgrid[0:rows, 0:cols]
        return self.cell_center(rr, cc)

    def cell_of(self, east, north):
        col = np.floor((np.asarray(east) - self.origin[0]) / self.cell_size).astype(int)
        row = np.floor((np.asarray(north) - self.origin[1]) / self.cell_size).astype(int)
        return row, col

    def contains(self, row, col) -> bool:
        return 0 <= row < self.shape[0] and 0 <= col < self.shape[1]


@functools.lru_cache(maxsize=8)
def _rays(intr: CameraIntrinsics) -> np.ndarray:
    r = pixel_rays(intr)
    r.setflags(write=False)
    return r


def frame_points(frame: DepthFrame, camera_pose: RigidTransform) -> np.ndarray:
    """ENU points for every defined pixel, shape (N, 3)."""
    mask = frame.defined
    pts = _rays(frame.intrinsics)[mask] * frame.depths[mask][:, None]
    return camera_pose.apply(pts)


def integrate_frame(grid: TerrainGrid, frame: DepthFrame, camera_pose: RigidTransform,
                    attitude_tolerance_deg: float = 5.0) -> TerrainGrid:
    """Fold one depth frame into the grid's running height statistics.

    ``camera_pose`` maps the optical frame into ENU. Cells whose centre falls
    inside the camera frustum but that received no return this frame get a
    miss. Per-cell means are merged with the parallel Welford update so the
    result does not depend on frame order beyond rounding.
    """
    r_pose = camera_pose.matrix
    mismatch = np.degrees(rotation_angle(r_pose, camera_rotation(frame.attitude)))
    if mismatch > attitude_tolerance_deg:
        raise AttitudeMismatch(f"pose and frame attitude differ by {mismatch:.2f} deg")

    out = grid.copy()
    rows, cols = grid.shape
    cs = grid.cell_size
    pts = frame_points(frame, camera_pose)
    col = np.floor((pts[:, 0] - grid.origin[0]) / cs).astype(np.int64)
    row = np.floor((pts[:, 1] - grid.origin[1]) / cs).astype(np.int64)
    inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
    idx = row[inside] * cols + col[inside]
    z = pts[inside, 2]

    ncell = rows * cols
    n_b = np.bincount(idx, minlength=ncell).reshape(rows, cols)
    hit = n_b > 0
    if np.any(hit):
        mean_b = np.zeros(ncell)
        np.divide(np.bincount(idx, weights=z, minlength=ncell), n_b.reshape(-1), out=mean_b,
                  where=n_b.reshape(-1) > 0)
        mean_b = mean_b.reshape(rows, cols)
        lo = np.full(ncell, np.inf)
        hi = np.full(ncell, -np.inf)
        np.minimum.at(lo, idx, z)
        np.maximum.at(hi, idx, z)
        n_new = out.count + n_b
        delta = np.where(hit, mean_b - out.mean, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out.mean = np.where(hit, out.mean + delta * (n_b / np.maximum(n_new, 1)), out.mean)
        out.hmin = np.minimum(out.hmin, lo.reshape(rows, cols))
        out.hmax = np.maximum(out.hmax, hi.reshape(rows, cols))
        out.mean = np.where(n_new > 0, np.clip(out.mean, out.hmin, out.hmax), out.mean)
        out.count = n_new

    covered = _frustum_coverage(grid, frame, camera_pose, z)
    if not np.any(hit) and not np.any(covered):
        raise FrameOutsideGrid("frame neither hits nor covers any grid cell")
    out.miss = out.miss + (covered & ~hit)
    out.frames = grid.frames + 1
    out.cls = np.zeros_like(grid.cls)
    out.measurable = np.zeros_like(grid.measurable)
    out.slope_deg = None
    out.roughness = None
    return out


def _frustum_coverage(grid: TerrainGrid, frame: DepthFrame, camera_pose: RigidTransform,
                      frame_heights: np.ndarray) -> np.ndarray:
    """Cells whose centre projects into the image in front of the camera, within range."""
    if frame_heights.size:
        ref = float(np.median(frame_heights))
    elif np.any(grid.count > 0):
        ref = float(np.median(grid.mean[grid.count > 0]))
    else:
        ref = 0.0
    centers = grid.cell_centers()
    h = np.where(grid.count > 0, grid.mean, ref)
    world = np.concatenate([centers, h[..., None]], axis=-1).reshape(-1, 3)
    cam = (world - camera_pose.translation) @ camera_pose.matrix
    intr = frame.intrinsics
    z = cam[:, 2]
    ok = z > MIN_RANGE
    u = np.full(z.shape, -1.0)
    v = np.full(z.shape, -1.0)
    u[ok] = intr.fx * cam[ok, 0] / z[ok] + intr.cx
    v[ok] = intr.fy * cam[ok, 1] / z[ok] + intr.cy
    rng = np.linalg.norm(cam, axis=1)
    ok &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height) & (rng < MAX_RANGE)
    return ok.reshape(grid.shape)


def fill_transient_holes(grid: TerrainGrid, k_min_samples: int = 3, persistence_ratio: float = 0.2) -> TerrainGrid:
    """Decide which cells carry enough returns to be measured.

    Cells with at least ``k_min_samples`` returns are measurable whatever
    their miss count, so holes that only some frames saw are filled by the
    others. Cells with a few returns whose hit fraction is below
    ``persistence_ratio`` are treated as noise. Nothing is interpolated: a
    cell without returns stays Unknown.
    """
    out = grid.copy()
    measurable = grid.count >= k_min_samples
    seen = grid.count + grid.miss
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(seen > 0, grid.count / np.maximum(seen, 1), 0.0)
    noise = (grid.count > 0) & ~measurable & (ratio < persistence_ratio)
    out.measurable = measurable
    out.cls = np.where(measurable, out.cls, CellClass.UNKNOWN).astype(np.uint8)
    out.extras["noise"] = noise
    return out


def _offset_kernels(window: int, cs: float):
    h = window // 2
    off = np.arange(-h, h + 1) * cs
    dy, dx = np.meshgrid(off, off, indexing="ij")
    return dx, dy


def classify_cells(grid: TerrainGrid, slope_max: float = 10.0, roughness_max: float = 0.05,
                   obstacle_height: float = 0.2, window: int = 5) -> TerrainGrid:
    """Slope / roughness / obstacle classes from a local least-squares plane.

    For each measurable cell a plane z = a*dx + b*dy + c is fitted to the
    mean heights of the measurable cells in its window (offsets relative to
    the cell). Slope is the plane's tilt, roughness the RMS residual, and the
    obstacle test compares the cell's maximum height with the plane at the
    cell. Windows with fewer than three measurable cells, or collinear ones,
    leave the cell Unknown.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    out = grid.copy()
    w = grid.measurable.astype(float)
    ref = float(np.median(grid.mean[grid.measurable])) if np.any(grid.measurable) else 0.0
    z = np.where(grid.measurable, grid.mean - ref, 0.0)
    dx, dy = _offset_kernels(window, grid.cell_size)
    ones = np.ones_like(dx)

    def corr(a, k):
        return ndimage.correlate(a, k, mode="constant", cval=0.0)

    sw = corr(w, ones)
    sx, sy = corr(w, dx), corr(w, dy)
    sxx, syy, sxy = corr(w, dx * dx), corr(w, dy * dy), corr(w, dx * dy)
    wz = w * z
    sz, sxz, syz = corr(wz, ones), corr(wz, dx), corr(wz, dy)
    szz = corr(wz * z, ones)

    cand = grid.measurable & (sw >= 3 - 1e-9)
    mats = np.stack([
        np.stack([sxx, sxy, sx], axis=-1),
        np.stack([sxy, syy, sy], axis=-1),
        np.stack([sx, sy, sw], axis=-1),
    ], axis=-2)[cand]
    rhs = np.stack([sxz, syz, sz], axis=-1)[cand]
    det = np.linalg.det(mats)
    scale = (grid.cell_size ** 4) * np.maximum(sw[cand], 1.0)
    ok = np.abs(det) > 1e-9 * scale
    sol = np.zeros_like(rhs)
    if np.any(ok):
        sol[ok] = np.linalg.solve(mats[ok], rhs[ok][..., None])[..., 0]
    a, b, c = sol[:, 0], sol[:, 1], sol[:, 2]
    n = sw[cand]
    ssr = (szz[cand] - 2 * (a * sxz[cand] + b * syz[cand] + c * sz[cand])
           + a * a * sxx[cand] + b * b * syy[cand] + c * c * n
           + 2 * (a * b * sxy[cand] + a * c * sx[cand] + b * c * sy[cand]))
    rough = np.sqrt(np.maximum(ssr, 0.0) / n)
    slope = np.degrees(np.arctan(np.hypot(a, b)))
    above = (grid.hmax[cand] - ref) - c

    cls = np.full(grid.shape, CellClass.UNKNOWN, dtype=np.uint8)
    sub = np.full(cand.sum(), CellClass.SAFE, dtype=np.uint8)
    sub[rough > roughness_max] = CellClass.ROUGH
    sub[slope > slope_max] = CellClass.STEEP
    sub[above > obstacle_height] = CellClass.OBSTACLE
    sub[~ok] = CellClass.UNKNOWN
    cls[cand] = sub
    out.cls = cls

    slope_full = np.full(grid.shape, np.nan)
    rough_full = np.full(grid.shape, np.nan)
    slope_full[cand] = np.where(ok, slope, np.nan)
    rough_full[cand] = np.where(ok, rough, np.nan)
    out.slope_deg = slope_full
    out.roughness = rough_full
    return out


def hazard_mask(grid: TerrainGrid) -> np.ndarray:
    return np.isin(grid.cls, [int(c) for c in HAZARD_CLASSES])


def hazard_distance(grid: TerrainGrid) -> np.ndarray:
    """Euclidean distance (m) from each cell centre to the nearest hazard cell centre."""
    hz = hazard_mask(grid)
    if not np.any(hz):
        return np.full(grid.shape, np.inf)
    return ndimage.distance_transform_edt(~hz) * grid.cell_size


def dilate_hazards(grid: TerrainGrid, radius: float) -> TerrainGrid:
    """Demote Safe cells within ``radius`` metres of any hazard (Unknown included) to Margin."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    out = grid.copy()
    dist = hazard_distance(grid)
    demote = (grid.cls == CellClass.SAFE) & (dist <= radius + 1e-9)
    out.cls = np.where(demote, CellClass.MARGIN, grid.cls).astype(np.uint8)
    out.extras["dilation_radius"] = float(radius)
    return out


@dataclass(frozen=True, eq=False)
class SafeRegion:
    cells: np.ndarray            # (N, 2) row, col in row-major order
    area: float
    centroid: np.ndarray         # ENU east, north
    min_distance_to_hazard: float
    heights: np.ndarray          # per-cell mean height
    origin: np.ndarray
    cell_size: float

    @property
    def min_cell(self) -> tuple:
        return int(self.cells[0, 0]), int(self.cells[0, 1])

    def centers(self) -> np.ndarray:
        return self.origin + (self.cells[:, ::-1] + 0.5) * self.cell_size

    def index_of(self, row: int, col: int) -> int | None:
        hits = np.nonzero((self.cells[:, 0] == row) & (self.cells[:, 1] == col))[0]
        return int(hits[0]) if hits.size else None


def extract_safe_regions(grid: TerrainGrid, min_area: float = 4.0) -> list[SafeRegion]:
    """8-connected components of Safe cells with area at least ``min_area`` m^2."""
    safe = grid.cls == CellClass.SAFE
    labels, n = ndimage.label(safe, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    dist = hazard_distance(grid)
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
    cols = grid.shape[1]
    cs2 = grid.cell_size ** 2
    regions = []
    for k in range(n):
        members = order[bounds[k]:bounds[k + 1]]
        area = members.size * cs2
        if area + 1e-12 < min_area:
            continue
        rc = np.column_stack([members // cols, members % cols])
        centers = grid.origin + (rc[:, ::-1] + 0.5) * grid.cell_size
        regions.append(SafeRegion(
            cells=rc,
            area=float(area),
            centroid=centers.mean(axis=0),
            min_distance_to_hazard=float(dist.ravel()[members].min()),
            heights=grid.mean.ravel()[members].copy(),
            origin=grid.origin.copy(),
            cell_size=grid.cell_size,
        ))
    return regions


@dataclass(frozen=True, eq=False)
class LandingSite:
    position: np.ndarray        # east, north, up
    region_area: float
    distance_from_drone: float
    cell: tuple
    region: SafeRegion

    def to_dict(self) -> dict:
        return {
            "east": float(self.position[0]),
            "north": float(self.position[1]),
            "up": float(self.position[2]),
            "region_area": self.region_area,
            "distance_from_drone": self.distance_from_drone,
            "cell_row": int(self.cell[0]),
            "cell_col": int(self.cell[1]),
        }


def select_landing_site(regions, drone_xy) -> LandingSite:
    """Site in the region whose nearest cell centre is closest to the drone.

    Ties within 1e-9 m go to the larger region, then to the region with the
    lowest (row, col) cell. The site is the region centroid when the centroid's
    cell belongs to the region, otherwise the member cell centre nearest the
    centroid.
    """
    regions = list(regions)
    if not regions:
        raise NoViableRegion("no safe region large enough")
    drone_xy = np.asarray(drone_xy, dtype=float)[:2]
    nearest = [float(np.min(np.linalg.norm(r.centers() - drone_xy, axis=1))) for r in regions]
    dmin = min(nearest)
    tied = [i for i, d in enumerate(nearest) if d <= dmin + 1e-9]
    best = min(tied, key=lambda i: (-regions[i].area, regions[i].min_cell))
    region = regions[best]

    cs = region.cell_size
    crow = int(np.floor((region.centroid[1] - region.origin[1]) / cs))
    ccol = int(np.floor((region.centroid[0] - region.origin[0]) / cs))
    i = region.index_of(crow, ccol)
    if i is not None:
        xy = region.centroid
    else:
        d = np.linalg.norm(region.centers() - region.centroid, axis=1)
        i = int(np.nonzero(d <= d.min() + 1e-12)[0][0])
        xy = region.centers()[i]
    pos = np.array([xy[0], xy[1], region.heights[i]])
    return LandingSite(
        position=pos,
        region_area=region.area,
        distance_from_drone=float(np.linalg.norm(xy - drone_xy)),
        cell=(int(region.cells[i, 0]), int(region.cells[i, 1])),
        region=region,
    )


def process_grid(grid: TerrainGrid, config: TerrainConfig = TerrainConfig()):
    """Hole filling, classification, dilation and region extraction with one config."""
    g = fill_transient_holes(grid, config.k_min_samples, config.persistence_ratio)
    g = classify_cells(g, config.slope_max, config.roughness_max, config.obstacle_height, config.window)
    g = dilate_hazards(g, config.dilation_radius)
    return g, extract_safe_regions(g, config.min_area)
