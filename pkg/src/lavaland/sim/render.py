"""Depth rendering of a heightfield by ray marching with bisection refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..geom import CameraIntrinsics, RigidTransform, attitude_from_camera_rotation, pixel_rays
from ..terrain import MAX_RANGE, MIN_RANGE, DepthFrame
from .rng import stream
from .terrain_gen import Heightfield

BISECTION_STEPS = 24


class CameraUnderTerrain(ValueError):
    pass


@dataclass(frozen=True)
class DepthNoise:
    """Sensor model: multiplicative Gaussian noise truncated at 3 sigma, random dropout, stereo shadowing."""

    sigma: float = 0.0               # fraction of distance
    dropout: float = 0.0             # probability a defined pixel is lost
    stereo_baseline: float | None = 0.095
    max_incidence_deg: float = 80.0

    def __post_init__(self):
        if self.sigma < 0 or not 0 <= self.dropout <= 1:
            raise ValueError("sigma must be >= 0 and dropout in [0, 1]")
        if self.stereo_baseline is not None and self.stereo_baseline <= 0:
            raise ValueError("stereo_baseline must be positive")


IDEAL = DepthNoise(0.0, 0.0, None)


BLOCK = 8                        # samples per side of a height-bound block


def _height_bound(field: Heightfield) -> np.ndarray:
    """Max height over each block and its eight neighbours, cached on the field.

    A point inside block b can move up to BLOCK * resolution horizontally and
    stay under this bound.
    """
    bound = getattr(field, "_render_bound", None)
    if bound is None:
        h = field.heights
        ny, nx = h.shape
        by, bx = -(-(ny - 1) // BLOCK), -(-(nx - 1) // BLOCK)
        pad = np.pad(h, ((0, by * BLOCK + 1 - ny), (0, bx * BLOCK + 1 - nx)), mode="edge")
        # each bilinear patch needs its far corner too, so blocks share their boundary row/col
        blocks = np.maximum(pad[:-1, :-1], np.maximum(pad[1:, :-1], np.maximum(pad[:-1, 1:], pad[1:, 1:])))
        bmax = blocks.reshape(by, BLOCK, bx, BLOCK).max(axis=(1, 3))
        bound = ndimage.maximum_filter(bmax, size=3, mode="nearest")
        field._render_bound = bound
    return bound


def _first_crossing(field: Heightfield, o: np.ndarray, d: np.ndarray, s0: np.ndarray, s1: np.ndarray,
                    step: float, clearance: float = 0.0) -> np.ndarray:
    """Smallest s in [s0, s1] where o + s d dips ``clearance`` below the surface; NaN if none.

    ``o`` is (N, 3) or (3,), ``d`` is (N, 3) unit vectors. Marching uses
    fixed steps near the surface and skips ahead where a block height bound
    proves the ray is clear, then refines the bracketing step by bisection.
    """
    o = np.broadcast_to(o, d.shape)
    n = len(d)
    out = np.full(n, np.nan)
    bound = _height_bound(field)
    reach = BLOCK * field.resolution
    by, bx = bound.shape

    def f(ix, s):
        p = o[ix] + s[:, None] * d[ix]
        return p[:, 2] - field.height_at(p[:, 0], p[:, 1]) + clearance

    def safe_advance(ix, s):
        p = o[ix] + s[:, None] * d[ix]
        bi = np.clip(((p[:, 1] - field.origin[1]) // reach).astype(np.int64), 0, by - 1)
        bj = np.clip(((p[:, 0] - field.origin[0]) // reach).astype(np.int64), 0, bx - 1)
        clear = p[:, 2] + clearance - bound[bi, bj]
        dd = d[ix]
        horiz = np.hypot(dd[:, 0], dd[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            by_drop = np.where(dd[:, 2] < 0, clear / -dd[:, 2], np.inf)
            by_reach = np.where(horiz > 0, reach / horiz, np.inf)
        return np.where(clear > 0, np.maximum(np.minimum(by_drop, by_reach), step), step)

    idx = np.flatnonzero(s0 <= s1)
    s_prev = s0[idx]
    f_prev = f(idx, s_prev)
    start_hit = f_prev <= 0
    out[idx[start_hit]] = s_prev[start_hit]
    keep = ~start_hit
    idx, s_prev = idx[keep], s_prev[keep]
    lo_all, hi_all, ix_all = [], [], []
    while idx.size:
        end = s1[idx]
        s_cur = np.minimum(s_prev + safe_advance(idx, s_prev), end)
        f_cur = f(idx, s_cur)
        crossed = f_cur <= 0
        if np.any(crossed):
            lo_all.append(s_prev[crossed])
            hi_all.append(s_cur[crossed])
            ix_all.append(idx[crossed])
        keep = ~crossed & (s_cur < end)
        idx, s_prev = idx[keep], s_cur[keep]
    if ix_all:
        ix = np.concatenate(ix_all)
        lo = np.concatenate(lo_all)
        hi = np.concatenate(hi_all)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            below = f(ix, mid) <= 0
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        out[ix] = hi
    return out


def _span(field: Heightfield, o_up, d_up, s_max: float):
    """Parameter interval where a ray can meet the surface (between hmax and hmin)."""
    # widened slightly so a flat field (hmin == hmax) still leaves a bracket to bisect
    top, bottom = field.hmax + 1e-6, field.hmin - 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        to_top = np.where(d_up < 0, (o_up - top) / -d_up, 0.0)
        to_bottom = np.where(d_up < 0, (o_up - bottom) / -d_up, np.where(o_up > top, -1.0, s_max))
    s0 = np.maximum(to_top, 0.0)
    s1 = np.minimum(to_bottom, s_max)
    return s0, s1


def intersect_rays(field: Heightfield, origin, directions, s_max: float = MAX_RANGE) -> np.ndarray:
    """Distance along each unit ray to the first surface crossing (NaN if none within s_max)."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    s0, s1 = _span(field, o[2], d[:, 2], s_max)
    return _first_crossing(field, o, d, s0, s1, field.resolution / 2)


def render_depth(field: Heightfield, camera_pose: RigidTransform, intr: CameraIntrinsics,
                 noise: DepthNoise = IDEAL, seed: int = 0, timestamp: float = 0.0,
                 counter: int = 0) -> DepthFrame:
    """Render a DepthFrame (ray distances, 0 = undefined) seen from ``camera_pose`` (optical -> ENU)."""
    o = camera_pose.translation
    if o[2] < field.height_at(o[0], o[1]):
        raise CameraUnderTerrain(f"camera at up={o[2]:.3f} is below the surface")
    R = camera_pose.matrix
    d = pixel_rays(intr).reshape(-1, 3) @ R.T
    s = intersect_rays(field, o, d)
    hit = np.isfinite(s)

    p = o + s[hit, None] * d[hit]
    ge, gn = field.gradient_at(p[:, 0], p[:, 1])
    nrm = np.stack([-ge, -gn, np.ones_like(ge)], axis=1)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    cos_inc = -np.einsum("ij,ij->i", d[hit], nrm)
    ok = cos_inc >= np.cos(np.radians(noise.max_incidence_deg))

    if noise.stereo_baseline is not None and np.any(ok):
        second = o + noise.stereo_baseline * R[:, 0]
        q = p[ok] + 1e-3 * nrm[ok]
        v = second - q
        length = np.linalg.norm(v, axis=1)
        v /= length[:, None]
        s0 = np.full(len(q), field.resolution / 2)
        _, s1 = _span(field, q[:, 2], v[:, 2], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            rising = np.where(v[:, 2] > 0, (field.hmax - q[:, 2]) / v[:, 2], np.inf)
        s1 = np.minimum(np.minimum(length, rising), np.where(np.isfinite(s1), s1, np.inf))
        blocked = np.isfinite(_first_crossing(field, q, v, s0, s1, field.resolution / 2, clearance=0.01))
        sub = np.flatnonzero(ok)
        ok[sub[blocked]] = False

    depth = np.zeros(len(d))
    hit_idx = np.flatnonzero(hit)[ok]
    depth[hit_idx] = s[hit_idx]
    if noise.sigma > 0 or noise.dropout > 0:
        rng = stream(seed, "render_depth", counter)
        eps = np.clip(rng.standard_normal(len(d)), -3.0, 3.0)
        drop = rng.random(len(d)) < noise.dropout
        depth = np.where(depth > 0, depth * (1.0 + noise.sigma * eps), 0.0)
        depth[drop] = 0.0
    depth[(depth <= MIN_RANGE) | (depth >= MAX_RANGE)] = 0.0
    return DepthFrame(depth.reshape(intr.height, intr.width), intr, attitude_from_camera_rotation(R), timestamp)
