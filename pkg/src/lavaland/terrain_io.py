"""File formats for depth frames and terrain maps.

Depth frame pair
    ``<stem>.pgm``: binary PGM (P5), maxval 65535, big-endian 16-bit samples,
    one per pixel, row-major, millimetres of ray distance; 0 = undefined.
    ``<stem>.txt``: sidecar, one ``key=value`` per line, ``#`` comments allowed.
    Required keys: fx fy cx cy width height qw qx qy qz timestamp
    (q* = camera attitude, see ``lavaland.geom``). Optional keys px py pz give
    the camera position in ENU metres (default 0). Unknown keys are an error.

Grid export
    PPM (P6) with one pixel per cell, north up (row 0 of the image is the
    northernmost grid row), coloured by class; CSV with one row per cell.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .geom import CameraIntrinsics, RigidTransform, camera_rotation
from .terrain import CellClass, DepthFrame, TerrainGrid

SIDECAR_REQUIRED = ("fx", "fy", "cx", "cy", "width", "height", "qw", "qx", "qy", "qz", "timestamp")
SIDECAR_OPTIONAL = ("px", "py", "pz")

CLASS_COLORS = {
    CellClass.SAFE: (0, 200, 0),
    CellClass.ROUGH: (230, 220, 0),
    CellClass.STEEP: (255, 140, 0),
    CellClass.OBSTACLE: (220, 0, 0),
    CellClass.UNKNOWN: (0, 0, 0),
    CellClass.MARGIN: (128, 128, 128),
}

GRID_CSV_COLUMNS = ["row", "col", "east", "north", "height_mean", "height_min", "height_max",
                    "sample_count", "miss_count", "class"]


class FormatError(ValueError):
    """Malformed input file; the message starts with the offending path."""


# -- PGM ---------------------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def read_pgm16(path) -> np.ndarray:
    """Read a P5 PGM; 16-bit samples are big-endian. Returns an (H, W) uint16/uint8 array."""
    path = Path(path)
    data = path.read_bytes()
    try:
        magic, pos = _read_token(data, 0)
        if magic != b"P5":
            raise ValueError(f"not a binary PGM (magic {magic!r})")
        w, pos = _read_token(data, pos)
        h, pos = _read_token(data, pos)
        mx, pos = _read_token(data, pos)
        width, height, maxval = int(w), int(h), int(mx)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header: {exc}") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad PGM dimensions or maxval")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = data[pos:pos + need]
    if len(body) != need:
        raise FormatError(f"{path}: truncated PGM ({len(body)} of {need} data bytes)")
    return np.frombuffer(body, dtype=dtype).reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm16(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(values.astype(">u2").tobytes())


# -- depth frames -------------------------------------------------------------------

def read_sidecar(path) -> dict:
    path = Path(path)
    out = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SIDECAR_REQUIRED and key not in SIDECAR_OPTIONAL:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = float(value)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {key} is not a number") from exc
    missing = [k for k in SIDECAR_REQUIRED if k not in out]
    if missing:
        raise FormatError(f"{path}: missing keys {', '.join(missing)}")
    return out


def write_depth_frame(stem, frame: DepthFrame, position=(0.0, 0.0, 0.0)) -> tuple[Path, Path]:
    """Write ``stem.pgm`` + ``stem.txt``. Distances are rounded to whole millimetres."""
    stem = Path(stem)
    mm = np.rint(frame.depths * 1000.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    pgm, txt = stem.with_suffix(".pgm"), stem.with_suffix(".txt")
    write_pgm16(pgm, mm)
    intr = frame.intrinsics
    q = frame.attitude
    lines = [
        f"fx={float(intr.fx)!r}", f"fy={float(intr.fy)!r}", f"cx={float(intr.cx)!r}", f"cy={float(intr.cy)!r}",
        f"width={intr.width}", f"height={intr.height}",
        f"qw={float(q[0])!r}", f"qx={float(q[1])!r}", f"qy={float(q[2])!r}", f"qz={float(q[3])!r}",
        f"timestamp={float(frame.timestamp)!r}",
        f"px={float(position[0])!r}", f"py={float(position[1])!r}", f"pz={float(position[2])!r}",
    ]
    txt.write_text("\n".join(lines) + "\n")
    return pgm, txt


def read_depth_frame(pgm_path) -> tuple[DepthFrame, RigidTransform]:
    """Load a frame pair; returns the frame and its optical->ENU camera pose."""
    pgm_path = Path(pgm_path)
    side = read_sidecar(pgm_path.with_suffix(".txt"))
    raw = read_pgm16(pgm_path)
    try:
        intr = CameraIntrinsics(side["fx"], side["fy"], side["cx"], side["cy"],
                                int(side["width"]), int(side["height"]))
    except ValueError as exc:
        raise FormatError(f"{pgm_path.with_suffix('.txt')}: {exc}") from exc
    if raw.shape != (intr.height, intr.width):
        raise FormatError(f"{pgm_path}: image is {raw.shape[1]}x{raw.shape[0]}, sidecar says "
                          f"{intr.width}x{intr.height}")
    depths = raw.astype(float) / 1000.0
    # millimetre rounding can push a value onto the open range bounds
    depths[(depths > 0) & (depths <= 0.1)] = 0.0
    depths[depths >= 20.0] = 0.0
    att = np.array([side["qw"], side["qx"], side["qy"], side["qz"]])
    if not np.isfinite(att).all() or np.linalg.norm(att) == 0:
        raise FormatError(f"{pgm_path.with_suffix('.txt')}: invalid attitude quaternion")
    att = att / np.linalg.norm(att)
    frame = DepthFrame(depths, intr, att, side["timestamp"])
    pose = RigidTransform.from_matrix(camera_rotation(att),
                                      [side.get("px", 0.0), side.get("py", 0.0), side.get("pz", 0.0)])
    return frame, pose


def list_frames(depth_dir) -> list[Path]:
    return sorted(Path(depth_dir).glob("*.pgm"))


# -- grid export ----------------------------------------------------------------------

def class_image(grid: TerrainGrid) -> np.ndarray:
    lut = np.zeros((256, 3), dtype=np.uint8)
    for cls, rgb in CLASS_COLORS.items():
        lut[int(cls)] = rgb
    return lut[grid.cls[::-1]]


def write_class_ppm(path, grid: TerrainGrid) -> None:
    img = class_image(grid)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_grid_csv(path, grid: TerrainGrid) -> None:
    centers = grid.cell_centers()
    rows, cols = grid.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_CSV_COLUMNS)
        for r in range(rows):
            for c in range(cols):
                n = int(grid.count[r, c])
                w.writerow([
                    r, c, f"{centers[r, c, 0]:.4f}", f"{centers[r, c, 1]:.4f}",
                    f"{grid.mean[r, c]:.6f}" if n else "",
                    f"{grid.hmin[r, c]:.6f}" if n else "",
                    f"{grid.hmax[r, c]:.6f}" if n else "",
                    n, int(grid.miss[r, c]), CellClass(int(grid.cls[r, c])).name,
                ])


def write_heightfield_pgm(stem, heights: np.ndarray, resolution: float, origin=(0.0, 0.0)) -> tuple[Path, Path]:
    """Heights as 16-bit PGM (millimetres above the minimum) plus a key=value sidecar.

    The image is north-up like the class map. Sidecar keys: resolution,
    origin_east, origin_north, height_offset (metres added back to samples).
    """
    stem = Path(stem)
    heights = np.asarray(heights, dtype=float)
    lo = float(heights.min())
    mm = np.clip(np.rint((heights - lo) * 1000.0), 0, 65535).astype(np.uint16)
    pgm, txt = stem.with_suffix(".pgm"), stem.with_suffix(".txt")
    write_pgm16(pgm, mm[::-1])
    txt.write_text(f"resolution={float(resolution)!r}\norigin_east={float(origin[0])!r}\n"
                   f"origin_north={float(origin[1])!r}\nheight_offset={lo!r}\n")
    return pgm, txt


def read_heightfield_pgm(pgm_path) -> tuple[np.ndarray, dict]:
    pgm_path = Path(pgm_path)
    meta = {}
    for line in pgm_path.with_suffix(".txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = float(v)
    raw = read_pgm16(pgm_path)[::-1].astype(float)
    return raw / 1000.0 + meta["height_offset"], meta


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p


__all__ = [
    "FormatError", "read_pgm16", "write_pgm16", "read_sidecar", "write_depth_frame", "read_depth_frame",
    "list_frames", "class_image", "write_class_ppm", "write_grid_csv", "write_heightfield_pgm",
    "read_heightfield_pgm", "CLASS_COLORS", "GRID_CSV_COLUMNS",
]
