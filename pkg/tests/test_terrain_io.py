import csv
import math

import numpy as np
import pytest

from lavaland.geom import CameraIntrinsics, attitude_from_angles
from lavaland.terrain import CellClass, DepthFrame, TerrainGrid
from lavaland.terrain_io import (CLASS_COLORS, GRID_CSV_COLUMNS, FormatError, class_image, list_frames,
                                 read_depth_frame, read_heightfield_pgm, read_pgm16, read_sidecar,
                                 write_class_ppm, write_depth_frame, write_grid_csv, write_heightfield_pgm,
                                 write_pgm16)

INTR = CameraIntrinsics.from_fov(16, 12, 80.0)
ATT = attitude_from_angles(-1.2, 0.4)


def _frame():
    d = np.random.default_rng(0).uniform(0.5, 12.0, (12, 16))
    d[3, 4] = 0.0
    return DepthFrame(d, INTR, ATT, timestamp=2.5)


def test_pgm_round_trip(tmp_path):
    a = np.random.default_rng(1).integers(0, 65536, (7, 5)).astype(np.uint16)
    write_pgm16(tmp_path / "a.pgm", a)
    assert np.array_equal(read_pgm16(tmp_path / "a.pgm"), a)
    # big-endian on disk
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.endswith(a.astype(">u2").tobytes())


def test_pgm_with_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n65535\n" + np.array([1, 258], ">u2").tobytes())
    assert read_pgm16(p).tolist() == [[1, 258]]


def test_truncated_pgm_names_file(tmp_path):
    p = tmp_path / "short.pgm"
    write_pgm16(p, np.ones((4, 4), np.uint16))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(FormatError, match="short.pgm"):
        read_pgm16(p)
    q = tmp_path / "bad.pgm"
    q.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(FormatError, match="bad.pgm"):
        read_pgm16(q)


def test_depth_frame_round_trip(tmp_path):
    frame = _frame()
    write_depth_frame(tmp_path / "f0", frame, position=(1.0, 2.0, 3.0))
    back, pose = read_depth_frame(tmp_path / "f0.pgm")
    assert np.allclose(back.depths, frame.depths, atol=5e-4)
    assert back.depths[3, 4] == 0.0
    assert np.allclose(back.attitude, ATT)
    assert back.timestamp == 2.5 and back.intrinsics == INTR
    assert np.allclose(pose.translation, (1, 2, 3))
    assert list_frames(tmp_path) == [tmp_path / "f0.pgm"]


def test_sidecar_errors(tmp_path):
    write_depth_frame(tmp_path / "f", _frame())
    txt = tmp_path / "f.txt"
    good = txt.read_text()
    txt.write_text(good + "exposure=3\n")
    with pytest.raises(FormatError, match="unknown key 'exposure'"):
        read_sidecar(txt)
    txt.write_text("\n".join(line for line in good.splitlines() if not line.startswith("qw")))
    with pytest.raises(FormatError, match="missing keys qw"):
        read_sidecar(txt)
    txt.write_text(good.replace("timestamp=2.5", "timestamp=soon"))
    with pytest.raises(FormatError, match="timestamp is not a number"):
        read_sidecar(txt)
    txt.write_text("# comment only\n" + good)
    assert read_sidecar(txt)["timestamp"] == 2.5


def test_size_mismatch(tmp_path):
    write_depth_frame(tmp_path / "f", _frame())
    write_pgm16(tmp_path / "f.pgm", np.ones((3, 3), np.uint16))
    with pytest.raises(FormatError, match="f.pgm"):
        read_depth_frame(tmp_path / "f.pgm")


def _grid():
    g = TerrainGrid.empty((10.0, 20.0), (2, 3), 0.5)
    g.cls = np.array([[1, 2, 3], [4, 5, 0]], np.uint8)
    g.count[0, :] = 4
    g.mean[0, :] = [0.1, 0.2, 0.3]
    g.hmin[0, :] = 0.0
    g.hmax[0, :] = 0.5
    g.miss[1, :] = 2
    return g


def test_class_image_is_north_up(tmp_path):
    g = _grid()
    img = class_image(g)
    assert tuple(img[1, 0]) == CLASS_COLORS[CellClass.SAFE]       # grid row 0 is the bottom image row
    assert tuple(img[0, 0]) == CLASS_COLORS[CellClass.OBSTACLE]
    assert len({tuple(c) for c in CLASS_COLORS.values()}) == len(CellClass)
    write_class_ppm(tmp_path / "m.ppm", g)
    raw = (tmp_path / "m.ppm").read_bytes()
    assert raw.startswith(b"P6\n3 2\n255\n") and raw.endswith(img.tobytes())


def test_grid_csv(tmp_path):
    write_grid_csv(tmp_path / "g.csv", _grid())
    with open(tmp_path / "g.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == GRID_CSV_COLUMNS
    assert len(rows) == 7
    first = dict(zip(rows[0], rows[1]))
    assert math.isclose(float(first["east"]), 10.25) and math.isclose(float(first["north"]), 20.25)
    assert first["class"] == "SAFE" and first["sample_count"] == "4"
    last = dict(zip(rows[0], rows[-1]))
    assert last["height_mean"] == "" and last["miss_count"] == "2" and last["class"] == "UNKNOWN"


def test_heightfield_round_trip(tmp_path):
    h = np.random.default_rng(2).uniform(-1.5, 2.0, (9, 13))
    write_heightfield_pgm(tmp_path / "hf", h, 0.1, origin=(1.0, -2.0))
    back, meta = read_heightfield_pgm(tmp_path / "hf.pgm")
    assert np.allclose(back, h, atol=5e-4)
    assert meta["resolution"] == 0.1 and meta["origin_north"] == -2.0
