import csv
import json
import math

import numpy as np
import pytest

from lavaland import terrain_io
from lavaland.cli import SUMMARY_COLUMNS, main
from lavaland.fiducial import CSV_COLUMNS
from lavaland.geom import CameraIntrinsics, attitude_from_angles
from lavaland.terrain import DepthFrame

PLATEAU_ONLY = ["--set", "terrain.plateaus=1,1", "--set", "terrain.cracks=0,0", "--set", "terrain.boulders=0,0",
                "--set", "terrain.rough_patches=0,0"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def plateau_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("render")
    assert main(["render-terrain", "--seed", "3", "--frames", "6", "--run-dir", str(d)] + PLATEAU_ONLY) == 0
    return d


def test_render_terrain_outputs(plateau_run):
    assert (plateau_run / "heightfield.pgm").exists()
    feats = json.loads((plateau_run / "features.json").read_text())["features"]
    assert [f["kind"] for f in feats] == ["plateau"]
    assert len(terrain_io.list_frames(plateau_run / "depth")) == 6


def test_site_select_lands_on_plateau(plateau_run, tmp_path, capsys):
    out = tmp_path / "sel"
    code = main(["site-select", str(plateau_run / "depth"), "--run-dir", str(out)])
    assert code == 0
    site = json.loads((out / "site.json").read_text())["site"]
    plateau = json.loads((plateau_run / "features.json").read_text())["features"][0]
    d = math.hypot(site["east"] - plateau["center"][0], site["north"] - plateau["center"][1])
    assert d < plateau["radius"]
    assert (out / "class_map.ppm").read_bytes().startswith(b"P6")
    rows = read_csv(out / "grid.csv")
    assert list(rows[0]) == terrain_io.GRID_CSV_COLUMNS
    assert "site east=" in capsys.readouterr().out


def test_site_select_is_deterministic(plateau_run, tmp_path):
    for name in ("a", "b"):
        assert main(["site-select", str(plateau_run / "depth"), "--run-dir", str(tmp_path / name)]) == 0
    for f in ("site.json", "grid.csv", "class_map.ppm"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def _undefined_dir(tmp_path):
    d = tmp_path / "blank"
    d.mkdir()
    intr = CameraIntrinsics.from_fov(32, 24, 87.0)
    for i in range(2):
        frame = DepthFrame(np.zeros((24, 32)), intr, attitude_from_angles(-1.5))
        terrain_io.write_depth_frame(d / f"f{i}", frame, position=(0.0, 0.0, 3.0))
    return d


def test_site_select_all_undefined_exit_2(tmp_path):
    out = tmp_path / "o"
    assert main(["site-select", str(_undefined_dir(tmp_path)), "--run-dir", str(out)]) == 2
    assert json.loads((out / "site.json").read_text())["site"] is None
    # an explicit grid does not change the verdict
    assert main(["site-select", str(tmp_path / "blank"), "--run-dir", str(tmp_path / "o2"),
                 "--set", "center=0,0", "--set", "size=5"]) == 2


def test_site_select_truncated_pgm_exit_1(plateau_run, tmp_path, capsys):
    d = tmp_path / "frames"
    d.mkdir()
    src = terrain_io.list_frames(plateau_run / "depth")[0]
    (d / "bad.pgm").write_bytes(src.read_bytes()[:-100])
    (d / "bad.txt").write_text(src.with_suffix(".txt").read_text())
    assert main(["site-select", str(d), "--run-dir", str(tmp_path / "o")]) == 1
    assert "bad.pgm" in capsys.readouterr().err


def test_site_select_input_errors(plateau_run, tmp_path, capsys):
    assert main(["site-select", str(tmp_path / "missing"), "--run-dir", str(tmp_path / "o")]) == 1
    assert main(["site-select", str(plateau_run / "depth"), "--run-dir", str(tmp_path / "o"),
                 "--set", "bogus=1"]) == 1
    assert "unknown key bogus" in capsys.readouterr().err
    assert main(["site-select", str(plateau_run / "depth"), "--run-dir", str(tmp_path / "o"),
                 "--set", "window=4"]) == 1


def test_ambiguity_eval_noiseless(tmp_path):
    out = tmp_path / "amb"
    assert main(["ambiguity-eval", "--frames", "200", "--noise-px", "0", "--attitude-error", "0",
                 "--run-dir", str(out)]) == 0
    rows = read_csv(out / "ambiguity.csv")
    assert {r["strategy"] for r in rows} == {"reprojection", "gravity"}
    assert all(float(r["wrong_choice_rate"]) == 0.0 for r in rows)


def test_ambiguity_eval_noisy_ordering(tmp_path):
    out = tmp_path / "amb"
    assert main(["ambiguity-eval", "--frames", "1500", "--seed", "7", "--run-dir", str(out)]) == 0
    rates = {r["strategy"]: float(r["wrong_choice_rate"]) for r in read_csv(out / "ambiguity.csv")}
    assert rates["gravity"] <= rates["reprojection"]


def test_ambiguity_eval_bad_inputs(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(CSV_COLUMNS) + "\n")
    assert main(["ambiguity-eval", "--dataset", str(empty), "--run-dir", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join(CSV_COLUMNS) + "\n1,2,3\n")
    assert main(["ambiguity-eval", "--dataset", str(bad), "--run-dir", str(tmp_path / "o")]) == 1
    assert main(["ambiguity-eval", "--strategies", "coinflip", "--run-dir", str(tmp_path / "o")]) == 1
    assert main(["ambiguity-eval", "--frames", "0", "--run-dir", str(tmp_path / "o")]) == 1


def test_mission_single_run(tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["mission", "--seed", "101", "--run-dir", str(out)]) == 0
    rep = json.loads((out / "report-101.json").read_text())
    assert rep["success"] is True
    rows = read_csv(out / "summary.csv")
    assert list(rows[0]) == SUMMARY_COLUMNS and rows[0]["success"] == "1"
    assert "rate=1.000" in capsys.readouterr().out


def test_mission_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["mission", "--seed", "5", "--repeat", "2", "--run-dir", str(tmp_path / name)]) == 0
    for f in ("report-5.json", "report-6.json", "summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_mission_config_errors(tmp_path, capsys):
    assert main(["mission", "--set", "controller.v_fast=0.1", "--run-dir", str(tmp_path / "o")]) == 1
    assert "v_fast" in capsys.readouterr().err
    assert main(["mission", "--set", "warp.speed=9", "--run-dir", str(tmp_path / "o")]) == 1
    assert main(["mission", "--repeat", "0", "--run-dir", str(tmp_path / "o")]) == 1
    cfg = tmp_path / "m.cfg"
    cfg.write_text("# comment\ncontroller.v_fast = 0.2\n")
    assert main(["mission", "--config", str(cfg), "--run-dir", str(tmp_path / "o")]) == 1
    cfg.write_text("no equals sign\n")
    assert main(["mission", "--config", str(cfg), "--run-dir", str(tmp_path / "o")]) == 1


def test_bench_tables(tmp_path):
    out = tmp_path / "b0"
    assert main(["bench", "--iterations", "0", "--run-dir", str(out)]) == 0
    assert read_csv(out / "bench.csv") == []
    out = tmp_path / "b2"
    assert main(["bench", "--iterations", "2", "--width", "160", "--height", "120", "--run-dir", str(out)]) == 0
    rows = read_csv(out / "bench.csv")
    assert [r["stage"] for r in rows] == ["integrate", "classify", "dilate", "extract", "select"]
    summary = json.loads((out / "bench_summary.json").read_text())
    assert summary["iterations"] == 2 and isinstance(summary["pass"], bool)
    assert main(["bench", "--iterations", "-1", "--run-dir", str(out)]) == 1


def test_default_run_directory_naming(tmp_path):
    assert main(["bench", "--iterations", "0", "--seed", "4", "--out", str(tmp_path)]) == 0
    made = list(tmp_path.iterdir())
    assert len(made) == 1 and made[0].name.startswith("bench-seed4-")
