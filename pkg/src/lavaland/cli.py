"""Command-line entry point: ``lavaland <command> [options]``.

Exit codes: 0 success, 1 input or configuration error, 2 no result
(e.g. no viable landing region).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fiducial, terrain_io
from .control import ControllerConfig, InvalidConfig
from .geom import CameraIntrinsics, RigidTransform, attitude_from_angles, camera_rotation
from .terrain import (DepthFrame, NoViableRegion, TerrainConfig, TerrainGrid, classify_cells, dilate_hazards,
                      extract_safe_regions, fill_transient_holes, frame_points, integrate_frame, process_grid,
                      select_landing_site)

EXIT_OK, EXIT_INPUT, EXIT_NO_RESULT = 0, 1, 2
BENCH_STAGES = ("integrate", "classify", "dilate", "extract", "select")
BENCH_BUDGET_MS = 66.0


class ConfigError(ValueError):
    pass


# -- config files -----------------------------------------------------------------

def read_kv(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_settings(config_path, sets) -> dict:
    kv = read_kv(config_path) if config_path else {}
    kv.update(_overrides(sets))
    return kv


def _coerce(text: str, default, key: str):
    try:
        if default is None or isinstance(default, float) and text.lower() == "none":
            if text.lower() == "none":
                return None
            return float(text)
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if default and len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            return tuple(type(d)(float(p)) if isinstance(d, int) else float(p)
                         for p, d in zip(parts, default or [0.0] * len(parts)))
        if isinstance(default, str):
            return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from exc
    raise ConfigError(f"{key}: not configurable")


def _apply(obj, values: dict, prefix: str = ""):
    """New dataclass with fields replaced from ``values`` (strings), validating names."""
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for k, v in values.items():
        if k not in fields:
            raise ConfigError(f"unknown key {prefix}{k}")
        changes[k] = _coerce(v, getattr(obj, k), prefix + k)
    try:
        return dataclasses.replace(obj, **changes)
    except InvalidConfig as exc:
        raise ConfigError(str(exc)) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


# mission config sections: key prefix -> MissionConfig field
MISSION_SECTIONS = ("controller", "terrain", "map", "depth_noise")


def mission_config(settings: dict):
    from .sim.mission import MissionConfig
    from .sim.render import DepthNoise
    from .sim.terrain_gen import InvalidSpec, TerrainSpec

    groups = {s: {} for s in MISSION_SECTIONS}
    top = {}
    for k, v in settings.items():
        if "." in k:
            sec, name = k.split(".", 1)
            if sec not in groups:
                raise ConfigError(f"unknown key {k}")
            groups[sec][name] = v
        else:
            top[k] = v
    base = MissionConfig()
    for k in top:
        if k in ("terrain", "controller", "terrain_cfg", "depth_noise", "depth_camera", "marker_camera"):
            raise ConfigError(f"unknown key {k}")
    try:
        controller = _apply(ControllerConfig(), groups["controller"], "controller.")
        spec = _apply(TerrainSpec(), groups["terrain"], "terrain.")
        spec.validate()
        tcfg = _apply(TerrainConfig(), groups["map"], "map.")
        noise = _apply(DepthNoise(), groups["depth_noise"], "depth_noise.")
        cfg = dataclasses.replace(base, controller=controller, terrain=spec, terrain_cfg=tcfg, depth_noise=noise)
        return _apply(cfg, top)
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from exc


# -- run directories ----------------------------------------------------------------

def run_dir(args, command: str, seed) -> Path:
    if getattr(args, "run_dir", None):
        path = Path(args.run_dir)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
        tag = f"seed{seed}" if seed is not None else "noseed"
        path = Path(args.out) / f"{command}-{tag}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# -- site-select -------------------------------------------------------------------

SITE_KEYS = ("center", "size", "drone")


def cmd_site_select(args) -> int:
    try:
        settings = load_settings(args.config, args.set)
        grid_keys = {k: settings.pop(k) for k in SITE_KEYS if k in settings}
        tcfg = _apply(TerrainConfig(), settings)
    except ConfigError as exc:
        return _err(str(exc))
    depth_dir = Path(args.depth_dir)
    paths = terrain_io.list_frames(depth_dir) if depth_dir.is_dir() else []
    if not paths:
        return _err(f"{depth_dir}: no depth frames (*.pgm) found")
    frames = []
    for p in paths:
        try:
            frames.append(terrain_io.read_depth_frame(p))
        except terrain_io.FormatError as exc:
            return _err(str(exc))
        except ValueError as exc:
            return _err(f"{p}: {exc}")

    try:
        if "center" in grid_keys or "size" in grid_keys:
            center = _coerce(grid_keys.get("center", "0,0"), (0.0, 0.0), "center")
            size = _coerce(grid_keys.get("size", "20"), 0.0, "size")
            grid = TerrainGrid.around(center, size, tcfg.cell_size)
        else:
            grid = _grid_for(frames, tcfg.cell_size)
        drone = frames[-1][1].translation[:2]
        if "drone" in grid_keys:
            drone = np.asarray(_coerce(grid_keys["drone"], (0.0, 0.0), "drone"))
    except ConfigError as exc:
        return _err(str(exc))

    out = run_dir(args, "site-select", args.seed)
    if grid is None:
        _write_json(out / "site.json", {"site": None, "reason": "no defined depth in any frame"})
        print("no viable region: every frame is undefined")
        return EXIT_NO_RESULT
    for i, (frame, pose) in enumerate(frames):
        try:
            grid = integrate_frame(grid, frame, pose)
        except ValueError as exc:
            return _err(f"{paths[i]}: {exc}")
    grid, regions = process_grid(grid, tcfg)
    terrain_io.write_class_ppm(out / "class_map.ppm", grid)
    terrain_io.write_grid_csv(out / "grid.csv", grid)
    try:
        site = select_landing_site(regions, drone)
    except NoViableRegion as exc:
        _write_json(out / "site.json", {"site": None, "reason": str(exc), "regions": 0})
        print(f"no viable region ({len(paths)} frames): {exc}")
        return EXIT_NO_RESULT
    _write_json(out / "site.json", {"site": _round(site.to_dict()), "regions": len(regions)})
    print(f"site east={site.position[0]:.3f} north={site.position[1]:.3f} up={site.position[2]:.3f} "
          f"area={site.region_area:.2f} m2 ({len(regions)} regions, {len(paths)} frames) -> {out}")
    return EXIT_OK


def _round(d: dict) -> dict:
    return {k: round(v, 6) if isinstance(v, float) else v for k, v in d.items()}


def _grid_for(frames, cell_size: float):
    """Grid covering every defined return, padded by one window; None if nothing is defined."""
    pts = [frame_points(f, pose)[:, :2] for f, pose in frames]
    pts = [p for p in pts if len(p)]
    if not pts:
        return None
    allp = np.concatenate(pts)
    lo = np.floor(allp.min(axis=0) / cell_size) * cell_size - 2 * cell_size
    hi = np.ceil(allp.max(axis=0) / cell_size) * cell_size + 2 * cell_size
    shape = tuple(int(x) for x in np.round((hi - lo)[::-1] / cell_size))
    return TerrainGrid.empty(lo, shape, cell_size)


# -- ambiguity-eval ------------------------------------------------------------------

def cmd_ambiguity_eval(args) -> int:
    strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    bad = [s for s in strategies if s not in fiducial.STRATEGIES]
    if bad or not strategies:
        return _err(f"unknown strategies {bad or strategies}; choose from {', '.join(fiducial.STRATEGIES)}")
    if args.dataset:
        try:
            frames = fiducial.read_dataset_csv(args.dataset)
        except (fiducial.DatasetFormatError, fiducial.EmptyDataset, OSError) as exc:
            return _err(str(exc))
        if not frames:
            return _err(f"{args.dataset}: empty dataset")
        if "bundle" in strategies and any(f.bundle_positions is None for f in frames):
            return _err(f"{args.dataset}: bundle strategy needs multi-marker positions")
    else:
        if args.frames <= 0:
            return _err("--frames must be positive")
        frames = fiducial.synthesize_dataset(
            args.frames, args.seed, noise_px=args.noise_px, max_tilt_deg=args.max_tilt,
            side_length=args.side_length, attitude_error_deg=args.attitude_error,
            bundle="bundle" in strategies)
    try:
        report = fiducial.evaluate_ambiguity(frames, strategies)
    except fiducial.EmptyDataset as exc:
        return _err(str(exc))
    out = run_dir(args, "ambiguity-eval", None if args.dataset else args.seed)
    rows = report.rows()
    with open(out / "ambiguity.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"{'strategy':<14}{'frames':>8}{'wrong':>8}{'rejected':>10}{'rate':>10}")
    for r in rows:
        print(f"{r['strategy']:<14}{r['total_frames']:>8}{r['wrong_choice_frames']:>8}{r['rejected_frames']:>10}"
              f"{r['wrong_choice_rate']:>10.4f}")
    print(f"-> {out / 'ambiguity.csv'}")
    return EXIT_OK


# -- mission ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ["seed", "success", "failure", "pad_error", "lava_error", "lava_ground_truth",
                   "sites_considered", "frames_rendered", "duration"]


def _mission_job(job):
    cfg, seed = job
    from .sim.mission import run_mission
    return run_mission(cfg, seed)


def cmd_mission(args) -> int:
    try:
        cfg = mission_config(load_settings(args.config, args.set))
    except ConfigError as exc:
        return _err(str(exc))
    if args.repeat < 1 or args.jobs < 1:
        return _err("--repeat and --jobs must be >= 1")
    seeds = [args.seed + i for i in range(args.repeat)]
    jobs = [(cfg, s) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reports = list(ex.map(_mission_job, jobs))
    else:
        reports = [_mission_job(j) for j in jobs]
    out = run_dir(args, "mission", args.seed)
    rows = []
    for rep in reports:
        (out / f"report-{rep.seed}.json").write_text(rep.to_json())
        pad, lava = rep.touchdown("pad"), rep.touchdown("lava")
        rows.append({
            "seed": rep.seed, "success": int(rep.success), "failure": rep.failure or "",
            "pad_error": f"{pad['error']:.4f}" if pad else "",
            "lava_error": f"{lava['error']:.4f}" if lava else "",
            "lava_ground_truth": lava["ground_truth"] if lava else "",
            "sites_considered": rep.sites_considered, "frames_rendered": rep.frames_rendered,
            "duration": f"{rep.duration:.4f}",
        })
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    n_ok = sum(r.success for r in reports)
    pad_err = [r.touchdown("pad")["error"] for r in reports if r.success]
    print(f"missions={len(reports)} success={n_ok} rate={n_ok / len(reports):.3f}"
          + (f" pad_error_max={max(pad_err):.3f} m" if pad_err else "") + f" -> {out}")
    return EXIT_OK


# -- bench ------------------------------------------------------------------------------

def bench_frames(width: int, height: int, count: int, seed: int):
    """A rendered survey frame over generated terrain, re-noised ``count`` times."""
    from .sim.render import DepthNoise, render_depth
    from .sim.rng import stream
    from .sim.terrain_gen import generate_terrain

    world = generate_terrain(seed)
    intr = CameraIntrinsics.from_fov(width, height, 87.0)
    att = attitude_from_angles(-np.pi / 2)
    pose = RigidTransform.from_matrix(camera_rotation(att), [34.0, 16.0, float(world.height_at(34.0, 16.0)) + 10.0])
    clean = render_depth(world, pose, intr, DepthNoise(0.0, 0.0))
    frames = []
    for i in range(count):
        rng = stream(seed, "bench", i)
        d = clean.depths * (1.0 + 0.005 * rng.standard_normal(clean.depths.shape))
        d[(rng.random(d.shape) < 0.02) | (clean.depths == 0) | (d <= 0.1) | (d >= 20.0)] = 0.0
        frames.append((DepthFrame(d, intr, att, i / 15.0), pose))
    return frames


def run_bench(frames, tcfg: TerrainConfig = TerrainConfig(), grid_size: float = 24.0):
    """Per-frame stage latencies in ms, shape (len(frames), 5)."""
    if not frames:
        return np.zeros((0, len(BENCH_STAGES)))
    center = frames[0][1].translation[:2]
    grid = TerrainGrid.around(center, grid_size, tcfg.cell_size)
    times = []
    for frame, pose in frames:
        t0 = time.perf_counter()
        grid = integrate_frame(grid, frame, pose)
        t1 = time.perf_counter()
        g = fill_transient_holes(grid, tcfg.k_min_samples, tcfg.persistence_ratio)
        g = classify_cells(g, tcfg.slope_max, tcfg.roughness_max, tcfg.obstacle_height, tcfg.window)
        t2 = time.perf_counter()
        g = dilate_hazards(g, tcfg.dilation_radius)
        t3 = time.perf_counter()
        regions = extract_safe_regions(g, tcfg.min_area)
        t4 = time.perf_counter()
        try:
            select_landing_site(regions, center)
        except NoViableRegion:
            pass
        t5 = time.perf_counter()
        times.append(np.diff([t0, t1, t2, t3, t4, t5]) * 1000.0)
    return np.array(times)


def bench_table(times: np.ndarray) -> list[dict]:
    if len(times) == 0:
        return []
    return [{"stage": s, "median_ms": float(np.median(times[:, i])), "p95_ms": float(np.percentile(times[:, i], 95))}
            for i, s in enumerate(BENCH_STAGES)]


def cmd_bench(args) -> int:
    if args.iterations < 0:
        return _err("--iterations must be >= 0")
    frames = bench_frames(args.width, args.height, args.iterations, args.seed) if args.iterations else []
    times = run_bench(frames)
    rows = bench_table(times)
    out = run_dir(args, "bench", args.seed)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["stage", "median_ms", "p95_ms"])
        w.writeheader()
        for r in rows:
            w.writerow({k: f"{v:.3f}" if isinstance(v, float) else v for k, v in r.items()})
    print(f"{'stage':<10}{'median_ms':>11}{'p95_ms':>10}")
    for r in rows:
        print(f"{r['stage']:<10}{r['median_ms']:>11.2f}{r['p95_ms']:>10.2f}")
    if len(times):
        total = float(np.median(times.sum(axis=1)))
        verdict = "PASS" if total <= BENCH_BUDGET_MS else "FAIL"
        summary = {"frame_width": args.width, "frame_height": args.height, "iterations": args.iterations,
                   "total_median_ms": round(total, 3), "budget_ms": BENCH_BUDGET_MS, "pass": total <= BENCH_BUDGET_MS}
        _write_json(out / "bench_summary.json", summary)
        print(f"total median {total:.2f} ms per {args.width}x{args.height} frame "
              f"(budget {BENCH_BUDGET_MS:.0f} ms): {verdict}")
    return EXIT_OK


# -- render-terrain ---------------------------------------------------------------------

def cmd_render_terrain(args) -> int:
    from .sim.render import render_depth
    from .sim.terrain_gen import generate_terrain

    try:
        cfg = mission_config(load_settings(args.config, args.set))
    except ConfigError as exc:
        return _err(str(exc))
    if args.frames < 0:
        return _err("--frames must be >= 0")
    world = generate_terrain(args.seed, cfg.terrain_spec())
    out = run_dir(args, "render-terrain", args.seed)
    terrain_io.write_heightfield_pgm(out / "heightfield", world.heights, world.resolution, world.origin)
    _write_json(out / "features.json", {"features": [f.to_dict() for f in world.features],
                                        "resolution": world.resolution, "origin": list(world.origin)})
    if args.frames:
        depth_dir = out / "depth"
        depth_dir.mkdir(exist_ok=True)
        sx, sy = cfg.survey_point
        up = float(world.height_at(sx, sy)) + cfg.survey_altitude
        att = attitude_from_angles(-np.pi / 2)
        for i in range(args.frames):
            a = 2 * np.pi * i / args.frames
            pos = [sx + 0.3 * np.cos(a), sy + 0.3 * np.sin(a), up]
            pose = RigidTransform.from_matrix(camera_rotation(att), pos)
            frame = render_depth(world, pose, cfg.depth_camera, cfg.depth_noise, args.seed, i / 15.0, counter=i)
            terrain_io.write_depth_frame(depth_dir / f"frame_{i:04d}", frame, pos)
    print(f"terrain seed {args.seed}: {len(world.features)} features, {args.frames} frames -> {out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lavaland", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default, help="master seed")
        sp.add_argument("--out", default="runs", help="parent directory for per-run output (default: runs)")
        sp.add_argument("--run-dir", help="exact output directory (overrides --out naming)")

    def config(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    sp = sub.add_parser("site-select", help="map a directory of depth frames and pick a landing site")
    sp.add_argument("depth_dir", help="directory of <stem>.pgm + <stem>.txt frame pairs")
    common(sp)
    config(sp)
    sp.set_defaults(func=cmd_site_select)

    sp = sub.add_parser("ambiguity-eval", help="wrong-choice rates of the pose disambiguation strategies")
    sp.add_argument("--dataset", help="fixture CSV (otherwise a dataset is synthesised)")
    sp.add_argument("--strategies", default="reprojection,gravity", help="comma list: reprojection,gravity,bundle")
    sp.add_argument("--frames", type=int, default=2000)
    sp.add_argument("--noise-px", type=float, default=0.5)
    sp.add_argument("--max-tilt", type=float, default=15.0, help="pad tilt bound, degrees")
    sp.add_argument("--side-length", type=float, default=0.5)
    sp.add_argument("--attitude-error", type=float, default=2.0, help="IMU attitude error bound, degrees")
    common(sp)
    sp.set_defaults(func=cmd_ambiguity_eval)

    sp = sub.add_parser("mission", help="run seeded pad -> lava -> pad missions")
    sp.add_argument("--repeat", type=int, default=1, help="number of missions (seeds seed..seed+N-1)")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(sp)
    config(sp)
    sp.set_defaults(func=cmd_mission)

    sp = sub.add_parser("bench", help="per-stage terrain pipeline latency")
    sp.add_argument("--width", type=int, default=640)
    sp.add_argument("--height", type=int, default=480)
    sp.add_argument("--iterations", type=int, default=30)
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("render-terrain", help="generate a terrain, export it and optionally render depth frames")
    sp.add_argument("--frames", type=int, default=0, help="survey depth frames to render")
    common(sp)
    config(sp)
    sp.set_defaults(func=cmd_render_terrain)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
