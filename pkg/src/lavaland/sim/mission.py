"""End-to-end pad -> lava -> pad missions in the synthetic world.

Flow: climb off the pad, fly straight to the survey point, hover while the
depth camera maps the flow, pick the closest large safe region, land on it
under the landing controller, climb again, fly back to a GPS-grade estimate
of the pad, search for the fiducial and land on it.

Every random draw comes from a stream keyed by (seed, label, counter), so a
mission is a pure function of its config and seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import control
from ..control import ControllerConfig, ControllerState, Phase, VelocityCommand
from ..fiducial import BehindCamera, DegenerateObservation, NoUpwardCandidate, disambiguate_gravity, \
    estimate_planar_pose, pad_relative_enu
from ..geom import (CameraIntrinsics, EnuVector, RigidTransform, attitude_from_angles, camera_rotation,
                    quat_from_axis_angle, quat_multiply, rot_z)
from ..terrain import DepthFrame, NoViableRegion, TerrainConfig, TerrainGrid, integrate_frame, process_grid, \
    select_landing_site
from .dynamics import DroneState, Wind, step_dynamics
from .markers import PAD_SIDE, project_markers
from .render import DepthNoise, render_depth
from .rng import stream
from .terrain_gen import Heightfield, TerrainSpec, generate_terrain

FAILURES = ("NoSiteFound", "Crash", "Timeout")


class MissionFailed(Exception):
    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.detail = detail


class NoSiteFound(MissionFailed):
    def __init__(self, detail=""):
        super().__init__("NoSiteFound", detail)


class Crash(MissionFailed):
    def __init__(self, detail=""):
        super().__init__("Crash", detail)


class Timeout(MissionFailed):
    def __init__(self, detail=""):
        super().__init__("Timeout", detail)


@dataclass(frozen=True)
class MissionConfig:
    terrain: TerrainSpec = TerrainSpec()
    pad: tuple = (6.0, 16.0)
    pad_apron_radius: float = 4.0
    survey_point: tuple = (34.0, 16.0)
    cruise_altitude: float = 10.0        # above the pad
    survey_altitude: float = 10.0        # above the ground under the survey point
    transit_speed: float = 3.0
    climb_rate: float = 1.0
    dt: float = 1.0 / 15.0
    survey_frames: int = 15
    grid_size: float = 24.0
    depth_camera: CameraIntrinsics = CameraIntrinsics.from_fov(96, 72, 87.0)
    depth_noise: DepthNoise = DepthNoise(sigma=0.005, dropout=0.02)
    map_attitude_noise_deg: float = 0.2
    marker_camera: CameraIntrinsics = CameraIntrinsics.from_fov(640, 480, 87.0)
    corner_noise_px: float = 0.5
    imu_noise_deg: float = 1.0
    return_offset_sigma: float = 2.0
    wind_sigma: float = 0.05
    phase_time_limit: float = 150.0
    mission_time_limit: float = 600.0
    terrain_cfg: TerrainConfig = TerrainConfig()
    controller: ControllerConfig = ControllerConfig()

    def __post_init__(self):
        for name in ("cruise_altitude", "survey_altitude", "transit_speed", "climb_rate", "grid_size",
                     "phase_time_limit", "mission_time_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.dt <= 0.1:
            raise ValueError("dt must be in (0, 0.1]")
        if self.survey_frames < 1:
            raise ValueError("survey_frames must be >= 1")
        for name in ("corner_noise_px", "imu_noise_deg", "map_attitude_noise_deg", "return_offset_sigma",
                     "wind_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        self.terrain.validate()

    def terrain_spec(self) -> TerrainSpec:
        """The terrain spec with the pad apron and plateau focus tied to this layout."""
        return replace(self.terrain, pad_apron=(self.pad[0], self.pad[1], self.pad_apron_radius),
                       focus=tuple(self.survey_point))


@dataclass
class MissionReport:
    seed: int
    success: bool = False
    failure: str | None = None
    failure_detail: str = ""
    phases: list = field(default_factory=list)
    frames_rendered: int = 0
    sites_considered: int = 0
    site: dict | None = None
    touchdowns: list = field(default_factory=list)
    marker_frames: int = 0
    marker_detections: int = 0
    marker_rejections: int = 0
    duration: float = 0.0

    def touchdown(self, kind: str) -> dict | None:
        return next((t for t in self.touchdowns if t["kind"] == kind), None)

    def to_dict(self) -> dict:
        return _rounded(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, np.generic):
        return _rounded(obj.item())
    return obj


def _noisy_attitude(att, sigma_deg: float, rng) -> np.ndarray:
    if sigma_deg == 0:
        return att
    axis = rng.standard_normal(3)
    angle = math.radians(sigma_deg) * rng.standard_normal()
    return quat_multiply(quat_from_axis_angle(axis, angle), att)


def _clamp_norm(v: np.ndarray, lim: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v if n <= lim else v * (lim / n)


class _Flight:
    """Mutable mission context: the world, the drone and the report."""

    def __init__(self, cfg: MissionConfig, seed: int, world: Heightfield, report: MissionReport, log=None):
        self.cfg = cfg
        self.seed = seed
        self.world = world
        self.report = report
        self.log = log
        self.t = 0.0
        self.k = 0
        ground = float(world.height_at(*cfg.pad))
        self.pad_ground = ground
        self.state = DroneState(position=(cfg.pad[0], cfg.pad[1], ground), on_ground=True)
        self.phase = None

    # -- plumbing ---------------------------------------------------------------
    def begin(self, name: str) -> None:
        self.phase = {"name": name, "start": self.t, "end": None}
        self.report.phases.append(self.phase)
        self.phase_start = self.t

    def end(self) -> None:
        self.phase["end"] = self.t

    def agl(self) -> float:
        p = self.state.position
        return max(0.0, float(p[2] - self.world.height_at(p[0], p[1])))

    def advance(self, cmd: VelocityCommand) -> None:
        cfg = self.cfg
        wind = Wind(cfg.wind_sigma, self.seed, self.k) if cfg.wind_sigma > 0 else None
        self.state = step_dynamics(self.state, cmd, cfg.dt, self.world.height_at, wind)
        self.k += 1
        self.t = self.k * cfg.dt
        if self.state.crashed:
            raise Crash(f"contact at {self.state.contact_speed:.2f} m/s during {self.phase['name']}")
        if self.t - self.phase_start > cfg.phase_time_limit or self.t > cfg.mission_time_limit:
            raise Timeout(f"during {self.phase['name']}")

    def camera_attitude(self) -> np.ndarray:
        return attitude_from_angles(self.state.gimbal_pitch, self.state.yaw)

    def camera_pose(self) -> RigidTransform:
        return RigidTransform.from_matrix(camera_rotation(self.camera_attitude()), self.state.position)

    # -- flight primitives -----------------------------------------------------------
    def fly_to(self, east: float, north: float, up: float, gimbal: float = -math.pi / 2) -> None:
        cfg = self.cfg
        target = np.array([east, north, up])
        while True:
            err = target - self.state.position
            v = self.state.velocity.to_array()
            if np.linalg.norm(err[:2]) < 0.2 and abs(err[2]) < 0.2 and np.linalg.norm(v) < 0.2:
                return
            horiz = _clamp_norm(0.8 * err[:2], cfg.transit_speed)
            vert = max(-cfg.climb_rate, min(cfg.climb_rate, 1.0 * err[2]))
            self.advance(VelocityCommand(EnuVector(horiz[0], horiz[1], vert), 0.0, gimbal))

    def hold(self, target: np.ndarray, gimbal: float = -math.pi / 2) -> None:
        err = target - self.state.position
        v = _clamp_norm(0.8 * err, 1.0)
        self.advance(VelocityCommand(EnuVector.from_array(v), 0.0, gimbal))

    def controlled_landing(self, target_fn, initial: Phase, on_leave_search=None) -> ControllerState:
        cfg = self.cfg
        cs = ControllerState.initial(initial, self.t)
        while cs.phase is not Phase.LANDED:
            target = target_fn()
            prev = cs.phase
            cmd, cs = control.step(cs, target, self.agl(), cfg.dt, cfg.controller)
            if self.log is not None:
                self.log.record(cs, target, cmd)
            if prev is Phase.SEARCH and cs.phase is not Phase.SEARCH and on_leave_search:
                on_leave_search()
            if cs.phase is Phase.ABORT:
                raise Timeout("controller aborted")
            self.advance(cmd)
        return cs

    def record_touchdown(self, kind: str, target_xy, extra: dict) -> None:
        p = self.state.position
        err = float(np.hypot(p[0] - target_xy[0], p[1] - target_xy[1]))
        self.report.touchdowns.append({
            "kind": kind, "time": self.t, "position": [float(x) for x in p],
            "target": [float(target_xy[0]), float(target_xy[1])], "error": err,
            "contact_speed": self.state.contact_speed, **extra,
        })


def run_mission(config: MissionConfig | None = None, seed: int = 0, log=None,
                world: Heightfield | None = None) -> MissionReport:
    """Fly one full mission; failures are recorded in the report, never raised."""
    cfg = config or MissionConfig()
    report = MissionReport(seed=int(seed))
    if world is None:
        world = generate_terrain(seed, cfg.terrain_spec())
    fl = _Flight(cfg, seed, world, report, log)
    try:
        _fly(fl)
        report.success = True
    except MissionFailed as exc:
        report.failure = exc.kind
        report.failure_detail = exc.detail
        if fl.phase is not None and fl.phase["end"] is None:
            fl.end()
    report.duration = fl.t
    return report


def _fly(fl: _Flight) -> None:
    cfg = fl.cfg
    world = fl.world
    cruise = fl.pad_ground + cfg.cruise_altitude
    layout = stream(fl.seed, "layout")
    pad_yaw = float(layout.uniform(-math.pi, math.pi))
    offset = cfg.return_offset_sigma * np.clip(layout.standard_normal(2), -2.0, 2.0)

    fl.begin("takeoff_pad")
    fl.fly_to(cfg.pad[0], cfg.pad[1], cruise)
    fl.end()

    fl.begin("transit_out")
    sx, sy = cfg.survey_point
    survey_up = float(world.height_at(sx, sy)) + cfg.survey_altitude
    fl.fly_to(sx, sy, max(cruise, survey_up))
    fl.fly_to(sx, sy, survey_up)
    fl.end()

    fl.begin("terrain_survey")
    grid = TerrainGrid.around((sx, sy), cfg.grid_size, cfg.terrain_cfg.cell_size)
    hover = fl.state.position.copy()
    for i in range(cfg.survey_frames):
        true_att = fl.camera_attitude()
        pose_true = fl.camera_pose()
        frame = render_depth(world, pose_true, cfg.depth_camera, cfg.depth_noise, fl.seed, fl.t, counter=i)
        est_att = _noisy_attitude(true_att, cfg.map_attitude_noise_deg, stream(fl.seed, "map_imu", i))
        frame = replace_attitude(frame, est_att)
        pose_est = RigidTransform.from_matrix(camera_rotation(est_att), pose_true.translation)
        grid = integrate_frame(grid, frame, pose_est)
        fl.report.frames_rendered += 1
        fl.hold(hover)
    grid, regions = process_grid(grid, cfg.terrain_cfg)
    fl.report.sites_considered = len(regions)
    fl.end()
    try:
        site = select_landing_site(regions, fl.state.position[:2])
    except NoViableRegion as exc:
        raise NoSiteFound(str(exc)) from exc
    fl.report.site = site.to_dict()
    site_xy = np.asarray(site.position[:2], dtype=float)
    site_up = float(world.height_at(*site_xy))

    fl.begin("terrain_landing")

    def site_target():
        p = fl.state.position
        return EnuVector(site_xy[0] - p[0], site_xy[1] - p[1], site_up - p[2])

    fl.controlled_landing(site_target, Phase.APPROACH)
    p = fl.state.position
    fl.record_touchdown("lava", site_xy, {"ground_truth": world.feature_at(p[0], p[1])})
    fl.end()

    fl.begin("takeoff_lava")
    fl.fly_to(p[0], p[1], max(cruise, float(p[2]) + cfg.cruise_altitude))
    fl.end()

    fl.begin("transit_back")
    fl.fly_to(cfg.pad[0] + offset[0], cfg.pad[1] + offset[1], cruise)
    fl.end()

    pad_pose = RigidTransform.from_matrix(rot_z(pad_yaw), [cfg.pad[0], cfg.pad[1], fl.pad_ground])
    fl.begin("pad_search")
    counter = [0]

    def pad_target():
        i = counter[0]
        counter[0] += 1
        fl.report.marker_frames += 1
        obs = project_markers(pad_pose, fl.camera_pose(), cfg.marker_camera, cfg.corner_noise_px, fl.seed,
                              side_length=PAD_SIDE, timestamp=fl.t, counter=i)
        if obs is None:
            return None
        att = _noisy_attitude(fl.camera_attitude(), cfg.imu_noise_deg, stream(fl.seed, "imu", i))
        try:
            cands = estimate_planar_pose(obs, cfg.marker_camera)
            pose = disambiguate_gravity(cands, att)
        except (NoUpwardCandidate, DegenerateObservation, BehindCamera):
            fl.report.marker_rejections += 1
            return None
        fl.report.marker_detections += 1
        return pad_relative_enu(pose, att)

    def found():
        if fl.phase["name"] != "pad_search":
            return
        fl.end()
        fl.begin("pad_landing")

    fl.controlled_landing(pad_target, Phase.SEARCH, on_leave_search=found)
    fl.record_touchdown("pad", cfg.pad, {"ground_truth": "pad"})
    fl.end()


def replace_attitude(frame, attitude):
    """Same pixels, different reported attitude (what the IMU believed)."""
    return DepthFrame(frame.depths, frame.intrinsics, attitude, frame.timestamp)
