"""Landing state machine emitting ENU velocity setpoints.

The controller does not care where its target comes from: it receives the
target's offset from the drone in ENU metres (a fused marker estimate or a
selected terrain site) or ``None`` when nothing was seen this step.

Phases::

    Search -> Approach <-> Descend -> FinalDescent -> TouchdownConfirm -> Landed
    Approach/Descend -> Search     (target lost for longer than t_lost)
    TouchdownConfirm -> FinalDescent (bounced back up)
    any -> Abort
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import asdict, dataclass, replace

from .geom import EnuVector


class InvalidConfig(ValueError):
    pass


class IllegalTransition(RuntimeError):
    """Internal consistency violation; never part of normal flow."""


class Phase(enum.Enum):
    SEARCH = "Search"
    APPROACH = "Approach"
    DESCEND = "Descend"
    FINAL_DESCENT = "FinalDescent"
    TOUCHDOWN_CONFIRM = "TouchdownConfirm"
    LANDED = "Landed"
    ABORT = "Abort"


_ALLOWED = {
    Phase.SEARCH: {Phase.APPROACH},
    Phase.APPROACH: {Phase.DESCEND, Phase.SEARCH},
    Phase.DESCEND: {Phase.APPROACH, Phase.FINAL_DESCENT, Phase.SEARCH},
    Phase.FINAL_DESCENT: {Phase.TOUCHDOWN_CONFIRM},
    Phase.TOUCHDOWN_CONFIRM: {Phase.LANDED, Phase.FINAL_DESCENT},
    Phase.LANDED: set(),
    Phase.ABORT: set(),
}


@dataclass(frozen=True)
class ControllerConfig:
    k_p: float = 0.5
    clamp_horizontal: float = 1.0
    clamp_vertical: float = 0.6
    v_slow: float = 0.3
    v_fast: float = 0.6
    h_handoff: float = 1.5
    h_touch: float = 0.1
    r_capture: float = 0.3
    r_release: float = 0.8
    t_confirm: float = 1.0
    t_lost: float = 2.0
    final_gain_scale: float = 0.5
    climb_rate_eps: float = 0.05
    search_yaw_rate: float = 0.6
    gimbal_min: float = -math.pi / 2
    gimbal_max: float = -math.pi / 12
    gimbal_period: float = 12.0

    def __post_init__(self):
        validate_config(self)


def validate_config(cfg: ControllerConfig) -> None:
    positive = ("k_p", "clamp_horizontal", "clamp_vertical", "v_slow", "v_fast", "h_handoff",
                "r_capture", "r_release", "t_confirm", "t_lost", "gimbal_period")
    for name in positive:
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise InvalidConfig(f"{name} must be a positive number, got {v!r}")
    for name in ("h_touch", "climb_rate_eps", "search_yaw_rate", "final_gain_scale"):
        if not getattr(cfg, name) >= 0:
            raise InvalidConfig(f"{name} must be non-negative")
    if cfg.v_fast <= cfg.v_slow:
        raise InvalidConfig("v_fast must exceed v_slow (faster late-stage descent)")
    if cfg.v_fast > cfg.clamp_vertical:
        raise InvalidConfig("v_fast exceeds the vertical clamp")
    if cfg.h_touch >= cfg.h_handoff:
        raise InvalidConfig("h_touch must be below h_handoff")
    if cfg.r_release < cfg.r_capture:
        raise InvalidConfig("r_release must be >= r_capture")
    if cfg.final_gain_scale > 1:
        raise InvalidConfig("final_gain_scale must be <= 1 (horizontal gains are reduced late)")
    if not cfg.gimbal_min < cfg.gimbal_max:
        raise InvalidConfig("gimbal_min must be below gimbal_max")
    if cfg.search_yaw_rate * cfg.gimbal_period < 2 * math.pi - 1e-12:
        raise InvalidConfig("one search period must cover a full turn of yaw")


def controller_config(**overrides) -> ControllerConfig:
    """Validated defaults, optionally overridden; raises InvalidConfig."""
    try:
        return ControllerConfig(**overrides)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc


@dataclass(frozen=True)
class VelocityCommand:
    velocity: EnuVector
    yaw_rate: float
    gimbal_pitch: float

    @classmethod
    def hold(cls, gimbal_pitch: float) -> "VelocityCommand":
        return cls(EnuVector(0.0, 0.0, 0.0), 0.0, gimbal_pitch)


@dataclass(frozen=True)
class ControllerState:
    phase: Phase = Phase.SEARCH
    phase_entry_time: float = 0.0
    last_target_seen: float = -math.inf
    time: float = 0.0
    last_altitude: float | None = None
    gimbal_pitch: float = -math.pi / 2

    @classmethod
    def initial(cls, phase: Phase = Phase.SEARCH, time: float = 0.0) -> "ControllerState":
        return cls(phase=phase, phase_entry_time=time, time=time)


def _goto(state: ControllerState, phase: Phase, t: float) -> ControllerState:
    if phase is state.phase:
        return state
    if phase is not Phase.ABORT and phase not in _ALLOWED[state.phase]:
        raise IllegalTransition(f"{state.phase.value} -> {phase.value}")
    return replace(state, phase=phase, phase_entry_time=t)


def abort(state: ControllerState) -> ControllerState:
    return _goto(state, Phase.ABORT, state.time)


def _clamp(x: float, lim: float) -> float:
    return max(-lim, min(lim, x))


def search_gimbal(elapsed: float, cfg: ControllerConfig) -> float:
    """Triangle wave from gimbal_max down to gimbal_min and back over one period."""
    frac = (elapsed % cfg.gimbal_period) / cfg.gimbal_period
    tri = 1.0 - abs(2.0 * frac - 1.0)
    return cfg.gimbal_max + (cfg.gimbal_min - cfg.gimbal_max) * tri


def _track_gimbal(target: EnuVector, cfg: ControllerConfig) -> float:
    pitch = math.atan2(target.up, target.horizontal_norm)
    return max(cfg.gimbal_min, min(cfg.gimbal_max, pitch))


def step(state: ControllerState, target: EnuVector | None, altitude_agl: float, dt: float,
         config: ControllerConfig | None = None) -> tuple[VelocityCommand, ControllerState]:
    """Advance the state machine by ``dt`` and return the setpoint for this step."""
    cfg = config or DEFAULT_CONFIG
    if not 0.0 < dt <= 0.5:
        raise ValueError(f"dt must be in (0, 0.5], got {dt}")
    if not altitude_agl >= 0.0:
        raise ValueError("altitude_agl must be non-negative")

    t = state.time + dt
    climb = 0.0 if state.last_altitude is None else (altitude_agl - state.last_altitude) / dt
    seen = target is not None
    s = replace(state, time=t, last_altitude=altitude_agl,
                last_target_seen=t if seen else state.last_target_seen)
    kp, ch, cv = cfg.k_p, cfg.clamp_horizontal, cfg.clamp_vertical

    if s.phase in (Phase.LANDED, Phase.ABORT):
        return VelocityCommand.hold(s.gimbal_pitch), s

    if s.phase is Phase.SEARCH and seen:
        s = _goto(s, Phase.APPROACH, t)

    if s.phase in (Phase.APPROACH, Phase.DESCEND) and not seen and t - s.last_target_seen > cfg.t_lost:
        s = _goto(s, Phase.SEARCH, t)

    if s.phase is Phase.SEARCH:
        pitch = search_gimbal(t - s.phase_entry_time, cfg)
        s = replace(s, gimbal_pitch=pitch)
        return VelocityCommand(EnuVector(0.0, 0.0, 0.0), cfg.search_yaw_rate, pitch), s

    gimbal = _track_gimbal(target, cfg) if seen else s.gimbal_pitch
    s = replace(s, gimbal_pitch=gimbal)
    err = target.horizontal_norm if seen else math.inf

    if s.phase is Phase.APPROACH and seen and err < cfg.r_capture:
        s = _goto(s, Phase.DESCEND, t)
    elif s.phase is Phase.DESCEND and seen and err > cfg.r_release:
        s = _goto(s, Phase.APPROACH, t)
    if s.phase is Phase.DESCEND and altitude_agl <= cfg.h_handoff:
        s = _goto(s, Phase.FINAL_DESCENT, t)
    if s.phase is Phase.FINAL_DESCENT and altitude_agl <= cfg.h_touch:
        s = _goto(s, Phase.TOUCHDOWN_CONFIRM, t)
    elif s.phase is Phase.TOUCHDOWN_CONFIRM:
        if altitude_agl > 2.0 * cfg.h_touch:
            s = _goto(s, Phase.FINAL_DESCENT, t)
        elif t - s.phase_entry_time >= cfg.t_confirm and abs(climb) < cfg.climb_rate_eps:
            s = _goto(s, Phase.LANDED, t)
            return VelocityCommand.hold(gimbal), s

    ve = vn = vu = 0.0
    if s.phase is Phase.APPROACH:
        if seen:
            ve, vn = _clamp(kp * target.east, ch), _clamp(kp * target.north, ch)
    elif s.phase is Phase.DESCEND:
        if seen:
            ve, vn = _clamp(kp * target.east, ch), _clamp(kp * target.north, ch)
            vu = -cfg.v_slow
    elif s.phase is Phase.FINAL_DESCENT:
        if seen:
            k = kp * cfg.final_gain_scale
            ve, vn = _clamp(k * target.east, ch), _clamp(k * target.north, ch)
        vu = -cfg.v_fast
    elif s.phase is Phase.TOUCHDOWN_CONFIRM:
        vu = -cfg.v_slow
    cmd = VelocityCommand(EnuVector(ve, vn, _clamp(vu, cv)), 0.0, gimbal)
    return cmd, s


DEFAULT_CONFIG = ControllerConfig()


class CommandLog:
    """Per-step rows: time, phase, target ENU (blank when unseen), command."""

    COLUMNS = ["time", "phase", "target_east", "target_north", "target_up",
               "vel_east", "vel_north", "vel_up", "yaw_rate", "gimbal_pitch"]

    def __init__(self):
        self.rows: list[list] = []

    def record(self, state: ControllerState, target: EnuVector | None, cmd: VelocityCommand) -> None:
        tgt = ["", "", ""] if target is None else [f"{target.east:.6f}", f"{target.north:.6f}", f"{target.up:.6f}"]
        v = cmd.velocity
        self.rows.append([f"{state.time:.4f}", state.phase.value, *tgt,
                          f"{v.east:.6f}", f"{v.north:.6f}", f"{v.up:.6f}",
                          f"{cmd.yaw_rate:.6f}", f"{cmd.gimbal_pitch:.6f}"])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            w.writerows(self.rows)


def config_dict(cfg: ControllerConfig) -> dict:
    return asdict(cfg)
