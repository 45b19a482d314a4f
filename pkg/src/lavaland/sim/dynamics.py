"""Point-mass multirotor with a first-order velocity response."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..control import VelocityCommand
from ..geom import EnuVector
from .rng import stream

TAU = 0.5
CRASH_SPEED = 1.0
GIMBAL_SLEW = 1.5        # rad/s


@dataclass(frozen=True, eq=False)
class DroneState:
    position: np.ndarray
    velocity: EnuVector = EnuVector(0.0, 0.0, 0.0)
    yaw: float = 0.0
    gimbal_pitch: float = -math.pi / 2
    on_ground: bool = False
    crashed: bool = False
    contact_speed: float = 0.0   # downward speed at the last terrain contact

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)) or not (math.isfinite(self.yaw) and math.isfinite(self.gimbal_pitch)):
            raise ValueError("drone state must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class Wind:
    sigma: float
    seed: int
    counter: int = 0


def _flat(e, n):
    return 0.0


def step_dynamics(state: DroneState, cmd: VelocityCommand, dt: float, terrain=None,
                  wind: Wind | None = None, tau: float = TAU) -> DroneState:
    """Advance by ``dt``; ``terrain(e, n)`` gives the ground height (flat zero by default).

    The velocity follows the exact solution of v' = (c - v)/tau over the
    step and position integrates that trajectory exactly. Wind is an
    additive velocity gust, Gaussian, clipped at five sigma per axis.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    height = terrain or _flat
    v0 = state.velocity.to_array()
    c = cmd.velocity.to_array()
    a = math.exp(-dt / tau)
    v1 = c + (v0 - c) * a
    dp = c * dt + (v0 - c) * tau * (1.0 - a)
    gust = np.zeros(3)
    if wind is not None and wind.sigma > 0:
        g = stream(wind.seed, "wind", wind.counter).standard_normal(3)
        gust = wind.sigma * np.clip(g, -5.0, 5.0)
        dp = dp + gust * dt
    p = state.position + dp

    pitch = state.gimbal_pitch
    dg = cmd.gimbal_pitch - pitch
    pitch += max(-GIMBAL_SLEW * dt, min(GIMBAL_SLEW * dt, dg))
    yaw = math.remainder(state.yaw + cmd.yaw_rate * dt, 2 * math.pi)

    ground = float(height(p[0], p[1]))
    on_ground = False
    crashed = state.crashed
    contact = state.contact_speed
    if p[2] <= ground:
        speed_down = max(0.0, -(v1[2] + gust[2]))
        if not state.on_ground:
            contact = speed_down
            crashed = crashed or speed_down > CRASH_SPEED
        p[2] = ground
        v1 = np.zeros(3)
        on_ground = True
    return replace(state, position=p, velocity=EnuVector.from_array(v1), yaw=yaw, gimbal_pitch=pitch,
                   on_ground=on_ground, crashed=crashed, contact_speed=contact)
