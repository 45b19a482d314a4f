import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def intr600():
    from lavaland.geom import CameraIntrinsics
    return CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


def random_quats(n, seed):
    q = np.random.default_rng(seed).standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def closed_loop_landing(start, target_xyz=(0.0, 0.0, 0.0), config=None, dt=0.05, t_max=120.0, log=None):
    """Fly the controller on the point-mass plant over flat ground at the target's height.

    Returns (final controller state, final drone state, elapsed seconds).
    """
    from lavaland.control import ControllerState, Phase, step
    from lavaland.geom import EnuVector
    from lavaland.sim.dynamics import DroneState, step_dynamics

    target_xyz = np.asarray(target_xyz, dtype=float)
    ground = float(target_xyz[2])
    drone = DroneState(np.asarray(start, dtype=float))
    state = ControllerState.initial(Phase.SEARCH)
    t = 0.0
    while t < t_max and state.phase is not Phase.LANDED:
        offset = EnuVector.from_array(target_xyz - drone.position)
        cmd, state = step(state, offset, max(drone.position[2] - ground, 0.0), dt, config)
        if log is not None:
            log.record(state, offset, cmd)
        drone = step_dynamics(drone, cmd, dt, terrain=lambda e, n: ground)
        t += dt
    return state, drone, t


def no_plateau_spec():
    """Terrain with no plateau and a rubbly base: no level ground of landing size anywhere."""
    from dataclasses import replace

    from lavaland.sim.terrain_gen import TerrainSpec
    return replace(TerrainSpec(), plateaus=(0, 0), base_roughness=0.08)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion; returns the verdict."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
