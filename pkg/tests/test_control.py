import csv
import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lavaland.control import (CommandLog, ControllerConfig, ControllerState, IllegalTransition, InvalidConfig,
                              Phase, abort, controller_config, search_gimbal, step)
from lavaland.control import _goto
from lavaland.geom import EnuVector

from conftest import closed_loop_landing

CFG = ControllerConfig()


def in_phase(phase, time=10.0, **kw):
    return replace(ControllerState.initial(phase, time), last_target_seen=time, **kw)


def test_descend_straight_down():
    cmd, s = step(in_phase(Phase.DESCEND), EnuVector(0, 0, -5), 5.0, 0.1)
    assert s.phase is Phase.DESCEND
    assert cmd.velocity.to_array().tolist() == [0.0, 0.0, -CFG.v_slow]


def test_approach_is_clamped():
    cmd, s = step(in_phase(Phase.APPROACH), EnuVector(2, 0, -5), 5.0, 0.1,
                  controller_config(k_p=0.5, clamp_horizontal=1.0))
    assert s.phase is Phase.APPROACH
    assert cmd.velocity.to_array().tolist() == [1.0, 0.0, 0.0]


def test_final_descent_is_faster():
    cmd, s = step(in_phase(Phase.FINAL_DESCENT), EnuVector(0, 0, -0.8), 0.8, 0.1)
    assert s.phase is Phase.FINAL_DESCENT
    assert -cmd.velocity.up == CFG.v_fast > CFG.v_slow


def test_target_lost_returns_to_search():
    s = in_phase(Phase.APPROACH, time=10.0)
    cmd = None
    for _ in range(30):
        cmd, s = step(s, None, 5.0, 0.1)
    assert s.phase is Phase.SEARCH
    assert (cmd.velocity.east, cmd.velocity.north, cmd.velocity.up) == (0.0, 0.0, 0.0)
    assert cmd.yaw_rate == CFG.search_yaw_rate


def test_short_dropout_keeps_phase():
    s = in_phase(Phase.DESCEND)
    for _ in range(10):
        _, s = step(s, None, 5.0, 0.1)
    assert s.phase is Phase.DESCEND


def test_capture_and_release():
    _, s = step(in_phase(Phase.APPROACH), EnuVector(0.2, 0, -5), 5.0, 0.1)
    assert s.phase is Phase.DESCEND
    _, s = step(s, EnuVector(0.5, 0, -5), 5.0, 0.1)
    assert s.phase is Phase.DESCEND          # hysteresis band
    _, s = step(s, EnuVector(1.0, 0, -5), 5.0, 0.1)
    assert s.phase is Phase.APPROACH


def test_touchdown_confirm_and_bounce():
    s = in_phase(Phase.FINAL_DESCENT)
    _, s = step(s, EnuVector(0, 0, -0.05), 0.05, 0.1)
    assert s.phase is Phase.TOUCHDOWN_CONFIRM
    _, bounced = step(s, EnuVector(0, 0, -0.5), 0.5, 0.1)
    assert bounced.phase is Phase.FINAL_DESCENT
    for _ in range(11):
        _, s = step(s, EnuVector(0, 0, 0), 0.0, 0.1)
    assert s.phase is Phase.LANDED
    cmd, s = step(s, EnuVector(0, 0, 0), 0.0, 0.1)
    assert cmd.velocity.to_array().tolist() == [0.0, 0.0, 0.0] and s.phase is Phase.LANDED


def test_transitions_are_checked():
    with pytest.raises(IllegalTransition):
        _goto(ControllerState.initial(Phase.SEARCH), Phase.LANDED, 0.0)
    for phase in Phase:
        assert abort(ControllerState.initial(phase)).phase is Phase.ABORT


def test_step_preconditions():
    with pytest.raises(ValueError):
        step(ControllerState.initial(), None, 1.0, 0.0)
    with pytest.raises(ValueError):
        step(ControllerState.initial(), None, 1.0, 0.6)
    with pytest.raises(ValueError):
        step(ControllerState.initial(), None, -1.0, 0.1)


# -- configuration -------------------------------------------------------------

def test_default_config_valid():
    assert controller_config() == CFG


@pytest.mark.parametrize("kw", [
    dict(v_fast=0.1, v_slow=0.3), dict(clamp_horizontal=0.0), dict(clamp_vertical=0.0), dict(k_p=-1.0),
    dict(h_touch=2.0), dict(r_release=0.1), dict(gimbal_min=0.0), dict(search_yaw_rate=0.1), dict(bogus=1),
    dict(k_p=math.nan),
])
def test_invalid_config(kw):
    with pytest.raises(InvalidConfig):
        controller_config(**kw)


# -- properties ----------------------------------------------------------------

finite = st.floats(-100, 100, allow_nan=False)
targets = st.one_of(st.none(), st.builds(EnuVector, finite, finite, finite))
steps_ = st.lists(st.tuples(targets, st.floats(0, 50), st.floats(0.001, 0.5)), min_size=1, max_size=60)


@given(st.sampled_from(list(Phase)), steps_)
def test_clamps_respected(phase, seq):
    s = ControllerState.initial(phase)
    for target, alt, dt in seq:
        cmd, s = step(s, target, alt, dt)
        v = cmd.velocity
        assert abs(v.east) <= CFG.clamp_horizontal and abs(v.north) <= CFG.clamp_horizontal
        assert abs(v.up) <= CFG.clamp_vertical
        assert CFG.gimbal_min <= cmd.gimbal_pitch <= CFG.gimbal_max
        assert all(math.isfinite(x) for x in (v.east, v.north, v.up, cmd.yaw_rate))


@given(steps_)
def test_deterministic(seq):
    def run():
        s, out = ControllerState.initial(), []
        for target, alt, dt in seq:
            cmd, s = step(s, target, alt, dt)
            out.append(cmd)
        return out, s
    assert run() == run()


def test_search_coverage():
    s = ControllerState.initial()
    dt = 0.05
    pitches, yaw = [], 0.0
    for _ in range(int(round(CFG.gimbal_period / dt)) + 1):
        cmd, s = step(s, None, 10.0, dt)
        pitches.append(cmd.gimbal_pitch)
        yaw += cmd.yaw_rate * dt
    assert math.isclose(min(pitches), CFG.gimbal_min, abs_tol=1e-9)
    assert math.isclose(max(pitches), CFG.gimbal_max, abs_tol=0.02)
    assert yaw >= 2 * math.pi
    assert search_gimbal(0.0, CFG) == CFG.gimbal_max
    assert math.isclose(search_gimbal(CFG.gimbal_period / 2, CFG), CFG.gimbal_min)


def test_late_stage_descent_is_faster():
    def descent(alt):
        phase = Phase.DESCEND if alt > CFG.h_handoff else Phase.FINAL_DESCENT
        cmd, _ = step(in_phase(phase), EnuVector(0, 0, -alt), alt, 0.05)
        return -cmd.velocity.up
    high = [descent(a) for a in (1.51, 2.0, 5.0, 20.0)]
    low = [descent(a) for a in (0.2, 0.8, 1.4)]
    assert min(low) >= max(high) and min(low) > max(high)
    # and entering from above switches at the handoff
    cmd, s = step(in_phase(Phase.DESCEND), EnuVector(0, 0, -1.4), 1.4, 0.05)
    assert s.phase is Phase.FINAL_DESCENT and -cmd.velocity.up == CFG.v_fast


@pytest.mark.parametrize("start", [(0, 0, 20), (14, 14, 20), (-20, 0, 5), (3, -19, 12), (0.1, 0, 1)])
def test_liveness_point_mass(start):
    state, drone, t = closed_loop_landing(start)
    assert state.phase is Phase.LANDED and t <= 120.0
    assert not drone.crashed
    assert math.hypot(*drone.position[:2]) < CFG.r_release


def test_command_log(tmp_path):
    log = CommandLog()
    closed_loop_landing((1, 1, 3), log=log)
    log.write(tmp_path / "log.csv")
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CommandLog.COLUMNS
    assert {r[1] for r in rows[1:]} >= {"Approach", "Descend", "FinalDescent", "TouchdownConfirm", "Landed"}
