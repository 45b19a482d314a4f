import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lavaland.geom import (CameraIntrinsics, EnuVector, NonPositiveDepth, RigidTransform, attitude_from_angles,
                           attitude_from_camera_rotation, camera_rotation, deproject, deproject_range,
                           gravity_align, matrix_to_quat, pixel_rays, project, project_points, quat_angle,
                           quat_canonical, quat_from_axis_angle, quat_multiply, quat_to_matrix, rot_x, rot_z)

from conftest import random_quats

unit = st.floats(-1, 1, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: np.linalg.norm(q) > 0.1).map(
    lambda q: np.asarray(q) / np.linalg.norm(q))
vec = st.tuples(*(st.floats(-50, 50, allow_nan=False),) * 3).map(np.asarray)


def transforms():
    return st.tuples(quats, vec).map(lambda a: RigidTransform(a[0], a[1]))


# -- projection --------------------------------------------------------------

def test_project_principal_point(intr600):
    assert np.allclose(project(intr600, (0, 0, 1)), (320, 240))


def test_project_offset(intr600):
    assert np.allclose(project(intr600, (0.1, 0, 1)), (380, 240))


def test_project_behind_camera(intr600):
    with pytest.raises(NonPositiveDepth):
        project(intr600, (0, 0, -1))
    with pytest.raises(NonPositiveDepth):
        project(intr600, (0, 0, 0))


def test_deproject_examples(intr600):
    assert np.allclose(deproject(intr600, (320, 240), 2.0), (0, 0, 2))
    assert np.allclose(deproject(intr600, (380, 240), 1.0), (0.1, 0, 1))
    with pytest.raises(NonPositiveDepth):
        deproject(intr600, (320, 240), 0.0)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 50))
def test_project_deproject_round_trip(x, y, z):
    intr = CameraIntrinsics(600.0, 580.0, 320.0, 240.0, 640, 480)
    p = np.array([x, y, z])
    assert np.allclose(deproject(intr, project(intr, p), z), p, atol=1e-9, rtol=0)


def test_project_points_matches_scalar(intr600):
    pts = np.random.default_rng(0).uniform([-1, -1, 0.5], [1, 1, 5], (50, 3))
    ref = np.array([project(intr600, p) for p in pts])
    assert np.allclose(project_points(intr600, pts), ref, atol=1e-12)
    with pytest.raises(NonPositiveDepth):
        project_points(intr600, np.array([[0, 0, 1], [0, 0, -1]]))


def test_range_deprojection_uses_ray_length(intr600):
    p = deproject_range(intr600, (380, 240), 2.0)
    assert math.isclose(np.linalg.norm(p), 2.0)
    assert np.allclose(project(intr600, p), (380, 240))
    rays = pixel_rays(intr600)
    assert rays.shape == (480, 640, 3)
    assert np.allclose(np.linalg.norm(rays, axis=-1), 1.0)
    assert np.allclose(rays[240, 320], (0, 0, 1))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 600, 320, 240, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(600, 600, 640, 240, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(600, 600, 320, -1, 640, 480)
    intr = CameraIntrinsics.from_fov(640, 480, 90.0)
    assert math.isclose(intr.fx, 320.0)
    assert np.allclose(intr.K, [[320, 0, 320], [0, 320, 240], [0, 0, 1]])


# -- quaternions and transforms --------------------------------------------------

def test_quaternion_matrix_round_trip():
    for q in random_quats(500, 1):
        assert np.allclose(matrix_to_quat(quat_to_matrix(q)), q, atol=1e-12)


def test_quaternion_canonical_sign():
    q = quat_canonical([-0.5, 0.5, 0.5, 0.5])
    assert q[0] >= 0 and np.allclose(q, [0.5, -0.5, -0.5, -0.5])


def test_quat_multiply_matches_matrices():
    a, b = random_quats(2, 2)
    assert np.allclose(quat_to_matrix(quat_multiply(a, b)), quat_to_matrix(a) @ quat_to_matrix(b))


def test_axis_angle():
    q = quat_from_axis_angle([0, 0, 2], math.pi / 2)
    assert np.allclose(quat_to_matrix(q), rot_z(math.pi / 2))
    assert math.isclose(quat_angle(q, [1, 0, 0, 0]), math.pi / 2)


def test_rigid_transform_rejects_non_unit():
    with pytest.raises(ValueError):
        RigidTransform([2.0, 0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        RigidTransform([1.0, 0, 0, 0], [0, np.nan, 0])


@given(transforms(), vec)
def test_inverse_composes_to_identity(t, p):
    ident = t.compose(t.inverse())
    assert ident.almost_equal(RigidTransform.identity(), 1e-9)
    assert np.allclose(t.inverse().apply(t.apply(p)), p, atol=1e-9)


@given(transforms(), transforms(), transforms(), vec)
def test_composition_associative(a, b, c, p):
    left = (a @ b) @ c
    right = a @ (b @ c)
    assert left.almost_equal(right, 1e-9)
    assert np.allclose(left.apply(p), a.apply(b.apply(c.apply(p))), atol=1e-9)


def test_transform_array_round_trip():
    t = RigidTransform.from_matrix(rot_x(0.3) @ rot_z(1.1), [1, 2, 3])
    assert RigidTransform.from_array(t.to_array()).almost_equal(t, 1e-12)
    assert np.allclose(t.matrix, rot_x(0.3) @ rot_z(1.1))
    with pytest.raises(ValueError):
        t.translation[0] = 5.0


def test_enu_vector():
    v = EnuVector(3.0, 4.0, -1.0)
    assert v.horizontal_norm == 5.0
    assert np.array_equal(v.to_array(), [3, 4, -1])
    with pytest.raises(ValueError):
        EnuVector(np.inf, 0, 0)


# -- camera attitude and gravity alignment ----------------------------------------------

def test_identity_attitude_is_level_north_camera():
    r = camera_rotation([1, 0, 0, 0])
    assert np.allclose(r @ [0, 0, 1], [0, 1, 0])      # optical axis -> north
    assert np.allclose(r @ [1, 0, 0], [1, 0, 0])      # image right -> east
    assert np.allclose(r @ [0, 1, 0], [0, 0, -1])     # image down -> down


def test_pitched_down_camera():
    r = camera_rotation(attitude_from_angles(-math.pi / 2))
    assert np.allclose(r @ [0, 0, 1], [0, 0, -1])
    assert np.allclose(r @ [0, -1, 0], [0, 1, 0])     # image top faces north


def test_attitude_camera_rotation_round_trip():
    for q in random_quats(100, 3):
        assert np.allclose(attitude_from_camera_rotation(camera_rotation(q)), q, atol=1e-12)


def test_gravity_align_level_is_identity():
    assert gravity_align([1.0, 0, 0, 0]).almost_equal(RigidTransform.identity(), 1e-12)
    assert gravity_align(attitude_from_angles(0.0, 1.2)).almost_equal(RigidTransform.identity(), 1e-12)


def test_gravity_align_pitched_down_maps_optical_axis_to_minus_up():
    g = gravity_align(attitude_from_angles(-math.pi / 2))
    optical_in_body = np.array([0.0, 1.0, 0.0])
    assert np.allclose(g.rotate(optical_in_body), [0, 0, -1], atol=1e-12)


def test_gravity_align_random_attitudes():
    for q in random_quats(1000, 4):
        r = quat_to_matrix(q)
        g = gravity_align(q)
        measured = r.T @ [0, 0, -1]
        assert np.allclose(g.rotate(measured), [0, 0, -1], atol=1e-9)
        # heading is preserved: what remains after alignment is a pure yaw
        rest = r @ g.matrix.T
        assert np.allclose(rest[:, 2], [0, 0, 1], atol=1e-9)
        # idempotent
        aligned = matrix_to_quat(rest)
        assert gravity_align(aligned).almost_equal(RigidTransform.identity(), 1e-9)


def test_gravity_align_is_minimal():
    # a pure roll of 0.4 rad is corrected by exactly 0.4 rad
    q = matrix_to_quat(rot_z(0.7) @ quat_to_matrix(quat_from_axis_angle([0, 1, 0], 0.4)))
    g = gravity_align(q)
    assert math.isclose(quat_angle(g.rotation, [1, 0, 0, 0]), 0.4, abs_tol=1e-9)


def test_gravity_align_upside_down():
    g = gravity_align(quat_from_axis_angle([1, 0, 0], math.pi))
    assert np.allclose(g.rotate([0, 0, 1]), [0, 0, -1])
