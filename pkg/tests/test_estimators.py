import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lavaland.estimators import LandingSiteSelector, MarkerPoseEstimator
from lavaland.fiducial import INTRINSICS_REGISTRY, synthesize_dataset
from lavaland.geom import CameraIntrinsics, RigidTransform, attitude_from_angles, camera_rotation
from lavaland.sim.render import IDEAL, render_depth
from lavaland.sim.terrain_gen import TerrainSpec, generate_terrain
from lavaland.terrain import TerrainConfig, TerrainGrid, integrate_frame, process_grid, select_landing_site

INTR = INTRINSICS_REGISTRY["default"]


def _rows(n, with_attitude):
    frames = synthesize_dataset(n, seed=5)
    X, y = [], []
    for f in frames:
        row = list(f.observation.image_points.reshape(-1))
        if with_attitude:
            row += list(f.camera_attitude)
        X.append(row)
        y.append(f.truth.to_array())
    return np.array(X), np.array(y)


def test_marker_estimator_params_and_clone():
    est = MarkerPoseEstimator(fx=500.0, side_length=0.5)
    assert est.get_params()["fx"] == 500.0
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    with pytest.raises(NotFittedError):
        est.transform(np.zeros((1, 8)))


@pytest.mark.parametrize("with_attitude", [False, True])
def test_marker_estimator_recovers_poses(with_attitude):
    X, y = _rows(200, with_attitude)
    est = MarkerPoseEstimator(**{k: getattr(INTR, k) for k in ("fx", "fy", "cx", "cy", "width", "height")},
                              side_length=0.5)
    out = est.fit(X).transform(X)
    assert out.shape == (200, 7)
    score = est.score(X, y)
    assert score >= (0.99 if with_attitude else 0.9)
    with pytest.raises(ValueError):
        est.transform(X[:, :8] if with_attitude else np.hstack([X, X[:, :4]]))


def test_marker_estimator_rejects_bad_width():
    with pytest.raises(ValueError):
        MarkerPoseEstimator().fit(np.zeros((2, 9)))


def test_marker_estimator_nan_for_unsolvable():
    est = MarkerPoseEstimator().fit(np.zeros((1, 8)))
    out = est.transform(np.array([[100, 100, 100, 100, 100, 100, 100, 100.0]]))
    assert np.all(np.isnan(out))


def test_site_selector_matches_functional_pipeline():
    field = generate_terrain(3, TerrainSpec(plateaus=(1, 1), cracks=(0, 0), boulders=(0, 0), rough_patches=(0, 0)))
    cx, cy = field.features[0].center
    intr = CameraIntrinsics.from_fov(96, 72, 87.0)
    poses, frames = [], []
    for k in range(4):
        pose = RigidTransform.from_matrix(camera_rotation(attitude_from_angles(-math.pi / 2)),
                                          [cx + 0.3 * k, cy, field.height_at(cx, cy) + 8.0])
        poses.append(pose)
        frames.append(render_depth(field, pose, intr, IDEAL))
    sel = LandingSiteSelector(center=(cx, cy), size=12.0).fit(frames[:2], poses[:2]).partial_fit(frames[2:], poses[2:])
    grid = TerrainGrid.around((cx, cy), 12.0)
    for f, p in zip(frames, poses):
        grid = integrate_frame(grid, f, p)
    _, regions = process_grid(grid, TerrainConfig())
    site = select_landing_site(regions, (cx, cy))
    pred = sel.predict([[cx, cy], [cx + 1, cy]])
    assert np.allclose(pred[0], site.position[:2])
    assert np.all(np.isfinite(pred))
    assert clone(sel).get_params()["size"] == 12.0


def test_site_selector_nan_without_regions():
    sel = LandingSiteSelector(min_area=1e6)
    field = generate_terrain(1)
    pose = RigidTransform.from_matrix(camera_rotation(attitude_from_angles(-math.pi / 2)),
                                      [34, 16, field.height_at(34, 16) + 8])
    frame = render_depth(field, pose, CameraIntrinsics.from_fov(48, 36, 87.0))
    sel.set_params(center=(34, 16)).fit([frame], [pose])
    assert np.all(np.isnan(sel.predict([[34, 16]])))
    with pytest.raises(ValueError):
        sel.predict([[1, 2, 3]])
