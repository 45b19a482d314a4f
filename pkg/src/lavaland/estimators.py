"""scikit-learn style wrappers around the marker and terrain pipelines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fiducial import (BehindCamera, DegenerateObservation, MarkerObservation, NoUpwardCandidate,
                       WRONG_CHOICE_THRESHOLD, disambiguate_gravity, disambiguate_reprojection,
                       estimate_planar_pose)
from .geom import CameraIntrinsics, RigidTransform, rotation_angle
from .terrain import NoViableRegion, TerrainConfig, TerrainGrid, integrate_frame, process_grid, \
    select_landing_site


class MarkerPoseEstimator(TransformerMixin, BaseEstimator):
    """Corner pixels in, marker pose out.

    Each row of ``X`` holds the four corners (u0, v0, ..., u3, v3). With four
    more columns (camera attitude quaternion qw, qx, qy, qz) the gravity
    prior picks the candidate, otherwise the lower reprojection error does.
    Output rows are (qw, qx, qy, qz, tx, ty, tz) of marker -> camera; rows
    that cannot be solved are NaN.
    """

    def __init__(self, fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480, side_length=1.0):
        self.fx = fx
        self.fy = fy
        self.cx = cx
        self.cy = cy
        self.width = width
        self.height = height
        self.side_length = side_length

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] not in (8, 12):
            raise ValueError(f"expected 8 or 12 columns, got {X.shape[1]}")
        self.intrinsics_ = CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, int(self.width), int(self.height))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "intrinsics_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"fitted on {self.n_features_in_} columns, got {X.shape[1]}")
        out = np.full((len(X), 7), np.nan)
        for i, row in enumerate(X):
            obs = MarkerObservation(0, self.side_length, corners=row[:8].reshape(4, 2))
            try:
                cands = estimate_planar_pose(obs, self.intrinsics_)
                if X.shape[1] == 12:
                    pose = disambiguate_gravity(cands, row[8:12] / np.linalg.norm(row[8:12]))
                else:
                    pose = disambiguate_reprojection(cands)
            except (DegenerateObservation, BehindCamera, NoUpwardCandidate):
                continue
            out[i] = pose.to_array()
        return out

    def score(self, X, y):
        """Fraction of rows whose chosen rotation is within 45 degrees of the truth in ``y``."""
        pred = self.transform(X)
        y = check_array(y)
        ok = 0
        for p, t in zip(pred, y):
            if np.all(np.isfinite(p)):
                ra = RigidTransform.from_array(p).matrix
                rb = RigidTransform.from_array(t).matrix
                ok += rotation_angle(ra, rb) < WRONG_CHOICE_THRESHOLD
        return ok / len(y)


class LandingSiteSelector(BaseEstimator):
    """Accumulate depth frames into a terrain grid and pick landing sites.

    ``fit(frames, poses)`` maps the frames (optical -> ENU poses);
    ``predict(X)`` returns, for each drone position (east, north) in ``X``,
    the selected site position or NaN when no region qualifies.
    """

    def __init__(self, center=(0.0, 0.0), size=20.0, cell_size=0.25, slope_max=10.0, roughness_max=0.05,
                 obstacle_height=0.2, window=5, drone_radius=0.4, safety_margin=0.5, min_area=4.0,
                 k_min_samples=3, persistence_ratio=0.2):
        self.center = center
        self.size = size
        self.cell_size = cell_size
        self.slope_max = slope_max
        self.roughness_max = roughness_max
        self.obstacle_height = obstacle_height
        self.window = window
        self.drone_radius = drone_radius
        self.safety_margin = safety_margin
        self.min_area = min_area
        self.k_min_samples = k_min_samples
        self.persistence_ratio = persistence_ratio

    def _config(self) -> TerrainConfig:
        return TerrainConfig(self.cell_size, self.slope_max, self.roughness_max, self.obstacle_height,
                             self.window, self.drone_radius, self.safety_margin, self.min_area,
                             self.k_min_samples, self.persistence_ratio)

    def fit(self, frames, poses):
        self.config_ = self._config()
        self.raw_grid_ = TerrainGrid.around(self.center, self.size, self.cell_size)
        return self.partial_fit(frames, poses)

    def partial_fit(self, frames, poses):
        if not hasattr(self, "raw_grid_"):
            return self.fit(frames, poses)
        frames, poses = list(frames), list(poses)
        if len(frames) != len(poses):
            raise ValueError("frames and poses must have equal length")
        grid = self.raw_grid_
        for frame, pose in zip(frames, poses):
            grid = integrate_frame(grid, frame, pose)
        self.raw_grid_ = grid
        self.grid_, self.regions_ = process_grid(grid, self.config_)
        return self

    def predict(self, X):
        check_is_fitted(self, "regions_")
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns (east, north)")
        out = np.full((len(X), 2), np.nan)
        for i, xy in enumerate(X):
            try:
                out[i] = select_landing_site(self.regions_, xy).position[:2]
            except NoViableRegion:
                pass
        return out
