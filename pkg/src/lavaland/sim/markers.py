"""Synthetic fiducial observations of the landing pad."""
from __future__ import annotations

import numpy as np

from ..fiducial import MarkerObservation, marker_model_corners
from ..geom import CameraIntrinsics, RigidTransform
from .rng import stream

PAD_SIDE = 1.0


def project_markers(pad_pose: RigidTransform, camera_pose: RigidTransform, intr: CameraIntrinsics,
                    corner_noise: float = 0.0, seed: int = 0, side_length: float = PAD_SIDE,
                    marker_id: int = 0, timestamp: float = 0.0,
                    counter: int = 0) -> MarkerObservation | None:
    """Pad corners as seen by the camera, or None when not fully visible.

    ``pad_pose`` maps the marker frame (+z out of the printed face) into ENU,
    ``camera_pose`` maps the optical frame into ENU.
    """
    world = pad_pose.apply(marker_model_corners(side_length))
    to_pad = camera_pose.translation - pad_pose.translation
    if float(pad_pose.matrix[:, 2] @ to_pad) <= 0:
        return None
    cam = camera_pose.inverse().apply(world)
    if np.any(cam[:, 2] <= 1e-6):
        return None
    px = np.empty((4, 2))
    px[:, 0] = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
    px[:, 1] = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    if corner_noise > 0:
        px = px + corner_noise * stream(seed, "project_markers", counter).standard_normal((4, 2))
    if np.any(px[:, 0] < 0) or np.any(px[:, 0] > intr.width - 1) or np.any(px[:, 1] < 0) \
            or np.any(px[:, 1] > intr.height - 1):
        return None
    return MarkerObservation(marker_id, side_length, corners=px, timestamp=timestamp)
