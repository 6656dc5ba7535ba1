"""6D wrist pose estimation in the camera frame from a single hand detection.

Two paths, mirroring the available sensor data:

* RGB-D: back-project keypoints with valid depth, align them to the local
  (wrist-frame) keypoints with a closed-form SVD fit, then refine with a few
  Gauss-Newton steps on 2D reprojection error over all 21 landmarks.
* RGB only: orientation built analytically from three palm landmarks, depth
  recovered from the detector's weak-perspective scale.

The 21-landmark layout follows the MediaPipe convention: index 0 is the
wrist, 5 and 9 are the index and middle metacarpophalangeal joints, and
4/8/12/16/20 are the fingertips.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (DegenerateConfiguration, DegenerateHand, InsufficientCorrespondences,
                     InvalidDepth, InvalidScale, MissingScale)
from .transforms import RigidTransform, rotation_exp, skew

WRIST, INDEX_MCP, MIDDLE_MCP = 0, 5, 9
N_LANDMARKS = 21
MIN_DEPTH_CORRESPONDENCES = 4
COLLINEAR_TOL = 1e-6
GN_MAX_ITERATIONS = 10


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class HandFrame:
    """One per-camera hand detection result."""

    camera_id: str
    timestamp: int  # microseconds
    keypoints_local: np.ndarray          # (21, 3) m, wrist frame
    keypoints_pixel: np.ndarray          # (21, 2) px
    keypoint_depth: Optional[np.ndarray] = None  # (21,) m, 0 = invalid
    shape_params: Optional[np.ndarray] = None    # (10,)
    weak_persp_scale: Optional[float] = None     # px per m
    hand_reference_size: float = 0.09            # m, wrist -> middle MCP

    def __post_init__(self):
        self.keypoints_local = np.asarray(self.keypoints_local, dtype=float).reshape(N_LANDMARKS, 3)
        self.keypoints_pixel = np.asarray(self.keypoints_pixel, dtype=float).reshape(N_LANDMARKS, 2)
        if np.linalg.norm(self.keypoints_local[WRIST]) > 1e-9:
            raise ValueError("keypoint 0 (wrist) must be the local-frame origin")
        if not np.all(np.isfinite(self.keypoints_pixel)):
            raise ValueError("pixel coordinates must be finite")
        if self.keypoint_depth is not None:
            self.keypoint_depth = np.asarray(self.keypoint_depth, dtype=float).reshape(N_LANDMARKS)
            if np.any(self.keypoint_depth < 0):
                raise ValueError("depth values must be >= 0 (0 marks invalid)")
        if self.shape_params is not None:
            self.shape_params = np.asarray(self.shape_params, dtype=float).reshape(10)

    def valid_depth_mask(self) -> np.ndarray:
        if self.keypoint_depth is None:
            return np.zeros(N_LANDMARKS, dtype=bool)
        return np.isfinite(self.keypoint_depth) & (self.keypoint_depth > 0)


@dataclass(frozen=True)
class WristPose:
    camera_id: str
    timestamp: int
    pose: RigidTransform  # wrist frame in camera frame
    source: str           # "rgbd" | "rgb_only"
    refinement_residuals: tuple = field(default=())  # px RMS per GN iteration

    def __post_init__(self):
        if self.source not in ("rgbd", "rgb_only"):
            raise ValueError(f"bad source {self.source!r}")
        if self.pose.translation[2] <= 0:
            raise ValueError("wrist must be in front of the camera (z > 0)")


def backproject(pixel: np.ndarray, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole back-projection of one pixel at a given depth."""
    if not np.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth must be finite and > 0, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - intr.cx) * depth / intr.fx,
                     (v - intr.cy) * depth / intr.fy,
                     depth])


def project(point: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection; inverse of backproject for z > 0."""
    x, y, z = point
    if z <= 0:
        raise InvalidDepth("cannot project a point behind the camera")
    return np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy])


def _check_not_collinear(points: np.ndarray):
    centered = points - points.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] < COLLINEAR_TOL:
        raise DegenerateConfiguration("correspondence points are collinear")


def rigid_align(local: np.ndarray, camera: np.ndarray) -> RigidTransform:
    """Closed-form least-squares (R, t) with R @ local + t ~= camera (no scale)."""
    mean_l = local.mean(axis=0)
    mean_c = camera.mean(axis=0)
    cov = (camera - mean_c).T @ (local - mean_l)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    return RigidTransform(rot, mean_c - rot @ mean_l)


def _reprojection_residual(rot, trans, local, pixels, intr):
    cam = local @ rot.T + trans
    proj = np.column_stack([intr.fx * cam[:, 0] / cam[:, 2] + intr.cx,
                            intr.fy * cam[:, 1] / cam[:, 2] + intr.cy])
    return (proj - pixels).reshape(-1), cam


def _refine_reprojection(pose, frame, intr):
    """Gauss-Newton on 2D reprojection over all 21 keypoints.

    Steps that would increase the residual are halved and ultimately
    rejected, so the reported residual sequence is non-increasing.
    """
    rot = pose.rotation.copy()
    trans = pose.translation.copy()
    local = frame.keypoints_local
    pixels = frame.keypoints_pixel
    res, cam = _reprojection_residual(rot, trans, local, pixels, intr)
    cost = float(res @ res)
    history = [np.sqrt(cost / N_LANDMARKS)]
    for _ in range(GN_MAX_ITERATIONS):
        if np.any(cam[:, 2] <= 1e-6):
            break
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        # d(pixel)/d(camera point)
        dpdc = np.zeros((N_LANDMARKS, 2, 3))
        dpdc[:, 0, 0] = intr.fx / z
        dpdc[:, 0, 2] = -intr.fx * x / z ** 2
        dpdc[:, 1, 1] = intr.fy / z
        dpdc[:, 1, 2] = -intr.fy * y / z ** 2
        # Left-multiplicative update: cam' = exp(w) @ cam + tau.
        jac = np.zeros((N_LANDMARKS, 2, 6))
        for i in range(N_LANDMARKS):
            jac[i, :, :3] = dpdc[i] @ (-skew(cam[i]))
            jac[i, :, 3:] = dpdc[i]
        jac = jac.reshape(-1, 6)
        jtj = jac.T @ jac + 1e-12 * np.eye(6)
        delta = np.linalg.solve(jtj, -jac.T @ res)

        improved = False
        step = 1.0
        for _ in range(6):
            d = delta * step
            rot_new = rotation_exp(d[:3]) @ rot
            trans_new = rotation_exp(d[:3]) @ trans + d[3:]
            res_new, cam_new = _reprojection_residual(rot_new, trans_new, local, pixels, intr)
            cost_new = float(res_new @ res_new)
            if cost_new <= cost:
                rot, trans, res, cam, cost = rot_new, trans_new, res_new, cam_new, cost_new
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        history.append(np.sqrt(cost / N_LANDMARKS))
        if len(history) > 1 and history[-2] - history[-1] < 1e-12:
            break
    return RigidTransform(rot, trans).orthonormalized(), tuple(history)


def wrist_pose_rgbd(frame: HandFrame, intr: CameraIntrinsics) -> WristPose:
    """Wrist pose from 3D-3D alignment of depth-backed keypoints.

    Keypoints without valid depth are excluded from the closed-form fit; the
    reprojection refinement then uses all 21 pixel observations.
    """
    mask = frame.valid_depth_mask()
    n_valid = int(mask.sum())
    if n_valid < MIN_DEPTH_CORRESPONDENCES:
        raise InsufficientCorrespondences(
            f"need >= {MIN_DEPTH_CORRESPONDENCES} keypoints with depth, got {n_valid}")
    local = frame.keypoints_local[mask]
    _check_not_collinear(local)
    camera = np.stack([backproject(frame.keypoints_pixel[i], frame.keypoint_depth[i], intr)
                       for i in np.flatnonzero(mask)])
    pose = rigid_align(local, camera)
    pose, residuals = _refine_reprojection(pose, frame, intr)
    return WristPose(frame.camera_id, frame.timestamp, pose, "rgbd", residuals)


def hand_basis(keypoints: np.ndarray) -> np.ndarray:
    """Right-handed palm basis from wrist / index-MCP / middle-MCP landmarks.

    Columns are x (wrist toward middle MCP), y, z (palm normal direction).
    """
    v_mid = keypoints[MIDDLE_MCP] - keypoints[WRIST]
    v_idx = keypoints[INDEX_MCP] - keypoints[WRIST]
    norm_mid = np.linalg.norm(v_mid)
    if norm_mid < COLLINEAR_TOL:
        raise DegenerateHand("wrist and middle MCP coincide")
    x_axis = v_mid / norm_mid
    z_dir = np.cross(x_axis, v_idx)
    norm_z = np.linalg.norm(z_dir)
    if norm_z < COLLINEAR_TOL:
        raise DegenerateHand("wrist, index MCP and middle MCP are collinear")
    z_axis = z_dir / norm_z
    y_axis = np.cross(z_axis, x_axis)
    return np.column_stack([x_axis, y_axis, z_axis])


def wrist_orientation_rgb(frame: HandFrame,
                          keypoints_camera: Optional[np.ndarray] = None) -> np.ndarray:
    """Analytic wrist orientation from palm landmarks.

    `keypoints_camera` are camera-frame estimates of the same 21 landmarks
    (e.g. pixel rays lifted to a common weak-perspective depth). When omitted
    the local keypoints themselves are used, which yields the identity: the
    caller is asserting both sets live in the same frame.
    """
    basis_local = hand_basis(frame.keypoints_local)
    if keypoints_camera is None:
        keypoints_camera = frame.keypoints_local
    basis_camera = hand_basis(np.asarray(keypoints_camera, dtype=float))
    return basis_camera @ basis_local.T


def lift_keypoints_weak_perspective(frame: HandFrame, intr: CameraIntrinsics) -> np.ndarray:
    """Lift all 21 pixels onto the common weak-perspective depth plane."""
    depth = weak_perspective_depth(frame, intr)
    return np.stack([backproject(frame.keypoints_pixel[i], depth, intr)
                     for i in range(N_LANDMARKS)])


def weak_perspective_depth(frame: HandFrame, intr: CameraIntrinsics) -> float:
    if frame.weak_persp_scale is None:
        raise MissingScale("frame carries no weak-perspective scale")
    if not np.isfinite(frame.weak_persp_scale) or frame.weak_persp_scale <= 0:
        raise InvalidScale(f"weak-perspective scale must be > 0, got {frame.weak_persp_scale}")
    return intr.fx / frame.weak_persp_scale


def wrist_position_weak_perspective(frame: HandFrame, intr: CameraIntrinsics) -> np.ndarray:
    """Wrist position from the weak-perspective depth estimate fx / scale."""
    depth = weak_perspective_depth(frame, intr)
    return backproject(frame.keypoints_pixel[WRIST], depth, intr)


def estimate_wrist_pose(frame: HandFrame, intr: CameraIntrinsics) -> WristPose:
    """Dispatch: depth-based alignment when >= 4 depths are valid, else RGB-only."""
    if int(frame.valid_depth_mask().sum()) >= MIN_DEPTH_CORRESPONDENCES:
        return wrist_pose_rgbd(frame, intr)
    position = wrist_position_weak_perspective(frame, intr)
    lifted = lift_keypoints_weak_perspective(frame, intr)
    rotation = wrist_orientation_rgb(frame, lifted)
    return WristPose(frame.camera_id, frame.timestamp,
                     RigidTransform(rotation, position), "rgb_only")
