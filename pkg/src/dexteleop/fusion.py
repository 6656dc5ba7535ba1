"""Multi-camera detection fusion.

Cameras are calibrated against each other using the operator's hand as a
natural marker: the first N frames of per-camera wrist orientations feed an
orthogonal Procrustes fit for each camera's relative rotation to the
reference camera. No relative translation is estimated; only relative wrist
motions are fused, so absolute-position disagreement between cameras never
enters the pipeline.

Per-frame confidence comes from hand shape parameters: a per-operator
reference shape is the mean over the calibration window, and a camera's
confidence is exp(-||shape - reference||). The camera with the highest
confidence contributes its relative motion, conjugated into the reference
camera frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import (CalibrationRankDeficient, NoValidCamera, NotCalibrated, StaleMotion,
                     UnknownCamera)
from .transforms import RigidTransform, orthonormalize
from .wrist_pose import WristPose

DEFAULT_CALIBRATION_FRAMES = 50
MISSING_SHAPE_PENALTY = 10.0  # frames without shape params score exp(-10)
DIVERSITY_TOL = 1e-6

CALIBRATING, READY = "calibrating", "ready"


@dataclass
class FusedMotion:
    timestamp: int
    delta_pose: RigidTransform  # wrist motion between consecutive frames, reference frame
    chosen_camera: str
    confidence: float


@dataclass
class IntegratedWristState:
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    last_timestamp: int = -1


class CalibrationState:
    """Per-session calibration buffer and, once ready, the camera rig model."""

    def __init__(self, camera_ids, frames_required: int = DEFAULT_CALIBRATION_FRAMES,
                 reference_camera: Optional[str] = None):
        if frames_required < 1:
            raise ValueError("frames_required must be >= 1")
        if not camera_ids:
            raise ValueError("at least one camera required")
        self.camera_ids = sorted(camera_ids)
        self.reference_camera = reference_camera or self.camera_ids[0]
        if self.reference_camera not in self.camera_ids:
            raise UnknownCamera(self.reference_camera)
        self.frames_required = frames_required
        self.phase = CALIBRATING
        self.buffered: Dict[str, list] = {c: [] for c in self.camera_ids}
        self.relative_rotation: Dict[str, np.ndarray] = {}
        self.shape_reference: Optional[np.ndarray] = None

    @property
    def ready(self) -> bool:
        return self.phase == READY

    def frames_remaining(self) -> int:
        return max(self.frames_required - min(len(b) for b in self.buffered.values()), 0)


def accumulate_calibration(state: CalibrationState, camera_id: str, pose: WristPose,
                           shape: Optional[np.ndarray] = None) -> CalibrationState:
    """Buffer one calibration frame; finalize once every camera holds N frames.

    Finalization solves, per camera c, min_R sum_t ||R @ R_c,t - R_ref,t||_F^2
    with R constrained to SO(3) (SVD of sum_t R_ref,t @ R_c,t^T, det-corrected),
    and freezes the shape reference as the mean of all buffered shape vectors.
    """
    if state.phase != CALIBRATING:
        raise NotCalibrated("calibration already finalized")
    if camera_id not in state.buffered:
        raise UnknownCamera(camera_id)
    buf = state.buffered[camera_id]
    if len(buf) < state.frames_required:
        buf.append((pose.pose.rotation,
                    None if shape is None else np.asarray(shape, dtype=float).reshape(10)))
    if all(len(b) >= state.frames_required for b in state.buffered.values()):
        _finalize(state)
    return state


def _finalize(state: CalibrationState):
    ref_rots = [r for r, _ in state.buffered[state.reference_camera]]
    for cam in state.camera_ids:
        cam_rots = [r for r, _ in state.buffered[cam]]
        n = min(len(ref_rots), len(cam_rots))
        procrustes = sum(ref_rots[t] @ cam_rots[t].T for t in range(n))
        # Rotational diversity check on the mean-centered cross term: a
        # constant-orientation stream collapses it to (numerical) zero.
        ref_mean = sum(ref_rots[:n]) / n
        cam_mean = sum(cam_rots[:n]) / n
        centered = sum((ref_rots[t] - ref_mean) @ (cam_rots[t] - cam_mean).T
                       for t in range(n))
        if cam != state.reference_camera:
            svals = np.linalg.svd(centered, compute_uv=False)
            if svals[1] < DIVERSITY_TOL:
                raise CalibrationRankDeficient(
                    f"camera {cam!r}: hand orientations lack rotational diversity")
        u, _, vt = np.linalg.svd(procrustes)
        d = np.sign(np.linalg.det(u @ vt))
        state.relative_rotation[cam] = u @ np.diag([1.0, 1.0, d]) @ vt

    shapes = [s for cam in state.camera_ids for _, s in state.buffered[cam] if s is not None]
    state.shape_reference = (np.mean(shapes, axis=0) if shapes else np.zeros(10))
    state.phase = READY


def confidence(shape: Optional[np.ndarray], state: CalibrationState) -> float:
    """exp(-L2 shape error); frames without shape params get a near-floor score."""
    if state.phase != READY:
        raise NotCalibrated("confidence needs a finalized calibration")
    if shape is None:
        return float(np.exp(-MISSING_SHAPE_PENALTY))
    err = float(np.linalg.norm(np.asarray(shape, dtype=float).reshape(10)
                               - state.shape_reference))
    return float(np.exp(-err))


def fuse(state: CalibrationState,
         per_camera: Dict[str, Tuple[WristPose, WristPose, Optional[np.ndarray]]]) -> FusedMotion:
    """Select the most confident camera's relative motion, in the reference frame.

    per_camera maps camera_id -> (pose_t, pose_prev, shape_t). Ties on
    confidence break toward the lexicographically smallest camera_id.
    """
    if state.phase != READY:
        raise NotCalibrated("fuse needs a finalized calibration")
    candidates = []
    for cam in sorted(per_camera):
        if cam not in state.relative_rotation:
            raise UnknownCamera(cam)
        entry = per_camera[cam]
        if entry is None:
            continue
        pose_t, pose_prev, shape = entry
        if pose_t is None or pose_prev is None:
            continue
        candidates.append((cam, pose_t, pose_prev, confidence(shape, state)))
    if not candidates:
        raise NoValidCamera("no camera supplied two consecutive poses")

    best = max(candidates, key=lambda c: c[3])  # max() keeps the first on ties
    cam, pose_t, pose_prev, conf = best
    delta = pose_t.pose @ pose_prev.pose.inverse()
    rel = state.relative_rotation[cam]
    rotation = orthonormalize(rel @ delta.rotation @ rel.T)
    translation = rel @ delta.translation
    return FusedMotion(pose_t.timestamp, RigidTransform(rotation, translation), cam, conf)


def integrate(state: IntegratedWristState, motion: FusedMotion) -> IntegratedWristState:
    """Accumulate a relative motion; rotation re-orthonormalized every step."""
    if motion.timestamp <= state.last_timestamp:
        raise StaleMotion(
            f"motion at {motion.timestamp} not newer than {state.last_timestamp}")
    composed = motion.delta_pose @ state.pose
    state.pose = composed.orthonormalized()
    state.last_timestamp = motion.timestamp
    return state
