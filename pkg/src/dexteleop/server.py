"""Teleoperation engine: sessions, per-frame pipeline, shared scene.

This module is the deterministic core of the server: it has no sockets, no
wall clock, and no randomness. All state transitions are driven by two
inputs, `ingest_hand_frame(session_id, frame)` and `advance(now_us)`, which
makes full sessions replayable bit-for-bit. The network layer in
`dexteleop.net` feeds it from TCP/websocket connections; the replay harness
in `dexteleop.sim_client` feeds it from recordings.

Pipeline per active session: estimate_wrist_pose -> fuse -> integrate ->
Cartesian target for the arm controller, and compute_human_vectors ->
retarget -> finger joint targets. During the calibration phase frames are
routed to the fusion auto-calibration instead.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (BadRobotDescription, DuplicateRobot, NotCalibrated, NoValidCamera,
                     StaleMotion, StaleTarget, UnknownCamera, UnknownSession)
from .fusion import (CalibrationState, IntegratedWristState, accumulate_calibration,
                     fuse, integrate)
from .kinematics import JointConfig, RobotModel, load_robot_description
from .motion_gen import (ControllerGains, ControllerState, JointCommand, MotionTarget,
                         control_step, submit_target)
from .retargeting import RetargetConfig, RetargetState, compute_human_vectors, retarget
from .transforms import RigidTransform, rpy_matrix
from .wrist_pose import CameraIntrinsics, HandFrame, estimate_wrist_pose

logger = logging.getLogger(__name__)

AWAITING_CALIBRATION = "awaiting_calibration"
ACTIVE = "active"
PAUSED = "paused"
LOST_TRACKING = "lost_tracking"

DEFAULT_TRACKING_LOSS_US = 300_000


@dataclass
class RobotSpec:
    robot_id: str
    urdf: str                      # URDF XML text
    ee_link: str
    arm_joints: List[str]
    hand_joints: List[str] = field(default_factory=list)
    spheres: Optional[str] = None  # sidecar JSON text
    retarget: Optional[RetargetConfig] = None
    base_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    gains: ControllerGains = field(default_factory=ControllerGains)
    initial_arm_q: Optional[np.ndarray] = None
    model_name: str = ""


@dataclass
class SessionSpec:
    session_id: str
    operator_id: str
    robot_id: str
    cameras: Dict[str, CameraIntrinsics]
    camera_to_robot: RigidTransform = field(default_factory=RigidTransform.identity)
    calibration_frames: int = 50
    reference_camera: Optional[str] = None  # default: lexicographically smallest


@dataclass
class SceneObject:
    object_id: str
    pose: RigidTransform
    mesh: Optional[str] = None


class SceneState:
    """Authoritative multi-robot scene; the unit broadcast to viewers."""

    def __init__(self):
        self.tick = 0
        self.timestamp_us = 0
        self.robots: Dict[str, dict] = {}
        self.objects: Dict[str, SceneObject] = {}

    def register_robot(self, robot_id: str, model_name: str, base_pose: RigidTransform,
                       arm_q, hand_q):
        self.robots[robot_id] = {
            "robot_id": robot_id,
            "model": model_name,
            "arm_q": np.asarray(arm_q, dtype=float),
            "hand_q": np.asarray(hand_q, dtype=float),
            "base_pose": base_pose,
        }

    def update_robot(self, robot_id: str, arm_q, hand_q, timestamp_us: int):
        entry = self.robots[robot_id]
        entry["arm_q"] = np.asarray(arm_q, dtype=float)
        entry["hand_q"] = np.asarray(hand_q, dtype=float)
        self.tick += 1
        self.timestamp_us = timestamp_us

    def payload(self) -> dict:
        robots = []
        for rid in sorted(self.robots):
            entry = self.robots[rid]
            base = entry["base_pose"]
            robots.append({
                "robot_id": rid,
                "model": entry["model"],
                "arm_q": entry["arm_q"].tolist(),
                "hand_q": entry["hand_q"].tolist(),
                "base_pose": {"position": base.translation.tolist(),
                              "rotation": base.rotation.reshape(-1).tolist()},
            })
        objects = []
        for oid in sorted(self.objects):
            obj = self.objects[oid]
            objects.append({
                "object_id": oid,
                "pose": {"position": obj.pose.translation.tolist(),
                         "rotation": obj.pose.rotation.reshape(-1).tolist()},
                "mesh": obj.mesh,
            })
        return {"tick": self.tick, "robots": robots, "objects": objects}


class Session:
    """One operator-robot pairing and all of its pipeline state."""

    def __init__(self, spec: SessionSpec, robot: RobotSpec, model: RobotModel,
                 control_dt: float, target_rate_hz: float):
        self.spec = spec
        self.robot = robot
        self.model = model
        self.status = AWAITING_CALIBRATION
        self.calibration = CalibrationState(list(spec.cameras),
                                            frames_required=spec.calibration_frames,
                                            reference_camera=spec.reference_camera)
        self.retarget_state = RetargetState()
        self.controller = ControllerState(model, robot.ee_link, robot.arm_joints,
                                          robot.hand_joints, q0=robot.initial_arm_q,
                                          control_dt=control_dt, gains=robot.gains)
        self.target_rate_hz = target_rate_hz
        self.integrated = IntegratedWristState()
        self.anchor: Optional[RigidTransform] = None
        self.last_pose: Dict[str, object] = {c: None for c in spec.cameras}
        self.prev_pose: Dict[str, object] = {c: None for c in spec.cameras}
        self.last_shape: Dict[str, Optional[np.ndarray]] = {c: None for c in spec.cameras}
        self.last_frame: Dict[str, Optional[HandFrame]] = {c: None for c in spec.cameras}
        self.last_camera_ts: Dict[str, int] = {c: -1 for c in spec.cameras}
        self.last_any_frame_us = -1
        self.next_tick_us: Optional[int] = None
        self.tick_index = 0
        self.epoch_us = 0
        self.hand_q = JointConfig(
            ((model.lower + model.upper) * 0.5)[self.controller.hand_cols])

    def reset_motion_tracking(self):
        self.integrated = IntegratedWristState()
        for cam in self.spec.cameras:
            self.last_pose[cam] = None
            self.prev_pose[cam] = None

    def desired_pose(self) -> RigidTransform:
        return self.controller.desired_pose()


class EngineConfig:
    def __init__(self, control_rate_hz: float = 120.0, target_rate_hz: float = 25.0,
                 tracking_loss_us: int = DEFAULT_TRACKING_LOSS_US,
                 calibration_frames: int = 50):
        self.control_rate_hz = control_rate_hz
        self.target_rate_hz = target_rate_hz
        self.tracking_loss_us = tracking_loss_us
        self.calibration_frames = calibration_frames
        self.tick_us = round(1e6 / control_rate_hz)


class TeleopEngine:
    def __init__(self, config: Optional[EngineConfig] = None):
        self.config = config or EngineConfig()
        self.sessions: Dict[str, Session] = {}
        self.robots: Dict[str, RobotSpec] = {}
        self.models: Dict[str, RobotModel] = {}
        self.scene = SceneState()

    # -- setup --------------------------------------------------------------

    def register_robot(self, spec: RobotSpec) -> RobotModel:
        if spec.robot_id in self.robots:
            raise DuplicateRobot(f"robot {spec.robot_id!r} already registered")
        try:
            model = load_robot_description(spec.urdf, spec.spheres)
        except Exception as exc:
            raise BadRobotDescription(f"robot {spec.robot_id!r}: {exc}") from exc
        if spec.retarget is not None:
            spec.retarget.validate_against(model)
        missing = [j for j in list(spec.arm_joints) + list(spec.hand_joints)
                   if j not in model.actuated_joints]
        if missing:
            raise BadRobotDescription(f"robot {spec.robot_id!r}: joints {missing} "
                                      "not in the actuated ordering")
        spec.model_name = spec.model_name or model.name
        self.robots[spec.robot_id] = spec
        self.models[spec.robot_id] = model
        return model

    def start_session(self, spec: SessionSpec) -> Session:
        if spec.robot_id not in self.robots:
            raise BadRobotDescription(f"unknown robot {spec.robot_id!r}")
        for session in self.sessions.values():
            if session.spec.robot_id == spec.robot_id:
                raise DuplicateRobot(f"robot {spec.robot_id!r} already has a session")
        if spec.session_id in self.sessions:
            raise DuplicateRobot(f"session {spec.session_id!r} already exists")
        if not spec.cameras:
            raise UnknownCamera("session needs at least one camera")
        robot = self.robots[spec.robot_id]
        model = self.models[spec.robot_id]
        session = Session(spec, robot, model, 1.0 / self.config.control_rate_hz,
                          self.config.target_rate_hz)
        self.sessions[spec.session_id] = session
        controller = session.controller
        self.scene.register_robot(spec.robot_id, robot.model_name, robot.base_pose,
                                  controller.q, controller.hand_q)
        logger.info("session %s: operator %s driving robot %s (%d cameras)",
                    spec.session_id, spec.operator_id, spec.robot_id, len(spec.cameras))
        return session

    def stop_session(self, session_id: str):
        session = self._session(session_id)
        del self.sessions[session_id]
        self.scene.robots.pop(session.spec.robot_id, None)

    def pause_session(self, session_id: str):
        session = self._session(session_id)
        if session.status in (ACTIVE, LOST_TRACKING):
            held = session.desired_pose()
            target = MotionTarget(held, session.hand_q.copy(),
                                  session.controller.active_target.timestamp + 1
                                  if session.controller.active_target else 0)
            session.controller.previous_target = target
            session.controller.active_target = target
            session.status = PAUSED

    def resume_session(self, session_id: str):
        session = self._session(session_id)
        if session.status == PAUSED:
            session.status = ACTIVE
            session.anchor = session.desired_pose()
            session.reset_motion_tracking()

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"no session {session_id!r}") from None

    # -- frame ingestion ------------------------------------------------------

    def ingest_hand_frame(self, session_id: str, frame: HandFrame) -> dict:
        session = self._session(session_id)
        cam = frame.camera_id
        if cam not in session.spec.cameras:
            raise UnknownCamera(f"camera {cam!r} not registered for {session_id!r}")
        if frame.timestamp <= session.last_camera_ts[cam]:
            return {"accepted": False, "reason": "stale_frame", "status": session.status}
        session.last_camera_ts[cam] = frame.timestamp
        session.last_any_frame_us = max(session.last_any_frame_us, frame.timestamp)
        session.last_frame[cam] = frame

        if session.status == PAUSED:
            return {"accepted": False, "reason": "session_paused", "status": session.status}
        if session.status == AWAITING_CALIBRATION:
            return self._ingest_calibrating(session, frame)
        return self._ingest_active(session, frame)

    def _ingest_calibrating(self, session: Session, frame: HandFrame) -> dict:
        intr = session.spec.cameras[frame.camera_id]
        pose = estimate_wrist_pose(frame, intr)
        accumulate_calibration(session.calibration, frame.camera_id, pose,
                               frame.shape_params)
        if session.calibration.ready:
            self._activate(session, frame.timestamp)
        return {"accepted": True, "reason": None, "status": session.status,
                "frames_remaining": session.calibration.frames_remaining()}

    def _activate(self, session: Session, now_us: int):
        session.status = ACTIVE
        session.anchor = session.controller.ee_pose()
        session.reset_motion_tracking()
        session.epoch_us = now_us
        session.tick_index = 0
        session.next_tick_us = now_us + self.config.tick_us
        submit_target(session.controller,
                      MotionTarget(session.anchor, session.hand_q.copy(), now_us))
        logger.info("session %s calibrated and active at t=%dus",
                    session.spec.session_id, now_us)

    def _resume(self, session: Session):
        session.status = ACTIVE
        session.anchor = session.desired_pose()
        session.reset_motion_tracking()
        logger.info("session %s resumed tracking; target re-anchored",
                    session.spec.session_id)

    def _ingest_active(self, session: Session, frame: HandFrame) -> dict:
        if session.status == LOST_TRACKING:
            self._resume(session)
        cam = frame.camera_id
        intr = session.spec.cameras[cam]
        pose = estimate_wrist_pose(frame, intr)
        session.prev_pose[cam] = session.last_pose[cam]
        session.last_pose[cam] = pose
        session.last_shape[cam] = frame.shape_params

        per_camera = {}
        for camera_id in session.spec.cameras:
            last, prev = session.last_pose[camera_id], session.prev_pose[camera_id]
            if last is not None and prev is not None:
                per_camera[camera_id] = (last, prev, session.last_shape[camera_id])

        chosen_frame = frame
        moved = False
        if per_camera:
            try:
                motion = fuse(session.calibration, per_camera)
                integrate(session.integrated, motion)
                chosen_frame = session.last_frame[motion.chosen_camera] or frame
                moved = True
            except (StaleMotion, NoValidCamera, NotCalibrated):
                pass

        if session.robot.retarget is not None:
            vectors = compute_human_vectors(chosen_frame.keypoints_local,
                                            session.robot.retarget)
            session.hand_q = retarget(session.retarget_state, vectors,
                                      session.robot.retarget, session.model)

        if moved or session.robot.retarget is not None:
            target_pose = self._target_pose(session)
            try:
                submit_target(session.controller,
                              MotionTarget(target_pose, session.hand_q.copy(),
                                           frame.timestamp))
            except StaleTarget:
                pass
        return {"accepted": True, "reason": None, "status": session.status}

    def _target_pose(self, session: Session) -> RigidTransform:
        """Integrated wrist motion conjugated into the robot base, applied to the anchor."""
        mapping = session.spec.camera_to_robot.rotation
        delta = session.integrated.pose
        rot = mapping @ delta.rotation @ mapping.T
        trans = mapping @ delta.translation
        anchor = session.anchor
        return RigidTransform(rot @ anchor.rotation, rot @ anchor.translation + trans)

    # -- time advancement -----------------------------------------------------

    def detect_tracking_loss(self, session: Session, now_us: int):
        """Freeze the target pose when frames stop arriving for too long."""
        if session.status != ACTIVE or session.last_any_frame_us < 0:
            return
        if now_us - session.last_any_frame_us > self.config.tracking_loss_us:
            held = session.desired_pose()
            session.status = LOST_TRACKING
            target = MotionTarget(held, session.hand_q.copy(), now_us)
            session.controller.previous_target = target
            session.controller.active_target = target
            session.controller._ticks_since_target = 0
            logger.info("session %s lost tracking; holding pose", session.spec.session_id)

    def advance(self, now_us: int) -> List[Tuple[str, JointCommand]]:
        """Run every controller tick due at or before now_us, in global time order."""
        out: List[Tuple[str, JointCommand]] = []
        while True:
            due = [(s.next_tick_us, sid) for sid, s in sorted(self.sessions.items())
                   if s.next_tick_us is not None and s.next_tick_us <= now_us]
            if not due:
                break
            tick_us, sid = min(due)
            session = self.sessions[sid]
            self.detect_tracking_loss(session, tick_us)
            session, command = self._tick_session(session, tick_us)
            out.append((session.spec.robot_id, command))
        for session in self.sessions.values():
            self.detect_tracking_loss(session, now_us)
        return out

    def _tick_session(self, session: Session, tick_us: int):
        _, command = control_step(session.controller, session.model)
        command.timestamp = tick_us
        command.arm_q.timestamp = tick_us
        command.hand_q.timestamp = tick_us
        session.tick_index += 1
        session.next_tick_us = session.epoch_us + round(
            (session.tick_index + 1) * 1e6 / self.config.control_rate_hz)
        self.scene.update_robot(session.spec.robot_id, command.arm_q.values,
                                command.hand_q.values, tick_us)
        return session, command

    # -- viewer support --------------------------------------------------------

    def scene_payload(self) -> dict:
        return self.scene.payload()

    def robot_description_payload(self, robot_id: str) -> dict:
        """Kinematic digest served to viewers (JSON; no URDF parsing client-side)."""
        if robot_id not in self.robots:
            raise BadRobotDescription(f"unknown robot {robot_id!r}")
        spec = self.robots[robot_id]
        model = self.models[robot_id]
        joints = []
        for jnt in model.joints:
            joints.append({
                "name": jnt.name,
                "type": jnt.type,
                "parent": jnt.parent,
                "child": jnt.child,
                "origin": {"position": jnt.origin.translation.tolist(),
                           "rotation": jnt.origin.rotation.reshape(-1).tolist()},
                "axis": jnt.axis.tolist(),
                "mimic": None if jnt.mimic is None else list(jnt.mimic),
            })
        links = []
        for link in model.links:
            links.append({
                "name": link.name,
                "mesh": link.visual_mesh,
                "spheres": [{"center": s.center.tolist(), "radius": s.radius}
                            for s in link.spheres],
            })
        base = spec.base_pose
        return {
            "robot_id": robot_id,
            "model": spec.model_name,
            "base_link": model.base_link,
            "links": links,
            "joints": joints,
            "actuated_joints": list(model.actuated_joints),
            "arm_joints": list(spec.arm_joints),
            "hand_joints": list(spec.hand_joints),
            "base_pose": {"position": base.translation.tolist(),
                          "rotation": base.rotation.reshape(-1).tolist()},
        }


# ---------------------------------------------------------------------------
# Config file loading
# ---------------------------------------------------------------------------

def _pose_from_config(raw: Optional[dict]) -> RigidTransform:
    if not raw:
        return RigidTransform.identity()
    rot = np.eye(3)
    if "rotation_rpy" in raw:
        rot = rpy_matrix(*raw["rotation_rpy"])
    elif "rotation" in raw:
        rot = np.asarray(raw["rotation"], dtype=float).reshape(3, 3)
    return RigidTransform(rot, np.asarray(raw.get("position", [0, 0, 0]), dtype=float))


def session_spec_from_config(entry: dict, default_calibration_frames: int = 50) -> SessionSpec:
    """Session spec from its JSON form (config file entry or wire payload)."""
    cameras = {}
    for cam in entry["cameras"]:
        intr = cam["intrinsics"]
        cameras[cam["camera_id"]] = CameraIntrinsics(
            fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
            width=intr["width"], height=intr["height"])
    return SessionSpec(
        session_id=entry["session_id"],
        operator_id=entry.get("operator_id", entry["session_id"]),
        robot_id=entry["robot_id"],
        cameras=cameras,
        camera_to_robot=_pose_from_config(entry.get("camera_to_robot")),
        calibration_frames=entry.get("calibration_frames", default_calibration_frames),
        reference_camera=entry.get("reference_camera"),
    )


def load_server_config(text: str, base_dir=None) -> Tuple[EngineConfig, List[RobotSpec],
                                                          List[SessionSpec], List[SceneObject]]:
    """Parse the JSON server config; *_path entries are read relative to base_dir."""
    from pathlib import Path
    raw = json.loads(text)
    base = Path(base_dir) if base_dir is not None else Path(".")

    def read_inline_or_path(entry: dict, key: str) -> Optional[str]:
        if key in entry:
            value = entry[key]
            return json.dumps(value) if isinstance(value, (dict, list)) else str(value)
        if f"{key}_path" in entry:
            return (base / entry[f"{key}_path"]).read_text()
        return None

    config = EngineConfig(
        control_rate_hz=raw.get("control_rate_hz", 120.0),
        target_rate_hz=raw.get("target_rate_hz", 25.0),
        tracking_loss_us=round(raw.get("tracking_loss_timeout_ms", 300.0) * 1000),
        calibration_frames=raw.get("calibration_frames", 50),
    )

    robots = []
    for robot_id, entry in raw.get("robots", {}).items():
        urdf = read_inline_or_path(entry, "urdf")
        if urdf is None:
            raise BadRobotDescription(f"robot {robot_id!r} has no urdf/urdf_path")
        retarget_text = read_inline_or_path(entry, "retarget")
        gains = ControllerGains(**entry.get("gains", {}))
        robots.append(RobotSpec(
            robot_id=robot_id,
            urdf=urdf,
            ee_link=entry["ee_link"],
            arm_joints=list(entry.get("arm_joints", [])),
            hand_joints=list(entry.get("hand_joints", [])),
            spheres=read_inline_or_path(entry, "spheres"),
            retarget=None if retarget_text is None else RetargetConfig.from_json(retarget_text),
            base_pose=_pose_from_config(entry.get("base_pose")),
            gains=gains,
            initial_arm_q=None if "initial_arm_q" not in entry
            else np.asarray(entry["initial_arm_q"], dtype=float),
        ))

    sessions = [session_spec_from_config(entry, config.calibration_frames)
                for entry in raw.get("sessions", [])]

    objects = [SceneObject(o["object_id"], _pose_from_config(o.get("pose")), o.get("mesh"))
               for o in raw.get("objects", [])]
    return config, robots, sessions, objects


def build_engine(text: str, base_dir=None) -> TeleopEngine:
    config, robots, sessions, objects = load_server_config(text, base_dir)
    engine = TeleopEngine(config)
    for robot in robots:
        engine.register_robot(robot)
    for session in sessions:
        engine.start_session(session)
    for obj in objects:
        engine.scene.objects[obj.object_id] = obj
    return engine
