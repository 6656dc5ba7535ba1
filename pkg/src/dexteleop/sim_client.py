"""Kinematic simulation client, synthetic operators, and session recordings.

The scene here is a pure kinematic mirror: JOINT_COMMAND streams teleport
joint values (no dynamics), with a defensive limit re-check since an
out-of-limit command can only mean a server bug.

SyntheticHandScript stands in for the human operator: it renders a scripted
hand trajectory through any number of synthetic cameras into HandFrame
streams (pixels, depths, weak-perspective scale, shape params), with seeded
Gaussian noise, so full sessions can be driven deterministically in tests.

Recordings are newline-delimited JSON: one header line, then one event per
line tagged with direction ("in" = messages to the server, "out" = messages
it emitted). Replay re-feeds the "in" events through a fresh engine and
returns the commands it produces; with the deterministic pipeline this
reproduces the recorded output bit-for-bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CorruptRecording, EmptyScript, LimitViolation, UnknownRobot
from .kinematics import RobotModel
from .motion_gen import JointCommand
from .protocol import (HAND_FRAME, JOINT_COMMAND, encode_message, hand_frame_message,
                       joint_command_message, parse_hand_frame)
from .server import SceneState, TeleopEngine, build_engine
from .transforms import RigidTransform, slerp
from .wrist_pose import CameraIntrinsics, HandFrame, project

RECORDING_KIND = "dexteleop-recording"
RECORDING_VERSION = 1


# ---------------------------------------------------------------------------
# Kinematic scene
# ---------------------------------------------------------------------------

class SimScene:
    """Reality stand-in: applies command streams onto a kinematic scene."""

    def __init__(self):
        self.scene = SceneState()
        self.models: Dict[str, RobotModel] = {}
        self.arm_cols: Dict[str, np.ndarray] = {}
        self.hand_cols: Dict[str, np.ndarray] = {}

    def register_robot(self, robot_id: str, model: RobotModel, arm_joints, hand_joints,
                       base_pose: Optional[RigidTransform] = None):
        index = {name: i for i, name in enumerate(model.actuated_joints)}
        self.models[robot_id] = model
        self.arm_cols[robot_id] = np.array([index[j] for j in arm_joints], dtype=int)
        self.hand_cols[robot_id] = np.array([index[j] for j in hand_joints], dtype=int)
        mid = (model.lower + model.upper) * 0.5
        self.scene.register_robot(robot_id, model.name,
                                  base_pose or RigidTransform.identity(),
                                  mid[self.arm_cols[robot_id]],
                                  mid[self.hand_cols[robot_id]])

    def apply_command(self, robot_id: str, cmd: JointCommand) -> SceneState:
        """Kinematic teleport to the commanded configuration; tick increments."""
        if robot_id not in self.models:
            raise UnknownRobot(f"no robot {robot_id!r} in scene")
        model = self.models[robot_id]
        for vals, cols in ((cmd.arm_q.values, self.arm_cols[robot_id]),
                           (cmd.hand_q.values, self.hand_cols[robot_id])):
            if vals.shape[0] != cols.shape[0]:
                raise LimitViolation(
                    f"command for {robot_id!r} has wrong dimension {vals.shape[0]}")
            if np.any(vals < model.lower[cols]) or np.any(vals > model.upper[cols]):
                raise LimitViolation(f"command for {robot_id!r} violates joint limits")
        self.scene.update_robot(robot_id, cmd.arm_q.values, cmd.hand_q.values,
                                cmd.timestamp)
        return self.scene


# ---------------------------------------------------------------------------
# Synthetic operator
# ---------------------------------------------------------------------------

@dataclass
class HandWaypoint:
    time: float                      # seconds
    wrist_pose: RigidTransform       # hand pose in the script's world frame
    keypoints_local: np.ndarray      # (21, 3) canonical wrist-frame landmarks


@dataclass
class NoiseSpec:
    keypoint_sigma: float = 0.0   # m, on local keypoints
    depth_sigma: float = 0.0      # m, on per-keypoint depth
    shape_sigma: float = 0.0      # on the 10 shape parameters

    def __post_init__(self):
        if min(self.keypoint_sigma, self.depth_sigma, self.shape_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass
class SyntheticCamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform = field(default_factory=RigidTransform.identity)
    rgb_only: bool = False


@dataclass
class SyntheticHandScript:
    waypoints: List[HandWaypoint]
    cameras: List[SyntheticCamera]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    shape_params: np.ndarray = field(default_factory=lambda: np.zeros(10))

    def __post_init__(self):
        times = [w.time for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    def pose_at(self, t: float) -> Tuple[RigidTransform, np.ndarray]:
        wps = self.waypoints
        if t <= wps[0].time:
            return wps[0].wrist_pose, wps[0].keypoints_local
        if t >= wps[-1].time:
            return wps[-1].wrist_pose, wps[-1].keypoints_local
        for a, b in zip(wps, wps[1:]):
            if a.time <= t <= b.time:
                frac = (t - a.time) / (b.time - a.time)
                rot = slerp(a.wrist_pose.rotation, b.wrist_pose.rotation, frac)
                trans = ((1 - frac) * a.wrist_pose.translation
                         + frac * b.wrist_pose.translation)
                kp = (1 - frac) * a.keypoints_local + frac * b.keypoints_local
                return RigidTransform(rot, trans), kp
        raise AssertionError("unreachable")


def generate_stream(script: SyntheticHandScript, rate: float,
                    seed: int = 0) -> Dict[str, List[HandFrame]]:
    """Render the scripted hand through every camera at the given frame rate.

    Deterministic for a fixed seed. Depths equal camera-frame z coordinates
    (plus noise); the weak-perspective scale is the exact fx / wrist-depth of
    each frame, standing in for a perfect scale-prediction network.
    """
    if not script.waypoints:
        raise EmptyScript("script has no waypoints")
    if rate <= 0:
        raise ValueError("rate must be > 0")
    rng = np.random.default_rng(seed)
    t0 = script.waypoints[0].time
    t1 = script.waypoints[-1].time
    n_frames = int(np.floor((t1 - t0) * rate)) + 1
    out: Dict[str, List[HandFrame]] = {cam.camera_id: [] for cam in script.cameras}
    for k in range(n_frames):
        t = t0 + k / rate
        wrist_world, kp_local = script.pose_at(t)
        ts = round(t * 1e6)
        for cam in script.cameras:  # fixed camera order keeps streams reproducible
            cam_pose = cam.extrinsics.inverse() @ wrist_world
            points_cam = cam_pose.apply(kp_local)
            if np.any(points_cam[:, 2] <= 1e-3):
                raise ValueError(f"hand behind camera {cam.camera_id!r} at t={t:.3f}")
            pixels = np.stack([project(p, cam.intrinsics) for p in points_cam])
            kp_noisy = kp_local.copy()
            if script.noise.keypoint_sigma > 0:
                kp_noisy = kp_noisy + rng.normal(scale=script.noise.keypoint_sigma,
                                                 size=(21, 3))
                kp_noisy[0] = 0.0  # wrist stays the local origin by definition
            depth = None
            if not cam.rgb_only:
                depth = points_cam[:, 2].copy()
                if script.noise.depth_sigma > 0:
                    depth = np.maximum(depth + rng.normal(scale=script.noise.depth_sigma,
                                                          size=21), 1e-3)
            shape = script.shape_params.copy()
            if script.noise.shape_sigma > 0:
                shape = shape + rng.normal(scale=script.noise.shape_sigma, size=10)
            out[cam.camera_id].append(HandFrame(
                camera_id=cam.camera_id,
                timestamp=ts,
                keypoints_local=kp_noisy,
                keypoints_pixel=pixels,
                keypoint_depth=depth,
                shape_params=shape,
                weak_persp_scale=float(cam.intrinsics.fx / points_cam[0, 2]),
                hand_reference_size=float(np.linalg.norm(kp_local[9] - kp_local[0])),
            ))
    return out


# ---------------------------------------------------------------------------
# Recording and replay
# ---------------------------------------------------------------------------

@dataclass
class Recording:
    header: dict
    events: List[dict]  # {"dir": "in"|"out", "msg": {...}} sorted by msg timestamp

    def input_events(self) -> List[dict]:
        return [e["msg"] for e in self.events if e["dir"] == "in"]

    def output_events(self) -> List[dict]:
        return [e["msg"] for e in self.events if e["dir"] == "out"]


def make_recording(server_config: dict, events: List[dict]) -> Recording:
    header = {"kind": RECORDING_KIND, "version": RECORDING_VERSION,
              "server_config": server_config}
    ordered = sorted(events, key=lambda e: (e["msg"]["timestamp_us"],
                                            0 if e["dir"] == "in" else 1))
    return Recording(header, ordered)


def save_recording(recording: Recording, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(recording.header, sort_keys=True) + "\n")
        for event in recording.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def load_recording(path) -> Recording:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CorruptRecording(str(exc)) from exc
    if not lines:
        raise CorruptRecording("empty recording file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptRecording(f"bad header line: {exc}") from exc
    if header.get("kind") != RECORDING_KIND:
        raise CorruptRecording("not a dexteleop recording")
    events = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptRecording(f"bad event at line {i}: {exc}") from exc
        if event.get("dir") not in ("in", "out") or "msg" not in event:
            raise CorruptRecording(f"bad event structure at line {i}")
        events.append(event)
    return Recording(header, events)


def run_session(engine: TeleopEngine, frames_by_session: Dict[str, Dict[str, List[HandFrame]]],
                settle_us: int = 0) -> Tuple[List[dict], List[dict]]:
    """Feed per-session camera streams through an engine in timestamp order.

    Returns (input messages, output JOINT_COMMAND messages), both as wire
    dicts. This is the reference harness used by tests and the recorder.
    """
    inputs = []
    for session_id, cams in frames_by_session.items():
        for frames in cams.values():
            for frame in frames:
                inputs.append((frame.timestamp, session_id, frame))
    inputs.sort(key=lambda item: (item[0], item[1], item[2].camera_id))

    in_msgs: List[dict] = []
    out_msgs: List[dict] = []

    def collect(commands):
        for robot_id, command in commands:
            out_msgs.append(joint_command_message(robot_id, command))

    for ts, session_id, frame in inputs:
        collect(engine.advance(ts))
        engine.ingest_hand_frame(session_id, frame)
        in_msgs.append(hand_frame_message(frame, session_id))
    if inputs:
        collect(engine.advance(inputs[-1][0] + settle_us))
    return in_msgs, out_msgs


def replay(recording: Recording, speed: float = 1.0) -> List[dict]:
    """Re-run a recording through a fresh engine (logical clock, no sleeping).

    Command values are reproduced exactly; `speed` only rescales the emitted
    timestamps, as if the session had been executed that much faster.
    """
    if speed <= 0:
        raise ValueError("speed must be > 0")
    config = recording.header.get("server_config")
    if config is None:
        raise CorruptRecording("recording header lacks server_config")
    engine = build_engine(json.dumps(config))
    out: List[dict] = []
    t_first: Optional[int] = None

    def emit(commands):
        nonlocal t_first
        for robot_id, command in commands:
            if t_first is None:
                t_first = command.timestamp
            msg = joint_command_message(robot_id, command)
            if speed != 1.0:
                scaled = t_first + round((command.timestamp - t_first) / speed)
                msg["timestamp_us"] = scaled
            out.append(msg)

    events = recording.input_events()
    last_ts = None
    for msg in events:
        if msg.get("type") != HAND_FRAME:
            continue
        emit(engine.advance(msg["timestamp_us"]))
        frame = parse_hand_frame(msg)
        engine.ingest_hand_frame(msg["session_id"], frame)
        last_ts = msg["timestamp_us"]
    if last_ts is not None:
        emit(engine.advance(last_ts))
    return out


def command_stream_bytes(messages: List[dict]) -> bytes:
    """Canonical byte serialization of a command stream, for bit-exact diffs."""
    return b"\n".join(encode_message(m) for m in messages if m["type"] == JOINT_COMMAND)
