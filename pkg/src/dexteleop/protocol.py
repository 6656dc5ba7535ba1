"""Wire protocol: length-prefixed JSON envelopes shared by all clients.

Every message is one JSON object:

    {"type": <TYPE>, "session_id": <str|null>, "timestamp_us": <int>,
     "payload": {...}}

framed on byte streams as a 4-byte big-endian length followed by the UTF-8
body. Websocket viewers receive the same JSON objects as text frames.

Payload schemas (wire names are fixed):

  HAND_FRAME     {camera_id, keypoints_local: [[x,y,z] x21] m,
                  keypoints_pixel: [[u,v] x21] px, depth: [d x21] m | null,
                  shape_params: [b x10] | null, weak_persp_scale: num | null,
                  hand_reference_size: m}
  JOINT_COMMAND  {robot_id, arm_q: [...], hand_q: [...]}
  SCENE_STATE    {tick, robots: [{robot_id, model, arm_q, hand_q, base_pose}],
                  objects: [{object_id, pose, mesh}]}
  SESSION_CONTROL{action: start|pause|resume|stop|attach_robot|subscribe_scene,
                  ...action-specific fields}
  HEARTBEAT      {}
  ERROR          {reason, detail}
"""
from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .errors import MalformedFrame
from .wrist_pose import HandFrame

HAND_FRAME = "HAND_FRAME"
JOINT_COMMAND = "JOINT_COMMAND"
SCENE_STATE = "SCENE_STATE"
SESSION_CONTROL = "SESSION_CONTROL"
HEARTBEAT = "HEARTBEAT"
ERROR = "ERROR"

MESSAGE_TYPES = {HAND_FRAME, JOINT_COMMAND, SCENE_STATE, SESSION_CONTROL, HEARTBEAT, ERROR}

_LENGTH = struct.Struct(">I")
MAX_FRAME_BYTES = 8 * 1024 * 1024


def make_message(msg_type: str, payload: dict, timestamp_us: int,
                 session_id: Optional[str] = None) -> dict:
    if msg_type not in MESSAGE_TYPES:
        raise ValueError(f"unknown message type {msg_type!r}")
    return {"type": msg_type, "session_id": session_id,
            "timestamp_us": int(timestamp_us), "payload": payload}


def encode_message(message: dict) -> bytes:
    """Canonical JSON encoding; stable byte-for-byte for identical content."""
    return json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_message(data: bytes) -> dict:
    try:
        message = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"undecodable message: {exc}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise MalformedFrame("message is not an envelope object")
    if message["type"] not in MESSAGE_TYPES:
        raise MalformedFrame(f"unknown message type {message['type']!r}")
    if "timestamp_us" not in message:
        raise MalformedFrame("message lacks timestamp_us")
    message.setdefault("session_id", None)
    message.setdefault("payload", {})
    return message


def frame_bytes(body: bytes) -> bytes:
    return _LENGTH.pack(len(body)) + body


async def read_framed(reader) -> Optional[bytes]:
    """Read one length-prefixed frame from an asyncio StreamReader.

    Returns None on clean EOF at a frame boundary.
    """
    import asyncio
    try:
        header = await reader.readexactly(_LENGTH.size)
    except (asyncio.IncompleteReadError, ConnectionResetError):
        return None
    (length,) = _LENGTH.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise MalformedFrame(f"frame of {length} bytes exceeds limit")
    try:
        return await reader.readexactly(length)
    except asyncio.IncompleteReadError as exc:
        raise MalformedFrame("stream truncated mid-frame") from exc


# --- HAND_FRAME ------------------------------------------------------------

def hand_frame_payload(frame: HandFrame) -> dict:
    return {
        "camera_id": frame.camera_id,
        "keypoints_local": frame.keypoints_local.tolist(),
        "keypoints_pixel": frame.keypoints_pixel.tolist(),
        "depth": None if frame.keypoint_depth is None else frame.keypoint_depth.tolist(),
        "shape_params": None if frame.shape_params is None else frame.shape_params.tolist(),
        "weak_persp_scale": frame.weak_persp_scale,
        "hand_reference_size": frame.hand_reference_size,
    }


def hand_frame_message(frame: HandFrame, session_id: str) -> dict:
    return make_message(HAND_FRAME, hand_frame_payload(frame), frame.timestamp, session_id)


def parse_hand_frame(message: dict) -> HandFrame:
    """Validate a HAND_FRAME envelope into a HandFrame; MalformedFrame on errors."""
    if message.get("type") != HAND_FRAME:
        raise MalformedFrame(f"expected HAND_FRAME, got {message.get('type')!r}")
    payload = message.get("payload") or {}
    try:
        camera_id = str(payload["camera_id"])
        kp_local = np.asarray(payload["keypoints_local"], dtype=float)
        kp_pixel = np.asarray(payload["keypoints_pixel"], dtype=float)
        depth = payload.get("depth")
        depth = None if depth is None else np.asarray(depth, dtype=float)
        shape = payload.get("shape_params")
        shape = None if shape is None else np.asarray(shape, dtype=float)
        scale = payload.get("weak_persp_scale")
        scale = None if scale is None else float(scale)
        ref_size = float(payload.get("hand_reference_size", 0.09))
        return HandFrame(camera_id, int(message["timestamp_us"]), kp_local, kp_pixel,
                         depth, shape, scale, ref_size)
    except MalformedFrame:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFrame(f"bad HAND_FRAME payload: {exc}") from exc


# --- JOINT_COMMAND ---------------------------------------------------------

def joint_command_message(robot_id: str, command, session_id: Optional[str] = None) -> dict:
    return make_message(JOINT_COMMAND, {
        "robot_id": robot_id,
        "arm_q": command.arm_q.values.tolist(),
        "hand_q": command.hand_q.values.tolist(),
    }, command.timestamp, session_id)


def error_message(reason: str, detail: str = "", timestamp_us: int = 0,
                  session_id: Optional[str] = None) -> dict:
    return make_message(ERROR, {"reason": reason, "detail": detail},
                        timestamp_us, session_id)
