"""Simulation client tests: scene application, synthetic streams, recordings."""
import json

import numpy as np
import pytest

from dexteleop.errors import CorruptRecording, EmptyScript, LimitViolation, UnknownRobot
from dexteleop.kinematics import JointConfig, load_robot_description
from dexteleop.motion_gen import JointCommand
from dexteleop.sim_client import (NoiseSpec, Recording, SimScene, SyntheticCamera,
                                  command_stream_bytes, generate_stream, load_recording,
                                  make_recording, replay, run_session, save_recording)
from dexteleop.server import build_engine
from dexteleop.transforms import geodesic_angle, rotation_exp
from dexteleop.wrist_pose import wrist_pose_rgbd

import robot_fixtures as rf
import scenarios as sc


def make_scene():
    scene = SimScene()
    model = load_robot_description(rf.arm_hand_urdf(6))
    scene.register_robot("robot_a", model, rf.arm_joint_names(6),
                         rf.five_finger_joint_names())
    return scene, model


def command_for(model, scene, arm_vals, hand_vals, ts=1):
    return JointCommand(JointConfig(np.asarray(arm_vals, dtype=float), ts),
                        JointConfig(np.asarray(hand_vals, dtype=float), ts), ts)


# ---------------------------------------------------------------------------
# apply_command
# ---------------------------------------------------------------------------

def test_apply_same_config_only_bumps_tick():
    scene, model = make_scene()
    arm = scene.scene.robots["robot_a"]["arm_q"].copy()
    hand = scene.scene.robots["robot_a"]["hand_q"].copy()
    tick = scene.scene.tick
    scene.apply_command("robot_a", command_for(model, scene, arm, hand))
    np.testing.assert_array_equal(scene.scene.robots["robot_a"]["arm_q"], arm)
    assert scene.scene.tick == tick + 1


def test_apply_rejects_out_of_limits():
    scene, model = make_scene()
    arm = scene.scene.robots["robot_a"]["arm_q"].copy()
    hand = scene.scene.robots["robot_a"]["hand_q"].copy()
    arm[0] = model.upper[0] + 0.5
    with pytest.raises(LimitViolation):
        scene.apply_command("robot_a", command_for(model, scene, arm, hand))


def test_apply_unknown_robot():
    scene, model = make_scene()
    with pytest.raises(UnknownRobot):
        scene.apply_command("ghost", command_for(model, scene, np.zeros(6), np.zeros(20)))


def test_replay_last_writer_wins():
    scene, model = make_scene()
    hand = scene.scene.robots["robot_a"]["hand_q"].copy()
    rng = np.random.default_rng(0)
    last = None
    for ts in range(1, 1001):
        arm = rng.uniform(model.lower[:6] * 0.5, model.upper[:6] * 0.5)
        scene.apply_command("robot_a", command_for(model, scene, arm, hand, ts))
        last = arm
    np.testing.assert_array_equal(scene.scene.robots["robot_a"]["arm_q"], last)


# ---------------------------------------------------------------------------
# generate_stream
# ---------------------------------------------------------------------------

def test_identity_camera_depth_equals_z():
    cam = SyntheticCamera("cam0", sc.CAMERA_INTR)
    script = sc.operator_script([cam], calibration_seconds=1.0, motion_seconds=1.0)
    frames = generate_stream(script, rate=25.0, seed=0)["cam0"]
    for frame in frames[:10]:
        wrist, kp = script.pose_at(frame.timestamp / 1e6)
        world = wrist.apply(kp)
        np.testing.assert_allclose(frame.keypoint_depth, world[:, 2], atol=1e-12)


def test_fixed_seed_reproducible_byte_identical():
    cam = SyntheticCamera("cam0", sc.CAMERA_INTR)
    script = sc.operator_script([cam], noise=NoiseSpec(0.002, 0.004, 0.05))
    a = generate_stream(script, rate=25.0, seed=7)
    b = generate_stream(script, rate=25.0, seed=7)
    for fa, fb in zip(a["cam0"], b["cam0"]):
        assert fa.keypoints_local.tobytes() == fb.keypoints_local.tobytes()
        assert fa.keypoint_depth.tobytes() == fb.keypoint_depth.tobytes()
        assert fa.shape_params.tobytes() == fb.shape_params.tobytes()


def test_two_cameras_differ_by_known_rotation():
    rel_angle = 0.6
    cam_a = SyntheticCamera("cam_a", sc.CAMERA_INTR)
    cam_b = sc.rotated_camera("cam_b", rel_angle)
    script = sc.operator_script([cam_a, cam_b], calibration_seconds=2.0,
                                motion_seconds=0.0)
    streams = generate_stream(script, rate=25.0, seed=0)
    rel = cam_b.extrinsics.rotation
    for fa, fb in zip(streams["cam_a"], streams["cam_b"]):
        pose_a = wrist_pose_rgbd(fa, sc.CAMERA_INTR).pose
        pose_b = wrist_pose_rgbd(fb, sc.CAMERA_INTR).pose
        # Orientations measured by the two cameras differ exactly by rel.
        assert geodesic_angle(pose_a.rotation, rel @ pose_b.rotation) < 1e-6


def test_zero_noise_roundtrip_through_rgbd():
    cam = SyntheticCamera("cam0", sc.CAMERA_INTR)
    script = sc.operator_script([cam])
    frames = generate_stream(script, rate=25.0, seed=0)["cam0"]
    for frame in frames[::10]:
        wrist, _ = script.pose_at(frame.timestamp / 1e6)
        est = wrist_pose_rgbd(frame, sc.CAMERA_INTR).pose
        assert geodesic_angle(est.rotation, wrist.rotation) < 1e-6
        assert np.linalg.norm(est.translation - wrist.translation) < 1e-6


def test_empty_script_rejected():
    with pytest.raises(EmptyScript):
        generate_stream(
            type("S", (), {"waypoints": [], "cameras": [], "noise": NoiseSpec(),
                           "shape_params": np.zeros(10)})(), rate=25.0)


# ---------------------------------------------------------------------------
# recording / replay
# ---------------------------------------------------------------------------

def record_session(tmp_path, cfg=None, seed=3):
    cfg = cfg or sc.server_config([("s1", "robot_a", ["cam0"])])
    engine = build_engine(json.dumps(cfg))
    cam = SyntheticCamera("cam0", sc.CAMERA_INTR)
    stream = generate_stream(sc.operator_script([cam]), rate=25.0, seed=seed)
    in_msgs, out_msgs = run_session(engine, {"s1": stream})
    events = ([{"dir": "in", "msg": m} for m in in_msgs]
              + [{"dir": "out", "msg": m} for m in out_msgs])
    recording = make_recording(cfg, events)
    path = tmp_path / "session.ndjson"
    save_recording(recording, path)
    return recording, path


def test_record_then_replay_identical(tmp_path):
    recording, path = record_session(tmp_path)
    loaded = load_recording(path)
    replayed = replay(loaded)
    assert (command_stream_bytes(replayed)
            == command_stream_bytes(recording.output_events()))


def test_truncated_recording_rejected(tmp_path):
    _, path = record_session(tmp_path)
    data = path.read_text().splitlines()
    clipped = "\n".join(data[:40])[:-7]  # cut mid-JSON
    bad = tmp_path / "clipped.ndjson"
    bad.write_text(clipped)
    with pytest.raises(CorruptRecording):
        load_recording(bad)
    with pytest.raises(CorruptRecording):
        load_recording(tmp_path / "missing.ndjson")


def test_replay_4x_speed_scales_timestamps_only(tmp_path):
    recording, _ = record_session(tmp_path)
    base = replay(recording)
    fast = replay(recording, speed=4.0)
    assert len(base) == len(fast)
    t0 = base[0]["timestamp_us"]
    for msg_b, msg_f in zip(base, fast):
        assert msg_b["payload"] == msg_f["payload"]
        expected = t0 + round((msg_b["timestamp_us"] - t0) / 4.0)
        assert msg_f["timestamp_us"] == expected


def test_replayed_commands_apply_cleanly_to_scene(tmp_path):
    recording, _ = record_session(tmp_path)
    scene, model = make_scene()
    last = None
    for msg in replay(recording):
        cmd = JointCommand(JointConfig(np.array(msg["payload"]["arm_q"]), msg["timestamp_us"]),
                           JointConfig(np.array(msg["payload"]["hand_q"]), msg["timestamp_us"]),
                           msg["timestamp_us"])
        scene.apply_command(msg["payload"]["robot_id"], cmd)
        last = cmd
    np.testing.assert_array_equal(scene.scene.robots["robot_a"]["arm_q"],
                                  last.arm_q.values)
