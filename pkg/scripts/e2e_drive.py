#!/usr/bin/env python3
"""End-to-end drive: spawn the real server CLI, teleoperate it over sockets.

Starts `dexteleop serve` with the demo config, streams a synthetic operator
through a real TCP detector client, attaches a robot client, connects a
websocket viewer, and checks that calibrated teleoperation produces in-limit
joint commands and monotone scene updates.
"""
import asyncio
import json
import subprocess
import sys
import time
from pathlib import Path

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT / "tests"))

import aiohttp
import numpy as np

import robot_fixtures as rf
import scenarios as sc
from dexteleop import protocol
from dexteleop.net import TeleopClient
from dexteleop.sim_client import SyntheticCamera, generate_stream

PORT, VIEWER_PORT = 18765, 18766


async def drive() -> int:
    detector = await TeleopClient.connect("127.0.0.1", PORT)
    robot = await TeleopClient.connect("127.0.0.1", PORT)
    await robot.send(protocol.make_message(
        protocol.SESSION_CONTROL, {"action": "attach_robot", "robot_id": "demo_arm"}, 0))
    ack = await robot.recv(timeout=5)
    assert ack["payload"]["action"] == "attached", ack

    cam = SyntheticCamera("cam0", sc.CAMERA_INTR)
    script = sc.operator_script([cam], calibration_seconds=2.2, motion_seconds=3.0)
    frames = generate_stream(script, rate=25.0, seed=0)["cam0"]
    base_us = time.time_ns() // 1000
    for frame in frames:
        frame.timestamp += base_us

    async def stream_frames():
        t0 = time.monotonic()
        first_ts = frames[0].timestamp
        for frame in frames:
            lead = (frame.timestamp - first_ts) / 1e6 - (time.monotonic() - t0)
            if lead > 0:
                await asyncio.sleep(lead)
            await detector.send(protocol.hand_frame_message(frame, "demo"))

    commands = []

    async def collect_commands():
        try:
            while True:
                msg = await robot.recv(timeout=8)
                if msg is None:
                    break
                if msg["type"] == protocol.JOINT_COMMAND:
                    commands.append(msg)
        except asyncio.TimeoutError:
            pass

    scene_ticks = []

    async def watch_viewer():
        async with aiohttp.ClientSession() as http:
            ws = await http.ws_connect(f"ws://127.0.0.1:{VIEWER_PORT}/scene")
            url = f"http://127.0.0.1:{VIEWER_PORT}/robots/demo_arm/description"
            async with http.get(url) as resp:
                assert resp.status == 200
                desc = await resp.json()
                assert desc["base_link"] == "base"
            try:
                while True:
                    msg = await asyncio.wait_for(ws.receive(), timeout=8)
                    if msg.type != aiohttp.WSMsgType.TEXT:
                        break
                    scene_ticks.append(json.loads(msg.data)["payload"]["tick"])
            except asyncio.TimeoutError:
                pass
            await ws.close()

    streamer = asyncio.create_task(stream_frames())
    collector = asyncio.create_task(collect_commands())
    viewer = asyncio.create_task(watch_viewer())
    await streamer
    await asyncio.sleep(1.0)
    collector.cancel()
    viewer.cancel()
    for task in (collector, viewer):
        try:
            await task
        except asyncio.CancelledError:
            pass
    await detector.close()
    await robot.close()

    assert len(commands) > 200, f"only {len(commands)} commands"
    ts = [c["timestamp_us"] for c in commands]
    assert all(b > a for a, b in zip(ts, ts[1:])), "non-monotone command stream"
    model_urdf = (ROOT / "configs" / "demo_robot.urdf").read_text()
    from dexteleop.kinematics import load_robot_description
    model = load_robot_description(model_urdf)
    arm_names = rf.arm_joint_names(6)
    cols = [model.actuated_joints.index(j) for j in arm_names]
    for c in commands:
        arm = np.array(c["payload"]["arm_q"])
        assert np.all(arm >= model.lower[cols]) and np.all(arm <= model.upper[cols])
    assert len(scene_ticks) > 20, f"only {len(scene_ticks)} scene states"
    assert all(b > a for a, b in zip(scene_ticks, scene_ticks[1:]))
    span = (ts[-1] - ts[0]) / 1e6
    rate = (len(ts) - 1) / span
    assert abs(rate - 120.0) <= 1.0, f"command rate {rate:.2f} Hz off schedule"
    print(f"E2E OK: {len(commands)} commands ({rate:.1f} Hz), "
          f"{len(scene_ticks)} scene states, limits clean")
    return 0


def main() -> int:
    server = subprocess.Popen(
        [sys.executable, "-m", "dexteleop.cli", "serve",
         "--config", str(ROOT / "configs" / "demo_server.json"),
         "--port", str(PORT), "--viewer-port", str(VIEWER_PORT),
         "--log-level", "warning"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    try:
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            try:
                import socket
                with socket.create_connection(("127.0.0.1", PORT), timeout=0.3):
                    break
            except OSError:
                time.sleep(0.2)
        else:
            raise RuntimeError("server did not come up")
        return asyncio.run(drive())
    finally:
        server.terminate()
        try:
            out, _ = server.communicate(timeout=5)
            if out:
                sys.stdout.write(out.decode(errors="replace"))
        except subprocess.TimeoutExpired:
            server.kill()


if __name__ == "__main__":
    sys.exit(main())
