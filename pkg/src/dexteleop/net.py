"""Network front-end for the teleoperation engine.

Two listening surfaces:

* A TCP port for detector and robot clients speaking length-prefixed JSON
  (see dexteleop.protocol). Detector clients push HAND_FRAME messages and
  receive ERROR replies for rejected frames; robot clients attach with
  SESSION_CONTROL {action: "attach_robot", robot_id} and then receive that
  robot's JOINT_COMMAND stream.

* An HTTP/websocket port for browser viewers: GET /robots/{id}/description
  returns the kinematic digest, GET /assets/* serves mesh files, and the
  /scene websocket streams SCENE_STATE. Viewers get a full snapshot on join;
  slow consumers are coalesced to the latest state (ticks may skip, never
  reorder).
"""
from __future__ import annotations

import asyncio
import logging
import time
from pathlib import Path
from typing import Dict, Optional, Set

from aiohttp import WSMsgType, web

from . import protocol
from .errors import TeleopError
from .server import TeleopEngine

logger = logging.getLogger(__name__)


def _now_us() -> int:
    return time.time_ns() // 1000


class _ViewerConnection:
    """Latest-state mailbox: a slow websocket only ever sees the newest tick."""

    def __init__(self):
        self._latest: Optional[bytes] = None
        self._event = asyncio.Event()
        self.closed = False

    def offer(self, data: bytes):
        self._latest = data
        self._event.set()

    async def take(self) -> bytes:
        await self._event.wait()
        self._event.clear()
        data = self._latest
        self._latest = None
        return data


class TeleopServer:
    def __init__(self, engine: TeleopEngine, host: str = "127.0.0.1",
                 port: int = 8765, viewer_port: int = 8766,
                 asset_dir: Optional[str] = None, tick_hz: float = 240.0):
        self.engine = engine
        self.host = host
        self.port = port
        self.viewer_port = viewer_port
        self.asset_dir = Path(asset_dir) if asset_dir else None
        self.tick_hz = tick_hz
        self._tcp_server: Optional[asyncio.base_events.Server] = None
        self._runner: Optional[web.AppRunner] = None
        self._tick_task: Optional[asyncio.Task] = None
        self._robot_subscribers: Dict[str, Set[asyncio.StreamWriter]] = {}
        self._viewers: Set[_ViewerConnection] = set()
        self._last_broadcast_tick = -1

    # -- lifecycle -----------------------------------------------------------

    async def start(self):
        self._tcp_server = await asyncio.start_server(self._handle_client,
                                                      self.host, self.port)
        app = web.Application()
        app.router.add_get("/scene", self._handle_viewer_ws)
        app.router.add_get("/robots/{robot_id}/description", self._handle_description)
        if self.asset_dir is not None:
            app.router.add_static("/assets/", self.asset_dir)
        self._runner = web.AppRunner(app)
        await self._runner.setup()
        self._viewer_site = web.TCPSite(self._runner, self.host, self.viewer_port)
        await self._viewer_site.start()
        self._tick_task = asyncio.create_task(self._tick_loop())
        logger.info("teleop server on tcp://%s:%d, viewer http://%s:%d",
                    self.host, self.port, self.host, self.viewer_port)

    async def stop(self):
        if self._tick_task:
            self._tick_task.cancel()
            try:
                await self._tick_task
            except asyncio.CancelledError:
                pass
        if self._tcp_server:
            self._tcp_server.close()
            await self._tcp_server.wait_closed()
        if self._runner:
            await self._runner.cleanup()

    @property
    def tcp_port(self) -> int:
        return self._tcp_server.sockets[0].getsockname()[1]

    @property
    def http_port(self) -> int:
        return self._viewer_site._server.sockets[0].getsockname()[1]

    # -- control tick ----------------------------------------------------------

    async def _tick_loop(self):
        period = 1.0 / self.tick_hz
        while True:
            commands = self.engine.advance(_now_us())
            if commands:
                await self._dispatch_commands(commands)
                self.publish_scene()
            await asyncio.sleep(period)

    async def _dispatch_commands(self, commands):
        dead = []
        for robot_id, command in commands:
            message = protocol.joint_command_message(robot_id, command)
            body = protocol.frame_bytes(protocol.encode_message(message))
            for writer in self._robot_subscribers.get(robot_id, ()):
                try:
                    writer.write(body)
                except ConnectionError:
                    dead.append((robot_id, writer))
        for robot_id, writer in dead:
            self._robot_subscribers.get(robot_id, set()).discard(writer)

    def publish_scene(self):
        """Broadcast the current scene to all viewers (latest-state wins)."""
        tick = self.engine.scene.tick
        if tick == self._last_broadcast_tick:
            return
        self._last_broadcast_tick = tick
        message = protocol.make_message(protocol.SCENE_STATE,
                                        self.engine.scene_payload(),
                                        self.engine.scene.timestamp_us)
        data = protocol.encode_message(message)
        for viewer in list(self._viewers):
            if not viewer.closed:
                viewer.offer(data)

    # -- TCP clients ------------------------------------------------------------

    async def _handle_client(self, reader: asyncio.StreamReader,
                             writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        attached: Set[str] = set()
        try:
            while True:
                body = await protocol.read_framed(reader)
                if body is None:
                    break
                try:
                    message = protocol.decode_message(body)
                    reply = await self._handle_message(message, writer, attached)
                except TeleopError as exc:
                    reply = protocol.error_message(type(exc).__name__, str(exc),
                                                   _now_us())
                if reply is not None:
                    writer.write(protocol.frame_bytes(protocol.encode_message(reply)))
                    await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            for robot_id in attached:
                self._robot_subscribers.get(robot_id, set()).discard(writer)
            writer.close()
            logger.debug("client %s disconnected", peer)

    async def _handle_message(self, message: dict, writer, attached: Set[str]):
        mtype = message["type"]
        if mtype == protocol.HAND_FRAME:
            frame = protocol.parse_hand_frame(message)
            session_id = message.get("session_id")
            commands = self.engine.advance(_now_us())
            if commands:
                await self._dispatch_commands(commands)
                self.publish_scene()
            ack = self.engine.ingest_hand_frame(session_id, frame)
            if not ack["accepted"]:
                return protocol.error_message("frame_dropped", ack["reason"],
                                              frame.timestamp, session_id)
            return None
        if mtype == protocol.HEARTBEAT:
            return protocol.make_message(protocol.HEARTBEAT, {}, _now_us())
        if mtype == protocol.SESSION_CONTROL:
            return self._handle_session_control(message, writer, attached)
        if mtype == protocol.JOINT_COMMAND:
            return protocol.error_message("unexpected_type",
                                          "server does not accept JOINT_COMMAND",
                                          _now_us())
        return None

    def _handle_session_control(self, message: dict, writer, attached: Set[str]):
        payload = message.get("payload") or {}
        action = payload.get("action")
        session_id = message.get("session_id")
        if action == "attach_robot":
            robot_id = payload["robot_id"]
            if robot_id not in self.engine.robots:
                return protocol.error_message("unknown_robot", robot_id, _now_us())
            self._robot_subscribers.setdefault(robot_id, set()).add(writer)
            attached.add(robot_id)
            return protocol.make_message(protocol.SESSION_CONTROL,
                                         {"action": "attached", "robot_id": robot_id},
                                         _now_us())
        if action == "start":
            from .server import session_spec_from_config
            spec = dict(payload["spec"])
            spec.setdefault("session_id", session_id)
            self.engine.start_session(
                session_spec_from_config(spec, self.engine.config.calibration_frames))
            session_id = spec["session_id"]
        elif action == "pause":
            self.engine.pause_session(session_id)
        elif action == "resume":
            self.engine.resume_session(session_id)
        elif action == "stop":
            self.engine.stop_session(session_id)
        else:
            return protocol.error_message("unknown_action", str(action), _now_us())
        return protocol.make_message(protocol.SESSION_CONTROL,
                                     {"action": action, "done": True},
                                     _now_us(), session_id)

    # -- viewers -------------------------------------------------------------------

    async def _handle_description(self, request: web.Request) -> web.Response:
        robot_id = request.match_info["robot_id"]
        try:
            payload = self.engine.robot_description_payload(robot_id)
        except TeleopError as exc:
            return web.json_response({"error": str(exc)}, status=404)
        return web.json_response(payload)

    async def _handle_viewer_ws(self, request: web.Request) -> web.WebSocketResponse:
        ws = web.WebSocketResponse(heartbeat=20.0)
        await ws.prepare(request)
        # Snapshot-on-join: the full current state, never a delta.
        snapshot = protocol.make_message(protocol.SCENE_STATE,
                                         self.engine.scene_payload(),
                                         self.engine.scene.timestamp_us)
        await ws.send_str(protocol.encode_message(snapshot).decode("utf-8"))
        conn = _ViewerConnection()
        self._viewers.add(conn)

        async def pump():
            while not ws.closed:
                data = await conn.take()
                await ws.send_str(data.decode("utf-8"))

        pump_task = asyncio.create_task(pump())
        try:
            async for msg in ws:
                if msg.type in (WSMsgType.ERROR, WSMsgType.CLOSE):
                    break
        finally:
            conn.closed = True
            pump_task.cancel()
            self._viewers.discard(conn)
        return ws


async def run_server(engine: TeleopEngine, host: str, port: int, viewer_port: int,
                     asset_dir: Optional[str] = None):
    server = TeleopServer(engine, host, port, viewer_port, asset_dir)
    await server.start()
    try:
        await asyncio.Event().wait()
    finally:
        await server.stop()


# ---------------------------------------------------------------------------
# Thin client helpers (used by the simulator client and tests)
# ---------------------------------------------------------------------------

class TeleopClient:
    """Minimal TCP client: send envelopes, iterate replies."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer

    @classmethod
    async def connect(cls, host: str, port: int) -> "TeleopClient":
        reader, writer = await asyncio.open_connection(host, port)
        return cls(reader, writer)

    async def send(self, message: dict):
        self.writer.write(protocol.frame_bytes(protocol.encode_message(message)))
        await self.writer.drain()

    async def recv(self, timeout: Optional[float] = None) -> Optional[dict]:
        body = await asyncio.wait_for(protocol.read_framed(self.reader), timeout)
        return None if body is None else protocol.decode_message(body)

    async def close(self):
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except ConnectionError:
            pass
