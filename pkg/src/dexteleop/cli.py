"""Command line entry points: serve, replay, validate-robot."""
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

import numpy as np


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the teleoperation server")
    p.add_argument("--config", required=True, help="server config JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765, help="detector/robot TCP port")
    p.add_argument("--viewer-port", type=int, default=8766, help="viewer HTTP/WS port")
    p.add_argument("--asset-dir", default=None, help="directory served under /assets/")
    p.add_argument("--log-level", default="info",
                   choices=["debug", "info", "warning", "error"])


def _add_replay(sub):
    p = sub.add_parser("replay", help="re-run a recorded session deterministically")
    p.add_argument("--stream", required=True, help="recording file (NDJSON)")
    p.add_argument("--session-config", default=None,
                   help="server config JSON overriding the recording header")
    p.add_argument("--record", default=None, help="write the replayed session here")
    p.add_argument("--speed", type=float, default=1.0,
                   help="timestamp compression factor for the emitted commands")
    p.add_argument("--log-level", default="warning")


def _add_validate(sub):
    p = sub.add_parser("validate-robot", help="check a robot description bundle")
    p.add_argument("--urdf", required=True)
    p.add_argument("--spheres", default=None)
    p.add_argument("--retarget-config", default=None)


def cmd_serve(args) -> int:
    from .net import run_server
    from .server import build_engine

    path = Path(args.config)
    engine = build_engine(path.read_text(), base_dir=path.parent)
    try:
        asyncio.run(run_server(engine, args.host, args.port, args.viewer_port,
                               args.asset_dir))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_replay(args) -> int:
    from .sim_client import load_recording, make_recording, replay, save_recording

    recording = load_recording(args.stream)
    if args.session_config:
        recording.header["server_config"] = json.loads(Path(args.session_config).read_text())
    commands = replay(recording, speed=args.speed)
    n_in = len(recording.input_events())
    print(f"replayed {n_in} input frames -> {len(commands)} joint commands")
    if commands:
        span = (commands[-1]["timestamp_us"] - commands[0]["timestamp_us"]) / 1e6
        if span > 0:
            print(f"command span {span:.2f}s ({(len(commands) - 1) / span:.1f} Hz)")
    if args.record:
        events = ([{"dir": "in", "msg": m} for m in recording.input_events()]
                  + [{"dir": "out", "msg": m} for m in commands])
        save_recording(make_recording(recording.header["server_config"], events),
                       args.record)
        print(f"wrote {args.record}")
    return 0


def cmd_validate(args) -> int:
    from .kinematics import load_robot_description
    from .retargeting import RetargetConfig

    urdf = Path(args.urdf).read_text()
    spheres = Path(args.spheres).read_text() if args.spheres else None
    try:
        model = load_robot_description(urdf, spheres)
    except Exception as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return 1
    n_spheres = sum(len(l.spheres) for l in model.links)
    print(f"robot {model.name!r}: {len(model.links)} links, "
          f"{len(model.joints)} joints, {model.dof} actuated")
    print(f"collision spheres: {n_spheres} ({model._coll_rad_sum.size} checked pairs)")
    with np.printoptions(precision=3, suppress=True):
        print(f"lower limits: {model.lower}")
        print(f"upper limits: {model.upper}")
    if args.retarget_config:
        try:
            config = RetargetConfig.from_json(Path(args.retarget_config).read_text())
            config.validate_against(model)
        except Exception as exc:
            print(f"FAIL: retarget config: {exc}", file=sys.stderr)
            return 1
        print(f"retarget config OK: {len(config.vector_pairs)} vector pairs, "
              f"alpha={config.alpha}, beta={config.beta}")
    print("OK")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dexteleop",
                                     description="vision-based arm-hand teleoperation")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_serve(sub)
    _add_replay(sub)
    _add_validate(sub)
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, getattr(args, "log_level", "warning").upper(),
                                      logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "replay":
        return cmd_replay(args)
    if args.command == "validate-robot":
        return cmd_validate(args)
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
