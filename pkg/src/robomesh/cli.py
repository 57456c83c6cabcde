"""robomesh command line: registry, launcher, nodes, logging and inspection.

Node subprocesses read ROBOMESH_REGISTRY / ROBOMESH_UDP / ROBOMESH_SIM from
the environment (the launcher sets them); flags override.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time


def _env_registry(args):
    return getattr(args, "registry", None) or os.environ.get("ROBOMESH_REGISTRY")


def _make_node(name: str, args) -> "NodeHandle":
    from .runtime import NodeHandle

    node = NodeHandle(name, registry=_env_registry(args))

    def on_signal(signum, frame):
        node.request_shutdown()

    try:
        signal.signal(signal.SIGTERM, on_signal)
        signal.signal(signal.SIGINT, on_signal)
    except ValueError:
        pass  # not the main thread (tests)
    return node


def _sim_flag() -> bool:
    return os.environ.get("ROBOMESH_SIM", "1") != "0"


# -- builtin node runners -----------------------------------------------------


def _run_sim2d(name: str, cfg: dict, stub: bool | None, args) -> int:
    from .sim2d import Sim2dNode, WorldModel

    world = WorldModel.from_yaml(cfg["world"]) if isinstance(cfg.get("world"), str) \
        else WorldModel.from_dict(cfg["world"])
    if stub is None:
        stub = bool(cfg.get("stub", not _sim_flag()))
    node = _make_node(name, args)
    simnode = Sim2dNode(
        node, world, stub=stub,
        rate_hz=float(cfg.get("rate_hz", 50.0)),
        scan_rate_hz=float(cfg.get("scan_rate_hz", 10.0)),
        cmd_channels=tuple(cfg.get("cmd_channels", ["nav/wheel_cmd"])),
        twist_channels=tuple(cfg.get("twist_channels", ["teleop/twist"])),
    )
    print(f"sim2d node {name!r} up (stub={stub})", flush=True)
    simnode.run()
    node.shutdown()
    return 0


def _run_slam(name: str, cfg: dict, args) -> int:
    from .slam import GridSpec, SlamConfig, SlamNode

    grid = GridSpec(
        width_m=float(cfg.get("width_m", 10.0)),
        height_m=float(cfg.get("height_m", 10.0)),
        resolution=float(cfg.get("resolution", 0.1)),
        origin_x=float(cfg.get("origin_x", 0.0)),
        origin_y=float(cfg.get("origin_y", 0.0)),
    )
    slam_cfg = SlamConfig(
        grid=grid,
        particles=int(cfg.get("particles", 50)),
        seed=int(cfg.get("seed", 0)),
        sigma_v=float(cfg.get("sigma_v", 0.05)),
        sigma_w=float(cfg.get("sigma_w", 0.08)),
        sigma_theta=float(cfg.get("sigma_theta", 0.005)),
        z_hit=float(cfg.get("z_hit", 0.75)),
        z_rand=float(cfg.get("z_rand", 0.25)),
        beam_stride=int(cfg.get("beam_stride", 4)),
        map_stride=int(cfg.get("map_stride", 1)),
    )
    node = _make_node(name, args)
    slam_node = SlamNode(
        node, slam_cfg,
        initial_pose=tuple(cfg.get("initial_pose", (0.0, 0.0, 0.0))),
        scan_channel=cfg.get("scan_channel", "sim/scan"),
        twist_channels=tuple(cfg.get("twist_channels", ["teleop/twist"])),
        map_rate_hz=float(cfg.get("map_rate_hz", 1.0)),
    )
    print(f"slam node {name!r} up ({slam_cfg.particles} particles)", flush=True)
    slam_node.run(rate_hz=float(cfg.get("rate_hz", 50.0)))
    node.shutdown()
    return 0


def _run_nav(name: str, cfg: dict, args) -> int:
    from .nav import ControllerGains, NavNode

    gains = ControllerGains(
        kp_ang=float(cfg.get("kp_ang", 2.0)),
        kd_ang=float(cfg.get("kd_ang", 0.1)),
        kp_lin=float(cfg.get("kp_lin", 0.8)),
        theta_tol=float(cfg.get("theta_tol", 0.1)),
        pos_tol=float(cfg.get("pos_tol", 0.1)),
        v_max=float(cfg.get("v_max", 0.5)),
        w_max=float(cfg.get("w_max", 1.5)),
    )
    node = _make_node(name, args)
    nav_node = NavNode(
        node, gains=gains,
        half_width=float(cfg.get("half_width", 0.25)),
        margin=float(cfg.get("margin", 0.2)),
        threshold=float(cfg.get("threshold", 0.5)),
        downsample_spacing=float(cfg.get("downsample_spacing", 0.3)),
        wheel_radius=float(cfg.get("wheel_radius", 0.1)),
        axle_track=float(cfg.get("axle_track", 0.4)),
        pose_channel=cfg.get("pose_channel", "slam/pose"),
        map_channel=cfg.get("map_channel", "slam/map"),
        rate_hz=float(cfg.get("rate_hz", 20.0)),
    )
    print(f"nav node {name!r} up", flush=True)
    nav_node.run()
    node.shutdown()
    return 0


def _run_teleop_node(name: str, cfg: dict, args) -> int:
    from .teleop import BridgeSource, KeyboardSource, ScriptedSource, TeleopNode

    node = _make_node(name, args)
    if cfg.get("script"):
        source = ScriptedSource.from_csv(cfg["script"])
    elif cfg.get("source") == "bridge":
        source = BridgeSource(node, cfg.get("bridge_channel", "__ui/teleop"))
    else:
        source = KeyboardSource()
        print("teleop: WASD/arrows drive, space stops, q quits", flush=True)
    tele = TeleopNode(node, source,
                      channel_suffix=cfg.get("channel_suffix", "twist"),
                      rate_hz=float(cfg.get("rate_hz", 20.0)))
    tele.run()
    node.shutdown()
    return 0


def _run_env_demo(name: str, cfg: dict, args) -> int:
    from .envkit import EnvConfig, make_env
    from .teleop import ScriptedSource

    env_cfg = EnvConfig.from_yaml(cfg["env"])
    node = _make_node(name, args)
    env = make_env(node, env_cfg)
    script = ScriptedSource.from_csv(cfg["script"]) if cfg.get("script") else None
    action_channel = cfg.get("action_channel") or next(iter(env_cfg.action_space))
    episodes = int(cfg.get("episodes", 1))
    for _ in range(episodes):
        if node.is_shutdown:
            break
        obs, info = env.reset()
        print(f"episode {info['episode_id']} started", flush=True)
        t0 = time.monotonic()
        while not node.is_shutdown:
            t = time.monotonic() - t0
            cmd = script.command_at(t) if script else None
            action = {action_channel: {"v": cmd.v if cmd else 0.0, "w": cmd.w if cmd else 0.0}}
            result = env.step(action)
            if result.terminated or result.truncated:
                break
    print("env demo done", flush=True)
    node.spin(5.0)  # stay alive for inspection until signalled
    node.shutdown()
    return 0


def _run_bridge(name: str, cfg: dict, args) -> int:
    from .bridge import BridgeNode

    node = _make_node(name, args)
    bridge = BridgeNode(
        node,
        http_port=int(cfg.get("port", 8480)),
        static_dir=cfg.get("static_dir"),
        pose_channel=cfg.get("pose_channel", "slam/pose"),
        map_channel=cfg.get("map_channel", "slam/map"),
        path_channel=cfg.get("path_channel", "nav/path"),
        goal_service=cfg.get("goal_service", "nav/set_goal"),
        reset_service=cfg.get("reset_service", "robot/reset"),
    )
    print(f"bridge on http://127.0.0.1:{bridge.port}/ (ws /ws)", flush=True)
    bridge.run()
    node.shutdown()
    return 0


def cmd_node(args) -> int:
    cfg = json.loads(args.args) if args.args else {}
    kind = args.kind
    if kind == "sim2d":
        return _run_sim2d(args.name or "sim", cfg, None, args)
    if kind == "stub_hw":
        return _run_sim2d(args.name or "robot", cfg, True, args)
    if kind == "slam":
        return _run_slam(args.name or "slam", cfg, args)
    if kind == "nav":
        return _run_nav(args.name or "nav", cfg, args)
    if kind == "teleop":
        return _run_teleop_node(args.name or "teleop", cfg, args)
    if kind == "env_demo":
        return _run_env_demo(args.name or "env", cfg, args)
    if kind == "bridge":
        return _run_bridge(args.name or "bridge", cfg, args)
    print(f"unknown node kind {kind!r}", file=sys.stderr)
    return 2


# -- plain commands -----------------------------------------------------------


def cmd_registry(args) -> int:
    from .registry import RegistryServer, registry_address

    host, port = registry_address(args.listen)
    server = RegistryServer(host, port)
    print(f"registry on {server.address[0]}:{server.address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.close()
    return 0


def cmd_launch(args) -> int:
    from .launcher import launch, validate, LaunchError

    if args.validate:
        return cmd_validate(args)
    return launch(args.config, duration=args.duration)


def cmd_validate(args) -> int:
    from .launcher import validate, LaunchError

    try:
        findings = validate(args.config)
    except LaunchError as e:
        print(f"error: {e}")
        return 2
    for f in findings:
        print(str(f))
    return 2 if any(f.level == "error" for f in findings) else 0


def cmd_teleop(args) -> int:
    channel = args.channel
    node_name, _, suffix = channel.partition("/")
    cfg = {"channel_suffix": suffix or "twist", "rate_hz": args.rate}
    if args.script:
        cfg["script"] = args.script
    return _run_teleop_node(node_name or "teleop", cfg, args)


def cmd_log(args) -> int:
    if args.log_cmd == "record":
        return _log_record(args)
    if args.log_cmd == "play":
        return _log_play(args)
    if args.log_cmd == "export":
        return _log_export(args)
    return 2


def _log_record(args) -> int:
    from .logkit import Recorder

    node = _make_node(args.node_name, args)
    rec = Recorder(node, args.channels, args.output)
    print(f"recording {args.channels} -> {args.output}", flush=True)
    try:
        while not node.is_shutdown and rec.error is None:
            time.sleep(0.2)
            if args.duration and time.monotonic() > args.duration:
                break
    except KeyboardInterrupt:
        pass
    rec.stop()
    print(f"recorded {rec.count} messages", flush=True)
    node.shutdown()
    return 0 if rec.error is None else 1


def _log_play(args) -> int:
    from .logkit import replay

    remap = {}
    for m in args.remap or []:
        old, _, new = m.partition("=")
        remap[old] = new
    node = _make_node(args.node_name, args)
    time.sleep(0.3)  # let peers learn about us
    n = replay(args.log, node.publish_raw, speed=args.speed, channel_remap=remap)
    print(f"replayed {n} records", flush=True)
    node.shutdown()
    return 0


def _log_export(args) -> int:
    import yaml as _yaml

    from .logkit import export_csv

    space = _yaml.safe_load(open(args.space))
    if not isinstance(space, dict):
        print("space file must map channel -> schema name", file=sys.stderr)
        return 2
    report = export_csv(
        args.log, space, args.rate, args.mode, args.output,
        allow_missing=set(args.allow_missing or []),
        plot_dir=args.plot,
    )
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"wrote {report.rows} rows x {len(report.columns)} columns -> {args.output}")
    if args.plot:
        print(f"figures -> {args.plot}")
    return 0


def cmd_graph(args) -> int:
    from .registry import RegistryClient, RegistryError
    from .tools import render_graph

    try:
        client = RegistryClient(_env_registry(args))
        sys.stdout.write(render_graph(client, args.format))
    except (RegistryError, ConnectionError) as e:
        print(f"registry unreachable: {e}", file=sys.stderr)
        return 2
    return 0


def cmd_spy(args) -> int:
    from .tools import run_spy

    node = _make_node(args.node_name, args)
    run_spy(node, args.filter, window_s=args.window, duration_s=args.duration,
            as_json=args.json)
    node.shutdown()
    return 0


def cmd_tap(args) -> int:
    from .tools import run_tap

    node = _make_node(args.node_name, args)
    try:
        run_tap(node, args.channel, args.schema, duration_s=args.duration,
                csv_field=args.csv, max_messages=args.count)
    except ValueError as e:
        print(str(e), file=sys.stderr)
        node.shutdown()
        return 2
    node.shutdown()
    return 0


def cmd_demo(args) -> int:
    from .scenario import run_mapping_demo

    summary = run_mapping_demo(
        world_path=args.world, script_path=args.script, out_dir=args.out,
        seed=args.seed, particles=args.particles,
    )
    print(json.dumps(summary, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robomesh", description=__doc__)
    p.add_argument("--registry", help="registry host:port (default: ROBOMESH_REGISTRY)")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("registry", help="run the discovery registry")
    s.add_argument("--listen", help="host:port (default 127.0.0.1:7660)")
    s.set_defaults(func=cmd_registry)

    s = sub.add_parser("launch", help="start a network from a YAML config")
    s.add_argument("config")
    s.add_argument("--validate", action="store_true", help="check only, spawn nothing")
    s.add_argument("--duration", type=float, help="supervise for N seconds (tests)")
    s.set_defaults(func=cmd_launch)

    s = sub.add_parser("validate", help="static-check a launch config")
    s.add_argument("config")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("node", help="run one builtin node")
    s.add_argument("kind")
    s.add_argument("--name")
    s.add_argument("--args", help="JSON dict of node arguments")
    s.set_defaults(func=cmd_node)

    s = sub.add_parser("teleop", help="publish teleop twists")
    s.add_argument("--channel", default="teleop/twist")
    s.add_argument("--script", help="CSV of t,v,w rows (headless)")
    s.add_argument("--rate", type=float, default=20.0)
    s.set_defaults(func=cmd_teleop)

    s = sub.add_parser("log", help="record / play / export channel logs")
    logsub = s.add_subparsers(dest="log_cmd", required=True)
    r = logsub.add_parser("record")
    r.add_argument("--channels", nargs="+", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--duration", type=float)
    r.add_argument("--node-name", default=f"recorder_{os.getpid()}")
    r.set_defaults(func=cmd_log)
    pl = logsub.add_parser("play")
    pl.add_argument("log")
    pl.add_argument("--speed", type=float, default=1.0)
    pl.add_argument("--remap", nargs="*", help="old=new channel pairs")
    pl.add_argument("--node-name", default=f"replay_{os.getpid()}")
    pl.set_defaults(func=cmd_log)
    e = logsub.add_parser("export")
    e.add_argument("log")
    e.add_argument("--space", required=True, help="YAML mapping channel -> schema")
    e.add_argument("--rate", type=float, required=True)
    e.add_argument("--mode", choices=["latest", "interp"], required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--allow-missing", nargs="*")
    e.add_argument("--plot", help="directory for per-column PNG figures")
    e.set_defaults(func=cmd_log)

    s = sub.add_parser("graph", help="render the network topology")
    s.add_argument("--format", choices=["dot", "json"], default="dot")
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("spy", help="live channel statistics")
    s.add_argument("--filter", default="*")
    s.add_argument("--window", type=float, default=5.0)
    s.add_argument("--duration", type=float)
    s.add_argument("--json", action="store_true")
    s.add_argument("--node-name", default=f"spy_{os.getpid()}")
    s.set_defaults(func=cmd_spy)

    s = sub.add_parser("tap", help="print decoded messages from one channel")
    s.add_argument("channel")
    s.add_argument("--schema", required=True)
    s.add_argument("--csv", help="numeric field path to emit as CSV")
    s.add_argument("--duration", type=float)
    s.add_argument("--count", type=int)
    s.add_argument("--node-name", default=f"tap_{os.getpid()}")
    s.set_defaults(func=cmd_tap)

    s = sub.add_parser("demo", help="run the offline mapping+navigation demo")
    demosub = s.add_subparsers(dest="demo_cmd", required=True)
    d = demosub.add_parser("mapping")
    d.add_argument("--world", required=True)
    d.add_argument("--script", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--particles", type=int, default=50)
    d.set_defaults(func=cmd_demo)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
