"""Command line: ``lightarena run <config> [options]``."""

from __future__ import annotations

import argparse
import json
import queue
import sys

from .config import ConfigError, load_scenario
from .orchestrate import LogWriteError, QueueCommands, ScriptedCommands, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lightarena", description="Projected-light robot arena simulator")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("config", help="scenario YAML file")
    run.add_argument("--headless", action="store_true", help="free-run without pacing or frame export")
    run.add_argument("--ticks", type=int, help="override run.duration")
    run.add_argument("--seed", type=int, help="override run.master_seed")
    run.add_argument("--listen", metavar="ADDR",
                     help="control endpoint(s), e.g. tcp://127.0.0.1:7777,ws://127.0.0.1:7778")
    run.add_argument("--frames-dir", metavar="PATH",
                     help="input frames (frames_in mode) or frame export directory (closed_loop)")
    run.add_argument("--log-dir", metavar="PATH", help="override logs.dir")
    run.add_argument("--replay", metavar="EVENTS",
                     help="replay the command trace recorded in an event log")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_scenario(args.config)
        overrides = {}
        if args.ticks is not None:
            overrides["duration"] = args.ticks
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.headless:
            overrides["headless"] = True
        if args.frames_dir is not None:
            overrides["frames_dir"] = args.frames_dir
        if overrides:
            cfg = cfg.with_overrides(**overrides)
    except (ConfigError, OSError) as e:
        print(f"lightarena: config error: {e}", file=sys.stderr)
        return 2

    commands = ScriptedCommands.from_event_log(args.replay) if args.replay else None
    telemetry = None
    server = None
    try:
        if args.listen:
            from .api import ControlServer, DropOldestQueue, TelemetryPublisher
            cq: queue.Queue = queue.Queue(maxsize=1024)
            tq = DropOldestQueue(8)
            server = ControlServer(args.listen, cq, tq, arena=(cfg.arena.width_mm, cfg.arena.height_mm)).start()
            for scheme, host, port in server.addresses:
                print(f"lightarena: listening on {scheme}://{host}:{port}", file=sys.stderr)
            commands = commands or QueueCommands(cq)
            telemetry = TelemetryPublisher(tq)
        summary = run_experiment(cfg, commands, telemetry, log_dir=args.log_dir)
    except (ConfigError, LogWriteError, OSError, ValueError) as e:
        print(f"lightarena: error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("lightarena: interrupted", file=sys.stderr)
        return 130
    finally:
        if server is not None:
            server.stop()
    print(json.dumps(summary.to_dict(), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
