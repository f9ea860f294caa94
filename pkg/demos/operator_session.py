"""Steer a live experiment over the JSON-lines control channel.

Run from the repository root:

    python demos/operator_session.py

A control server is started on a free TCP port and the collective-decision
scenario runs paced in a background thread. A scripted operator then
raises the tile noise, drops pheromone, and finally stops the run, printing
the replies and a few telemetry frames along the way.
"""

import json
import queue
import socket
import threading
from pathlib import Path
from tempfile import TemporaryDirectory

from lightarena.api import ControlServer, DropOldestQueue, TelemetryPublisher
from lightarena.config import load_scenario
from lightarena.orchestrate import QueueCommands, run_experiment

SCENARIO = Path(__file__).parents[1] / "src" / "lightarena" / "scenarios" / "collective_decision.yaml"


def main():
    cfg = load_scenario(SCENARIO).with_overrides(duration=10_000)
    commands: queue.Queue = queue.Queue()
    telemetry = DropOldestQueue(8)
    with ControlServer("tcp://127.0.0.1:0", commands, telemetry, arena=(cfg.arena.width_mm, cfg.arena.height_mm)) as srv, \
            TemporaryDirectory() as logs:
        port = srv.addresses[0][2]
        print(f"control server on tcp://127.0.0.1:{port}")
        result = {}
        runner = threading.Thread(target=lambda: result.update(summary=run_experiment(
            cfg, QueueCommands(commands), TelemetryPublisher(telemetry), log_dir=logs)))
        runner.start()

        sock = socket.create_connection(("127.0.0.1", port))
        lines = sock.makefile("r")

        def send(seq, verb, **args):
            sock.sendall((json.dumps({"seq": seq, "verb": verb, "args": args}) + "\n").encode())

        def read():
            # telemetry and replies share the connection; replies carry "ack" or "err"
            msg = json.loads(lines.readline())
            if "tick" in msg and msg["tick"] % 15 == 0:
                ones = sum(t["color"] == 1 for t in msg["tracks"] if t["color"] is not None)
                print(f"  telemetry tick {msg['tick']:3d}: {len(msg['tracks'])} tracks, "
                      f"{ones} rings in colour 1, fps {msg['fps']:.1f}")
            return msg

        def next_reply():
            while True:
                msg = read()
                if "ack" in msg or "err" in msg:
                    return msg

        for seq, verb, args in [
            (1, "set_noise", {"amplitude": 1.5}),
            (2, "set_noise", {"amplitude": 0.5}),
            (3, "deposit_at", {"x": 512, "y": 384, "amount": 100}),
            (4, "set_param", {"path": "camera.width", "value": 640}),
        ]:
            send(seq, verb, **args)
            print(f"{verb} {args} -> {next_reply()}")
        for _ in range(60):
            read()
        send(5, "stop")
        print(f"stop -> {next_reply()}")
        runner.join()
        sock.close()
    s = result["summary"]
    print(f"run ended ({s.end_reason}) after {s.ticks_run} ticks, "
          f"opinion agreement {s.metrics['opinion_agreement']:.3f}, field mass {s.final_field_mass:.2f}")


if __name__ == "__main__":
    main()
