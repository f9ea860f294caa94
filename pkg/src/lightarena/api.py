"""Live control and telemetry over TCP (JSON lines) and WebSocket.

Endpoints are written ``tcp://host:port`` or ``ws://host:port``; a bare
``host:port`` means TCP. Several may be given separated by commas. The
experiment thread only touches two bounded queues: commands in (a
``queue.Queue``) and telemetry out (:class:`DropOldestQueue`).
"""

from __future__ import annotations

import asyncio
import base64
import collections
import json
import logging
import queue
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .field import displayed_labels, field_thumbnail, make_tile_layer_frame
from .protocol import Command, Session, error, handle_command, parse_command
from .render import ring_overlays

log = logging.getLogger(__name__)

MAX_TELEMETRY_BYTES = 64 * 1024
CLIENT_BACKLOG = 64
MAX_LINE = 64 * 1024


# -- telemetry ---------------------------------------------------------------

def telemetry_snapshot(exp) -> dict:
    """Project the latest tick of an experiment into a telemetry message.

    Tracks carry world position and the palette index of their ring
    (``null`` for tracks without a ring); the field is area-averaged to at
    most 64x64 and quantised to 8 bits with its min/max.
    """
    rec = exp.last_record
    if rec is None:
        raise ValueError("no tick has completed yet")
    tracks = exp.tracker.tracks
    rings = {g.track_id: g.color_index
             for g in ring_overlays(tracks, exp.H_camera_to_projector, exp.style, exp.ring_states)}
    labels = displayed_labels(exp.tiles, make_tile_layer_frame(exp.tiles, rec.tick))
    return {
        "tick": rec.tick,
        "fps": exp.metrics.fps_ema,
        "tracks": [{"id": row.id, "x": round(row.world_x, 3), "y": round(row.world_y, 3),
                    "state": row.state, "color": rings.get(row.id)} for row in rec.tracks],
        "field": field_thumbnail(exp.field.values),
        "tiles": labels.tolist(),
        "tile_mm": exp.tiles.tile_size,
        "arena": list(exp.arena),
        "applied": list(rec.applied),
    }


def encode_telemetry(frame: dict) -> str:
    """Compact JSON, trimming the track list if the message would exceed 64 KiB."""
    text = json.dumps(frame, separators=(",", ":"))
    if len(text.encode()) <= MAX_TELEMETRY_BYTES:
        return text
    tracks = frame["tracks"]
    lo, hi = 0, len(tracks)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        trial = json.dumps({**frame, "tracks": tracks[:mid], "truncated": True}, separators=(",", ":"))
        if len(trial.encode()) <= MAX_TELEMETRY_BYTES:
            lo = mid
        else:
            hi = mid - 1
    return json.dumps({**frame, "tracks": tracks[:lo], "truncated": True}, separators=(",", ":"))


def decode_thumbnail(field: dict) -> np.ndarray:
    """Inverse of the thumbnail encoding: float grid in the recorded range."""
    raw = np.frombuffer(base64.b64decode(field["data"]), dtype=np.uint8).reshape(field["h"], field["w"])
    lo, hi = field["min"], field["max"]
    return lo + raw.astype(float) / 255.0 * (hi - lo)


class DropOldestQueue:
    """Bounded queue whose ``put`` never blocks; the oldest item makes room."""

    def __init__(self, maxsize: int = 8):
        if maxsize < 1:
            raise ValueError("maxsize must be >= 1")
        self._items = collections.deque(maxlen=maxsize)
        self._cond = threading.Condition()
        self.dropped = 0

    def put(self, item) -> None:
        with self._cond:
            if len(self._items) == self._items.maxlen:
                self.dropped += 1
            self._items.append(item)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        with self._cond:
            if not self._cond.wait_for(lambda: self._items, timeout):
                raise queue.Empty
            return self._items.popleft()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


class TelemetryPublisher:
    """Experiment-side hook: snapshot, encode, hand off without blocking."""

    def __init__(self, out: DropOldestQueue):
        self.out = out

    def __call__(self, exp) -> None:
        self.out.put(encode_telemetry(telemetry_snapshot(exp)))


# -- server ------------------------------------------------------------------

@dataclass(frozen=True)
class Endpoint:
    scheme: str
    host: str
    port: int

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        scheme, sep, rest = text.partition("://")
        if not sep:
            scheme, rest = "tcp", text
        if scheme not in ("tcp", "ws"):
            raise ValueError(f"unsupported endpoint scheme {scheme!r}")
        host, _, port = rest.rpartition(":")
        try:
            return cls(scheme, host or "127.0.0.1", int(port))
        except ValueError:
            raise ValueError(f"bad endpoint {text!r}, expected [tcp|ws]://host:port") from None


def parse_endpoints(text: str) -> list[Endpoint]:
    return [Endpoint.parse(p.strip()) for p in text.split(",") if p.strip()]


class _Client:
    def __init__(self, send, close):
        self.backlog: asyncio.Queue = asyncio.Queue(CLIENT_BACKLOG)
        self.send = send
        self.close = close
        self.dropped = False


class ControlServer:
    """Accepts clients on one or more endpoints from a background event loop.

    Inbound lines become :class:`Command` s on ``commands``; every message
    taken from ``telemetry`` is sent to all clients in order. A client with
    64 undelivered messages is disconnected.
    """

    def __init__(self, endpoints: str | Sequence[Endpoint], commands: queue.Queue,
                 telemetry: DropOldestQueue, arena: tuple[float, float] | None = None):
        self.endpoints = parse_endpoints(endpoints) if isinstance(endpoints, str) else list(endpoints)
        self.commands = commands
        self.telemetry = telemetry
        self.arena = arena
        self.addresses: list[tuple[str, str, int]] = []
        self._clients: set[_Client] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._stop: asyncio.Event | None = None
        self._ready = threading.Event()
        self._error: BaseException | None = None

    # lifecycle

    def start(self) -> "ControlServer":
        """Bind all endpoints; raises if any cannot be bound."""
        self._thread = threading.Thread(target=self._run, name="control-server", daemon=True)
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise OSError(f"cannot bind control endpoint: {self._error}")
        return self

    def stop(self) -> None:
        if self._loop is not None and self._stop is not None:
            self._loop.call_soon_threadsafe(self._stop.set)
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def client_count(self) -> int:
        return len(self._clients)

    def _run(self):
        try:
            asyncio.run(self._main())
        except BaseException as e:  # surfaced through start()
            self._error = self._error or e
            self._ready.set()

    async def _main(self):
        self._loop = asyncio.get_running_loop()
        self._stop = asyncio.Event()
        servers = []
        try:
            for ep in self.endpoints:
                if ep.scheme == "tcp":
                    srv = await asyncio.start_server(self._tcp_client, ep.host, ep.port, limit=MAX_LINE)
                    port = srv.sockets[0].getsockname()[1]
                else:
                    from websockets.asyncio.server import serve
                    srv = await serve(self._ws_client, ep.host, ep.port, max_size=MAX_LINE)
                    port = next(iter(srv.sockets)).getsockname()[1]
                servers.append(srv)
                self.addresses.append((ep.scheme, ep.host, port))
        except OSError as e:
            self._error = e
            for srv in servers:
                srv.close()
            self._ready.set()
            return
        self._ready.set()
        pump = asyncio.create_task(self._pump())
        await self._stop.wait()
        pump.cancel()
        for c in list(self._clients):
            await c.close()
        for srv in servers:
            srv.close()
            await srv.wait_closed()

    async def _pump(self):
        loop = asyncio.get_running_loop()
        while True:
            try:
                msg = await loop.run_in_executor(None, self.telemetry.get, 0.1)
            except queue.Empty:
                continue
            for c in list(self._clients):
                try:
                    c.backlog.put_nowait(msg)
                except asyncio.QueueFull:
                    c.dropped = True
                    self._clients.discard(c)
                    log.info("dropping slow client")
                    await c.close()

    async def _writer(self, client: _Client):
        while True:
            msg = await client.backlog.get()
            await client.send(msg)

    async def _serve_client(self, client: _Client, messages):
        session = Session(self.arena)
        self._clients.add(client)
        writer = asyncio.create_task(self._writer(client))
        try:
            async for raw in messages:
                if not raw.strip():
                    continue
                await client.send(handle_command(raw, session, self.commands.put_nowait))
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.cancel()
            self._clients.discard(client)

    async def _tcp_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        async def send(text: str):
            writer.write(text.encode() + b"\n")
            await writer.drain()

        async def close():
            writer.close()

        async def lines():
            while True:
                try:
                    line = await reader.readline()
                except ValueError:
                    await send(error(None, f"line longer than {MAX_LINE} bytes at position {MAX_LINE}"))
                    return
                if not line:
                    return
                yield line.rstrip(b"\r\n")

        await self._serve_client(_Client(send, close), lines())
        writer.close()

    async def _ws_client(self, ws):
        from websockets.exceptions import ConnectionClosed

        async def send(text: str):
            await ws.send(text)

        async def close():
            await ws.close()

        async def messages():
            try:
                async for m in ws:
                    yield m
            except ConnectionClosed:
                return

        await self._serve_client(_Client(send, close), messages())


def serve_control(endpoint: str, commands: queue.Queue, telemetry: DropOldestQueue,
                  shutdown: threading.Event | None = None, arena=None) -> None:
    """Serve until ``shutdown`` is set (forever if ``None``)."""
    server = ControlServer(endpoint, commands, telemetry, arena).start()
    try:
        (shutdown or threading.Event()).wait()
    finally:
        server.stop()


__all__ = [
    "Command", "ControlServer", "DropOldestQueue", "Endpoint", "TelemetryPublisher", "decode_thumbnail",
    "encode_telemetry", "handle_command", "parse_command", "parse_endpoints", "serve_control",
    "telemetry_snapshot",
]
