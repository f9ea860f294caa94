"""Control messages shared by the experiment loop and the network server.

Wire format is one JSON object per line (or per WebSocket text message)::

    {"seq": 7, "verb": "set_noise", "args": {"amplitude": 0.3}}
    {"ack": 7}
    {"err": 7, "reason": "amplitude out of [0,1]"}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .field import VirtualObject

CONTROL_VERBS = ("start", "pause", "resume", "stop")
SCENE_VERBS = ("set_noise", "add_object", "remove_object", "deposit_at", "set_param")
VERBS = CONTROL_VERBS + SCENE_VERBS

LIVE_PARAMS = ("tiles.noise_amplitude", "field.evaporation_rho", "overlay.palette", "run.tick_rate")


class ProtocolError(ValueError):
    """Rejected message; ``seq`` is ``None`` when it could not be read."""

    def __init__(self, reason: str, seq: int | None = None):
        super().__init__(reason)
        self.reason = reason
        self.seq = seq


@dataclass(frozen=True)
class Command:
    seq: int
    verb: str
    args: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seq": self.seq, "verb": self.verb, "args": self.args}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    @property
    def is_control(self) -> bool:
        return self.verb in CONTROL_VERBS


def _number(args: dict, key: str) -> float:
    v = args.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValueError(f"{key} must be a finite number")
    return float(v)


def _palette(value) -> list:
    if not isinstance(value, list) or not value:
        raise ValueError("palette must be a non-empty list of RGB triples")
    for c in value:
        if not (isinstance(c, list) and len(c) == 3
                and all(isinstance(x, int) and not isinstance(x, bool) and 0 <= x <= 255 for x in c)):
            raise ValueError("palette entries must be [r, g, b] in 0..255")
    return value


def validate_args(verb: str, args: dict, arena: tuple[float, float] | None = None) -> dict:
    """Check a payload against the module invariants; returns normalised args."""
    if verb in CONTROL_VERBS:
        if args:
            raise ValueError(f"{verb} takes no arguments")
        return {}
    if verb == "set_noise":
        a = _number(args, "amplitude")
        if not 0.0 <= a <= 1.0:
            raise ValueError("amplitude out of [0,1]")
        return {"amplitude": a}
    if verb == "add_object":
        obj = VirtualObject.from_dict(args)
        return obj.to_dict()
    if verb == "remove_object":
        if "id" not in args:
            raise ValueError("remove_object needs an id")
        return {"id": str(args["id"])}
    if verb == "deposit_at":
        x, y, amount = _number(args, "x"), _number(args, "y"), _number(args, "amount")
        if amount < 0:
            raise ValueError("amount must be >= 0")
        if arena is not None and not (0 <= x <= arena[0] and 0 <= y <= arena[1]):
            raise ValueError(f"position ({x}, {y}) outside arena")
        return {"x": x, "y": y, "amount": amount}
    if verb == "set_param":
        path = args.get("path")
        if path not in LIVE_PARAMS:
            raise ValueError("not live-tunable")
        if path == "overlay.palette":
            return {"path": path, "value": _palette(args.get("value"))}
        v = _number(args, "value")
        if path == "tiles.noise_amplitude" and not 0.0 <= v <= 1.0:
            raise ValueError("amplitude out of [0,1]")
        if path == "field.evaporation_rho" and v < 0:
            raise ValueError("evaporation_rho must be >= 0")
        if path == "run.tick_rate" and v <= 0:
            raise ValueError("tick_rate must be > 0")
        return {"path": path, "value": v}
    raise ValueError(f"unknown verb {verb!r}")


def parse_command(raw: str | bytes, arena: tuple[float, float] | None = None) -> Command:
    """Decode and validate one message, raising :class:`ProtocolError`."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"invalid utf-8 at position {e.start}") from None
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"{e.msg} at position {e.pos}") from None
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object at position 0")
    seq = msg.get("seq")
    if isinstance(seq, bool) or not isinstance(seq, int) or seq < 0:
        raise ProtocolError("seq must be a non-negative integer")
    unknown = set(msg) - {"seq", "verb", "args"}
    if unknown:
        raise ProtocolError(f"unknown field {sorted(unknown)[0]!r}", seq)
    verb = msg.get("verb")
    if verb not in VERBS:
        raise ProtocolError(f"unknown verb {verb!r}", seq)
    args = msg.get("args", {})
    if args is None:
        args = {}
    if not isinstance(args, dict):
        raise ProtocolError("args must be an object", seq)
    try:
        args = validate_args(verb, args, arena)
    except (KeyError, TypeError, ValueError) as e:
        reason = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
        if isinstance(e, KeyError):
            reason = f"missing {reason}"
        raise ProtocolError(str(reason), seq) from None
    return Command(seq, verb, args)


def ack(seq: int) -> str:
    return json.dumps({"ack": seq})


def error(seq: int | None, reason: str) -> str:
    return json.dumps({"err": seq, "reason": reason})


class Session:
    """Per-connection state: sequence numbers must strictly increase."""

    def __init__(self, arena: tuple[float, float] | None = None):
        self.arena = arena
        self.last_seq: int | None = None

    def handle(self, raw: str | bytes, enqueue) -> str:
        """Validate ``raw``; on success pass the command to ``enqueue`` and return the ack."""
        try:
            cmd = parse_command(raw, self.arena)
        except ProtocolError as e:
            return error(e.seq, e.reason)
        if self.last_seq is not None and cmd.seq <= self.last_seq:
            return error(cmd.seq, f"seq must exceed {self.last_seq}")
        try:
            enqueue(cmd)
        except Exception as e:  # queue full or closed
            return error(cmd.seq, f"not accepted: {e or type(e).__name__}")
        self.last_seq = cmd.seq
        return ack(cmd.seq)


def handle_command(raw: str | bytes, session: Session, enqueue) -> str:
    return session.handle(raw, enqueue)


def decode_reply(line: str | bytes) -> dict[str, Any]:
    return json.loads(line)
