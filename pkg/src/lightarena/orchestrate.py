"""The experiment loop: camera, detection, tracking, environment, robots, logs.

One :class:`Experiment` owns all mutable state and advances it with
:meth:`Experiment.tick` in a fixed stage order::

    1 camera    synthetic frame from true robot positions (or next file frame)
    2 detect    circle detection
    3 track     track update
    4 world     camera px -> projector px -> world mm for every track
    5 commands  operator commands, applied atomically in arrival order
    6 field     last tick's deposits, source objects, diffusion/evaporation
    7 compose   projector frame
    8 swarm     robots sense the environment and move
    9 log       CSV rows, one event line, telemetry

Given a config, its master seed and a command trace every log byte is
reproducible, except values under the ``wall_time`` key of event lines.
"""

from __future__ import annotations

import collections
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import cv2
import numpy as np

from . import _kernels, rng
from .calib import Homography, calibrate_from_fiducials, fiducial_grid, invert_homography
from .config import ConfigError, ScenarioConfig
from .detect import CircleDetector, Detection
from .field import (Field, TileLayer, VirtualObject, blocked_mask, deposit, deposit_many,
                    displayed_labels, make_pattern, make_tile_layer_frame, step_field)
from .image import ImageBuffer, load_pnm, render_camera_view, save_pnm
from .protocol import Command
from .render import OverlayStyle, compose_projector_frame
from .swarm import Behavior, Robot, mean_nearest_neighbor, step_swarm
from .track import Track, Tracker, TrackState

STAGES = ("camera", "detect", "track", "world", "commands", "field", "compose", "swarm")
CSV_HEADER = "tick,track_id,state,cx_px,cy_px,r_px,world_x_mm,world_y_mm\n"
FLUSH_EVERY = 32


class EndOfInput(Exception):
    """frames_in mode ran out of frames."""


class LogWriteError(OSError):
    pass


# -- records -----------------------------------------------------------------

@dataclass(frozen=True)
class TrackRow:
    id: int
    cx: float
    cy: float
    r: float
    state: str
    world_x: float
    world_y: float


@dataclass(frozen=True)
class TickRecord:
    tick: int
    wall_time_ms: float
    detections: int
    tracks: tuple
    fps_instant: float
    field_mass: float
    events: tuple = ()
    applied: tuple = ()

    def event_line(self, wall_time: dict | None = None) -> str:
        rec = {
            "type": "tick",
            "tick": self.tick,
            "payload": {
                "detections": self.detections,
                "tracks": len(self.tracks),
                "confirmed": sum(1 for t in self.tracks if t.state == TrackState.CONFIRMED.value),
                "field_mass": self.field_mass,
                "events": list(self.events),
                "applied": list(self.applied),
            },
            "wall_time": {"ms": round(self.wall_time_ms, 3), "fps_instant": round(self.fps_instant, 3),
                          **(wall_time or {})},
        }
        return json.dumps(rec, separators=(",", ":"))


@dataclass
class ExperimentSummary:
    ticks_run: int
    mean_fps: float
    min_fps: float
    precision: float | None
    recall: float | None
    id_switches: int
    final_field_mass: float
    metrics: dict
    end_reason: str
    track_log: str | None = None
    event_log: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- command sources ---------------------------------------------------------

class NoCommands:
    exhausted = True

    def poll(self, tick: int) -> list[Command]:
        return []


class ScriptedCommands:
    """A fixed command trace keyed by the tick at which each command is applied.

    A command listed for tick ``k`` is visible at the boundary before tick
    ``k`` runs: control verbs act there, the rest are applied in stage 5 of
    tick ``k``. Commands queued while tick ``k-1`` runs therefore belong
    under ``k``.
    """

    def __init__(self, entries: Iterable[tuple[int, Command]] = ()):
        self._entries = sorted(entries, key=lambda e: (e[0], e[1].seq))
        self._pos = 0

    def poll(self, tick: int) -> list[Command]:
        out = []
        while self._pos < len(self._entries) and self._entries[self._pos][0] <= tick:
            out.append(self._entries[self._pos][1])
            self._pos += 1
        return out

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._entries)

    @classmethod
    def from_event_log(cls, path: str | os.PathLike) -> "ScriptedCommands":
        """Rebuild the trace a previous run recorded, for replay."""
        entries = []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["type"] == "command":
                    p = rec["payload"]
                    entries.append((rec["tick"], Command(p["seq"], p["verb"], p["args"])))
        return cls(entries)


class QueueCommands:
    """Drains a thread-safe queue fed by the control server; never blocks."""

    def __init__(self, q):
        self.q = q
        self.exhausted = False

    def poll(self, tick: int) -> list[Command]:
        out = []
        while True:
            try:
                out.append(self.q.get_nowait())
            except Exception:
                return out


# -- metrics -----------------------------------------------------------------

class Metrics:
    """EMA frame rate (alpha 0.1) and per-stage latency over the last 100 ticks."""

    def __init__(self, alpha: float = 0.1, window: int = 100):
        self.alpha = alpha
        self.fps_ema: float | None = None
        self.fps_instant: float | None = None
        self.stage_ms = {s: collections.deque(maxlen=window) for s in STAGES}
        self.tick_ms = collections.deque(maxlen=window)
        self.ticks = 0

    def record(self, tick_ms: float, stages: dict[str, float]) -> float:
        tick_ms = max(tick_ms, 1e-6)
        inst = 1000.0 / tick_ms
        self.fps_instant = inst
        self.fps_ema = inst if self.fps_ema is None else self.alpha * inst + (1 - self.alpha) * self.fps_ema
        self.tick_ms.append(tick_ms)
        for s in STAGES:
            self.stage_ms[s].append(stages.get(s, 0.0))
        self.ticks += 1
        return inst

    def snapshot(self) -> dict:
        if self.ticks == 0:
            raise ValueError("no tick has completed yet")
        return {
            "fps": self.fps_ema,
            "fps_instant": self.fps_instant,
            "tick_ms": float(np.mean(self.tick_ms)),
            "stages_ms": {s: float(np.mean(v)) if v else 0.0 for s, v in self.stage_ms.items()},
        }


# -- logs --------------------------------------------------------------------

class RunLogs:
    """Track CSV plus line-delimited event log, flushed every 32 ticks."""

    def __init__(self, track_path: str | os.PathLike | None, event_path: str | os.PathLike | None):
        self.track_path = track_path
        self.event_path = event_path
        self._csv = self._events = None
        self._since_flush = 0
        try:
            for p in (track_path, event_path):
                if p is not None:
                    Path(p).parent.mkdir(parents=True, exist_ok=True)
            if track_path is not None:
                self._csv = open(track_path, "w", newline="")
                self._csv.write(CSV_HEADER)
            if event_path is not None:
                self._events = open(event_path, "w")
        except OSError as e:
            self.close()
            raise LogWriteError(f"cannot open log file: {e}") from None

    def event(self, type_: str, tick: int, payload: dict):
        self._write(self._events, json.dumps({"type": type_, "tick": tick, "payload": payload},
                                             separators=(",", ":")) + "\n")

    def append(self, record: TickRecord, wall_time: dict | None = None):
        if self._csv is not None and record.tracks:
            self._write(self._csv, "".join(
                f"{record.tick},{t.id},{t.state},{t.cx:.3f},{t.cy:.3f},{t.r:.3f},"
                f"{t.world_x:.3f},{t.world_y:.3f}\n" for t in record.tracks))
        self._write(self._events, record.event_line(wall_time) + "\n")
        self._since_flush += 1
        if self._since_flush >= FLUSH_EVERY:
            self.flush()

    def _write(self, fh, text: str):
        if fh is None:
            return
        try:
            fh.write(text)
        except OSError as e:
            self.close()
            raise LogWriteError(f"log write failed: {e}") from None

    def flush(self):
        self._since_flush = 0
        for fh in (self._csv, self._events):
            if fh is not None and not fh.closed:
                fh.flush()

    def close(self):
        for fh in (self._csv, self._events):
            if fh is not None and not fh.closed:
                try:
                    fh.flush()
                finally:
                    fh.close()


def append_log(record: TickRecord, sinks: RunLogs, wall_time: dict | None = None) -> None:
    sinks.append(record, wall_time)


# -- ground-truth scoring ----------------------------------------------------

def _greedy_pairs(a: np.ndarray, b: np.ndarray, gate: float) -> list[tuple[int, int]]:
    if len(a) == 0 or len(b) == 0:
        return []
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ia, ib = _kernels.greedy_match(np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1]),
                                   np.arange(len(a), dtype=np.int64), np.ascontiguousarray(b[:, 0]),
                                   np.ascontiguousarray(b[:, 1]), float(gate))
    return list(zip(ia.tolist(), ib.tolist()))


class GroundTruthScore:
    """Detection precision/recall and identity switches against true positions."""

    def __init__(self, gate_px: float):
        self.gate = gate_px
        self.tp = self.fp = self.fn = 0
        self.id_switches = 0
        self._owner: dict[int, int] = {}

    def update(self, truth_ids: np.ndarray, truth_px: np.ndarray, detections: Sequence[Detection],
               tracks: Sequence[Track]):
        det = np.array([[d.cx, d.cy] for d in detections]).reshape(-1, 2)
        pairs = _greedy_pairs(truth_px, det, self.gate)
        self.tp += len(pairs)
        self.fp += len(det) - len(pairs)
        self.fn += len(truth_px) - len(pairs)
        live = [t for t in tracks if t.state is TrackState.CONFIRMED]
        tp = np.array([[t.cx, t.cy] for t in live]).reshape(-1, 2)
        for i, j in _greedy_pairs(truth_px, tp, self.gate):
            rid, tid = int(truth_ids[i]), live[j].id
            prev = self._owner.get(rid)
            if prev is not None and prev != tid:
                self.id_switches += 1
            self._owner[rid] = tid

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return self.tp / n if n else 1.0

    @property
    def recall(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else 1.0


# -- placement ---------------------------------------------------------------

def place_robots(cfg: ScenarioConfig) -> list[Robot]:
    """Initial robots; random placements are non-overlapping and seeded."""
    rc = cfg.robots
    n, r = rc.count, rc.radius
    seed = rng.derive_seed(cfg.run.master_seed, "placement")
    headings = rng.uniform(seed, "heading", np.arange(n)) * 2 * math.pi - math.pi
    if rc.placement == "explicit":
        pos = [(p[0], p[1]) for p in rc.positions]
        headings = [p[2] if len(p) == 3 else h for p, h in zip(rc.positions, headings)]
    else:
        pos = _sample_positions(cfg, n, r, seed)
    return [Robot(i, pos[i], float(headings[i]), rc.speed, r, 0, Behavior(rc.behavior)) for i in range(n)]


def _sample_positions(cfg: ScenarioConfig, n: int, r: float, seed: int, gap: float = 2.0):
    rc, arena = cfg.robots, cfg.arena
    lo = np.array([r, r])
    hi = np.array([arena.width_mm - r, arena.height_mm - r])
    if rc.placement == "cluster":
        c = np.array(rc.cluster_center if rc.cluster_center is not None
                     else [0.5 * arena.width_mm, 0.5 * arena.height_mm], dtype=float)
        rad = rc.cluster_radius if rc.cluster_radius is not None else (r + gap) * math.sqrt(n / 0.35)
    out: list[tuple[float, float]] = []
    pts = np.zeros((0, 2))
    attempt = 0
    while len(out) < n:
        if attempt > 2000 * max(n, 1):
            raise ConfigError("robots", f"could only place {len(out)} of {n} robots without overlap")
        u = rng.uniform(seed, "placement", attempt, np.arange(2))
        attempt += 1
        if rc.placement == "cluster":
            rho = rad * math.sqrt(u[0])
            th = 2 * math.pi * u[1]
            p = c + rho * np.array([math.cos(th), math.sin(th)])
            if np.any(p < lo) or np.any(p > hi):
                continue
        else:
            p = lo + u * (hi - lo)
        if len(pts) and np.min(np.hypot(*(pts - p).T)) < 2 * r + gap:
            continue
        out.append((float(p[0]), float(p[1])))
        pts = np.vstack([pts, p])
    return out


# -- experiment --------------------------------------------------------------

class Experiment:
    """All mutable state of one run. Single-threaded; see module docstring."""

    def __init__(self, cfg: ScenarioConfig, *, clock: Callable[[], float] = time.perf_counter,
                 logs: RunLogs | None = None, export_dir: str | os.PathLike | None = None):
        self.cfg = cfg
        self.clock = clock
        self.logs = logs
        self.export_dir = Path(export_dir) if export_dir is not None else None
        self.dt = cfg.dt
        self.seed = cfg.run.master_seed
        self.mode = cfg.run.mode
        self.camera = cfg.camera_model()
        self.hough = cfg.hough_params()
        self.detector = CircleDetector(self.hough, cfg.hough.blur_sigma, cfg.hough.blur_ksize)
        self.tracker = Tracker(cfg.tracker_params())
        self.style: OverlayStyle = cfg.overlay_style()
        self.behavior = cfg.behavior_params()
        self.arena = (cfg.arena.width_mm, cfg.arena.height_mm)
        self.mm_per_px = cfg.projector.mm_per_px
        self.projector_size = (cfg.projector.width, cfg.projector.height)
        self.tick_rate = cfg.run.tick_rate

        self.objects: list[VirtualObject] = list(cfg.objects)
        gw, gh = cfg.field_grid()
        fc = cfg.field
        self.field = Field.empty(gw, gh, fc.cell_size_mm, diffusion_d=fc.diffusion_d,
                                 evaporation_rho=fc.evaporation_rho, dt=self.dt,
                                 blocked=blocked_mask(self.objects, gw, gh, fc.cell_size_mm))
        tw, th = cfg.tile_grid()
        tc = cfg.tiles
        tile_seed = tc.noise_seed if tc.noise_seed is not None else \
            rng.derive_seed(self.seed, "tiles") & 0xFFFFFFFF
        self.tiles = TileLayer(make_pattern(tc.pattern, tw, th, tile_seed, tc.fraction), tc.tile_size_mm,
                               tuple(tuple(c) for c in tc.base_colors), tc.noise_amplitude,
                               tc.noise_mode, tile_seed)
        self.value_range = None if fc.normalization == "per_frame" else (0.0, fc.fixed_max)

        self.robots: list[Robot] = place_robots(cfg) if self.mode == "closed_loop" else []
        self.sensed: tuple[int, dict] | None = None
        self.pending_deposits: list = []
        self.frame_files: list[Path] = []
        if self.mode == "frames_in":
            d = cfg.resolve(cfg.run.frames_dir)
            files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".pnm"))
            # a directory exported by a closed_loop run also holds projector frames
            camera = [p for p in files if p.name.startswith("camera_")]
            self.frame_files = camera or files

        self.H_world_to_projector = Homography.scale(1.0 / self.mm_per_px)
        self.H_projector_to_world = Homography.scale(self.mm_per_px)
        self.H_camera_to_projector, self.calibration_rms = self._calibrate()
        self.H_camera_to_world = self.H_projector_to_world @ self.H_camera_to_projector

        self.score = GroundTruthScore(gate_px=max(cfg.robot_radius_px(), 2.0)) \
            if self.mode == "closed_loop" else None
        self.metrics = Metrics()
        self.tick_index = 0
        self.paused = False
        self.stopped = False
        self.last_record: TickRecord | None = None
        self.last_camera_frame: ImageBuffer | None = None
        self.last_projector_frame: ImageBuffer | None = None
        self.last_applied: tuple = ()
        self.control_applied: list[int] = []
        self.fps_history: list[float] = []
        self.late_ms: float | None = None
        self.ring_states: dict[int, int] | None = None
        self._warmup()

    def _warmup(self):
        """Exercise the compiled kernels on throwaway data before the first tick."""
        _kernels.warmup()
        mid = (0.5 * self.arena[0], 0.5 * self.arena[1])
        frame = render_camera_view([(mid, self.cfg.robots.radius)], self.camera, 0)
        self.detector(frame)
        c = self.camera.project([mid])[0]
        ghost = Track(-1, float(c[0]), float(c[1]), 10.0, state=TrackState.CONFIRMED)
        compose_projector_frame(self.tiles, self.field, self.objects, [ghost], self.H_camera_to_projector,
                                self.style, 0, size=self.projector_size, mm_per_px=self.mm_per_px)

    # -- setup ---------------------------------------------------------------

    def _calibrate(self) -> tuple[Homography, float]:
        c = self.cfg.calibration
        if c.method == "explicit":
            return self.cfg.explicit_homography(), 0.0
        if c.method == "analytic":
            camera_to_world = invert_homography(Homography(self.camera.world_to_camera))
            return self.H_world_to_projector @ camera_to_world, 0.0
        rows, cols = c.grid
        dots = fiducial_grid(rows, cols, *self.projector_size)
        radius = c.dot_radius_mm if c.dot_radius_mm is not None else self.cfg.robots.radius
        world = [((x * self.mm_per_px, y * self.mm_per_px), radius) for x, y in dots]
        quiet = dataclasses.replace(self.camera, pixel_noise_sigma=0.0)
        frame = render_camera_view(world, quiet, rng.derive_seed(self.seed, "fiducials"))
        return calibrate_from_fiducials(dots, frame, self.hough)

    # -- stages --------------------------------------------------------------

    def _truth(self):
        ids = np.array([r.id for r in self.robots], dtype=np.int64)
        pos = np.array([r.pos for r in self.robots]).reshape(-1, 2)
        return ids, pos

    def _camera_frame(self, k: int) -> ImageBuffer:
        if self.mode == "frames_in":
            if k >= len(self.frame_files):
                raise EndOfInput
            img = load_pnm(self.frame_files[k])
            if img.channels == 3:
                img = ImageBuffer(cv2.cvtColor(np.ascontiguousarray(img.data), cv2.COLOR_RGB2GRAY))
            return img
        robots = [(r.pos, r.radius) for r in self.robots]
        return render_camera_view(robots, self.camera, rng.derive_seed(self.seed, "camera", k), self.arena)

    def _to_world(self, tracks: Sequence[Track]) -> tuple[TrackRow, ...]:
        if not tracks:
            return ()
        cam = np.array([[t.cx, t.cy] for t in tracks])
        world = self.H_camera_to_world.map(cam)
        return tuple(TrackRow(t.id, t.cx, t.cy, t.r, t.state.value, float(w[0]), float(w[1]))
                     for t, w in zip(tracks, world))

    def apply_command(self, cmd: Command, k: int) -> str | None:
        """Apply one scene command; returns a rejection reason or ``None``."""
        a = cmd.args
        if cmd.verb == "set_noise":
            self.tiles = self.tiles.with_amplitude(a["amplitude"])
        elif cmd.verb == "add_object":
            obj = VirtualObject.from_dict(a)
            if any(o.id == obj.id for o in self.objects):
                return f"object {obj.id!r} already exists"
            self.objects.append(obj)
            self._refresh_blockers()
        elif cmd.verb == "remove_object":
            before = len(self.objects)
            self.objects = [o for o in self.objects if o.id != a["id"]]
            if len(self.objects) == before:
                return f"no object {a['id']!r}"
            self._refresh_blockers()
        elif cmd.verb == "deposit_at":
            w, h = self.field.extent
            if not (0 <= a["x"] <= w and 0 <= a["y"] <= h):
                return "position outside field"
            self.field = deposit(self.field, (a["x"], a["y"]), a["amount"])
        elif cmd.verb == "set_param":
            path, v = a["path"], a["value"]
            if path == "tiles.noise_amplitude":
                self.tiles = self.tiles.with_amplitude(v)
            elif path == "field.evaporation_rho":
                self.field = dataclasses.replace(self.field, evaporation_rho=float(v))
            elif path == "overlay.palette":
                self.style = dataclasses.replace(self.style, palette=tuple(tuple(c) for c in v))
            elif path == "run.tick_rate":
                # pacing only; the simulated time step stays as configured
                self.tick_rate = float(v)
        else:
            return f"{cmd.verb} is not a scene command"
        return None

    def _refresh_blockers(self):
        f = self.field
        self.field = dataclasses.replace(f, blocked=blocked_mask(self.objects, f.gw, f.gh, f.cell_size))

    def _source_deposits(self) -> tuple[list, list]:
        pos, amt = [], []
        for o in self.objects:
            if o.effect == "deposit_source" and o.rate > 0:
                cx, cy = o.center
                w, h = self.field.extent
                pos.append((min(max(cx, 0.0), w), min(max(cy, 0.0), h)))
                amt.append(o.rate * self.dt)
        return pos, amt

    def tick(self, commands: Sequence[Command] = ()) -> TickRecord:
        """Run stages 1-9 for the current tick index."""
        k = self.tick_index
        clock = self.clock
        stages = {}
        t0 = clock()

        frame = self._camera_frame(k)
        t1 = clock()
        stages["camera"] = t1 - t0

        detections = self.detector(frame)
        t2 = clock()
        stages["detect"] = t2 - t1

        before = {t.id for t in self.tracker.tracks if t.state is not TrackState.LOST}
        tracks = self.tracker.step(detections, self.dt, k)
        t3 = clock()
        stages["track"] = t3 - t2

        rows = self._to_world(tracks)
        t4 = clock()
        stages["world"] = t4 - t3

        events = [{"type": "spawn", "id": t.id} for t in tracks if t.id not in before]
        events += [{"type": "lost", "id": t.id} for t in tracks if t.state is TrackState.LOST]
        applied = list(self.control_applied)
        self.control_applied = []
        for cmd in commands:
            reason = self.apply_command(cmd, k)
            applied.append(cmd.seq)
            ev = {"type": "command", "seq": cmd.seq, "verb": cmd.verb}
            if reason is not None:
                ev["rejected"] = reason
            events.append(ev)
            if self.logs is not None:
                self.logs.event("command", k, cmd.to_dict())
        t5 = clock()
        stages["commands"] = t5 - t4

        pos, amt = self._source_deposits()
        if self.pending_deposits:
            pos += [d.pos for d in self.pending_deposits]
            amt += [d.amount for d in self.pending_deposits]
        if pos:
            self.field = deposit_many(self.field, pos, amt)
        self.field = step_field(self.field, self.dt)
        t6 = clock()
        stages["field"] = t6 - t5

        robot_states = None
        if self.style.color_key == "by_robot_state" and self.robots:
            robot_states = self._ring_states(tracks)
        self.ring_states = robot_states
        projector = compose_projector_frame(
            self.tiles, self.field, self.objects, tracks, self.H_camera_to_projector, self.style, k,
            size=self.projector_size, mm_per_px=self.mm_per_px, opacity=self.cfg.field.opacity,
            value_range=self.value_range, robot_states=robot_states)
        t7 = clock()
        stages["compose"] = t7 - t6

        if self.score is not None:
            ids, pos_w = self._truth()
            truth_px = self.camera.project(pos_w) if len(ids) else np.zeros((0, 2))
            self.score.update(ids, truth_px, detections, tracks)
        if self.mode == "closed_loop" and self.robots:
            self.sensed = (k, {r.id: r.pos for r in self.robots})
            self.robots, self.pending_deposits = step_swarm(
                self.robots, self.field, self.tiles, k, self.dt, rng.derive_seed(self.seed, "swarm", k),
                params=self.behavior, arena=self.arena)
        t8 = clock()
        stages["swarm"] = t8 - t7

        if self.export_dir is not None:
            self.export_dir.mkdir(parents=True, exist_ok=True)
            save_pnm(frame, self.export_dir / f"camera_{k:06d}.pgm")
            save_pnm(projector, self.export_dir / f"projector_{k:06d}.ppm")

        tick_ms = (clock() - t0) * 1000.0
        inst = self.metrics.record(tick_ms, {s: v * 1000.0 for s, v in stages.items()})
        record = TickRecord(k, tick_ms, len(detections), rows, inst, self.field.mass,
                            tuple(events), tuple(applied))
        if self.logs is not None:
            self.logs.append(record, {"late_ms": self.late_ms} if self.late_ms is not None else None)
        self.late_ms = None
        self.last_record = record
        self.last_camera_frame = frame
        self.last_projector_frame = projector
        self.last_applied = tuple(applied)
        self.fps_history.append(inst)
        self.tick_index += 1
        return record

    def _ring_states(self, tracks: Sequence[Track]) -> dict[int, int]:
        """Palette index per track from the nearest robot's opinion."""
        ids, pos = self._truth()
        px = self.camera.project(pos)
        live = [t for t in tracks if t.state is TrackState.CONFIRMED]
        tp = np.array([[t.cx, t.cy] for t in live]).reshape(-1, 2)
        opinion = {r.id: r.opinion for r in self.robots}
        out = {}
        for i, j in _greedy_pairs(px, tp, self.tracker.params.gate_radius):
            out[live[j].id] = opinion[int(ids[i])]
        return out

    # -- summaries -----------------------------------------------------------

    def scenario_metrics(self) -> dict:
        out = {"trail_cells": int(np.count_nonzero(self.field.values > 1e-9))}
        if self.robots:
            out["mean_nn_mm"] = mean_nearest_neighbor(self.robots)
            if self.sensed is not None and any(r.behavior is Behavior.TILE_VOTE for r in self.robots):
                out["opinion_agreement"] = opinion_tile_agreement(self)
        return out


def tick(state: Experiment, commands: Sequence[Command] = ()) -> TickRecord:
    return state.tick(commands)


def metrics_snapshot(state: Experiment) -> dict:
    return state.metrics.snapshot()


def opinion_tile_agreement(exp: Experiment) -> float:
    """Fraction of voting robots whose opinion equals the tile they last read.

    The label is the one displayed at the tick of the reading, at the
    position the robot sensed from (before that tick's move).
    """
    t, where = exp.sensed
    voters = [r for r in exp.robots if r.behavior is Behavior.TILE_VOTE]
    labels = displayed_labels(exp.tiles, make_tile_layer_frame(exp.tiles, t))
    col, row = exp.tiles.tile_of(np.array([where[r.id][0] for r in voters]),
                                 np.array([where[r.id][1] for r in voters]))
    return float(np.mean(labels[row, col] == np.array([r.opinion for r in voters])))


# -- run ---------------------------------------------------------------------

def open_logs(cfg: ScenarioConfig, log_dir: str | os.PathLike | None = None) -> RunLogs:
    d = Path(log_dir) if log_dir is not None else cfg.resolve(cfg.logs.dir)
    return RunLogs(d / cfg.logs.track_csv, d / cfg.logs.events)


def run_experiment(cfg: ScenarioConfig, commands=None, telemetry: Callable | None = None, *,
                   log_dir: str | os.PathLike | None = None, write_logs: bool = True,
                   clock: Callable[[], float] = time.perf_counter,
                   sleep: Callable[[float], None] = time.sleep) -> ExperimentSummary:
    """Run ``cfg.run.duration`` ticks, or until stopped or out of input.

    ``commands`` is a command source (``poll(tick)`` / ``exhausted``);
    ``telemetry`` is called with the experiment after every tick. Headless
    runs free-run; otherwise ticks are paced to the tick rate and overruns
    are recorded under ``wall_time``.
    """
    commands = commands if commands is not None else NoCommands()
    logs = open_logs(cfg, log_dir) if write_logs else None
    export = None
    if not cfg.run.headless and cfg.run.mode == "closed_loop" and cfg.run.frames_dir is not None:
        export = cfg.resolve(cfg.run.frames_dir)
    end_reason = "duration"
    try:
        exp = Experiment(cfg, clock=clock, logs=logs, export_dir=export)
        if logs is not None:
            logs.event("start", 0, {
                "scenario": cfg.name, "seed": cfg.run.master_seed, "robots": len(exp.robots),
                "camera_to_projector": exp.H_camera_to_projector.to_text(),
                "calibration_rms": exp.calibration_rms,
            })
        started = clock()
        next_deadline = started
        while exp.tick_index < cfg.run.duration:
            k = exp.tick_index
            scene = _boundary(exp, commands, k, logs, sleep)
            if exp.stopped:
                end_reason = "stop"
                break
            if exp.paused:
                end_reason = "paused"
                break
            try:
                exp.tick(scene)
            except EndOfInput:
                end_reason = "end_of_input"
                break
            if telemetry is not None:
                telemetry(exp)
            if not cfg.run.headless:
                next_deadline += 1.0 / exp.tick_rate
                wait = next_deadline - clock()
                if wait > 0:
                    sleep(wait)
                else:
                    next_deadline = clock()
                    if -wait * 1000.0 > 1000.0 / exp.tick_rate:
                        # reported on the next tick line so the set of lines stays deterministic
                        exp.late_ms = round(-wait * 1000.0, 3)
        elapsed = clock() - started
        summary = _summarize(exp, elapsed, end_reason, logs)
        if logs is not None:
            logs.event("end", exp.tick_index, {"ticks_run": summary.ticks_run, "reason": end_reason,
                                               "applied": exp.control_applied,
                                               "id_switches": summary.id_switches,
                                               "final_field_mass": summary.final_field_mass})
        return summary
    finally:
        if logs is not None:
            logs.close()


def _boundary(exp: Experiment, source, k: int, logs: RunLogs | None, sleep) -> list[Command]:
    """Handle control verbs before tick ``k``; returns the scene commands for stage 5."""
    scene: list[Command] = []
    while True:
        for cmd in source.poll(k):
            if cmd.verb == "stop":
                exp.stopped = True
            elif cmd.verb == "pause":
                exp.paused = True
            elif cmd.verb in ("resume", "start"):
                exp.paused = False
            else:
                scene.append(cmd)
                continue
            exp.control_applied.append(cmd.seq)
            if logs is not None:
                logs.event("command", k, cmd.to_dict())
            if exp.stopped:
                return scene
        if not exp.paused or source.exhausted:
            return scene
        sleep(0.01)


def _summarize(exp: Experiment, elapsed: float, end_reason: str, logs: RunLogs | None) -> ExperimentSummary:
    n = exp.tick_index
    fps = exp.fps_history
    return ExperimentSummary(
        ticks_run=n,
        mean_fps=n / elapsed if n and elapsed > 0 else 0.0,
        min_fps=min(fps) if fps else 0.0,
        precision=exp.score.precision if exp.score is not None else None,
        recall=exp.score.recall if exp.score is not None else None,
        id_switches=exp.score.id_switches if exp.score is not None else 0,
        final_field_mass=exp.field.mass,
        metrics=exp.scenario_metrics(),
        end_reason=end_reason,
        track_log=str(logs.track_path) if logs is not None else None,
        event_log=str(logs.event_path) if logs is not None else None,
    )
