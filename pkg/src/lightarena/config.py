"""Scenario files: a YAML document validated into :class:`ScenarioConfig`.

Every section is optional. Unknown keys are rejected and validation errors
carry the dotted path of the offending field (``field.diffusion_d``).
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .calib import Homography
from .detect import HoughParams
from .field import EFFECTS, NOISE_MODES, STABILITY_LIMIT, VirtualObject
from .image import CameraModel
from .render import COLOR_KEYS, DEFAULT_PALETTE, OverlayStyle
from .swarm import Behavior, BehaviorParams
from .track import TrackerParams

MODES = ("closed_loop", "frames_in")
CALIBRATION_METHODS = ("analytic", "fiducial", "explicit")
PLACEMENTS = ("explicit", "uniform", "cluster")
PATTERNS = ("checker", "stripes", "halves", "random")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ArenaConfig:
    width_mm: float = 1024.0
    height_mm: float = 768.0


@dataclass(frozen=True)
class CameraConfig:
    width: int = 1024
    height: int = 768
    world_to_camera: list | None = None  # None: fit the arena, centred
    background_level: float = 40.0
    robot_body_level: float = 200.0
    pixel_noise_sigma: float = 0.0
    vignette_strength: float = 0.0


@dataclass(frozen=True)
class ProjectorConfig:
    width: int = 1024
    height: int = 768
    mm_per_px: float = 1.0


@dataclass(frozen=True)
class CalibrationConfig:
    method: str = "analytic"
    matrix: list | None = None  # camera -> projector, row-major, for "explicit"
    grid: list = field(default_factory=lambda: [3, 3])
    dot_radius_mm: float | None = None


@dataclass(frozen=True)
class HoughConfig:
    r_min: int | None = None
    r_max: int | None = None
    dp: int = 2
    edge_threshold: float = 60.0
    center_threshold: int = 40
    min_center_dist: float | None = None
    max_circles: int = 1000
    blur_sigma: float = 1.0
    blur_ksize: int = 5


@dataclass(frozen=True)
class TrackerConfig:
    gate_radius: float | None = None
    confirm_hits: int = 3
    max_misses: int = 5
    radius_smoothing_alpha: float = 0.3
    velocity_smoothing_beta: float = 0.5


@dataclass(frozen=True)
class FieldConfig:
    cell_size_mm: float = 16.0
    diffusion_d: float = 0.0
    evaporation_rho: float = 0.0
    opacity: float = 0.7
    normalization: str = "per_frame"
    fixed_max: float = 1.0


@dataclass(frozen=True)
class TilesConfig:
    tile_size_mm: float = 128.0
    pattern: str = "checker"
    fraction: float = 0.5
    base_colors: list = field(default_factory=lambda: [[30, 30, 30], [220, 220, 220]])
    noise_amplitude: float = 0.0
    noise_mode: str = "flip"
    noise_seed: int | None = None  # None: derived from the master seed


@dataclass(frozen=True)
class OverlayConfig:
    ring_thickness: float = 2.0
    palette: list = field(default_factory=lambda: [list(c) for c in DEFAULT_PALETTE])
    color_key: str = "by_track_id"
    ring_gap: float = 3.0


@dataclass(frozen=True)
class BehaviorConfig:
    sensor_angle: float = math.pi / 4
    sensor_offset: float = 20.0
    sigma_turn: float = 1.0
    k_turn: float = 2.0
    deposit_rate: float = 1.0
    opinion_noise: float = 0.0
    sensor_noise_sigma: float = 0.0


@dataclass(frozen=True)
class RobotsConfig:
    count: int = 1
    placement: str = "uniform"
    behavior: str = "random_walk_deposit"
    speed: float = 10.0
    radius: float = 16.0
    positions: list = field(default_factory=list)  # [x, y] or [x, y, heading]
    cluster_center: list | None = None
    cluster_radius: float | None = None


@dataclass(frozen=True)
class RunConfig:
    tick_rate: float = 30.0
    duration: int = 300
    master_seed: int = 0
    mode: str = "closed_loop"
    headless: bool = False
    frames_dir: str | None = None


@dataclass(frozen=True)
class LogsConfig:
    dir: str = "runs"
    track_csv: str = "tracks.csv"
    events: str = "events.jsonl"


SECTIONS = {
    "arena": ArenaConfig, "camera": CameraConfig, "projector": ProjectorConfig,
    "calibration": CalibrationConfig, "hough": HoughConfig, "tracker": TrackerConfig,
    "field": FieldConfig, "tiles": TilesConfig, "overlay": OverlayConfig,
    "behavior": BehaviorConfig, "robots": RobotsConfig, "run": RunConfig, "logs": LogsConfig,
}


@dataclass(frozen=True)
class ScenarioConfig:
    arena: ArenaConfig = ArenaConfig()
    camera: CameraConfig = CameraConfig()
    projector: ProjectorConfig = ProjectorConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    hough: HoughConfig = HoughConfig()
    tracker: TrackerConfig = TrackerConfig()
    field: FieldConfig = FieldConfig()
    tiles: TilesConfig = TilesConfig()
    overlay: OverlayConfig = OverlayConfig()
    behavior: BehaviorConfig = BehaviorConfig()
    robots: RobotsConfig = RobotsConfig()
    run: RunConfig = RunConfig()
    logs: LogsConfig = LogsConfig()
    objects: tuple = ()
    name: str = "scenario"
    base_dir: str = "."

    # -- derived module parameters -----------------------------------------

    @property
    def dt(self) -> float:
        return 1.0 / self.run.tick_rate

    def camera_model(self) -> CameraModel:
        c = self.camera
        if c.world_to_camera is not None:
            h = np.asarray(c.world_to_camera, dtype=float).reshape(3, 3)
        else:
            s = min(c.width / self.arena.width_mm, c.height / self.arena.height_mm)
            ox = 0.5 * (c.width - s * self.arena.width_mm)
            oy = 0.5 * (c.height - s * self.arena.height_mm)
            h = np.array([[s, 0, ox], [0, s, oy], [0, 0, 1.0]])
        return CameraModel(c.width, c.height, h, c.background_level, c.robot_body_level,
                           c.pixel_noise_sigma, c.vignette_strength)

    def robot_radius_px(self) -> float:
        cam = self.camera_model()
        mid = (0.5 * self.arena.width_mm, 0.5 * self.arena.height_mm)
        return float(cam.project_radius([mid], self.robots.radius)[0])

    def hough_params(self) -> HoughParams:
        h = self.hough
        r = self.robot_radius_px()
        r_min = h.r_min if h.r_min is not None else max(1, int(math.floor(0.75 * r)))
        r_max = h.r_max if h.r_max is not None else max(r_min, int(math.ceil(1.25 * r)))
        dist = h.min_center_dist if h.min_center_dist is not None else max(1.0, r)
        return HoughParams(r_min, r_max, h.dp, h.edge_threshold, h.center_threshold, dist, h.max_circles)

    def tracker_params(self) -> TrackerParams:
        t = self.tracker
        gate = t.gate_radius if t.gate_radius is not None else 1.5 * self.robot_radius_px()
        return TrackerParams(gate, t.confirm_hits, t.max_misses, t.radius_smoothing_alpha,
                             t.velocity_smoothing_beta)

    def behavior_params(self) -> BehaviorParams:
        return BehaviorParams(**dataclasses.asdict(self.behavior))

    def overlay_style(self) -> OverlayStyle:
        o = self.overlay
        return OverlayStyle(o.ring_thickness, tuple(tuple(c) for c in o.palette), o.color_key, o.ring_gap)

    def field_grid(self) -> tuple[int, int]:
        cs = self.field.cell_size_mm
        return (max(1, math.ceil(self.arena.width_mm / cs - 1e-9)),
                max(1, math.ceil(self.arena.height_mm / cs - 1e-9)))

    def tile_grid(self) -> tuple[int, int]:
        ts = self.tiles.tile_size_mm
        return (max(1, math.ceil(self.arena.width_mm / ts - 1e-9)),
                max(1, math.ceil(self.arena.height_mm / ts - 1e-9)))

    def explicit_homography(self) -> Homography | None:
        m = self.calibration.matrix
        return None if m is None else Homography.from_list(m)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_overrides(self, **run_fields) -> "ScenarioConfig":
        """Copy with ``run`` fields replaced, re-validated."""
        cfg = dataclasses.replace(self, run=dataclasses.replace(self.run, **run_fields))
        validate(cfg)
        return cfg


# -- parsing -----------------------------------------------------------------

def _build(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown key")
    return cls(**data)


def parse_scenario(doc: Any, base_dir: str | os.PathLike = ".") -> ScenarioConfig:
    """Validate an already-parsed document."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("", "scenario must be a mapping")
    allowed = set(SECTIONS) | {"objects", "name"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(str(key), "unknown key")
    if doc.get("run", {}) and isinstance(doc["run"], dict) and doc["run"].get("mode") == "headless":
        # "headless" is accepted as a mode for convenience: closed loop without frame export
        doc = {**doc, "run": {**doc["run"], "mode": "closed_loop", "headless": True}}
    sections = {name: _build(cls, doc.get(name), name) for name, cls in SECTIONS.items()}
    objects = doc.get("objects") or []
    if not isinstance(objects, list):
        raise ConfigError("objects", "expected a list")
    built = []
    for i, o in enumerate(objects):
        try:
            built.append(VirtualObject.from_dict(o))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"objects[{i}]", str(e)) from None
    cfg = ScenarioConfig(**sections, objects=tuple(built), name=str(doc.get("name", "scenario")),
                         base_dir=str(base_dir))
    validate(cfg)
    return cfg


def load_scenario(path: str | os.PathLike) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError("", f"cannot parse {path}: {e}") from None
    cfg = parse_scenario(doc, path.parent)
    if cfg.name == "scenario":
        cfg = dataclasses.replace(cfg, name=path.stem)
    return cfg


def _check(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


def _wrap(path: str, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None


def validate(cfg: ScenarioConfig) -> None:
    """Raise :class:`ConfigError` naming the first invalid field."""
    a, run, f, t, r = cfg.arena, cfg.run, cfg.field, cfg.tiles, cfg.robots
    _check(a.width_mm > 0, "arena.width_mm", "must be > 0")
    _check(a.height_mm > 0, "arena.height_mm", "must be > 0")
    _check(run.tick_rate > 0, "run.tick_rate", "must be > 0")
    _check(isinstance(run.duration, int) and run.duration >= 1, "run.duration", "must be an integer >= 1")
    _check(run.mode in MODES, "run.mode", f"must be one of {MODES + ('headless',)}")
    _check(run.mode != "frames_in" or run.frames_dir is not None, "run.frames_dir",
           "required in frames_in mode")
    _check(isinstance(run.master_seed, int) and run.master_seed >= 0, "run.master_seed",
           "must be a non-negative integer")

    _wrap("camera", cfg.camera_model)
    p = cfg.projector
    _check(p.width >= 1 and p.height >= 1, "projector", "resolution must be positive")
    _check(p.mm_per_px > 0, "projector.mm_per_px", "must be > 0")

    c = cfg.calibration
    _check(c.method in CALIBRATION_METHODS, "calibration.method", f"must be one of {CALIBRATION_METHODS}")
    if c.method == "explicit":
        _check(c.matrix is not None, "calibration.matrix", "required for explicit calibration")
        _wrap("calibration.matrix", cfg.explicit_homography)
    _check(len(c.grid) == 2 and min(c.grid) >= 2, "calibration.grid", "must be [rows, cols], each >= 2")

    h = cfg.hough
    _check(h.blur_ksize >= 1 and h.blur_ksize % 2 == 1, "hough.blur_ksize", "must be odd and >= 1")
    _check(h.blur_sigma > 0, "hough.blur_sigma", "must be > 0")
    _wrap("hough", cfg.hough_params)
    _wrap("tracker", cfg.tracker_params)

    _check(f.cell_size_mm > 0, "field.cell_size_mm", "must be > 0")
    _check(f.evaporation_rho >= 0, "field.evaporation_rho", "must be >= 0")
    _check(f.diffusion_d >= 0, "field.diffusion_d", "must be >= 0")
    coeff = f.diffusion_d * cfg.dt / f.cell_size_mm ** 2
    _check(coeff <= STABILITY_LIMIT, "field.diffusion_d",
           f"diffusion_d*dt/cell_size^2 = {coeff:.4g} exceeds {STABILITY_LIMIT} at tick_rate {run.tick_rate}")
    _check(0 <= f.opacity <= 1, "field.opacity", "must lie in [0, 1]")
    _check(f.normalization in ("per_frame", "fixed"), "field.normalization", "must be per_frame or fixed")
    _check(f.fixed_max > 0, "field.fixed_max", "must be > 0")

    _check(t.tile_size_mm > 0, "tiles.tile_size_mm", "must be > 0")
    _check(t.pattern in PATTERNS, "tiles.pattern", f"must be one of {PATTERNS}")
    _check(0 <= t.noise_amplitude <= 1, "tiles.noise_amplitude", "amplitude out of [0,1]")
    _check(t.noise_mode in NOISE_MODES, "tiles.noise_mode", f"must be one of {NOISE_MODES}")
    _check(0 <= t.fraction <= 1, "tiles.fraction", "must lie in [0, 1]")
    colors = np.asarray(t.base_colors)
    _check(colors.shape == (2, 3) and colors.min() >= 0 and colors.max() <= 255,
           "tiles.base_colors", "must be two RGB triples in [0, 255]")

    _check(cfg.overlay.color_key in COLOR_KEYS, "overlay.color_key", f"must be one of {COLOR_KEYS}")
    _wrap("overlay", cfg.overlay_style)
    _wrap("behavior", cfg.behavior_params)

    _check(isinstance(r.count, int) and r.count >= 0, "robots.count", "must be an integer >= 0")
    _check(r.placement in PLACEMENTS, "robots.placement", f"must be one of {PLACEMENTS}")
    _wrap("robots.behavior", lambda: Behavior(r.behavior))
    _check(r.speed >= 0, "robots.speed", "must be >= 0")
    _check(r.radius > 0, "robots.radius", "must be > 0")
    _check(2 * r.radius < min(a.width_mm, a.height_mm), "robots.radius", "robot does not fit in the arena")
    if r.placement == "explicit":
        _check(len(r.positions) == r.count, "robots.positions", f"expected {r.count} entries")
        for i, pos in enumerate(r.positions):
            ok = len(pos) in (2, 3) and r.radius <= pos[0] <= a.width_mm - r.radius \
                and r.radius <= pos[1] <= a.height_mm - r.radius
            _check(ok, f"robots.positions[{i}]", "must be [x, y(, heading)] inside the arena")
    for i, o in enumerate(cfg.objects):
        _check(o.effect in EFFECTS, f"objects[{i}].effect", f"must be one of {EFFECTS}")
