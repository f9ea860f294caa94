"""The stigmergic layer: pheromone grid, tiled background, virtual objects.

Grid arrays are indexed ``[row, col]`` = ``[y, x]``; cell ``(col, row)``
covers world ``[col*cell, (col+1)*cell) x [row*cell, (row+1)*cell)`` mm.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import rng

STABILITY_LIMIT = 0.25


class BoundsError(ValueError):
    pass


class FieldConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar concentration grid with diffusion and evaporation.

    ``dt`` is the tick length the field is configured for; the explicit
    scheme needs ``diffusion_d * dt / cell_size**2 <= 0.25``.
    """

    values: np.ndarray
    cell_size: float
    diffusion_d: float = 0.0
    evaporation_rho: float = 0.0
    dt: float = 1.0
    blocked: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise FieldConfigError("values must be a non-empty 2-D grid")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise FieldConfigError("field values must be finite and >= 0")
        if self.cell_size <= 0:
            raise FieldConfigError("cell_size must be > 0")
        if self.diffusion_d < 0 or self.evaporation_rho < 0:
            raise FieldConfigError("diffusion_d and evaporation_rho must be >= 0")
        if self.dt <= 0:
            raise FieldConfigError("dt must be > 0")
        if self.coefficient(self.dt) > STABILITY_LIMIT:
            raise FieldConfigError(
                f"diffusion_d*dt/cell_size^2 = {self.coefficient(self.dt):.4g} exceeds {STABILITY_LIMIT}")
        object.__setattr__(self, "values", values)
        if self.blocked is not None:
            blocked = np.asarray(self.blocked, dtype=bool)
            if blocked.shape != values.shape:
                raise FieldConfigError("blocked mask shape must match the grid")
            object.__setattr__(self, "blocked", blocked)

    @classmethod
    def empty(cls, gw: int, gh: int, cell_size: float, **kw) -> "Field":
        return cls(np.zeros((gh, gw)), cell_size, **kw)

    @property
    def gw(self) -> int:
        return self.values.shape[1]

    @property
    def gh(self) -> int:
        return self.values.shape[0]

    @property
    def extent(self) -> tuple[float, float]:
        return self.gw * self.cell_size, self.gh * self.cell_size

    @property
    def mass(self) -> float:
        return float(self.values.sum())

    def coefficient(self, dt: float) -> float:
        return self.diffusion_d * dt / (self.cell_size * self.cell_size)

    def with_values(self, values: np.ndarray) -> "Field":
        return replace(self, values=values)

    def cell_of(self, pos) -> tuple[int, int]:
        x, y = pos
        w, h = self.extent
        if not (0 <= x <= w and 0 <= y <= h):
            raise BoundsError(f"position ({x}, {y}) outside field [0, {w}] x [0, {h}]")
        col = min(int(x // self.cell_size), self.gw - 1)
        row = min(int(y // self.cell_size), self.gh - 1)
        return col, row


def deposit(field: Field, pos, amount: float) -> Field:
    """Add ``amount`` to the single cell containing ``pos``."""
    if amount < 0:
        raise ValueError(f"deposit amount must be >= 0, got {amount}")
    col, row = field.cell_of(pos)
    values = field.values.copy()
    values[row, col] += amount
    return field.with_values(values)


def deposit_many(field: Field, positions, amounts) -> Field:
    """Apply several deposits at once (used for a whole swarm tick)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    amounts = np.broadcast_to(np.asarray(amounts, dtype=float), (positions.shape[0],))
    if positions.shape[0] == 0:
        return field
    if np.any(amounts < 0):
        raise ValueError("deposit amounts must be >= 0")
    w, h = field.extent
    x, y = positions[:, 0], positions[:, 1]
    if np.any((x < 0) | (x > w) | (y < 0) | (y > h)):
        raise BoundsError("deposit position outside field")
    cols = np.minimum((x // field.cell_size).astype(np.int64), field.gw - 1)
    rows = np.minimum((y // field.cell_size).astype(np.int64), field.gh - 1)
    values = field.values.copy()
    np.add.at(values, (rows, cols), amounts)
    return field.with_values(values)


def _laplacian(v: np.ndarray, blocked: np.ndarray | None) -> np.ndarray:
    """5-point Laplacian as a sum of face fluxes; walls and blockers pass none."""
    fx = v[:, 1:] - v[:, :-1]
    fy = v[1:, :] - v[:-1, :]
    if blocked is not None:
        open_ = ~blocked
        fx = fx * (open_[:, 1:] & open_[:, :-1])
        fy = fy * (open_[1:, :] & open_[:-1, :])
    lap = np.zeros_like(v)
    lap[:, :-1] += fx
    lap[:, 1:] -= fx
    lap[:-1, :] += fy
    lap[1:, :] -= fy
    return lap


def step_field(field: Field, dt: float) -> Field:
    """One explicit diffusion step followed by exponential evaporation."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    c = field.coefficient(dt)
    if c > STABILITY_LIMIT:
        raise ValueError(f"unstable step: coefficient {c:.4g} > {STABILITY_LIMIT}")
    v = field.values
    if c > 0:
        v = v + c * _laplacian(v, field.blocked)
        np.maximum(v, 0.0, out=v)  # clears -0.0 / ulp-level negatives only
    if field.evaporation_rho > 0:
        v = v * np.exp(-field.evaporation_rho * dt)
    elif v is field.values:
        v = v.copy()
    return field.with_values(v)


def _bilinear(field: Field, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cs = field.cell_size
    fx = np.clip(x / cs - 0.5, 0.0, field.gw - 1.0)
    fy = np.clip(y / cs - 0.5, 0.0, field.gh - 1.0)
    c0 = np.floor(fx).astype(np.int64)
    r0 = np.floor(fy).astype(np.int64)
    c1 = np.minimum(c0 + 1, field.gw - 1)
    r1 = np.minimum(r0 + 1, field.gh - 1)
    tx = fx - c0
    ty = fy - r0
    v = field.values
    top = v[r0, c0] * (1 - tx) + v[r0, c1] * tx
    bot = v[r1, c0] * (1 - tx) + v[r1, c1] * tx
    return top * (1 - ty) + bot * ty


def sample_field(field: Field, pos) -> float:
    """Bilinear interpolation between cell centres, clamped at the borders."""
    x, y = pos
    w, h = field.extent
    if not (0 <= x <= w and 0 <= y <= h):
        raise BoundsError(f"position ({x}, {y}) outside field")
    return float(_bilinear(field, np.array([x], float), np.array([y], float))[0])


def sample_field_many(field: Field, xs, ys) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    w, h = field.extent
    if np.any((xs < 0) | (xs > w) | (ys < 0) | (ys > h)):
        raise BoundsError("sample position outside field")
    return _bilinear(field, xs, ys)


def field_thumbnail(values: np.ndarray, max_side: int = 64) -> dict:
    """Area-averaged downsample to at most ``max_side`` per side, 8-bit quantised.

    Returns ``{"w", "h", "min", "max", "data"}`` with ``data`` the row-major
    bytes in base64. A constant grid quantises to all zeros.
    """
    v = np.asarray(values, dtype=np.float64)
    gh, gw = v.shape
    tw, th = min(gw, max_side), min(gh, max_side)
    # block edges from an even partition; reduceat sums each block
    ce = np.floor(np.arange(tw) * gw / tw).astype(np.int64)
    re = np.floor(np.arange(th) * gh / th).astype(np.int64)
    sums = np.add.reduceat(np.add.reduceat(v, re, axis=0), ce, axis=1)
    counts = np.outer(np.diff(np.append(re, gh)), np.diff(np.append(ce, gw)))
    thumb = sums / counts
    lo, hi = float(thumb.min()), float(thumb.max())
    if hi > lo:
        q = np.floor((thumb - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
    else:
        q = np.zeros(thumb.shape, dtype=np.uint8)
    return {"w": tw, "h": th, "min": lo, "max": hi,
            "data": base64.b64encode(q.tobytes()).decode("ascii")}


# -- tiles -------------------------------------------------------------------

NOISE_MODES = ("flicker", "flip")


@dataclass(frozen=True, eq=False)
class TileLayer:
    """Binary tile pattern with seeded per-tick noise.

    ``pattern`` is a ``(th, tw)`` array of 0/1 labels; label ``k`` shows
    ``base_colors[k]``.
    """

    pattern: np.ndarray
    tile_size: float
    base_colors: tuple = ((30, 30, 30), (220, 220, 220))
    noise_amplitude: float = 0.0
    noise_mode: str = "flip"
    noise_seed: int = 0

    def __post_init__(self):
        pattern = np.asarray(self.pattern, dtype=np.uint8)
        if pattern.ndim != 2 or pattern.size == 0:
            raise ValueError("tile pattern must be a non-empty 2-D grid")
        if np.any(pattern > 1):
            raise ValueError("tile labels must be 0 or 1")
        if self.tile_size <= 0:
            raise ValueError("tile_size must be > 0")
        if not 0.0 <= self.noise_amplitude <= 1.0:
            raise ValueError(f"noise amplitude {self.noise_amplitude} out of [0,1]")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        colors = np.asarray(self.base_colors, dtype=np.int64).reshape(2, 3)
        if np.any(colors < 0) or np.any(colors > 255):
            raise ValueError("base colours must lie in [0, 255]")
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "base_colors", tuple(tuple(int(c) for c in row) for row in colors))

    @property
    def tw(self) -> int:
        return self.pattern.shape[1]

    @property
    def th(self) -> int:
        return self.pattern.shape[0]

    def with_amplitude(self, amplitude: float) -> "TileLayer":
        return replace(self, noise_amplitude=amplitude)

    def tile_of(self, x, y):
        col = np.clip((np.asarray(x) // self.tile_size).astype(np.int64), 0, self.tw - 1)
        row = np.clip((np.asarray(y) // self.tile_size).astype(np.int64), 0, self.th - 1)
        return col, row


def make_pattern(kind: str, tw: int, th: int, seed: int = 0, fraction: float = 0.5) -> np.ndarray:
    """Standard tile patterns: checker, stripes, halves, random."""
    rows, cols = np.mgrid[0:th, 0:tw]
    if kind == "checker":
        return ((rows + cols) % 2).astype(np.uint8)
    if kind == "stripes":
        return (cols % 2).astype(np.uint8)
    if kind == "halves":
        return (cols >= tw / 2).astype(np.uint8)
    if kind == "random":
        u = rng.uniform(seed, "tile-pattern", np.arange(tw * th))
        return (u < fraction).astype(np.uint8).reshape(th, tw)
    raise ValueError(f"unknown pattern kind {kind!r}")


def _tile_draws(tiles: TileLayer, t: int) -> np.ndarray:
    return rng.uniform(tiles.noise_seed, "tiles", t, np.arange(tiles.tw * tiles.th)).reshape(tiles.th, tiles.tw)


def make_tile_layer_frame(tiles: TileLayer, t: int) -> np.ndarray:
    """Displayed tile colours at tick ``t`` as a ``(th, tw, 3)`` uint8 array.

    flicker: every channel of a tile is offset by one uniform draw in
    ``+/- amplitude*255``. flip: a tile shows the other base colour with
    probability ``amplitude``. Draws are keyed by (seed, t, tile index).
    """
    base = np.asarray(tiles.base_colors, dtype=np.int64)
    if tiles.noise_amplitude == 0:
        return base[tiles.pattern].astype(np.uint8)
    u = _tile_draws(tiles, t)
    if tiles.noise_mode == "flip":
        labels = tiles.pattern ^ (u < tiles.noise_amplitude).astype(np.uint8)
        return base[labels].astype(np.uint8)
    offset = np.floor((2.0 * u - 1.0) * tiles.noise_amplitude * 255.0 + 0.5).astype(np.int64)
    colors = base[tiles.pattern] + offset[..., None]
    return np.clip(colors, 0, 255).astype(np.uint8)


def displayed_labels(tiles: TileLayer, colors: np.ndarray) -> np.ndarray:
    """Binary label a light sensor reads: the base colour nearest in luminance."""
    lum_w = np.array([0.299, 0.587, 0.114])
    base_lum = np.asarray(tiles.base_colors, dtype=float) @ lum_w
    lum = np.asarray(colors, dtype=float) @ lum_w
    if base_lum[0] == base_lum[1]:
        d = np.asarray(colors, float)[..., None, :] - np.asarray(tiles.base_colors, float)
        return np.argmin((d * d).sum(-1), axis=-1).astype(np.uint8)
    return (np.abs(lum - base_lum[1]) < np.abs(lum - base_lum[0])).astype(np.uint8)


# -- virtual objects ---------------------------------------------------------

SHAPES = ("disc", "rect")
EFFECTS = ("deposit_source", "blocker", "display_only")


@dataclass(frozen=True)
class VirtualObject:
    """Disc or axis-aligned rectangle in world mm with one effect.

    ``geometry`` is ``(cx, cy, radius)`` for discs and ``(x0, y0, x1, y1)``
    for rectangles.
    """

    id: str
    shape: str
    geometry: tuple
    effect: str = "display_only"
    rate: float = 0.0
    color: tuple = (255, 160, 0)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.effect not in EFFECTS:
            raise ValueError(f"effect must be one of {EFFECTS}")
        geom = tuple(float(g) for g in self.geometry)
        if self.shape == "disc":
            if len(geom) != 3 or geom[2] <= 0:
                raise ValueError("disc needs (cx, cy, radius) with radius > 0")
        else:
            if len(geom) != 4 or geom[2] <= geom[0] or geom[3] <= geom[1]:
                raise ValueError("rect needs (x0, y0, x1, y1) with positive extent")
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        object.__setattr__(self, "geometry", geom)
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))

    @classmethod
    def from_dict(cls, d: dict) -> "VirtualObject":
        shape = d.get("shape")
        if shape == "disc":
            center = d["center"]
            geom = (center[0], center[1], d["radius"])
        elif shape == "rect":
            geom = (*d["min"], *d["max"])
        else:
            raise ValueError(f"shape must be one of {SHAPES}")
        return cls(id=str(d["id"]), shape=shape, geometry=geom,
                   effect=d.get("effect", "display_only"), rate=float(d.get("rate", 0.0)),
                   color=tuple(d.get("color", (255, 160, 0))))

    def to_dict(self) -> dict:
        g = self.geometry
        out = {"id": self.id, "shape": self.shape, "effect": self.effect,
               "rate": self.rate, "color": list(self.color)}
        if self.shape == "disc":
            out.update(center=[g[0], g[1]], radius=g[2])
        else:
            out.update(min=[g[0], g[1]], max=[g[2], g[3]])
        return out

    @property
    def center(self) -> tuple[float, float]:
        g = self.geometry
        if self.shape == "disc":
            return g[0], g[1]
        return 0.5 * (g[0] + g[2]), 0.5 * (g[1] + g[3])

    def contains(self, x, y):
        g = self.geometry
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.shape == "disc":
            return (x - g[0]) ** 2 + (y - g[1]) ** 2 <= g[2] ** 2
        return (x >= g[0]) & (x <= g[2]) & (y >= g[1]) & (y <= g[3])


def blocked_mask(objects: Sequence[VirtualObject], gw: int, gh: int, cell_size: float) -> np.ndarray | None:
    """Cells whose centre lies inside any blocker."""
    blockers = [o for o in objects if o.effect == "blocker"]
    if not blockers:
        return None
    ys, xs = np.mgrid[0:gh, 0:gw]
    cx = (xs + 0.5) * cell_size
    cy = (ys + 0.5) * cell_size
    mask = np.zeros((gh, gw), dtype=bool)
    for o in blockers:
        mask |= o.contains(cx, cy)
    return mask


__all__ = [
    "BoundsError", "Field", "FieldConfigError", "TileLayer", "VirtualObject",
    "blocked_mask", "deposit", "deposit_many", "displayed_labels", "field_thumbnail",
    "make_pattern", "make_tile_layer_frame", "sample_field", "sample_field_many", "step_field",
]
