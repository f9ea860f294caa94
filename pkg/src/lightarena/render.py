"""Projector frame composition: tiles, pheromone heatmap, objects, robot rings.

Projector pixel ``(u, v)`` sits at world ``(u * mm_per_px, v * mm_per_px)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .calib import Homography
from .field import Field, TileLayer, VirtualObject, make_tile_layer_frame
from .image import ImageBuffer
from .track import Track, TrackState


def _ramp(anchors) -> np.ndarray:
    pos = np.array([a[0] for a in anchors], dtype=float)
    rgb = np.array([a[1] for a in anchors], dtype=float)
    x = np.arange(256) / 255.0
    return np.stack([np.interp(x, pos, rgb[:, c]) for c in range(3)], axis=1).round().astype(np.uint8)


# black -> violet -> red -> amber -> pale yellow; luminance strictly rising
DEFAULT_COLORMAP = _ramp([
    (0.0, (0, 0, 0)),
    (0.25, (70, 10, 120)),
    (0.5, (200, 40, 80)),
    (0.75, (250, 150, 20)),
    (1.0, (255, 250, 190)),
])

DEFAULT_PALETTE = ((230, 40, 40), (40, 90, 240), (40, 200, 80), (240, 200, 30),
                   (200, 60, 220), (30, 210, 220))

COLOR_KEYS = ("by_track_id", "by_robot_state")


@dataclass(frozen=True)
class OverlayStyle:
    ring_thickness: float = 2.0
    palette: tuple = DEFAULT_PALETTE
    color_key: str = "by_track_id"
    ring_gap: float = 3.0

    def __post_init__(self):
        if not self.palette:
            raise ValueError("palette must not be empty")
        if self.ring_thickness < 1:
            raise ValueError("ring_thickness must be >= 1")
        if self.color_key not in COLOR_KEYS:
            raise ValueError(f"color_key must be one of {COLOR_KEYS}")
        object.__setattr__(self, "palette", tuple(tuple(int(c) for c in p) for p in self.palette))


@dataclass(frozen=True)
class RingOverlay:
    track_id: int
    center: tuple[float, float]
    radius: float
    color_index: int


def colormap_indices(values: np.ndarray, value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Linear map onto 0..255; per-snapshot min/max unless ``value_range`` is fixed."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = (float(v.min()), float(v.max())) if value_range is None else value_range
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.int64)
    return np.clip(np.floor((v - lo) / (hi - lo) * 255.0 + 0.5), 0, 255).astype(np.int64)


def field_colormap(field: Field | np.ndarray, colormap: np.ndarray = DEFAULT_COLORMAP,
                   size: tuple[int, int] | None = None, mm_per_px: float = 1.0,
                   value_range: tuple[float, float] | None = None) -> ImageBuffer:
    """Colour each cell, then nearest-cell fill a ``size`` projector frame.

    Without ``size`` the output has one pixel per cell.
    """
    values = field.values if isinstance(field, Field) else np.asarray(field, dtype=float)
    cell = field.cell_size if isinstance(field, Field) else 1.0
    colors = np.asarray(colormap, dtype=np.uint8)[colormap_indices(values, value_range)]
    if size is None:
        return ImageBuffer(colors)
    gh, gw = values.shape
    cols, rows = _cell_index(size[0], size[1], mm_per_px, cell, gw, gh)
    return ImageBuffer(colors[rows[:, None], cols[None, :]])


def _cell_index(width, height, mm_per_px, cell, gw, gh):
    cols = np.minimum((np.arange(width) * mm_per_px // cell).astype(np.int64), gw - 1)
    rows = np.minimum((np.arange(height) * mm_per_px // cell).astype(np.int64), gh - 1)
    return cols, rows


def _segments(n, mm_per_px, a, na, b, nb):
    """Runs of pixels along one axis sharing both an ``a``-index and a ``b``-index."""
    ia, _ = _cell_index(n, 1, mm_per_px, a, na, 1)
    ib, _ = _cell_index(n, 1, mm_per_px, b, nb, 1)
    key = ia * nb + ib
    uniq, inverse = np.unique(key, return_inverse=True)
    return uniq // nb, uniq % nb, inverse.astype(np.int64)


@lru_cache(maxsize=8)
def _segment_maps(width, height, mm_per_px, cell, gw, gh, tile, tw, th):
    """Segment grid of the tile/cell overlay plus per-column and per-row segment ids."""
    tcol, ccol, xmap = _segments(width, mm_per_px, tile, tw, cell, gw)
    trow, crow, ymap = _segments(height, mm_per_px, tile, th, cell, gh)
    tile_id = trow[:, None] * tw + tcol[None, :]
    cell_id = crow[:, None] * gw + ccol[None, :]
    for a in (tile_id, cell_id, xmap, ymap):
        a.flags.writeable = False
    return tile_id, cell_id, xmap, ymap


def draw_ring(frame: ImageBuffer, center, radius: float, color, thickness: float) -> ImageBuffer:
    """Colour pixels whose distance ``d`` to ``center`` has ``|d - radius| <= thickness/2``."""
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    out = frame.data.copy()
    _draw_ring_into(out, center, radius, color, thickness)
    return ImageBuffer(out)


def _draw_ring_into(arr: np.ndarray, center, radius, color, thickness):
    _draw_rings_into(arr, [center], [radius], [color], thickness)


def _draw_rings_into(arr: np.ndarray, centers, radii, colors, thickness):
    if not len(radii):
        return
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    a = arr if arr.ndim == 3 else arr[..., None]
    col = np.asarray(colors, dtype=np.uint8).reshape(len(c), -1)
    _kernels.draw_rings(a, np.ascontiguousarray(c[:, 0]), np.ascontiguousarray(c[:, 1]),
                        np.asarray(radii, dtype=np.float64), col, float(thickness))


def _fill_object_into(arr: np.ndarray, obj: VirtualObject, mm_per_px: float):
    h, w = arr.shape[:2]
    g = np.asarray(obj.geometry) / mm_per_px
    if obj.shape == "disc":
        bx0, by0, bx1, by1 = g[0] - g[2], g[1] - g[2], g[0] + g[2], g[1] + g[2]
    else:
        bx0, by0, bx1, by1 = g
    x0, x1 = max(int(np.floor(bx0)), 0), min(int(np.ceil(bx1)), w - 1)
    y0, y1 = max(int(np.floor(by0)), 0), min(int(np.ceil(by1)), h - 1)
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    mask = obj.contains(xs * mm_per_px, ys * mm_per_px)
    arr[y0:y1 + 1, x0:x1 + 1][mask] = obj.color


def ring_overlays(tracks: Sequence[Track], H_camera_to_projector: Homography, style: OverlayStyle,
                  robot_states: Mapping[int, int] | None = None) -> list[RingOverlay]:
    """One ring per Confirmed track, in projector pixels.

    The ring sits ``ring_gap`` outside the track radius after mapping it
    through the homography. ``robot_states`` supplies the palette index per
    track id when ``color_key`` is ``by_robot_state``.
    """
    live = [t for t in tracks if t.state is TrackState.CONFIRMED]
    if not live:
        return []
    cam = np.array([[t.cx, t.cy] for t in live])
    r = np.array([t.r for t in live])
    c = H_camera_to_projector.map(cam)
    ex = H_camera_to_projector.map(cam + np.column_stack([r, np.zeros_like(r)]))
    radii = np.hypot(*(ex - c).T) + style.ring_gap
    n = len(style.palette)
    out = []
    for t, (px, py), rad in zip(live, c, radii):
        if style.color_key == "by_track_id":
            idx = t.id % n
        else:
            idx = (robot_states or {}).get(t.id, 0) % n
        out.append(RingOverlay(t.id, (float(px), float(py)), float(rad), idx))
    return out


def compose_projector_frame(tiles: TileLayer, field: Field, objects: Sequence[VirtualObject],
                            tracks: Sequence[Track], H_camera_to_projector: Homography,
                            style: OverlayStyle, t: int, *, size: tuple[int, int] = (1024, 768),
                            mm_per_px: float = 1.0, opacity: float = 0.7,
                            colormap: np.ndarray = DEFAULT_COLORMAP,
                            value_range: tuple[float, float] | None = None,
                            robot_states: Mapping[int, int] | None = None) -> ImageBuffer:
    """Layer tiles, heatmap, objects and rings into one projector frame.

    The heatmap blends with per-cell weight ``opacity * index / 255``, so an
    empty field leaves the tiles untouched.
    """
    width, height = size
    tile_id, cell_id, xmap, ymap = _segment_maps(
        width, height, float(mm_per_px), float(field.cell_size), field.gw, field.gh,
        float(tiles.tile_size), tiles.tw, tiles.th)
    tile_rgb = make_tile_layer_frame(tiles, t).reshape(-1, 3).astype(np.float64)
    idx = colormap_indices(field.values, value_range).ravel()
    heat = np.asarray(colormap, dtype=np.float64)[idx]
    weight = (opacity * idx / 255.0)[:, None]
    bg = tile_rgb[tile_id]
    seg = bg + (heat[cell_id] - bg) * weight[cell_id]
    seg = np.clip(np.floor(seg + 0.5), 0, 255).astype(np.uint8)
    frame = _kernels.expand_blocks(seg, xmap, ymap)
    for obj in objects:
        if obj.effect in ("display_only", "deposit_source"):
            _fill_object_into(frame, obj, mm_per_px)
    rings = ring_overlays(tracks, H_camera_to_projector, style, robot_states)
    _draw_rings_into(frame, [g.center for g in rings], [g.radius for g in rings],
                     [style.palette[g.color_index] for g in rings], style.ring_thickness)
    return ImageBuffer(frame)
