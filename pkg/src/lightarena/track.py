"""Persistent robot identities from per-frame detections."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .detect import Detection


class TrackState(str, enum.Enum):
    TENTATIVE = "Tentative"
    CONFIRMED = "Confirmed"
    LOST = "Lost"


@dataclass(frozen=True)
class Track:
    id: int
    cx: float
    cy: float
    r: float
    vx: float = 0.0
    vy: float = 0.0
    state: TrackState = TrackState.TENTATIVE
    hits: int = 1
    misses: int = 0
    last_update: int = 0


@dataclass(frozen=True)
class TrackerParams:
    gate_radius: float = 24.0
    confirm_hits: int = 3
    max_misses: int = 5
    radius_smoothing_alpha: float = 0.3
    velocity_smoothing_beta: float = 0.5

    def __post_init__(self):
        if self.gate_radius <= 0:
            raise ValueError("gate_radius must be > 0")
        if self.confirm_hits < 1 or self.max_misses < 1:
            raise ValueError("confirm_hits and max_misses must be >= 1")
        if not (0 <= self.radius_smoothing_alpha <= 1 and 0 <= self.velocity_smoothing_beta <= 1):
            raise ValueError("smoothing factors must lie in [0, 1]")


def predict_tracks(tracks: Sequence[Track], dt: float) -> list[Track]:
    """Constant-velocity advance of every live track."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    return [t if t.state is TrackState.LOST
            else Track(t.id, t.cx + t.vx * dt, t.cy + t.vy * dt, t.r, t.vx, t.vy, t.state,
                       t.hits, t.misses, t.last_update)
            for t in tracks]


def associate(predicted: Sequence[Track], detections: Sequence[Detection], gate: float):
    """Greedy gated nearest-neighbour matching.

    Candidate pairs within ``gate`` are taken in ascending distance (ties by
    track id, then detection index) whenever both sides are still free.
    Returns ``(matches, unmatched_track_ids, unmatched_detection_indices)``
    with ``matches`` a list of ``(track_id, detection_index)``.
    """
    if gate <= 0:
        raise ValueError("gate must be > 0")
    live = [t for t in predicted if t.state is not TrackState.LOST]
    if not live or not detections:
        return [], [t.id for t in live], list(range(len(detections)))
    tp = np.array([[t.cx, t.cy] for t in live])
    dp = np.array([[d.cx, d.cy] for d in detections])
    ids = np.array([t.id for t in live], dtype=np.int64)
    ia, ib = _kernels.greedy_match(np.ascontiguousarray(tp[:, 0]), np.ascontiguousarray(tp[:, 1]), ids,
                                   np.ascontiguousarray(dp[:, 0]), np.ascontiguousarray(dp[:, 1]),
                                   float(gate))
    used_t = np.zeros(len(live), dtype=bool)
    used_d = np.zeros(len(detections), dtype=bool)
    used_t[ia] = True
    used_d[ib] = True
    return ([(int(ids[a]), int(b)) for a, b in zip(ia, ib)],
            [int(ids[a]) for a in np.flatnonzero(~used_t)],
            [int(b) for b in np.flatnonzero(~used_d)])


def step_tracker(tracks: Sequence[Track], detections: Sequence[Detection], params: TrackerParams,
                 dt: float, tick: int, next_id: int | None = None) -> list[Track]:
    """Predict, associate, update, spawn.

    New ids start at ``next_id`` (default: one past the largest id seen).
    Lost tracks pass through unchanged and never match again. The output
    lists surviving tracks in input order followed by newly spawned ones.
    """
    if next_id is None:
        next_id = max((t.id for t in tracks), default=-1) + 1
    previous = {t.id: t for t in tracks}
    predicted = predict_tracks(tracks, dt)
    matches, _, unmatched_dets = associate(predicted, detections, params.gate_radius)
    matched = {tid: detections[j] for tid, j in matches}
    alpha, beta = params.radius_smoothing_alpha, params.velocity_smoothing_beta
    out = []
    for t in predicted:
        if t.state is TrackState.LOST:
            out.append(t)
            continue
        det = matched.get(t.id)
        if det is not None:
            prev = previous[t.id]
            if dt > 0:
                vx = beta * (det.cx - prev.cx) / dt + (1 - beta) * prev.vx
                vy = beta * (det.cy - prev.cy) / dt + (1 - beta) * prev.vy
            else:
                vx, vy = prev.vx, prev.vy
            hits = t.hits + 1
            state = t.state
            if state is TrackState.TENTATIVE and hits >= params.confirm_hits:
                state = TrackState.CONFIRMED
            out.append(Track(t.id, det.cx, det.cy, alpha * det.r + (1 - alpha) * t.r, vx, vy,
                             state, hits, 0, tick))
        else:
            misses = t.misses + 1
            state = TrackState.LOST if misses >= params.max_misses else t.state
            out.append(Track(t.id, t.cx, t.cy, t.r, t.vx, t.vy, state, 0, misses, t.last_update))
    for j in unmatched_dets:
        d = detections[j]
        state = TrackState.CONFIRMED if params.confirm_hits <= 1 else TrackState.TENTATIVE
        out.append(Track(next_id, d.cx, d.cy, d.r, state=state, hits=1, misses=0, last_update=tick))
        next_id += 1
    return out


class Tracker:
    """Owns the track list and the id counter for one run."""

    def __init__(self, params: TrackerParams):
        self.params = params
        self.tracks: list[Track] = []
        self.next_id = 0

    def step(self, detections: Sequence[Detection], dt: float, tick: int) -> list[Track]:
        """Advance one frame; tracks lost before this frame are dropped first."""
        alive = [t for t in self.tracks if t.state is not TrackState.LOST]
        self.tracks = step_tracker(alive, detections, self.params, dt, tick, self.next_id)
        self.next_id = max(self.next_id, max((t.id for t in self.tracks), default=-1) + 1)
        return self.tracks
