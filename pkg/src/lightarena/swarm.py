"""Simulated robots that read the projected environment and move.

The four behaviours are deliberately minimal stand-ins for the physical
experiments (trail laying, clean-up dispersal, tile-based voting); they are
not models of any particular robot firmware.

Per-robot randomness is keyed by (seed, tick, robot id) and all swarm-wide
arithmetic runs on id-sorted arrays, so the result of :func:`step_swarm`
does not depend on the order robots are listed in.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels, rng
from .field import Field, TileLayer, displayed_labels, make_tile_layer_frame, sample_field_many

TWO_PI = 2.0 * math.pi


class Behavior(str, enum.Enum):
    RANDOM_WALK_DEPOSIT = "random_walk_deposit"
    GRADIENT_FOLLOW = "gradient_follow"
    DISPERSE = "disperse"
    TILE_VOTE = "tile_vote"


_CODES = {b: i for i, b in enumerate(Behavior)}


@dataclass(frozen=True)
class Robot:
    id: int
    pos: tuple[float, float]
    heading: float = 0.0
    speed: float = 10.0
    radius: float = 16.0
    opinion: int = 0
    behavior: Behavior = Behavior.RANDOM_WALK_DEPOSIT

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        object.__setattr__(self, "behavior", Behavior(self.behavior))
        object.__setattr__(self, "pos", (float(self.pos[0]), float(self.pos[1])))


@dataclass(frozen=True)
class BehaviorParams:
    sensor_angle: float = math.pi / 4
    sensor_offset: float = 20.0
    sigma_turn: float = 1.0
    k_turn: float = 2.0
    deposit_rate: float = 1.0
    opinion_noise: float = 0.0
    sensor_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.sensor_offset < 0 or self.sigma_turn < 0 or self.k_turn < 0:
            raise ValueError("sensor_offset, sigma_turn and k_turn must be >= 0")
        if self.deposit_rate < 0 or self.sensor_noise_sigma < 0:
            raise ValueError("deposit_rate and sensor_noise_sigma must be >= 0")
        if not 0 <= self.opinion_noise <= 1:
            raise ValueError("opinion_noise must lie in [0, 1]")


class SensorReading(NamedTuple):
    center_value: float
    left_value: float
    right_value: float
    tile_label: int


class DepositEvent(NamedTuple):
    robot_id: int
    pos: tuple[float, float]
    amount: float


def wrap_angle(a):
    """Map to [-pi, pi); in-range angles pass through bit-exact."""
    a = np.asarray(a, dtype=float)
    return np.where((a < -math.pi) | (a >= math.pi), (a + math.pi) % TWO_PI - math.pi, a)


# -- vectorised core ---------------------------------------------------------

def _sense(x, y, heading, ids, field: Field, tiles: TileLayer | None, t: int,
           params: BehaviorParams, sigma: float, seed: int):
    fw, fh = field.extent
    off, ang = params.sensor_offset, params.sensor_angle
    lx = np.clip(x + off * np.cos(heading + ang), 0.0, fw)
    ly = np.clip(y + off * np.sin(heading + ang), 0.0, fh)
    rx = np.clip(x + off * np.cos(heading - ang), 0.0, fw)
    ry = np.clip(y + off * np.sin(heading - ang), 0.0, fh)
    center = sample_field_many(field, np.clip(x, 0.0, fw), np.clip(y, 0.0, fh))
    left = sample_field_many(field, lx, ly)
    right = sample_field_many(field, rx, ry)
    if sigma > 0:
        s = rng.KeyedStream(seed, "sensor", t, ids)
        center = np.maximum(center + sigma * s.normal(), 0.0)
        left = np.maximum(left + sigma * s.normal(), 0.0)
        right = np.maximum(right + sigma * s.normal(), 0.0)
    if tiles is not None:
        labels = displayed_labels(tiles, make_tile_layer_frame(tiles, t))
        col, row = tiles.tile_of(x, y)
        tile = labels[row, col].astype(np.int64)
    else:
        tile = np.zeros(len(x), dtype=np.int64)
    return center, left, right, tile


def _advance(x, y, heading, speed, radius, opinion, codes, center, left, right, tile,
             turn_noise, vote_u, dt: float, params: BehaviorParams, arena):
    """One kinematic step for every robot; returns new state and deposit amounts."""
    rw_like = (codes == _CODES[Behavior.RANDOM_WALK_DEPOSIT]) | (codes == _CODES[Behavior.TILE_VOTE])
    follow = codes == _CODES[Behavior.GRADIENT_FOLLOW]
    disperse = codes == _CODES[Behavior.DISPERSE]
    vote = codes == _CODES[Behavior.TILE_VOTE]

    diff = np.sign(left - right)
    noise_turn = params.sigma_turn * math.sqrt(dt) * turn_noise
    turn = np.where(rw_like, noise_turn, 0.0)
    turn = np.where(follow, params.k_turn * diff * dt, turn)
    turn = np.where(disperse, -params.k_turn * diff * dt + noise_turn, turn)
    heading = heading + turn

    flip = vote_u < params.opinion_noise
    opinion = np.where(vote, np.where(flip, 1 - tile, tile), opinion)

    x = x + speed * dt * np.cos(heading)
    y = y + speed * dt * np.sin(heading)
    x, y, heading = _reflect(x, y, heading, radius, arena)
    heading = wrap_angle(heading)

    emits = (codes == _CODES[Behavior.RANDOM_WALK_DEPOSIT]) | disperse
    amounts = np.where(emits, params.deposit_rate * dt, 0.0)
    return x, y, heading, opinion, amounts


def _reflect(x, y, heading, radius, arena):
    w, h = arena
    lo_x, hi_x = radius, w - radius
    lo_y, hi_y = radius, h - radius
    c, s = np.cos(heading), np.sin(heading)
    any_hit = (x < lo_x) | (x > hi_x) | (y < lo_y) | (y > hi_y)
    hit = x < lo_x
    x = np.where(hit, 2 * lo_x - x, x)
    c = np.where(hit, np.abs(c), c)
    hit = x > hi_x
    x = np.where(hit, 2 * hi_x - x, x)
    c = np.where(hit, -np.abs(c), c)
    hit = y < lo_y
    y = np.where(hit, 2 * lo_y - y, y)
    s = np.where(hit, np.abs(s), s)
    hit = y > hi_y
    y = np.where(hit, 2 * hi_y - y, y)
    s = np.where(hit, -np.abs(s), s)
    x = np.clip(x, lo_x, hi_x)
    y = np.clip(y, lo_y, hi_y)
    return x, y, np.where(any_hit, np.arctan2(s, c), heading)


def resolve_overlaps(x, y, radius, ids, arena, iterations: int = 8):
    """Push overlapping pairs apart along their centre line, half each way.

    All pushes in one iteration are computed from the same positions and
    summed in id order, so the result does not depend on the input order.
    At most ``iterations`` rounds are run.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if len(x) < 2:
        return x.copy(), y.copy()
    ids = np.asarray(ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    rx, ry = _kernels.resolve_overlaps(x[order], y[order],
                                       np.ascontiguousarray(np.asarray(radius, dtype=np.float64)[order]),
                                       np.ascontiguousarray(ids[order]),
                                       float(arena[0]), float(arena[1]), int(iterations))
    ox, oy = np.empty_like(x), np.empty_like(y)
    ox[order], oy[order] = rx, ry
    return ox, oy


# -- public per-robot and swarm API ------------------------------------------

def sense_robot(robot: Robot, field: Field, tiles: TileLayer | None, t: int,
                sensor_noise_sigma: float = 0.0, *, params: BehaviorParams = BehaviorParams(),
                seed: int = 0) -> SensorReading:
    """Field at the robot and at two antenna points, plus the tile label beneath."""
    c, l, r, tile = _sense(np.array([robot.pos[0]]), np.array([robot.pos[1]]),
                           np.array([robot.heading]), np.array([robot.id]),
                           field, tiles, t, params, sensor_noise_sigma, seed)
    return SensorReading(float(c[0]), float(l[0]), float(r[0]), int(tile[0]))


def step_robot(robot: Robot, reading: SensorReading, dt: float, stream: rng.KeyedStream,
               *, params: BehaviorParams = BehaviorParams(),
               arena: tuple[float, float] = (1024.0, 768.0)) -> tuple[Robot, DepositEvent | None]:
    """Apply the robot's behaviour for one tick.

    ``stream`` supplies the turn-noise draw and the opinion-noise draw, in
    that order. Returns the moved robot and its deposit (``None`` if the
    behaviour does not deposit).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x, y, heading, opinion, amount = _advance(
        np.array([robot.pos[0]]), np.array([robot.pos[1]]), np.array([robot.heading]),
        np.array([robot.speed]), np.array([robot.radius]), np.array([robot.opinion]),
        np.array([_CODES[robot.behavior]]),
        np.array([reading.center_value]), np.array([reading.left_value]),
        np.array([reading.right_value]), np.array([reading.tile_label]),
        stream.normal(), stream.uniform(), dt, params, arena)
    moved = replace(robot, pos=(float(x[0]), float(y[0])), heading=float(heading[0]),
                    opinion=int(opinion[0]))
    event = DepositEvent(robot.id, moved.pos, float(amount[0])) if amount[0] > 0 else None
    return moved, event


def step_swarm(robots: Sequence[Robot], field: Field, tiles: TileLayer | None, t: int, dt: float,
               seed: int, *, params: BehaviorParams = BehaviorParams(),
               arena: tuple[float, float] = (1024.0, 768.0)) -> tuple[list[Robot], list[DepositEvent]]:
    """Sense and step every robot against the same pre-tick snapshot.

    Deposits are returned (sorted by robot id) for the caller to apply to
    the field after the move; overlaps are resolved afterwards.
    """
    if not robots:
        return [], []
    if dt <= 0:
        raise ValueError("dt must be > 0")
    ids = np.array([r.id for r in robots], dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise ValueError("robot ids must be unique")
    order = np.argsort(ids, kind="stable")
    rs = [robots[i] for i in order]
    ids = ids[order]
    x = np.array([r.pos[0] for r in rs])
    y = np.array([r.pos[1] for r in rs])
    heading = np.array([r.heading for r in rs])
    speed = np.array([r.speed for r in rs])
    radius = np.array([r.radius for r in rs])
    opinion = np.array([r.opinion for r in rs], dtype=np.int64)
    codes = np.array([_CODES[r.behavior] for r in rs])

    center, left, right, tile = _sense(x, y, heading, ids, field, tiles, t, params,
                                       params.sensor_noise_sigma, seed)
    stream = rng.KeyedStream(seed, "swarm", t, ids)
    x, y, heading, opinion, amounts = _advance(
        x, y, heading, speed, radius, opinion, codes, center, left, right, tile,
        stream.normal(), stream.uniform(), dt, params, arena)
    x, y = resolve_overlaps(x, y, radius, ids, arena)

    moved = {}
    deposits = []
    for k, r in enumerate(rs):
        m = Robot(r.id, (float(x[k]), float(y[k])), float(heading[k]), r.speed, r.radius,
                  int(opinion[k]), r.behavior)
        moved[r.id] = m
        if amounts[k] > 0:
            deposits.append(DepositEvent(r.id, m.pos, float(amounts[k])))
    return [moved[r.id] for r in robots], deposits


def sense_swarm(robots: Sequence[Robot], field: Field, tiles: TileLayer | None, t: int, *,
                params: BehaviorParams = BehaviorParams(), seed: int = 0) -> list[SensorReading]:
    if not robots:
        return []
    c, l, r, tile = _sense(np.array([b.pos[0] for b in robots]), np.array([b.pos[1] for b in robots]),
                           np.array([b.heading for b in robots]), np.array([b.id for b in robots]),
                           field, tiles, t, params, params.sensor_noise_sigma, seed)
    return [SensorReading(float(a), float(b_), float(d), int(e)) for a, b_, d, e in zip(c, l, r, tile)]


def mean_nearest_neighbor(robots: Sequence[Robot]) -> float:
    if len(robots) < 2:
        return 0.0
    p = np.array([r.pos for r in robots])
    d = np.hypot(p[:, None, 0] - p[None, :, 0], p[:, None, 1] - p[None, :, 1])
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())
