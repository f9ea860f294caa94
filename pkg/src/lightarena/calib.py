"""Projective registration between camera pixels, projector pixels and world mm."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detect import HoughParams, detect_circles
from .image import ImageBuffer


class PointAtInfinityError(ValueError):
    pass


class SingularHomographyError(ValueError):
    pass


class DegenerateConfigurationError(ValueError):
    pass


class CountMismatchError(ValueError):
    def __init__(self, detected: int, expected: int):
        super().__init__(f"detected {detected} fiducials, expected {expected}")
        self.detected = detected
        self.expected = expected


@dataclass(frozen=True)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if h[2, 2] != 0:
            h = h / h[2, 2]
        h.flags.writeable = False
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def scale(cls, sx: float, sy: float | None = None) -> "Homography":
        return cls(np.diag([sx, sx if sy is None else sy, 1.0]))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Homography":
        if len(values) != 9:
            raise ValueError(f"homography needs 9 numbers, got {len(values)}")
        return cls(np.asarray(values, dtype=float).reshape(3, 3))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.h.ravel()]

    def to_text(self) -> str:
        """Row-major, 17 significant digits."""
        return " ".join(f"{v:.17g}" for v in self.h.ravel())

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def map(self, pts) -> np.ndarray:
        """Vectorised :func:`map_point` over an ``(n, 2)`` array."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        h = self.h
        w = pts[:, 0] * h[2, 0] + pts[:, 1] * h[2, 1] + h[2, 2]
        if np.any(np.abs(w) < 1e-12):
            raise PointAtInfinityError("point maps to infinity")
        return np.column_stack([
            (pts[:, 0] * h[0, 0] + pts[:, 1] * h[0, 1] + h[0, 2]) / w,
            (pts[:, 0] * h[1, 0] + pts[:, 1] * h[1, 1] + h[1, 2]) / w,
        ])


@dataclass(frozen=True)
class Correspondence:
    src: tuple[float, float]
    dst: tuple[float, float]


def map_point(H: Homography, p: tuple[float, float]) -> tuple[float, float]:
    x, y = p
    h = H.h
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if abs(w) < 1e-12:
        raise PointAtInfinityError(f"{p} maps to infinity (w={w:g})")
    return ((h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w,
            (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w)


def invert_homography(H: Homography) -> Homography:
    det = np.linalg.det(H.h)
    if abs(det) < 1e-12:
        raise SingularHomographyError(f"determinant {det:g}")
    return Homography(np.linalg.inv(H.h))


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to centroid 0 and mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.hypot(*(pts - c).T).mean()
    if d == 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _as_pairs(corr) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    for c in corr:
        if isinstance(c, Correspondence):
            src.append(c.src)
            dst.append(c.dst)
        else:
            src.append(c[0])
            dst.append(c[1])
    return np.asarray(src, dtype=float).reshape(-1, 2), np.asarray(dst, dtype=float).reshape(-1, 2)


def estimate_homography(corr) -> tuple[Homography, float]:
    """Hartley-normalised DLT.

    ``corr`` is a sequence of :class:`Correspondence` or ``(src, dst)``
    pairs. Returns the homography and the RMS reprojection distance in
    destination units.
    """
    src, dst = _as_pairs(corr)
    n = src.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 correspondences, got {n}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences must be finite")
    ts, td = _normalizer(src), _normalizer(dst)
    ps = src @ ts[:2, :2].T + ts[:2, 2]
    pd = dst @ td[:2, :2].T + td[:2, 2]
    x, y = ps[:, 0], ps[:, 1]
    u, v = pd[:, 0], pd[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u])
    a[1::2] = np.column_stack([zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v])
    _, sv, vt = np.linalg.svd(a)
    # a well-posed system has exactly one (near-)null direction
    if sv[7] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError(
            f"design matrix rank deficient (sigma_8/sigma_1 = {sv[7] / sv[0]:.3g})")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    hs = np.linalg.svd(h, compute_uv=False)
    if abs(h[2, 2]) < 1e-15 * hs[0] or hs[2] < 1e-12 * hs[0]:
        raise DegenerateConfigurationError("estimated homography is singular")
    H = Homography(h)
    err = H.map(src) - dst
    rms = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    return H, rms


def _grid_angle(pts: np.ndarray) -> float:
    """Dominant lattice direction modulo 90 degrees, from nearest-neighbour offsets."""
    d = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(d[..., 0], d[..., 1])
    np.fill_diagonal(dist, np.inf)
    nn = np.argmin(dist, axis=1)
    off = pts[nn] - pts
    theta = np.arctan2(off[:, 1], off[:, 0])
    return float(np.angle(np.exp(4j * theta).mean()) / 4.0)


def grid_sort(pts, rows: int, cols: int) -> np.ndarray:
    """Order points of a (possibly rotated, mildly distorted) grid row-major.

    Returns the index permutation.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if pts.shape[0] != rows * cols:
        raise CountMismatchError(pts.shape[0], rows * cols)
    a = -_grid_angle(pts) if pts.shape[0] > 1 else 0.0
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    q = (pts - pts.mean(axis=0)) @ rot.T
    by_row = np.argsort(q[:, 1], kind="stable")
    order = []
    for r in range(rows):
        chunk = by_row[r * cols:(r + 1) * cols]
        order.extend(chunk[np.argsort(q[chunk, 0], kind="stable")])
    return np.asarray(order, dtype=np.int64)


def fiducial_grid(rows: int, cols: int, width: int, height: int, margin: float = 0.2) -> list[tuple[float, float]]:
    """Axis-aligned dot grid in projector pixels, inset by ``margin`` of each side."""
    xs = np.linspace(margin * (width - 1), (1 - margin) * (width - 1), cols)
    ys = np.linspace(margin * (height - 1), (1 - margin) * (height - 1), rows)
    return [(float(x), float(y)) for y in ys for x in xs]


def refine_dot_centers(frame: ImageBuffer, centers, radii) -> np.ndarray:
    """Sub-pixel dot centres by contrast-weighted centroid.

    The Hough centre is locked to its vote grid (errors of a few tenths of
    a pixel); a plain intensity moment over the disc does much better on
    clean fiducial frames. Background is the median of a thin ring outside
    each disc, and only pixels within ``r + 1.5`` of the coarse centre
    contribute, weighted by their absolute contrast to that background.
    """
    img = frame.data.astype(np.float64)
    h, w = img.shape[:2]
    out = np.asarray(centers, dtype=float).reshape(-1, 2).copy()
    for k, ((cx, cy), r) in enumerate(zip(out.copy(), radii)):
        reach = int(np.ceil(r + 5))
        x0, x1 = max(int(cx) - reach, 0), min(int(cx) + reach + 1, w)
        y0, y1 = max(int(cy) - reach, 0), min(int(cy) + reach + 1, h)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d = np.hypot(xx - cx, yy - cy)
        patch = img[y0:y1, x0:x1]
        ring = (d >= r + 2.5) & (d <= r + 4.5)
        if not ring.any():
            continue
        wgt = np.abs(patch - np.median(patch[ring])) * (d <= r + 1.5)
        total = wgt.sum()
        if total > 0:
            out[k] = ((wgt * xx).sum() / total, (wgt * yy).sum() / total)
    return out


def calibrate_from_fiducials(projector_dots, camera_frame: ImageBuffer,
                             detect_params: HoughParams, refine: bool = True) -> tuple[Homography, float]:
    """Camera -> projector homography from a frame showing projected dots.

    With ``refine`` the detected centres are polished by
    :func:`refine_dot_centers` before pairing.
    """
    dots = np.asarray(projector_dots, dtype=float).reshape(-1, 2)
    xs = np.unique(np.round(dots[:, 0], 6))
    ys = np.unique(np.round(dots[:, 1], 6))
    rows, cols = len(ys), len(xs)
    if rows < 2 or cols < 2 or rows * cols != len(dots):
        raise ValueError("projector dots must form an axis-aligned grid of at least 2x2")
    found = detect_circles(camera_frame, detect_params)
    if len(found) != len(dots):
        raise CountMismatchError(len(found), len(dots))
    cam = np.array([[d.cx, d.cy] for d in found])
    if refine:
        cam = refine_dot_centers(camera_frame, cam, [d.r for d in found])
    cam = cam[grid_sort(cam, rows, cols)]
    proj = dots[grid_sort(dots, rows, cols)]
    return estimate_homography(list(zip(map(tuple, cam), map(tuple, proj))))
