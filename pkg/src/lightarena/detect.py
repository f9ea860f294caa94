"""Marker-free circle detection with a two-stage gradient Hough transform.

Stage one lets every strong edge pixel vote for centres along its gradient
line (both polarities, so bright-on-dark and dark-on-bright robots are
found alike). Stage two picks, for each accepted centre, the most populated
integer radius among the surrounding edge pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numba
import numpy as np

from . import _kernels
from .image import GradientField, ImageBuffer, gaussian_kernel


class NoSupportError(ValueError):
    """No edge pixel inside the search annulus of a centre."""


@dataclass(frozen=True)
class HoughParams:
    r_min: int = 12
    r_max: int = 20
    dp: int = 2
    edge_threshold: float = 60.0
    center_threshold: int = 40
    min_center_dist: float = 16.0
    max_circles: int = 1000

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.dp < 1:
            raise ValueError(f"dp must be >= 1, got {self.dp}")
        if self.min_center_dist < 1:
            raise ValueError(f"min_center_dist must be >= 1, got {self.min_center_dist}")
        if self.max_circles < 0 or self.center_threshold < 0 or self.edge_threshold < 0:
            raise ValueError("thresholds and max_circles must be non-negative")


@dataclass(frozen=True)
class Detection:
    cx: float
    cy: float
    r: float
    score: int


@dataclass(frozen=True)
class Accumulator:
    votes: np.ndarray
    dp: int

    @property
    def width(self) -> int:
        return self.votes.shape[1]

    @property
    def height(self) -> int:
        return self.votes.shape[0]


def _plane(a: np.ndarray) -> np.ndarray:
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def hough_vote_centers(grad: GradientField, params: HoughParams) -> Accumulator:
    """Cast one vote per radius at ``p +/- r * g/|g|`` for each edge pixel.

    Vote positions are divided by ``dp`` and rounded half-up into cells;
    votes landing outside the accumulator are discarded.
    """
    if grad.width < 3 or grad.height < 3:
        raise ValueError(f"gradient field {grad.width}x{grad.height} smaller than 3x3")
    acc_h = -(-grad.height // params.dp)
    acc_w = -(-grad.width // params.dp)
    votes = _kernels.hough_vote(
        _plane(grad.gx), _plane(grad.gy), _plane(grad.mag),
        float(params.edge_threshold), int(params.r_min), int(params.r_max),
        float(params.dp), acc_h, acc_w,
    )
    return Accumulator(votes, params.dp)


@numba.njit(cache=True)
def _suppress(xs, ys, min_dist, limit):
    keep = np.zeros(xs.shape[0], dtype=np.bool_)
    ax = np.empty(xs.shape[0])
    ay = np.empty(xs.shape[0])
    n = 0
    d2 = min_dist * min_dist
    for i in range(xs.shape[0]):
        if n >= limit:
            break
        ok = True
        for j in range(n):
            dx = xs[i] - ax[j]
            dy = ys[i] - ay[j]
            if dx * dx + dy * dy < d2:
                ok = False
                break
        if ok:
            keep[i] = True
            ax[n] = xs[i]
            ay[n] = ys[i]
            n += 1
    return keep


def extract_center_peaks(acc: Accumulator, params: HoughParams) -> list[tuple[float, float, int]]:
    """Local maxima of the accumulator, strongest first, with distance suppression.

    Returns ``(cx, cy, votes)`` in full-resolution pixels, refined by the
    vote-weighted centroid of each peak's 3x3 neighbourhood.
    """
    votes = acc.votes
    cy, cx, v = _kernels.peak_candidates(votes, int(params.center_threshold))
    if v.size == 0 or params.max_circles == 0:
        return []
    order = np.lexsort((cx, cy, -v))
    cy, cx, v = cy[order], cx[order], v[order]
    keep = _suppress((cx * acc.dp).astype(np.float64), (cy * acc.dp).astype(np.float64),
                     float(params.min_center_dist), int(params.max_circles))
    fx, fy = _kernels.refine_peaks(votes, cy[keep], cx[keep])
    return [(float(x) * acc.dp, float(y) * acc.dp, int(n))
            for x, y, n in zip(fx, fy, v[keep])]


def estimate_radius(center: tuple[float, float], grad: GradientField, params: HoughParams) -> tuple[int, int]:
    """Mode of the rounded centre-to-edge distances within ``[r_min, r_max]``.

    Ties go to the smaller radius. Raises :class:`NoSupportError` when no
    edge pixel falls in the annulus.
    """
    cx, cy = center
    if not (0 <= cx <= grad.width - 1 and 0 <= cy <= grad.height - 1):
        raise ValueError(f"centre {center} outside image")
    hist = _kernels.radius_histogram(_plane(grad.mag), float(params.edge_threshold), float(cx), float(cy),
                                     int(params.r_min), int(params.r_max))
    best = int(np.argmax(hist))
    if hist[best] == 0:
        raise NoSupportError(f"no edge support around {center}")
    return params.r_min + best, int(hist[best])


def detect_circles(img: ImageBuffer, params: HoughParams, blur_sigma: float = 1.0,
                   blur_ksize: int = 5) -> list[Detection]:
    """Blur, gradients, centre voting, peak picking, radius estimation."""
    return CircleDetector(params, blur_sigma, blur_ksize)(img)


class CircleDetector:
    """:func:`detect_circles` with scratch planes reused across frames.

    Meant for the per-tick loop, where reallocating several megabytes of
    float planes each frame costs more than the arithmetic. Not thread-safe.
    """

    def __init__(self, params: HoughParams, blur_sigma: float = 1.0, blur_ksize: int = 5):
        self.params = params
        self.blur_sigma = blur_sigma
        self.blur_ksize = blur_ksize
        self._kernel = gaussian_kernel(blur_sigma, blur_ksize).astype(np.float32)
        self._shape = None

    def _alloc(self, shape):
        self._shape = shape
        self._src = np.empty(shape, np.float32)
        self._smooth = np.empty(shape, np.float32)
        self._gx = np.empty(shape, np.float32)
        self._gy = np.empty(shape, np.float32)
        self._mag = np.empty(shape, np.float32)

    def gradients(self, img: ImageBuffer) -> GradientField:
        if img.channels != 1:
            raise ValueError("circle detection expects a single-channel frame")
        if img.width < 3 or img.height < 3:
            raise ValueError(f"image {img.width}x{img.height} smaller than 3x3")
        if self._shape != img.data.shape:
            self._alloc(img.data.shape)
        np.copyto(self._src, img.data)
        if self.blur_ksize > 1:
            cv2.sepFilter2D(self._src, cv2.CV_32F, self._kernel, self._kernel,
                            dst=self._smooth, borderType=cv2.BORDER_REPLICATE)
            smooth = self._smooth
        else:
            smooth = self._src
        cv2.Sobel(smooth, cv2.CV_32F, 1, 0, dst=self._gx, ksize=3, borderType=cv2.BORDER_REPLICATE)
        cv2.Sobel(smooth, cv2.CV_32F, 0, 1, dst=self._gy, ksize=3, borderType=cv2.BORDER_REPLICATE)
        cv2.magnitude(self._gx, self._gy, magnitude=self._mag)
        return GradientField(self._gx, self._gy, self._mag)

    def __call__(self, img: ImageBuffer) -> list[Detection]:
        params = self.params
        grad = self.gradients(img)
        peaks = extract_center_peaks(hough_vote_centers(grad, params), params)
        if not peaks:
            return []
        arr = np.array(peaks, dtype=np.float64)
        cx = np.clip(arr[:, 0], 0.0, img.width - 1.0)
        cy = np.clip(arr[:, 1], 0.0, img.height - 1.0)
        radius, support = _kernels.radius_modes(
            grad.mag, float(params.edge_threshold), cx, cy, int(params.r_min), int(params.r_max))
        found = [Detection(float(x), float(y), float(r), int(v))
                 for x, y, r, n, v in zip(cx, cy, radius, support, arr[:, 2]) if n > 0]
        found.sort(key=lambda d: (-d.score, d.cy, d.cx))
        return found


def edge_count(grad: GradientField, params: HoughParams) -> int:
    return int(np.count_nonzero(grad.mag >= params.edge_threshold))


def max_votes_bound(grad: GradientField, params: HoughParams) -> int:
    """Upper bound on total accumulator votes for ``grad``."""
    return 2 * edge_count(grad, params) * (params.r_max - params.r_min + 1)


__all__ = [
    "Accumulator", "CircleDetector", "Detection", "HoughParams", "NoSupportError",
    "detect_circles", "estimate_radius", "extract_center_peaks", "hough_vote_centers",
]
