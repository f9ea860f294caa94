"""Raster buffers, PNM I/O, filtering, and the synthetic overhead camera."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import cv2
import numpy as np

from . import _kernels


class PNMFormatError(ValueError):
    """Malformed, truncated or unsupported PNM file."""


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit raster, shape ``(height, width)`` or ``(height, width, 3)``.

    The sample array is made read-only on construction; derive new buffers
    instead of editing one in place.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise ValueError(f"unsupported buffer shape {data.shape}; need (h, w) or (h, w, 3)")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"empty buffer {data.shape}")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ValueError("samples must lie in [0, 255]")
            data = data.astype(np.uint8)
        if data.flags.writeable:
            data = data.view()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_samples(cls, width: int, height: int, channels: int, samples) -> "ImageBuffer":
        samples = np.asarray(samples, dtype=np.int64).ravel()
        if channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {channels}")
        if samples.size != width * height * channels:
            raise ValueError(
                f"sample count {samples.size} != {width}x{height}x{channels}"
            )
        shape = (height, width) if channels == 1 else (height, width, 3)
        return cls(samples.reshape(shape))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def samples(self) -> np.ndarray:
        """Row-major, channel-interleaved flat view."""
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    mag: np.ndarray

    @property
    def width(self) -> int:
        return self.mag.shape[1]

    @property
    def height(self) -> int:
        return self.mag.shape[0]


@dataclass(frozen=True)
class CameraModel:
    """Software stand-in for the overhead camera.

    ``world_to_camera`` maps world millimetres to camera pixels; pixel
    centres sit on integer coordinates.
    """

    width: int = 1024
    height: int = 768
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(3))
    background_level: float = 40.0
    robot_body_level: float = 200.0
    pixel_noise_sigma: float = 0.0
    vignette_strength: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "world_to_camera", np.asarray(self.world_to_camera, dtype=float).reshape(3, 3))
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")
        if self.robot_body_level == self.background_level:
            raise ValueError("robot_body_level must differ from background_level")
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel_noise_sigma must be >= 0")
        if not 0.0 <= self.vignette_strength <= 1.0:
            raise ValueError("vignette_strength must lie in [0, 1]")

    def project(self, xy) -> np.ndarray:
        """World mm -> camera px for an ``(n, 2)`` array."""
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        h = self.world_to_camera
        w = pts[:, 0] * h[2, 0] + pts[:, 1] * h[2, 1] + h[2, 2]
        u = (pts[:, 0] * h[0, 0] + pts[:, 1] * h[0, 1] + h[0, 2]) / w
        v = (pts[:, 0] * h[1, 0] + pts[:, 1] * h[1, 1] + h[1, 2]) / w
        return np.column_stack([u, v])

    def project_radius(self, xy, radius) -> np.ndarray:
        """Camera-pixel radius of world discs (mean of the two axis stretches)."""
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        radius = np.broadcast_to(np.asarray(radius, dtype=float), (pts.shape[0],))
        c = self.project(pts)
        ex = self.project(pts + np.column_stack([radius, np.zeros_like(radius)]))
        ey = self.project(pts + np.column_stack([np.zeros_like(radius), radius]))
        return 0.5 * (np.hypot(*(ex - c).T) + np.hypot(*(ey - c).T))


# -- PNM ---------------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _read_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(raw):
        if raw[pos] == ord("#"):
            while pos < len(raw) and raw[pos] not in b"\r\n":
                pos += 1
        elif raw[pos] in _WS:
            pos += 1
        else:
            break
    start = pos
    while pos < len(raw) and raw[pos] not in _WS and raw[pos] != ord("#"):
        pos += 1
    return raw[start:pos], pos


def _parse_int(token: bytes, what: str) -> int:
    try:
        value = int(token.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise PNMFormatError(f"bad {what} token {token!r}") from None
    if value < 1:
        raise PNMFormatError(f"bad {what} token {token!r}")
    return value


def load_pnm(path: str | os.PathLike) -> ImageBuffer:
    """Read a binary P5/P6 file with maxval 255."""
    raw = Path(path).read_bytes()
    magic, pos = _read_token(raw, 0)
    if magic not in (b"P5", b"P6"):
        raise PNMFormatError(f"unsupported magic {magic!r} in {path}")
    w_tok, pos = _read_token(raw, pos)
    h_tok, pos = _read_token(raw, pos)
    m_tok, pos = _read_token(raw, pos)
    width = _parse_int(w_tok, "width")
    height = _parse_int(h_tok, "height")
    maxval = _parse_int(m_tok, "maxval")
    if maxval != 255:
        raise PNMFormatError(f"unsupported maxval token {m_tok!r} (only 255)")
    if pos >= len(raw) or raw[pos] not in _WS:
        raise PNMFormatError(f"missing whitespace after maxval in {path}")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    payload = raw[pos:pos + n]
    if len(payload) < n:
        raise PNMFormatError(f"truncated payload in {path}: {len(payload)} of {n} bytes")
    data = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return ImageBuffer(data.reshape(shape).copy())


def save_pnm(img: ImageBuffer, path: str | os.PathLike) -> None:
    if img.channels not in (1, 3):
        raise ValueError(f"cannot save {img.channels}-channel buffer as PNM")
    magic = "P5" if img.channels == 1 else "P6"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(img.data).tobytes())
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc


# -- filtering ---------------------------------------------------------------

def gaussian_kernel(sigma: float, ksize: int) -> np.ndarray:
    """Sampled 1-D Gaussian normalised to sum 1."""
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError(f"ksize must be a positive odd integer, got {ksize}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.arange(ksize, dtype=np.float64) - ksize // 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_float(plane: np.ndarray, sigma: float, ksize: int, dtype=np.float64) -> np.ndarray:
    k = gaussian_kernel(sigma, ksize).astype(dtype)
    src = plane.astype(dtype, copy=False)
    if ksize == 1:
        return src.copy()
    depth = cv2.CV_64F if dtype == np.float64 else cv2.CV_32F
    return cv2.sepFilter2D(src, depth, k, k, borderType=cv2.BORDER_REPLICATE)


def gaussian_blur(img: ImageBuffer, sigma: float, ksize: int) -> ImageBuffer:
    """Separable Gaussian blur with clamp-to-edge borders, rounded on output."""
    if img.channels != 1:
        raise ValueError("gaussian_blur expects a single-channel buffer")
    out = _blur_float(img.data, sigma, ksize)
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def _sobel_float(plane: np.ndarray, dtype=np.float64) -> GradientField:
    depth = cv2.CV_64F if dtype == np.float64 else cv2.CV_32F
    src = plane.astype(dtype, copy=False)
    gx = cv2.Sobel(src, depth, 1, 0, ksize=3, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.Sobel(src, depth, 0, 1, ksize=3, borderType=cv2.BORDER_REPLICATE)
    return GradientField(gx, gy, cv2.magnitude(gx, gy))


def sobel_gradients(img: ImageBuffer) -> GradientField:
    if img.channels != 1:
        raise ValueError("sobel_gradients expects a single-channel buffer")
    if img.width < 3 or img.height < 3:
        raise ValueError(f"image {img.width}x{img.height} smaller than 3x3")
    return _sobel_float(img.data)


# -- synthetic camera --------------------------------------------------------

@lru_cache(maxsize=1)
def _normal_quantiles() -> np.ndarray:
    # inverse-CDF sampling table: index k <-> probability (k + 0.5) / 65536
    nd = NormalDist()
    q = np.array([nd.inv_cdf((k + 0.5) / 65536.0) for k in range(32768)])
    return np.concatenate([q, -q[::-1]])


def render_camera_view(
    robots: Sequence[tuple[Sequence[float], float]],
    cam: CameraModel,
    rng_seed: int,
    world_bounds: tuple[float, float] | None = None,
) -> ImageBuffer:
    """Draw robots as anti-aliased discs into a grayscale camera frame.

    ``robots`` holds ``((x_mm, y_mm), radius_mm)`` pairs. When
    ``world_bounds`` (width, height in mm) is omitted the camera frame itself
    is taken as the bound after projection.
    """
    n = len(robots)
    if n:
        pos = np.array([r[0] for r in robots], dtype=float).reshape(n, 2)
        rad = np.array([r[1] for r in robots], dtype=float)
    else:
        pos = np.zeros((0, 2))
        rad = np.zeros(0)
    if np.any(rad <= 0):
        raise ValueError(f"robot radii must be > 0 (indices {np.flatnonzero(rad <= 0).tolist()})")
    if n:
        if world_bounds is not None:
            bw, bh = world_bounds
            bad = np.flatnonzero((pos[:, 0] < 0) | (pos[:, 0] > bw) | (pos[:, 1] < 0) | (pos[:, 1] > bh))
            centers = cam.project(pos)
        else:
            centers = cam.project(pos)
            bad = np.flatnonzero(
                (centers[:, 0] < -0.5) | (centers[:, 0] > cam.width - 0.5)
                | (centers[:, 1] < -0.5) | (centers[:, 1] > cam.height - 0.5)
            )
        if bad.size:
            raise ValueError(f"robots outside world bounds: indices {bad.tolist()}")
        radii = cam.project_radius(pos, rad)
    else:
        centers = np.zeros((0, 2))
        radii = np.zeros(0)
    out = _kernels.render_discs(
        cam.height, cam.width, float(cam.background_level), float(cam.robot_body_level),
        np.ascontiguousarray(centers[:, 0]), np.ascontiguousarray(centers[:, 1]),
        np.ascontiguousarray(radii), float(cam.vignette_strength),
        float(cam.pixel_noise_sigma), int(rng_seed) & ((1 << 63) - 1),
        _normal_quantiles(),
    )
    return ImageBuffer(out)
