"""Raster, transform and pyramid primitives shared by every registration stage.

Images are plain 2D ``numpy`` float arrays indexed ``[y, x]`` holding
intensities in [0, 255]; masks are 2D boolean arrays. Point coordinates are
always ``(x, y)`` with the origin at the centre of the top-left pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BACKGROUND = 255.0


class InvalidArgument(ValueError):
    """Raised when an operation receives an argument outside its domain."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotation by ``theta`` (radians) about the origin followed by a shift.

    A point ``p`` maps to ``R(theta) @ p + (dx, dy)``. Warping an image with
    a transform moves its content: a bright pixel at ``p`` ends up at
    ``T(p)`` in the output.
    """

    theta: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(math.atan2(m[1, 0], m[0, 0]), float(m[0, 2]), float(m[1, 2]))

    @classmethod
    def about_center(cls, theta: float, cx: float, cy: float,
                     dx: float = 0.0, dy: float = 0.0) -> "RigidTransform":
        """Rotation about ``(cx, cy)`` followed by a shift of ``(dx, dy)``."""
        c, s = math.cos(theta), math.sin(theta)
        return cls(theta, cx - (c * cx - s * cy) + dx, cy - (s * cx + c * cy) + dy)

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.dx], [s, c, self.dy], [0.0, 0.0, 1.0]])

    def apply(self, points) -> np.ndarray:
        """Map an ``(N, 2)`` array of ``(x, y)`` points."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        m = self.matrix
        return p @ m[:2, :2].T + m[:2, 2]

    def inverse(self) -> "RigidTransform":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return RigidTransform(-self.theta,
                              -(c * self.dx + s * self.dy),
                              -(-s * self.dx + c * self.dy))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def is_identity(self, tol: float = 1e-12) -> bool:
        return abs(self.theta) <= tol and abs(self.dx) <= tol and abs(self.dy) <= tol

    def as_dict(self) -> dict:
        return {"theta": self.theta, "dx": self.dx, "dy": self.dy}


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first and then ``a``."""
    # the matrix round trip through atan2 can move theta by an ulp
    if b.is_identity(0.0):
        return a
    if a.is_identity(0.0):
        return b
    return RigidTransform.from_matrix(a.matrix @ b.matrix)


def scale_transform(t: RigidTransform, factor: float) -> RigidTransform:
    """Re-express ``t`` in a frame whose pixel coordinates are ``factor`` times larger."""
    if not factor > 0:
        raise InvalidArgument(f"scale factor must be positive, got {factor}")
    return RigidTransform(t.theta, t.dx * factor, t.dy * factor)


def _sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
            interpolation: str, fill: float) -> np.ndarray:
    h, w = img.shape
    out = np.full(xs.shape, fill, dtype=float)
    if interpolation == "nearest":
        xi = np.floor(xs + 0.5).astype(np.intp)
        yi = np.floor(ys + 0.5).astype(np.intp)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out[ok] = img[yi[ok], xi[ok]]
        return out
    if interpolation != "bilinear":
        raise InvalidArgument(f"unknown interpolation {interpolation!r}")
    eps = 1e-9
    ok = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    xs, ys = xs[ok], ys[ok]
    x0 = np.clip(np.floor(xs), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out[ok] = top * (1.0 - fy) + bottom * fy
    return out


def warp_image(img: np.ndarray, t: RigidTransform, interpolation: str = "bilinear",
               fill: float = BACKGROUND, window: tuple[int, int, int, int] | None = None
               ) -> np.ndarray:
    """Resample ``img`` so that its content is moved by ``t``.

    The output has the input's shape. Pixels whose source falls outside the
    input receive ``fill`` (white glass by default). ``window=(x0, y0, x1, y1)``
    restricts the computation to that output sub-rectangle and returns only
    it; values are identical to cropping the full warp.
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    if t.is_identity(0.0):
        if window is None:
            return img.copy()
        x0, y0, x1, y1 = window
        out = np.full((y1 - y0, x1 - x0), float(fill))
        sx0, sy0, sx1, sy1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
        if sx1 > sx0 and sy1 > sy0:
            out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
        return out
    x0, y0, x1, y1 = (0, 0, w, h) if window is None else window
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(float)
    inv = t.inverse().matrix
    xs = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    ys = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    return _sample(img, xs, ys, interpolation, fill)


def warp_mask(mask: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Nearest-neighbour warp of a boolean mask; uncovered pixels are background."""
    moved = warp_image(np.asarray(mask, dtype=float), t, "nearest", fill=0.0)
    return moved > 0.5


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box average; a ragged last row/column averages only existing pixels."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    hh, ww = -(-h // 2), -(-w // 2)
    total = np.zeros((hh * 2, ww * 2))
    count = np.zeros((hh * 2, ww * 2))
    total[:h, :w] = img
    count[:h, :w] = 1.0
    total = total.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
    count = count.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
    return total / count


def build_pyramid(img: np.ndarray, k: int) -> list[np.ndarray]:
    """Levels ``0..k``; level ``r`` is ``img`` downsampled by ``2**r``."""
    img = np.asarray(img, dtype=float)
    if k < 0:
        raise InvalidArgument("pyramid depth must be non-negative")
    if min(img.shape) < 2 ** k:
        raise InvalidArgument(f"image {img.shape} too small for {k} pyramid levels")
    levels = [img]
    for _ in range(k):
        levels.append(downsample2(levels[-1]))
    return levels


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned box given by centre and size, in pixel units."""

    cx: float
    cy: float
    width: float
    height: float

    @property
    def x0(self) -> float:
        return self.cx - self.width / 2

    @property
    def y0(self) -> float:
        return self.cy - self.height / 2

    @property
    def x1(self) -> float:
        return self.cx + self.width / 2

    @property
    def y1(self) -> float:
        return self.cy + self.height / 2

    @property
    def area(self) -> float:
        return self.width * self.height

    @classmethod
    def from_bounds(cls, x0: float, y0: float, x1: float, y1: float) -> "RoiBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @classmethod
    def parse(cls, text: str) -> "RoiBox":
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise InvalidArgument(f"ROI must be cx,cy,w,h; got {text!r}")
        return cls(*parts)

    def clip(self, shape: tuple[int, int]) -> "RoiBox":
        """Shrink the box so it lies inside an image of ``shape=(h, w)``."""
        h, w = shape
        x0, x1 = min(max(self.x0, 0.0), w), max(min(self.x1, float(w)), 0.0)
        y0, y1 = min(max(self.y0, 0.0), h), max(min(self.y1, float(h)), 0.0)
        return RoiBox.from_bounds(x0, y0, max(x0, x1), max(y0, y1))

    def window(self) -> tuple[int, int, int, int]:
        """Integer pixel window ``(x0, y0, x1, y1)`` covering the box."""
        return (int(math.floor(self.x0 + 1e-9)), int(math.floor(self.y0 + 1e-9)),
                int(math.ceil(self.x1 - 1e-9)), int(math.ceil(self.y1 - 1e-9)))

    def as_list(self) -> list[float]:
        return [self.cx, self.cy, self.width, self.height]


def roi_for_level(roi0: RoiBox, level: int, level_shape: tuple[int, int]) -> RoiBox:
    """Same-size box around the downsampled centre, clipped to the level image."""
    s = 2 ** level
    return RoiBox(roi0.cx / s, roi0.cy / s, roi0.width, roi0.height).clip(level_shape)


def ssd(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of squared intensity differences of two equally sized images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))
