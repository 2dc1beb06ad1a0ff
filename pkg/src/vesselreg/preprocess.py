"""Tissue cleaning: remove stains and debris outside the main tissue section."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from skimage import measure

from .core import BACKGROUND, InvalidArgument


class BlankSlide(RuntimeError):
    """No tissue contour survived thresholding and morphology."""


@dataclass(frozen=True)
class PreprocessConfig:
    sigma: float = 10.0
    morph_radius: int = 20
    keep_fraction: float = 0.25


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (N, 2) array of (x, y), closed implicitly
    area: float
    centroid: tuple[float, float]


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise InvalidArgument(f"expected an RGB image, got shape {rgb.shape}")
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.floor(lum + 0.5)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel cut at ``ceil(3 sigma)``, edge-replicated borders."""
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(img, dtype=float), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def threshold_mean(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    return img < img.mean()


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Disk dilation; pixels beyond the border count as background."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    # exact for the disk {dx^2 + dy^2 <= r^2}: distances are square roots of integers
    return ndimage.distance_transform_edt(~mask) <= radius + 1e-9


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Disk erosion; pixels beyond the border count as foreground."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        return mask.copy()
    return ndimage.distance_transform_edt(mask) > radius + 1e-9


def morph_close_open(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius < 1:
        raise InvalidArgument("structuring element radius must be >= 1")
    closed = erode(dilate(mask, radius), radius)
    return dilate(erode(closed, radius), radius)


def find_contours(mask: np.ndarray) -> list[Contour]:
    """Outer boundary of every 8-connected foreground component."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    contours = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        comp = ndimage.binary_fill_holes(labels[sl] == idx)
        padded = np.pad(comp, 1).astype(float)
        traces = measure.find_contours(padded, 0.5, fully_connected="high")
        outer = max(traces, key=len)
        oy, ox = sl[0].start - 1, sl[1].start - 1
        points = np.column_stack([outer[:, 1] + ox, outer[:, 0] + oy])
        if len(points) > 1 and np.allclose(points[0], points[-1]):
            points = points[:-1]
        ys, xs = np.nonzero(comp)
        contours.append(Contour(points=points, area=float(comp.sum()),
                                centroid=(float(xs.mean() + sl[1].start),
                                          float(ys.mean() + sl[0].start))))
    return contours


def contour_score(c: Contour, shape: tuple[int, int]) -> float:
    h, w = shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    return c.area / (1.0 + math.hypot(c.centroid[0] - cx, c.centroid[1] - cy))


def select_tissue_contours(contours: list[Contour], shape: tuple[int, int],
                           keep_fraction: float = 0.25) -> list[Contour]:
    """Keep large, central contours: those scoring within ``keep_fraction`` of the best."""
    if not contours:
        return []
    scores = [contour_score(c, shape) for c in contours]
    best = max(scores)
    return [c for c, s in zip(contours, scores) if s >= keep_fraction * best]


def hull_mask(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixels whose centres lie inside or on the convex hull of ``points``."""
    h, w = shape
    pts = np.asarray(points, dtype=float)
    inside = np.zeros(shape, dtype=bool)
    x0, y0 = max(int(np.floor(pts[:, 0].min())), 0), max(int(np.floor(pts[:, 1].min())), 0)
    x1, y1 = min(int(np.ceil(pts[:, 0].max())) + 1, w), min(int(np.ceil(pts[:, 1].max())) + 1, h)
    if x1 <= x0 or y1 <= y0:
        return inside
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(float)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        # collinear input: the hull degenerates to the bounding box
        inside[y0:y1, x0:x1] = True
        return inside
    ok = np.ones(xx.shape, dtype=bool)
    for a, b, c in hull.equations:
        ok &= a * xx + b * yy + c <= 1e-9
    inside[y0:y1, x0:x1] = ok
    return inside


def clean_tissue(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Whiten everything outside the convex hull of the selected tissue contours."""
    img = np.asarray(img, dtype=float)
    mask = threshold_mean(gaussian_blur(img, cfg.sigma))
    mask = morph_close_open(mask, cfg.morph_radius)
    selected = select_tissue_contours(find_contours(mask), img.shape, cfg.keep_fraction)
    if not selected:
        raise BlankSlide("no tissue found on slide")
    inside = hull_mask(np.concatenate([c.points for c in selected]), img.shape)
    return np.where(inside, img, BACKGROUND)
