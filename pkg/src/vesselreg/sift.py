"""SIFT keypoints and descriptors for a region of interest, with spatial augmentation.

Descriptors carry the usual 4x4x8 gradient histogram plus two appended terms,
``beta * x / roi_width`` and ``beta * y / roi_height``, so that matching
favours keypoints at similar positions inside the ROI. ``beta = 0`` gives
plain appearance matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .core import RoiBox

BORDER = 5
ORI_BINS = 36
DESC_WIDTH = 4
DESC_BINS = 8


class RoiTooSmall(ValueError):
    """The ROI crop cannot hold a single scale-space octave."""


@dataclass(frozen=True)
class SiftConfig:
    layers_per_octave: int = 10
    sigma: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.04
    edge_ratio: float = 10.0
    peak_ratio: float = 0.8
    min_size: int = 16
    beta: float = 0.5
    ratio: float = 0.75
    max_matches: int = 8


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass(frozen=True)
class Descriptor:
    v: np.ndarray
    sx: float
    sy: float

    @property
    def augmented(self) -> np.ndarray:
        return np.concatenate([self.v, [self.sx, self.sy]])


@dataclass(frozen=True)
class Feature:
    keypoint: Keypoint
    descriptor: Descriptor


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float


class _Octave:
    """Gaussian and DoG stacks of one octave; gradients are computed on first use."""

    def __init__(self, index: int, gaussians: np.ndarray):
        self.index = index
        self.gaussians = gaussians
        self.dogs = gaussians[1:] - gaussians[:-1]
        self._grad: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def gradient(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Magnitude and direction in [0, 2pi) of the central-difference gradient."""
        if layer not in self._grad:
            g = self.gaussians[layer]
            gx = np.zeros_like(g)
            gy = np.zeros_like(g)
            gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
            gy[1:-1, :] = g[2:, :] - g[:-2, :]
            self._grad[layer] = (np.hypot(gx, gy), np.mod(np.arctan2(gy, gx), 2 * np.pi))
        return self._grad[layer]


def _octaves(img: np.ndarray, cfg: SiftConfig) -> list[_Octave]:
    s = cfg.layers_per_octave
    k = 2.0 ** (1.0 / s)
    sigmas = [cfg.sigma * k ** i for i in range(s + 3)]
    increments = [math.sqrt(max(cfg.sigma ** 2 - cfg.assumed_blur ** 2, 0.01))]
    increments += [math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, s + 3)]

    base = ndimage.gaussian_filter(img, increments[0], mode="nearest")
    octaves = []
    o = 0
    while min(base.shape) >= cfg.min_size:
        layers = [base]
        for inc in increments[1:]:
            layers.append(ndimage.gaussian_filter(layers[-1], inc, mode="nearest"))
        octaves.append(_Octave(o, np.stack(layers)))
        base = layers[s][::2, ::2]
        o += 1
    return octaves


def _candidates(dogs: np.ndarray, threshold: float) -> np.ndarray:
    hi = ndimage.maximum_filter(dogs, size=3, mode="nearest")
    lo = ndimage.minimum_filter(dogs, size=3, mode="nearest")
    ext = ((dogs == hi) & (dogs > threshold)) | ((dogs == lo) & (dogs < -threshold))
    ext[0] = ext[-1] = False
    ext[:, :BORDER] = ext[:, -BORDER:] = False
    ext[:, :, :BORDER] = ext[:, :, -BORDER:] = False
    return np.argwhere(ext)


def _derivatives(d: np.ndarray, pts: np.ndarray):
    s, y, x = pts[:, 0], pts[:, 1], pts[:, 2]
    v = d[s, y, x]
    grad = 0.5 * np.stack([d[s, y, x + 1] - d[s, y, x - 1],
                           d[s, y + 1, x] - d[s, y - 1, x],
                           d[s + 1, y, x] - d[s - 1, y, x]], axis=1)
    dxx = d[s, y, x + 1] + d[s, y, x - 1] - 2 * v
    dyy = d[s, y + 1, x] + d[s, y - 1, x] - 2 * v
    dss = d[s + 1, y, x] + d[s - 1, y, x] - 2 * v
    dxy = 0.25 * (d[s, y + 1, x + 1] - d[s, y + 1, x - 1] - d[s, y - 1, x + 1] + d[s, y - 1, x - 1])
    dxs = 0.25 * (d[s + 1, y, x + 1] - d[s + 1, y, x - 1] - d[s - 1, y, x + 1] + d[s - 1, y, x - 1])
    dys = 0.25 * (d[s + 1, y + 1, x] - d[s + 1, y - 1, x] - d[s - 1, y + 1, x] + d[s - 1, y - 1, x])
    hess = np.stack([np.stack([dxx, dxy, dxs], -1),
                     np.stack([dxy, dyy, dys], -1),
                     np.stack([dxs, dys, dss], -1)], axis=1)
    return v, grad, hess


def _refine(dogs: np.ndarray, pts: np.ndarray, cfg: SiftConfig):
    """Quadratic sub-pixel localisation with contrast and edge rejection.

    Returns integer sample positions, offsets (x, y, layer) and contrasts of
    the surviving extrema.
    """
    n_layers, h, w = dogs.shape
    pts = pts.copy()
    alive = np.ones(len(pts), dtype=bool)
    done = np.zeros(len(pts), dtype=bool)
    offsets = np.zeros((len(pts), 3))
    for _ in range(5):
        idx = np.nonzero(alive & ~done)[0]
        if len(idx) == 0:
            break
        _, grad, hess = _derivatives(dogs, pts[idx])
        det = np.linalg.det(hess)
        ok = np.abs(det) > 1e-15
        alive[idx[~ok]] = False
        idx, grad, hess = idx[ok], grad[ok], hess[ok]
        off = -np.linalg.solve(hess, grad[..., None])[..., 0]
        offsets[idx] = off
        settled = np.all(np.abs(off) < 0.5, axis=1)
        done[idx[settled]] = True
        move = idx[~settled]
        step = off[~settled]
        if len(move) == 0:
            continue
        bad = np.any(np.abs(step) > 1e6, axis=1)
        alive[move[bad]] = False
        move, step = move[~bad], step[~bad]
        pts[move, 2] += np.rint(step[:, 0]).astype(pts.dtype)
        pts[move, 1] += np.rint(step[:, 1]).astype(pts.dtype)
        pts[move, 0] += np.rint(step[:, 2]).astype(pts.dtype)
        inside = ((pts[move, 0] >= 1) & (pts[move, 0] <= n_layers - 2)
                  & (pts[move, 1] >= BORDER) & (pts[move, 1] < h - BORDER)
                  & (pts[move, 2] >= BORDER) & (pts[move, 2] < w - BORDER))
        alive[move[~inside]] = False
    keep = np.nonzero(alive & done)[0]
    if len(keep) == 0:
        return pts[:0], offsets[:0], np.zeros(0)
    pts, offsets = pts[keep], offsets[keep]
    v, grad, hess = _derivatives(dogs, pts)
    contrast = v + 0.5 * np.sum(grad * offsets, axis=1)
    tr = hess[:, 0, 0] + hess[:, 1, 1]
    det = hess[:, 0, 0] * hess[:, 1, 1] - hess[:, 0, 1] ** 2
    r = cfg.edge_ratio
    ok = ((np.abs(contrast) * cfg.layers_per_octave >= cfg.contrast_threshold)
          & (det > 0) & (tr * tr * r < (r + 1) ** 2 * det))
    return pts[ok], offsets[ok], contrast[ok]


def _patch(arr: np.ndarray, x: int, y: int, radius: int):
    h, w = arr.shape
    y0, y1 = max(y - radius, 1), min(y + radius + 1, h - 1)
    x0, x1 = max(x - radius, 1), min(x + radius + 1, w - 1)
    return arr[y0:y1, x0:x1], np.ogrid[y0 - y:y1 - y, x0 - x:x1 - x]


def _orientations(octave: _Octave, layer: int, x: int, y: int, sigma_oct: float,
                  cfg: SiftConfig) -> list[float]:
    radius = int(round(3 * 1.5 * sigma_oct))
    magnitude, angle = octave.gradient(layer)
    mag, (dy, dx) = _patch(magnitude, x, y, radius)
    ang, _ = _patch(angle, x, y, radius)
    weight = np.exp(-(dx * dx + dy * dy) / (2 * (1.5 * sigma_oct) ** 2))
    bins = np.rint(ang * ORI_BINS / (2 * np.pi)).astype(int) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=(weight * mag).ravel(), minlength=ORI_BINS)
    hist = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
            + np.roll(hist, 2) + np.roll(hist, -2)) / 16
    peak = hist.max()
    if peak <= 0:
        return []
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    found = []
    for i in np.nonzero((hist > left) & (hist > right) & (hist >= cfg.peak_ratio * peak))[0]:
        denom = left[i] - 2 * hist[i] + right[i]
        shift = 0.5 * (left[i] - right[i]) / denom if denom != 0 else 0.0
        found.append(float(np.mod((i + shift) * 2 * np.pi / ORI_BINS, 2 * np.pi)))
    return found


def _descriptor(octave: _Octave, layer: int, x: int, y: int, sigma_oct: float,
                orientation: float) -> np.ndarray:
    d, n = DESC_WIDTH, DESC_BINS
    hist_width = 3.0 * sigma_oct
    h, w = octave.gaussians.shape[1:]
    radius = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(h, w)))
    magnitude, angle = octave.gradient(layer)
    mag, (dy, dx) = _patch(magnitude, x, y, radius)
    ang, _ = _patch(angle, x, y, radius)
    c, s = math.cos(orientation), math.sin(orientation)
    col = (dx * c + dy * s) / hist_width
    row = (-dx * s + dy * c) / hist_width
    rbin = row + d / 2 - 0.5
    cbin = col + d / 2 - 0.5
    ok = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    rbin, cbin = rbin[ok], cbin[ok]
    weight = np.exp(-(col[ok] ** 2 + row[ok] ** 2) / (0.5 * d * d)) * mag[ok]
    obin = np.mod(ang[ok] - orientation, 2 * np.pi) * n / (2 * np.pi)

    r0, c0, o0 = np.floor(rbin), np.floor(cbin), np.floor(obin)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    r0, c0, o0 = r0.astype(int) + 1, c0.astype(int) + 1, o0.astype(int)
    size = (d + 2) * (d + 2) * n
    hist = np.zeros(size)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                flat = ((r0 + dr) * (d + 2) + c0 + dc) * n + (o0 + do) % n
                hist += np.bincount(flat, weights=weight * wr * wc * wo, minlength=size)
    vec = hist.reshape(d + 2, d + 2, n)[1:d + 1, 1:d + 1].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return vec
    vec = np.minimum(vec / norm, 0.2)
    return vec / np.linalg.norm(vec)


def detect_and_describe(img: np.ndarray, roi: RoiBox, cfg: SiftConfig = SiftConfig()
                        ) -> list[Feature]:
    """Keypoints and augmented descriptors inside ``roi``, in ROI-frame coordinates.

    Ordered by decreasing response, then y, then x.
    """
    if cfg.layers_per_octave < 3:
        raise ValueError("layers_per_octave must be >= 3")
    x0, y0, x1, y1 = roi.window()
    h, w = img.shape
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
    if x1 - x0 < cfg.min_size or y1 - y0 < cfg.min_size:
        raise RoiTooSmall(f"ROI window {x1 - x0}x{y1 - y0} is below {cfg.min_size}x{cfg.min_size}")
    crop = np.asarray(img, dtype=float)[y0:y1, x0:x1] / 255.0
    roi_w, roi_h = x1 - x0, y1 - y0
    s = cfg.layers_per_octave
    threshold = 0.5 * cfg.contrast_threshold / s

    features = []
    for octave in _octaves(crop, cfg):
        scale = 2.0 ** octave.index
        pts, offsets, contrast = _refine(octave.dogs, _candidates(octave.dogs, threshold), cfg)
        for (layer, yi, xi), (ox, oy, os_), resp in zip(pts, offsets, contrast):
            kx, ky = (xi + ox) * scale, (yi + oy) * scale
            if not (0 <= kx < roi_w and 0 <= ky < roi_h):
                continue
            sigma_oct = cfg.sigma * 2.0 ** ((layer + os_) / s)
            for ori in _orientations(octave, int(layer), int(xi), int(yi), sigma_oct, cfg):
                v = _descriptor(octave, int(layer), int(xi), int(yi), sigma_oct, ori)
                kp = Keypoint(float(kx), float(ky), float(sigma_oct * scale), ori, float(abs(resp)))
                desc = Descriptor(v, cfg.beta * kx / roi_w, cfg.beta * ky / roi_h)
                features.append(Feature(kp, desc))
    features.sort(key=lambda f: (-f.keypoint.response, f.keypoint.y, f.keypoint.x,
                                 f.keypoint.orientation))
    return features


def descriptor_matrix(features: list[Feature]) -> np.ndarray:
    if not features:
        return np.zeros((0, DESC_WIDTH * DESC_WIDTH * DESC_BINS + 2))
    return np.stack([f.descriptor.augmented for f in features])


def match_features(a: list[Feature], b: list[Feature], cfg: SiftConfig = SiftConfig()
                   ) -> list[Match]:
    """Ratio-tested, one-to-one nearest-neighbour matches, best ``max_matches`` first."""
    if not a or not b:
        return []
    dist = cdist(descriptor_matrix(a), descriptor_matrix(b))
    order = np.argsort(dist, axis=1, kind="stable")
    good = []
    for i in range(len(a)):
        j = int(order[i, 0])
        d1 = float(dist[i, j])
        if len(b) >= 2:
            d2 = float(dist[i, order[i, 1]])
            if not d1 < cfg.ratio * d2:
                continue
        good.append(Match(i, j, d1))
    good.sort(key=lambda m: (m.distance, m.index_a, m.index_b))
    used_a, used_b, chosen = set(), set(), []
    for m in good:
        if m.index_a in used_a or m.index_b in used_b:
            continue
        used_a.add(m.index_a)
        used_b.add(m.index_b)
        chosen.append(m)
    return chosen[:cfg.max_matches]
