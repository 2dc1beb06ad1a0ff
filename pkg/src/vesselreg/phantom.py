"""Synthetic serial-section stacks with known rigid misalignment.

Each slice shows a textured, stained tissue section on white glass with a
dark vessel, a few heavily deformed or torn patches away from the vessel and
some stain debris off the tissue. The whole slide is then rotated and shifted
by a random rigid transform that is recorded as ground truth, together with
the lumen mask carried by the same transform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .core import RigidTransform, RoiBox, warp_image, warp_mask


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    slices: int = 20
    size: int = 1024
    # vessel ellipse in the un-perturbed frame, relative to image size
    vessel_center: tuple[float, float] = (0.47, 0.45)
    vessel_axes: tuple[float, float] = (100.0, 70.0)
    vessel_angle: float = 0.4
    vessel_intensity: float = 70.0
    vessel_drift: tuple[float, float] = (0.4, 0.25)
    texture_amplitude: float = 1.0
    texture_scales: tuple[float, ...] = (2.5, 6.0, 16.0)
    slice_noise: float = 3.0
    distractors: int = 3
    distractor_radius: float = 110.0
    distractor_warp: float = 22.0
    theta_max_deg: float = 10.0
    shift_max: float = 40.0
    artifact_stains: int = 4
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "PhantomSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidSpec(f"unknown phantom fields: {sorted(unknown)}")
        conv = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**conv)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def center(self) -> tuple[float, float]:
        return (self.size - 1) / 2, (self.size - 1) / 2

    def vessel_at(self, i: int) -> tuple[float, float]:
        return (self.vessel_center[0] * self.size + i * self.vessel_drift[0],
                self.vessel_center[1] * self.size + i * self.vessel_drift[1])

    def roi(self, scale: float = 3.0) -> RoiBox:
        """Box around the vessel of the first slice, before perturbation."""
        cx, cy = self.vessel_at(0)
        a = max(self.vessel_axes)
        return RoiBox(cx, cy, scale * a, scale * a)


@dataclass
class Phantom:
    spec: PhantomSpec
    slices: list[np.ndarray]          # uint8 RGB
    lumen_masks: list[np.ndarray]     # bool
    truth: list[RigidTransform]       # un-perturbed frame -> slice frame
    distractor_centers: list[tuple[float, float]] = field(default_factory=list)

    def roi(self, scale: float = 3.0) -> RoiBox:
        """Vessel ROI in the frame of slice 0, where registration anchors."""
        box = self.spec.roi(scale)
        cx, cy = self.truth[0].apply([box.cx, box.cy])[0]
        return RoiBox(float(cx), float(cy), box.width, box.height)

    def distractor_roi(self, index: int = 0, size: float | None = None) -> RoiBox:
        size = self.spec.distractor_radius if size is None else size
        cx, cy = self.truth[0].apply(self.distractor_centers[index])[0]
        return RoiBox(float(cx), float(cy), size, size)


def _band_noise(rng, shape, scales) -> np.ndarray:
    out = np.zeros(shape)
    for s in scales:
        f = ndimage.gaussian_filter(rng.standard_normal(shape), s, mode="wrap")
        out += f / f.std()
    return out / math.sqrt(len(scales))


def _box_distance(p, centre, half: float) -> float:
    dx = max(abs(p[0] - centre[0]) - half, 0.0)
    dy = max(abs(p[1] - centre[1]) - half, 0.0)
    return math.hypot(dx, dy)


def _place_distractors(spec: PhantomSpec, rng, tissue_r: float) -> list[tuple[float, float]]:
    c = spec.center
    a = max(spec.vessel_axes)
    path = [spec.vessel_at(0), spec.vessel_at(spec.slices - 1)]
    half = 1.5 * a  # half-size of the default ROI box
    centers = []
    for _ in range(2000):
        if len(centers) == spec.distractors:
            break
        ang = rng.uniform(0, 2 * math.pi)
        rad = rng.uniform(0.3, 0.75) * tissue_r
        p = (c[0] + rad * math.cos(ang), c[1] + rad * math.sin(ang))
        clear = min(math.dist(p, q) for q in path) - spec.distractor_radius
        apart = all(math.dist(p, q) > 2 * spec.distractor_radius for q in centers)
        off_roi = all(_box_distance(p, spec.vessel_at(i), half) > spec.distractor_radius
                      for i in range(spec.slices))
        if clear >= 2 * a and apart and off_roi:
            centers.append(p)
    if len(centers) < spec.distractors:
        raise InvalidSpec("cannot place distractor patches far enough from the vessel")
    return centers


def validate(spec: PhantomSpec) -> None:
    if spec.slices < 1 or spec.size < 64:
        raise InvalidSpec("need at least one slice of at least 64x64 pixels")
    if 2 * spec.theta_max_deg > 30.0:
        raise InvalidSpec("slice-to-slice rotation would exceed the default search range")
    if 2 * math.sqrt(2) * spec.shift_max > spec.size / 8:
        raise InvalidSpec("slice-to-slice shift would exceed the default search range")
    if spec.distractors < 0 or spec.artifact_stains < 0:
        raise InvalidSpec("counts must be non-negative")


def _local_warp(rgb: np.ndarray, center, radius: float, amplitude: float, rng) -> None:
    """Smooth displacement confined to a disk, applied in place."""
    h, w = rgb.shape[:2]
    cx, cy = center
    x0, x1 = max(int(cx - radius), 0), min(int(cx + radius) + 1, w)
    y0, y1 = max(int(cy - radius), 0), min(int(cy + radius) + 1, h)
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(float)
    r2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / radius ** 2
    taper = np.clip(1 - r2, 0, None) ** 2
    shape = yy.shape
    u = ndimage.gaussian_filter(rng.standard_normal(shape), radius / 4)
    v = ndimage.gaussian_filter(rng.standard_normal(shape), radius / 4)
    u *= amplitude / (np.abs(u).max() + 1e-12)
    v *= amplitude / (np.abs(v).max() + 1e-12)
    coords = [yy + v * taper, xx + u * taper]
    src = rgb.copy()
    for ch in range(3):
        rgb[y0:y1, x0:x1, ch] = ndimage.map_coordinates(src[..., ch], coords, order=1,
                                                         mode="nearest")


def _tear(rgb: np.ndarray, center, radius: float, rng, missing: bool) -> None:
    h, w = rgb.shape[:2]
    cx, cy = center
    yy, xx = np.ogrid[:h, :w]
    if missing:
        # most of the patch is lost
        hole = (xx - cx) ** 2 + (yy - cy) ** 2 <= (0.9 * radius) ** 2
    else:
        ang = rng.uniform(0, math.pi)
        nx, ny = -math.sin(ang), math.cos(ang)
        dist = (xx - cx) * nx + (yy - cy) * ny
        along = (xx - cx) * ny - (yy - cy) * nx
        hole = (np.abs(dist) < rng.uniform(4, 12)) & (np.abs(along) < 0.8 * radius)
    rgb[hole] = 255.0


def generate(spec: PhantomSpec) -> Phantom:
    """Deterministic stack for ``spec``; see module docstring."""
    validate(spec)
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    c = spec.center
    tissue_r = 0.42 * n
    yy, xx = np.mgrid[:n, :n].astype(float)

    ang = np.arctan2(yy - c[1], xx - c[0])
    wobble = sum(rng.uniform(0.01, 0.04) * np.cos(k * ang + rng.uniform(0, 2 * np.pi))
                 for k in (2, 3, 5))
    tissue = np.hypot(xx - c[0], yy - c[1]) <= tissue_r * (1 + wobble)

    amp = spec.texture_amplitude
    counter = np.clip(0.45 + 0.18 * amp * _band_noise(rng, (n, n), spec.texture_scales), 0.05, 0.9)
    brown = np.clip(0.35 * amp * _band_noise(rng, (n, n), spec.texture_scales[-2:]) - 0.1, 0, 0.6)
    red = np.clip(0.3 * amp * _band_noise(rng, (n, n), spec.texture_scales[:2]) - 0.15, 0, 0.5)
    absorb = {"counter": np.array([110.0, 120.0, 60.0]),
              "brown": np.array([100.0, 150.0, 190.0]),
              "red": np.array([40.0, 180.0, 160.0])}

    distractors = _place_distractors(spec, rng, tissue_r)
    stains = []
    for _ in range(spec.artifact_stains):
        for _ in range(1000):
            p = rng.uniform(0.04 * n, 0.96 * n, size=2)
            if math.dist(p, c) > tissue_r * 1.2 + 60:
                stains.append((float(p[0]), float(p[1]), float(rng.uniform(6, 14))))
                break

    slices, masks, truth = [], [], []
    for i in range(spec.slices):
        gain = 1.0 + rng.uniform(-0.05, 0.05)
        density = gain * (counter[..., None] * absorb["counter"] + brown[..., None] * absorb["brown"]
                          + red[..., None] * absorb["red"])
        density += spec.slice_noise * rng.standard_normal((n, n, 1))
        rgb = np.where(tissue[..., None], 255.0 - density, 255.0)

        vx, vy = spec.vessel_at(i)
        ca, sa = math.cos(spec.vessel_angle), math.sin(spec.vessel_angle)
        u = ((xx - vx) * ca + (yy - vy) * sa) / spec.vessel_axes[0]
        v = (-(xx - vx) * sa + (yy - vy) * ca) / spec.vessel_axes[1]
        lumen = u * u + v * v <= 1.0
        wall = (u * u + v * v <= 1.25) & ~lumen
        rgb[wall] = rgb[wall] * 0.6 + np.array([150.0, 70.0, 40.0]) * 0.4
        tint = np.array([spec.vessel_intensity * 1.3, spec.vessel_intensity * 0.8,
                         spec.vessel_intensity * 0.7])
        rgb[lumen] = tint + 0.15 * (rgb[lumen] - 160.0)

        for k, p in enumerate(distractors):
            _local_warp(rgb, p, spec.distractor_radius, spec.distractor_warp, rng)
            _tear(rgb, p, spec.distractor_radius, rng, missing=rng.random() < 0.5)
        for sx, sy, sr in stains:
            blob = (xx - sx) ** 2 + (yy - sy) ** 2 <= sr ** 2
            rgb[blob] = np.array([90.0, 60.0, 50.0])

        if spec.theta_max_deg > 0 or spec.shift_max > 0:
            theta = math.radians(rng.uniform(-spec.theta_max_deg, spec.theta_max_deg))
            d = rng.uniform(-spec.shift_max, spec.shift_max, size=2)
            t = RigidTransform.about_center(theta, c[0], c[1], float(d[0]), float(d[1]))
        else:
            t = RigidTransform.identity()
        out = np.stack([warp_image(rgb[..., ch], t) for ch in range(3)], axis=-1)
        slices.append(np.clip(np.rint(out), 0, 255).astype(np.uint8))
        masks.append(warp_mask(lumen, t))
        truth.append(t)
    return Phantom(spec, slices, masks, truth, distractors)
