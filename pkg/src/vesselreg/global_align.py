"""Whole-tissue rigid alignment by exhaustive search over rotation and translation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (InvalidArgument, RigidTransform, build_pyramid, compose,
                   scale_transform, ssd, warp_image)
from .mumford_shah import LabelImage, render_ms

__all__ = ["SearchGrid", "GridNode", "ssd", "grid_search_rigid", "node_transform",
           "axis_values", "align_whole_tissue", "WholeTissueResult"]


@dataclass(frozen=True)
class SearchGrid:
    """Search domain; angles in radians, shifts in pixels of the searched images.

    A node ``(theta, dx, dy)`` rotates about the image centre and then shifts.
    """

    theta_min: float
    theta_max: float
    theta_step: float
    dx_min: float
    dx_max: float
    dx_step: float
    dy_min: float
    dy_max: float
    dy_step: float
    refine_factor: int = 6

    def __post_init__(self):
        for lo, hi, step in self.axes():
            if not step > 0 or lo > hi:
                raise InvalidArgument(f"bad grid axis ({lo}, {hi}, {step})")
        if self.refine_factor < 1:
            raise InvalidArgument("refine_factor must be a positive integer")

    def axes(self):
        return ((self.theta_min, self.theta_max, self.theta_step),
                (self.dx_min, self.dx_max, self.dx_step),
                (self.dy_min, self.dy_max, self.dy_step))

    @classmethod
    def default(cls, width: int, height: int | None = None, theta_max_deg: float = 30.0,
                theta_step_deg: float = 3.0, refine_factor: int = 6) -> "SearchGrid":
        height = width if height is None else height
        sx, sy = max(1.0, float(width // 64)), max(1.0, float(height // 64))
        tx, ty = math.floor(width / 8 / sx) * sx, math.floor(height / 8 / sy) * sy
        t, ts = math.radians(theta_max_deg), math.radians(theta_step_deg)
        return cls(-t, t, ts, -tx, tx, sx, -ty, ty, sy, refine_factor)


@dataclass(frozen=True, order=True)
class GridNode:
    theta: float
    dx: float
    dy: float

    def tie_key(self):
        return (abs(self.theta), abs(self.dx), abs(self.dy), self.theta, self.dx, self.dy)


def _snap(values: np.ndarray, step: float) -> np.ndarray:
    # keep an exact zero node so that "no motion" is representable bit for bit
    values[np.abs(values) < 1e-9 * step] = 0.0
    return values


def axis_values(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return _snap(lo + step * np.arange(n), step)


def _refined_axis(centre: float, count: int, step: float) -> np.ndarray:
    return _snap(centre + step * (np.arange(count) - (count - 1) / 2), step)


def node_transform(node: GridNode, shape: tuple[int, int]) -> RigidTransform:
    h, w = shape
    return RigidTransform.about_center(node.theta, (w - 1) / 2, (h - 1) / 2, node.dx, node.dy)


def _split_shift(v: float) -> tuple[int, float]:
    whole = math.floor(v + 1e-9)
    return whole, round(v - whole, 9)


def _scan(fixed: np.ndarray, moving: np.ndarray, thetas, dxs, dys):
    """SSD of every node of a product grid.

    For each angle and sub-pixel shift remainder the moving image is resampled
    once on a canvas enlarged by the integer shift range; each node is then a
    crop of that canvas.
    """
    h, w = fixed.shape
    dx_parts = [_split_shift(v) for v in dxs]
    dy_parts = [_split_shift(v) for v in dys]
    results = []
    for theta in thetas:
        for fx in sorted({f for _, f in dx_parts}):
            ixs = [(i, v) for (i, f), v in zip(dx_parts, dxs) if f == fx]
            for fy in sorted({f for _, f in dy_parts}):
                iys = [(i, v) for (i, f), v in zip(dy_parts, dys) if f == fy]
                ix_lo, ix_hi = min(i for i, _ in ixs), max(i for i, _ in ixs)
                iy_lo, iy_hi = min(i for i, _ in iys), max(i for i, _ in iys)
                base = node_transform(GridNode(theta, fx, fy), (h, w))
                canvas = warp_image(moving, base,
                                    window=(-ix_hi, -iy_hi, w - ix_lo, h - iy_lo))
                for iy, vy in iys:
                    r0 = iy_hi - iy
                    for ix, vx in ixs:
                        c0 = ix_hi - ix
                        d = (canvas[r0:r0 + h, c0:c0 + w] - fixed).ravel()
                        results.append((float(np.dot(d, d)), GridNode(float(theta), float(vx), float(vy))))
    return results


def _best(results):
    return min(results, key=lambda r: (r[0],) + r[1].tie_key())


def grid_search_rigid(fixed: np.ndarray, moving: np.ndarray, grid: SearchGrid,
                      return_node: bool = False):
    """Rigid transform minimising ``ssd(fixed, warp_image(moving, T))`` over ``grid``.

    A coarse pass covers the grid; a second pass with the same node counts and
    steps divided by ``refine_factor`` is centred on the coarse winner.
    """
    fixed = np.asarray(fixed, dtype=float)
    moving = np.asarray(moving, dtype=float)
    if fixed.shape != moving.shape:
        raise InvalidArgument(f"shape mismatch {fixed.shape} vs {moving.shape}")
    axes = [axis_values(*a) for a in grid.axes()]
    coarse = _best(_scan(fixed, moving, *axes))
    best = coarse
    if grid.refine_factor > 1:
        steps = [a[2] / grid.refine_factor for a in grid.axes()]
        centre = (coarse[1].theta, coarse[1].dx, coarse[1].dy)
        fine_axes = [_refined_axis(c, len(a), s) for c, a, s in zip(centre, axes, steps)]
        best = _best(_scan(fixed, moving, *fine_axes) + [coarse])
    t = node_transform(best[1], fixed.shape)
    return (t, best[1], best[0]) if return_node else t


@dataclass
class WholeTissueResult:
    registered: list[np.ndarray]
    pair_transforms: list[RigidTransform]
    cumulative: list[RigidTransform]


def align_whole_tissue(stack: list[np.ndarray], ms_stack: list[LabelImage],
                       grid: SearchGrid | None = None, level: int = 2) -> WholeTissueResult:
    """Chain consecutive rigid alignments of Mumford-Shah renderings down a stack.

    Each pair is estimated on ``2**level`` downsampled renderings with the
    moving slice already carried by the previous cumulative transform; the
    full-resolution cumulative transform is then applied once to the cleaned
    slice.
    """
    if len(stack) != len(ms_stack):
        raise InvalidArgument(f"{len(stack)} slices but {len(ms_stack)} segmentations")
    if not stack:
        raise InvalidArgument("empty stack")
    s = 2 ** level
    renders = [build_pyramid(render_ms(lab), level)[level] for lab in ms_stack]
    if grid is None:
        h, w = renders[0].shape
        grid = SearchGrid.default(w, h)
    cumulative = [RigidTransform.identity()]
    pairs = []
    fixed = renders[0]
    for i in range(len(stack) - 1):
        carried = scale_transform(cumulative[i], 1 / s)
        moving = warp_image(renders[i + 1], carried)
        t_level = grid_search_rigid(fixed, moving, grid)
        pair = scale_transform(t_level, s)
        pairs.append(pair)
        cumulative.append(compose(pair, cumulative[i]))
        fixed = warp_image(renders[i + 1], scale_transform(cumulative[-1], 1 / s))
    registered = [np.asarray(stack[0], dtype=float).copy()]
    registered += [warp_image(img, t) for img, t in zip(stack[1:], cumulative[1:])]
    return WholeTissueResult(registered, pairs, cumulative)
