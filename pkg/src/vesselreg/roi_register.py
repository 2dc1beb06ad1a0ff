"""Coarse-to-fine rigid registration of a region of interest down a slice stack.

At each pyramid level, from coarsest to finest, SIFT matches inside the
level's ROI propose rigid transforms (one per triple of matches, up to 56 for
eight matches); the proposal with the smallest ROI sum of squared differences
wins. Level results are scaled to full resolution and composed, and every
slice is resampled exactly once from its input.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (RigidTransform, RoiBox, build_pyramid, compose, roi_for_level,
                   scale_transform, ssd, warp_image)
from .sift import Feature, RoiTooSmall, SiftConfig, detect_and_describe, match_features

MIN_TRIANGLE_AREA = 2.0


class DegenerateCorrespondence(ValueError):
    """Source points coincide, so no rotation can be estimated."""


def rigid_from_correspondences(src, dst) -> RigidTransform:
    """Least-squares rotation and translation (no scale) taking ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if src.shape != dst.shape or len(src) < 2:
        raise ValueError("need matching arrays of at least two points")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - cd
    if np.sum(a * a) < 1e-12:
        raise DegenerateCorrespondence("source points are coincident")
    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    dot = float(np.sum(a * b))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    return RigidTransform(theta, cd[0] - (c * cs[0] - s * cs[1]), cd[1] - (s * cs[0] + c * cs[1]))


def triangle_area(p) -> float:
    p = np.asarray(p, dtype=float)
    return 0.5 * abs((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
                     - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))


@dataclass
class LevelResult:
    level: int
    transform: RigidTransform
    candidate_count: int
    chosen_ssd: float
    fallback: bool
    # evaluated hypotheses in level-frame coordinates, identity first
    candidates: list[RigidTransform] = field(default_factory=list, repr=False)
    candidate_ssd: list[float] = field(default_factory=list, repr=False)
    matches: list[tuple[tuple[float, float], tuple[float, float], float]] = field(
        default_factory=list, repr=False)
    chosen_triple: tuple[int, int, int] | None = None

    def as_dict(self) -> dict:
        return {"level": self.level, **self.transform.as_dict(),
                "candidates": self.candidate_count, "ssd": self.chosen_ssd,
                "fallback": self.fallback}


def _features(img: np.ndarray, roi: RoiBox, carried: RigidTransform, cfg: SiftConfig
              ) -> tuple[list[Feature], tuple[int, int, int, int]]:
    win = roi.window()
    crop = warp_image(img, carried, window=win)
    full = RoiBox.from_bounds(0, 0, crop.shape[1], crop.shape[0])
    return detect_and_describe(crop, full, cfg), win


def register_level(fixed: np.ndarray, moving: np.ndarray, roi: RoiBox,
                   sift_cfg: SiftConfig = SiftConfig(),
                   carried: RigidTransform = RigidTransform()) -> LevelResult:
    """Best rigid correction of ``warp(moving, carried)`` onto ``fixed`` inside ``roi``.

    The returned transform is the correction only; candidates are scored by
    resampling ``moving`` once with ``correction @ carried``.
    """
    level = -1
    win = roi.window()
    x0, y0, x1, y1 = win
    ref = np.asarray(fixed, dtype=float)[y0:y1, x0:x1]

    def score(t: RigidTransform) -> float:
        return ssd(ref, warp_image(moving, compose(t, carried), window=win))

    identity = RigidTransform.identity()
    base_ssd = score(identity)
    candidates, scores = [identity], [base_ssd]
    try:
        fa, _ = _features(fixed, roi, RigidTransform.identity(), sift_cfg)
        fb, _ = _features(moving, roi, carried, sift_cfg)
    except RoiTooSmall:
        return LevelResult(level, identity, 1, base_ssd, True, candidates, scores)

    matches = match_features(fb, fa, sift_cfg)
    src = np.array([[fb[m.index_a].keypoint.x + x0, fb[m.index_a].keypoint.y + y0]
                    for m in matches]).reshape(-1, 2)
    dst = np.array([[fa[m.index_b].keypoint.x + x0, fa[m.index_b].keypoint.y + y0]
                    for m in matches]).reshape(-1, 2)
    described = [((float(s[0]), float(s[1])), (float(d[0]), float(d[1])), m.distance)
                 for s, d, m in zip(src, dst, matches)]

    triples = []
    for triple in itertools.combinations(range(len(matches)), 3):
        idx = list(triple)
        if triangle_area(src[idx]) < MIN_TRIANGLE_AREA:
            continue
        try:
            t = rigid_from_correspondences(src[idx], dst[idx])
        except DegenerateCorrespondence:
            continue
        triples.append(triple)
        candidates.append(t)
        scores.append(score(t))

    if not triples:
        return LevelResult(level, identity, len(candidates), base_ssd, True,
                           candidates, scores, described)
    best = int(np.argmin(scores))
    return LevelResult(level, candidates[best], len(candidates), scores[best], False,
                       candidates, scores, described,
                       triples[best - 1] if best > 0 else None)


def register_pair(fixed: np.ndarray, moving: np.ndarray, roi0: RoiBox, k: int = 3,
                  sift_cfg: SiftConfig = SiftConfig()
                  ) -> tuple[RigidTransform, list[LevelResult]]:
    """Cascade from level ``k`` to 0; returns the full-resolution transform and per-level results."""
    pf = build_pyramid(fixed, k)
    pm = build_pyramid(moving, k)
    acc = RigidTransform.identity()
    results = []
    for r in range(k, -1, -1):
        s = 2 ** r
        roi = roi_for_level(roi0, r, pf[r].shape)
        res = register_level(pf[r], pm[r], roi, sift_cfg, carried=scale_transform(acc, 1 / s))
        res.level = r
        acc = compose(scale_transform(res.transform, s), acc)
        results.append(res)
    return acc, results


@dataclass
class RegistrationChain:
    cumulative: list[RigidTransform]
    pairwise: list[RigidTransform]
    levels: list[list[LevelResult]]
    config: dict = field(default_factory=dict)

    def fallback_pairs(self) -> list[int]:
        """Indices ``i`` of pairs ``(i, i + 1)`` where some level fell back to identity."""
        return [i for i, lv in enumerate(self.levels) if any(r.fallback for r in lv)]

    def to_json(self) -> dict:
        slices = []
        for i, cum in enumerate(self.cumulative):
            levels = self.levels[i - 1] if i > 0 else []
            slices.append({"index": i, "cumulative": cum.as_dict(),
                           "levels": [r.as_dict() for r in levels]})
        return {"slices": slices, "config": self.config}

    @classmethod
    def from_json(cls, data: dict) -> "RegistrationChain":
        slices = sorted(data["slices"], key=lambda s: s["index"])
        cumulative = [RigidTransform(**s["cumulative"]) for s in slices]
        levels = []
        for s in slices[1:]:
            levels.append([LevelResult(lv["level"], RigidTransform(lv["theta"], lv["dx"], lv["dy"]),
                                       lv["candidates"], lv["ssd"], lv["fallback"])
                           for lv in s["levels"]])
        pairwise = [compose(b, a.inverse()) for a, b in zip(cumulative, cumulative[1:])]
        return cls(cumulative, pairwise, levels, data.get("config", {}))


def register_stack(stack: list[np.ndarray], roi0: RoiBox, k: int = 3,
                   sift_cfg: SiftConfig = SiftConfig()
                   ) -> tuple[RegistrationChain, list[np.ndarray]]:
    """Register each input slice against the previously registered one.

    Returns the chain and the registered slices, each produced by a single
    warp of its input with the cumulative transform.
    """
    if len(stack) < 2:
        raise ValueError("need at least two slices")
    cumulative = [RigidTransform.identity()]
    registered = [np.asarray(stack[0], dtype=float).copy()]
    pairwise, levels = [], []
    for i in range(len(stack) - 1):
        f_star, results = register_pair(registered[i], stack[i + 1], roi0, k, sift_cfg)
        cumulative.append(f_star)
        pairwise.append(compose(f_star, cumulative[i].inverse()))
        levels.append(results)
        registered.append(warp_image(stack[i + 1], f_star))
    config = {"levels": k, "roi": roi0.as_list(), "sift": asdict(sift_cfg)}
    return RegistrationChain(cumulative, pairwise, levels, config), registered
