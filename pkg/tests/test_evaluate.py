import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vesselreg.core import InvalidArgument, RigidTransform, warp_mask
from vesselreg.evaluate import UndefinedSimilarity, evaluate_chain, similarity_index
from vesselreg.roi_register import LevelResult, RegistrationChain

masks = arrays(bool, (12, 12))


def disk(n, cx, cy, r):
    yy, xx = np.mgrid[:n, :n]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def chain_of(transforms, fallbacks=None):
    fallbacks = fallbacks or [False] * (len(transforms) - 1)
    levels = [[LevelResult(0, RigidTransform(), 2, 0.0, fb)] for fb in fallbacks]
    pairwise = [t for t in transforms[1:]]
    return RegistrationChain(list(transforms), pairwise, levels)


class TestSimilarity:
    def test_identical(self):
        m = disk(20, 10, 10, 4)
        assert similarity_index(m, m) == 1.0

    def test_disjoint(self):
        assert similarity_index(disk(30, 5, 5, 3), disk(30, 24, 24, 3)) == 0.0

    def test_half_overlap(self):
        a = np.zeros((10, 20), bool)
        b = np.zeros((10, 20), bool)
        a[:, :10] = True
        b[:, 5:15] = True
        assert a.sum() == b.sum() == 100 and (a & b).sum() == 50
        assert similarity_index(a, b) == 0.5

    def test_both_empty(self):
        with pytest.raises(UndefinedSimilarity):
            similarity_index(np.zeros((3, 3), bool), np.zeros((3, 3), bool))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            similarity_index(np.ones((3, 3), bool), np.ones((3, 4), bool))

    @given(masks, masks)
    def test_symmetric_and_bounded(self, a, b):
        if not (a.any() or b.any()):
            return
        s = similarity_index(a, b)
        assert s == similarity_index(b, a) and 0 <= s <= 1

    @given(masks)
    def test_self_is_one(self, a):
        if a.any():
            assert similarity_index(a, a) == 1.0

    @given(masks, masks, st.integers(-5, 5), st.integers(-5, 5))
    def test_translation_invariant_away_from_border(self, a, b, dx, dy):
        if not (a.any() or b.any()):
            return
        pa, pb = np.pad(a, 6), np.pad(b, 6)
        shift = lambda m: np.roll(np.roll(m, dy, axis=0), dx, axis=1)
        assert similarity_index(shift(pa), shift(pb)) == similarity_index(pa, pb)

    @given(st.floats(-math.pi, math.pi), st.floats(-20, 20), st.floats(-20, 20),
           st.floats(-15, 15), st.floats(-15, 15))
    @settings(max_examples=30, deadline=None)
    def test_common_warp_changes_little(self, theta, dx, dy, ox, oy):
        a, b = disk(256, 128, 128, 60), disk(256, 128 + ox, 128 + oy, 60)
        t = RigidTransform.about_center(theta, 127.5, 127.5, dx, dy)
        before = similarity_index(a, b)
        after = similarity_index(warp_mask(a, t), warp_mask(b, t))
        assert abs(after - before) <= 0.02


class TestChain:
    def test_identity_chain_identical_masks(self):
        m = disk(32, 16, 16, 6)
        rep = evaluate_chain([m] * 4, chain_of([RigidTransform()] * 4))
        assert [p.similarity for p in rep.pairs] == [1.0] * 3
        assert rep.mean == 1.0 and rep.std == 0.0

    def test_statistics_oracle(self, rng):
        ms = [disk(40, 20 + rng.uniform(-4, 4), 20 + rng.uniform(-4, 4), 8) for _ in range(6)]
        rep = evaluate_chain(ms, chain_of([RigidTransform()] * 6))
        vals = [p.similarity for p in rep.pairs]
        n = len(vals)
        mean = sum(vals) / n
        var = sum((v - mean) ** 2 for v in vals) / n
        assert rep.mean == pytest.approx(mean, abs=1e-15)
        assert rep.std == pytest.approx(math.sqrt(var), abs=1e-15)
        assert rep.to_json()["std_kind"] == "population"

    def test_transforms_applied_to_masks(self):
        m0 = disk(40, 20, 20, 6)
        m1 = warp_mask(m0, RigidTransform(0, 5, -3))
        raw = evaluate_chain([m0, m1], chain_of([RigidTransform()] * 2))
        fixed = evaluate_chain([m0, m1], chain_of([RigidTransform(), RigidTransform(0, -5, 3)]))
        assert fixed.pairs[0].similarity == 1.0 > raw.pairs[0].similarity

    def test_window_pairs(self):
        m = disk(32, 16, 16, 6)
        rep = evaluate_chain([m] * 5, chain_of([RigidTransform()] * 5), window=2)
        assert [(p.i, p.j) for p in rep.pairs] == [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3),
                                                    (2, 4), (3, 4)]

    def test_fallback_correlation(self):
        ms = [disk(40, 20, 20, 6), disk(40, 20, 20, 6), disk(40, 23, 20, 6)]
        rep = evaluate_chain(ms, chain_of([RigidTransform()] * 3, [False, True]))
        assert rep.fallback_pairs == [1]
        assert [p.fallback for p in rep.pairs] == [False, True]
        assert rep.mean_clean == 1.0 and rep.mean_fallback == rep.pairs[1].similarity

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgument):
            evaluate_chain([disk(8, 4, 4, 2)] * 2, chain_of([RigidTransform()] * 3))

    def test_bad_window(self):
        with pytest.raises(InvalidArgument):
            evaluate_chain([disk(8, 4, 4, 2)] * 2, chain_of([RigidTransform()] * 2), window=0)
