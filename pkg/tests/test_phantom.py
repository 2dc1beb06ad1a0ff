import math

import numpy as np
import pytest

from vesselreg.core import warp_mask
from vesselreg.evaluate import similarity_index
from vesselreg.phantom import InvalidSpec, PhantomSpec, generate

SMALL = dict(slices=4, size=256, vessel_axes=(25.0, 18.0), distractor_radius=28.0,
             distractor_warp=6.0, texture_scales=(1.5, 3.0, 6.0), shift_max=10.0)


@pytest.fixture(scope="module")
def small():
    return generate(PhantomSpec(**SMALL))


def test_shapes_and_types(small):
    assert len(small.slices) == len(small.lumen_masks) == len(small.truth) == 4
    assert small.slices[0].shape == (256, 256, 3) and small.slices[0].dtype == np.uint8
    assert small.lumen_masks[0].dtype == bool and small.lumen_masks[0].any()
    assert len(small.distractor_centers) == 3


def test_deterministic(small):
    again = generate(PhantomSpec(**SMALL))
    assert all(np.array_equal(a, b) for a, b in zip(small.slices, again.slices))
    assert small.truth == again.truth


def test_no_perturbation_no_distractors():
    spec = PhantomSpec(**{**SMALL, "theta_max_deg": 0.0, "shift_max": 0.0, "distractors": 0,
                          "vessel_drift": (0.0, 0.0), "slice_noise": 0.0, "artifact_stains": 0})
    ph = generate(spec)
    assert all(t.is_identity(0) for t in ph.truth)
    # stain gain still varies per slice, so compare geometry through the masks
    assert all(np.array_equal(m, ph.lumen_masks[0]) for m in ph.lumen_masks)


def test_truth_consistent_with_masks(small):
    canon = [warp_mask(m, t.inverse()) for m, t in zip(small.lumen_masks, small.truth)]
    for a, b in zip(canon, canon[1:]):
        assert similarity_index(a, b) >= 0.98


def test_distractors_clear_of_vessel_and_roi(small):
    spec = small.spec
    a = max(spec.vessel_axes)
    for cx, cy in small.distractor_centers:
        for i in range(spec.slices):
            vx, vy = spec.vessel_at(i)
            assert math.dist((cx, cy), (vx, vy)) - spec.distractor_radius >= 2 * a
            # the patch disk does not touch the ROI box around the vessel
            roi = spec.roi()
            nx = min(max(cx, roi.x0 + vx - roi.cx), roi.x1 + vx - roi.cx)
            ny = min(max(cy, roi.y0 + vy - roi.cy), roi.y1 + vy - roi.cy)
            assert math.dist((cx, cy), (nx, ny)) > spec.distractor_radius


def test_raw_pairs_hard_enough():
    ph = generate(PhantomSpec(slices=6, size=512, vessel_axes=(50.0, 35.0), distractor_radius=55.0,
                              distractor_warp=10.0, shift_max=22.0, seed=3))
    scores = [similarity_index(a, b) for a, b in zip(ph.lumen_masks, ph.lumen_masks[1:])]
    assert np.mean(scores) < 0.8


@pytest.mark.parametrize("bad", [dict(theta_max_deg=16.0), dict(shift_max=100.0),
                                 dict(slices=0), dict(distractors=-1)])
def test_invalid_spec(bad):
    with pytest.raises(InvalidSpec):
        generate(PhantomSpec(**{**SMALL, **bad}))


def test_distractors_that_cannot_fit():
    with pytest.raises(InvalidSpec):
        generate(PhantomSpec(**{**SMALL, "distractors": 3, "distractor_radius": 90.0}))


def test_dict_round_trip():
    spec = PhantomSpec(**SMALL)
    assert PhantomSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(InvalidSpec):
        PhantomSpec.from_dict({"nope": 1})
