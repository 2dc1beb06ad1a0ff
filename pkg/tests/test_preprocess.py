import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from oracles import dense_blur
from vesselreg.core import InvalidArgument
from vesselreg.preprocess import (BlankSlide, Contour, PreprocessConfig, clean_tissue, dilate,
                                  disk, erode, find_contours, gaussian_blur, gaussian_kernel,
                                  hull_mask, morph_close_open, select_tissue_contours,
                                  threshold_mean, to_grayscale)


def flood_components(mask):
    """Component sizes by an explicit 8-connected flood fill."""
    seen = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    sizes = []
    for y0, x0 in zip(*np.nonzero(mask)):
        if seen[y0, x0]:
            continue
        stack, n = [(y0, x0)], 0
        seen[y0, x0] = True
        while stack:
            y, x = stack.pop()
            n += 1
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                        seen[yy, xx] = True
                        stack.append((yy, xx))
        sizes.append(n)
    return sorted(sizes)


def square(shape, x0, y0, size):
    m = np.zeros(shape, dtype=bool)
    m[y0:y0 + size, x0:x0 + size] = True
    return m


masks = arrays(bool, st.tuples(st.integers(4, 24), st.integers(4, 24)))


class TestGrayscale:
    @pytest.mark.parametrize("rgb,gray", [((255, 255, 255), 255), ((0, 0, 0), 0),
                                          ((100, 150, 200), 141)])
    def test_weights(self, rgb, gray):
        assert to_grayscale(np.array([[rgb]], dtype=float))[0, 0] == gray

    def test_rejects_gray(self):
        with pytest.raises(InvalidArgument):
            to_grayscale(np.zeros((4, 4)))


class TestBlur:
    def test_constant_preserved(self):
        out = gaussian_blur(np.full((30, 40), 123.0), 3)
        assert np.allclose(out, 123.0, atol=1e-9)

    def test_impulse_center(self):
        img = np.zeros((41, 41))
        img[20, 20] = 1.0
        k = gaussian_kernel(2.5)
        assert math.isclose(gaussian_blur(img, 2.5)[20, 20], k[len(k) // 2] ** 2, rel_tol=1e-12)

    def test_matches_dense_oracle(self, rng):
        img = rng.uniform(0, 255, (64, 64))
        assert np.max(np.abs(gaussian_blur(img, 2) - dense_blur(img, 2, gaussian_kernel(2)))) < 1e-6

    @pytest.mark.parametrize("sigma", [0, -1])
    def test_sigma_must_be_positive(self, sigma):
        with pytest.raises(InvalidArgument):
            gaussian_blur(np.zeros((5, 5)), sigma)


class TestThreshold:
    def test_uniform_is_empty(self):
        assert not threshold_mean(np.full((8, 8), 50.0)).any()

    def test_two_halves(self):
        img = np.zeros((6, 6))
        img[:, 3:] = 200
        m = threshold_mean(img)
        assert m[:, :3].all() and not m[:, 3:].any()

    def test_matches_per_pixel_check(self, rng):
        img = rng.uniform(0, 255, (16, 16))
        mean = sum(img.ravel()) / img.size
        expect = np.array([[v < mean for v in row] for row in img])
        assert np.array_equal(threshold_mean(img), expect)

    @given(st.integers(0, 2 ** 31), st.integers(0, 31), st.integers(0, 31), st.floats(1, 100))
    @settings(max_examples=40, deadline=None)
    def test_brightening_a_background_pixel(self, seed, y, x, bump):
        img = np.random.default_rng(seed).uniform(0, 255, (32, 32))
        blur0 = gaussian_blur(img, 2)
        before = threshold_mean(blur0)
        if before[y, x]:
            return
        brighter = img.copy()
        brighter[y, x] = min(255.0, brighter[y, x] + bump)
        blur1 = gaussian_blur(brighter, 2)
        # at a fixed threshold the blur is monotone, so foreground can only shrink
        assert np.all(blur1 >= blur0 - 1e-9)
        assert not np.any((blur1 < blur0.mean()) & ~before)
        # the mean moves up too; only pixels caught between old and new mean can join
        after = threshold_mean(blur1)
        gained = after & ~before
        assert np.all((blur1[gained] >= blur0.mean()) & (blur1[gained] < blur1.mean()))


class TestMorphology:
    def test_disk_shape(self):
        d = disk(2)
        assert d.shape == (5, 5) and d.sum() == 13

    def test_dilate_matches_structuring_element(self):
        m = np.zeros((31, 31), dtype=bool)
        m[15, 15] = True
        out = dilate(m, 5)
        assert np.array_equal(out[10:21, 10:21], disk(5)) and out.sum() == disk(5).sum()

    def test_full_mask_unchanged(self):
        m = np.ones((30, 30), dtype=bool)
        assert morph_close_open(m, 20).all()

    def test_single_pixel_removed(self):
        m = np.zeros((60, 60), dtype=bool)
        m[30, 30] = True
        assert not morph_close_open(m, 20).any()

    def test_close_bridges_gap(self):
        m = np.zeros((200, 260), dtype=bool)
        m[60:140, 30:120] = True
        m[60:140, 130:220] = True
        out = morph_close_open(m, 20)
        assert len(flood_components(m)) == 2
        assert len(flood_components(out)) == 1

    def test_radius_must_be_positive(self):
        with pytest.raises(InvalidArgument):
            morph_close_open(np.zeros((4, 4), bool), 0)

    @given(masks, st.integers(1, 3))
    @settings(max_examples=60, deadline=None)
    def test_close_open_idempotent(self, m, r):
        once = morph_close_open(m, r)
        assert np.array_equal(morph_close_open(once, r), once)

    @given(arrays(bool, (14, 14)), arrays(bool, (14, 14)), st.integers(1, 3))
    @settings(max_examples=60, deadline=None)
    def test_erosion_dilation_adjunction(self, a, b, r):
        assert np.all(erode(a, r) <= a) and np.all(a <= dilate(a, r))
        assert np.all(dilate(a, r) <= b) == np.all(a <= erode(b, r))

    @given(masks, st.integers(1, 3))
    @settings(max_examples=60, deadline=None)
    def test_matches_scipy_away_from_border(self, m, r):
        # scipy pads with background for both operations; agree where the border is irrelevant
        padded = np.pad(m, 2 * r + 2)
        ref = ndimage.binary_dilation(padded, disk(r))
        assert np.array_equal(dilate(padded, r), ref)


class TestContours:
    def test_empty(self):
        assert find_contours(np.zeros((10, 10), bool)) == []

    def test_square(self):
        (c,) = find_contours(square((30, 30), 5, 8, 10))
        assert c.area == 100
        assert np.allclose(c.centroid, (9.5, 12.5))
        assert len(c.points) >= 3
        # traced around pixel centres at the 0.5 level
        assert c.points[:, 0].min() >= 4.5 and c.points[:, 0].max() <= 14.5

    def test_two_squares_match_flood_fill(self):
        m = square((40, 40), 2, 2, 6) | square((40, 40), 20, 15, 9)
        areas = sorted(c.area for c in find_contours(m))
        assert areas == flood_components(m)

    @given(masks)
    @settings(max_examples=40, deadline=None)
    def test_areas_cover_components(self, m):
        cs = find_contours(m)
        assert len(cs) == len(flood_components(m))
        assert all(c.area > 0 and len(c.points) >= 1 for c in cs)


class TestSelection:
    def test_single(self):
        c = Contour(np.zeros((3, 2)), 10.0, (3.0, 3.0))
        assert select_tissue_contours([c], (50, 50)) == [c]

    def test_blob_beats_corner_speck(self):
        m = np.zeros((200, 200), dtype=bool)
        yy, xx = np.mgrid[:200, :200]
        m |= (xx - 100) ** 2 + (yy - 100) ** 2 <= 50 ** 2
        m |= square((200, 200), 2, 2, 4)
        kept = select_tissue_contours(find_contours(m), m.shape)
        assert len(kept) == 1 and kept[0].area > 1000

    def test_equal_central_blobs_both_kept(self):
        m = square((200, 200), 50, 80, 40) | square((200, 200), 110, 80, 40)
        assert len(select_tissue_contours(find_contours(m), m.shape)) == 2

    def test_empty(self):
        assert select_tissue_contours([], (10, 10)) == []


class TestHull:
    @given(st.lists(st.tuples(st.floats(0, 40), st.floats(0, 40)), min_size=3, max_size=12))
    @settings(max_examples=50, deadline=None)
    def test_contains_integer_points(self, pts):
        pts = np.round(np.array(pts))
        inside = hull_mask(pts, (41, 41))
        xs, ys = pts[:, 0].astype(int), pts[:, 1].astype(int)
        assert inside[ys, xs].all()


def disk_slide(n=256, speck=True):
    img = np.full((n, n), 255.0)
    yy, xx = np.mgrid[:n, :n]
    rng = np.random.default_rng(3)
    tissue = (xx - n / 2) ** 2 + (yy - n / 2) ** 2 <= (0.3 * n) ** 2
    img[tissue] = rng.uniform(60, 140, tissue.sum())
    if speck:
        img[4:20, 4:20] = 30.0
    return img, tissue


class TestClean:
    def test_speck_whitened_and_disk_intact(self):
        img, tissue = disk_slide()
        out = clean_tissue(img)
        assert np.all(out[4:20, 4:20] == 255)
        assert np.array_equal(out[tissue], img[tissue])

    def test_never_modifies_inside_hull(self):
        img, _ = disk_slide()
        out = clean_tissue(img)
        changed = out != img
        assert np.all(out[changed] == 255)
        # every altered pixel was outside the kept region: the disk's hull
        assert not changed[96:160, 96:160].any()

    def test_whole_frame_tissue(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(60, 140, (96, 96))
        img[30:60, 30:60] = 20  # dark centre keeps the threshold inside the tissue
        out = clean_tissue(img, PreprocessConfig(sigma=3, morph_radius=5))
        assert np.array_equal(out[30:60, 30:60], img[30:60, 30:60])

    def test_blank_slide(self):
        with pytest.raises(BlankSlide):
            clean_tissue(np.full((64, 64), 255.0))
