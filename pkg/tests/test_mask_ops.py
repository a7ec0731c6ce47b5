"""Mask geometry: resampling oracle, merging, boxes, IoU."""

import io

import numpy as np
import pytest

from textregion import (
    Box,
    SoftMask,
    box_iou,
    downsample_mask,
    load_mask_set,
    make_mask_set,
    mask_iou,
    mask_to_box,
    merge_masks,
    save_mask_set,
)
from textregion.mask_ops import EmptyRegionError, MaskDimensionError

from helpers import bilinear_oracle, quantized_soft


class TestDownsample:
    def test_constant_mask_stays_constant(self):
        for c in (0.0, 0.25, 1.0):
            mask = SoftMask(0, np.full((7, 5), c))
            for grid in ((1, 1), (3, 2), (7, 5)):
                out = downsample_mask(mask, grid)
                assert np.allclose(out.values, c)

    def test_half_split_4x4_to_2x2(self):
        values = np.zeros((4, 4))
        values[:, :2] = 1.0
        out = downsample_mask(SoftMask(0, values), (2, 2))
        expected = bilinear_oracle(values, 2, 2)
        assert np.array_equal(expected, [[1.0, 0.0], [1.0, 0.0]])
        assert np.allclose(out.values, expected)

    def test_all_zero_stays_zero(self):
        out = downsample_mask(SoftMask(0, np.zeros((6, 6))), (2, 3))
        assert not out.values.any()

    def test_zero_sized_grid_rejected(self):
        with pytest.raises(ValueError):
            downsample_mask(SoftMask(0, np.zeros((4, 4))), (0, 2))

    def test_matches_oracle_on_random_masks(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            height = int(rng.integers(1, 17))
            width = int(rng.integers(1, 17))
            out_h = int(rng.integers(1, height + 1))
            out_w = int(rng.integers(1, width + 1))
            values = rng.random(size=(height, width))
            out = downsample_mask(SoftMask(0, values), (out_h, out_w))
            assert np.abs(out.values - bilinear_oracle(values, out_h, out_w)).max() < 1e-6
            assert out.values.min() >= 0.0 and out.values.max() <= 1.0


def blob(height, width, rows, cols, value=1.0):
    values = np.zeros((height, width))
    values[np.ix_(rows, cols)] = value
    return values


class TestMerge:
    def test_identical_masks_merge_to_one(self):
        mask = SoftMask(0, blob(4, 4, range(2), range(2)))
        merged = merge_masks([mask, SoftMask(1, mask.values.copy())], 0.8)
        assert len(merged) == 1

    def test_disjoint_masks_both_kept(self):
        a = SoftMask(0, blob(4, 4, range(2), range(2)))
        b = SoftMask(1, blob(4, 4, range(2, 4), range(2, 4)))
        assert len(merge_masks([a, b], 0.8)) == 2

    def test_high_overlap_pair_merges_to_union_support(self):
        # |a| = 9, b = a plus one extra pixel: intersection 9, union 10
        a = np.zeros((10, 10))
        a.reshape(-1)[:9] = 1.0
        b = a.copy()
        b.reshape(-1)[9] = 1.0
        assert mask_iou(SoftMask(0, a), SoftMask(1, b)) == pytest.approx(0.9)
        merged = merge_masks([SoftMask(0, a), SoftMask(1, b)], 0.8)
        assert len(merged) == 1
        assert int((merged[0].values >= 0.5).sum()) == 10
        assert np.array_equal(merged[0].values >= 0.5, (a + b) > 0)

    def test_merge_is_idempotent(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            masks = []
            for r in range(int(rng.integers(1, 6))):
                y0 = int(rng.integers(0, 6))
                x0 = int(rng.integers(0, 6))
                h = int(rng.integers(1, 5))
                w = int(rng.integers(1, 5))
                masks.append(SoftMask(r, blob(10, 10, range(y0, min(10, y0 + h)),
                                              range(x0, min(10, x0 + w)))))
            once = merge_masks(masks, 0.8)
            twice = merge_masks(once, 0.8)
            assert len(once) == len(twice)
            for m, n in zip(once, twice):
                assert np.array_equal(m.values, n.values)

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            merge_masks([], 0.0)
        assert merge_masks([], 0.8) == []


class TestMaskToBox:
    def test_single_pixel(self):
        values = np.zeros((8, 8))
        values[3, 4] = 1.0
        assert mask_to_box(SoftMask(0, values)) == Box(4, 3, 4, 3)

    def test_full_image(self):
        assert mask_to_box(SoftMask(0, np.ones((6, 9)))) == Box(0, 0, 8, 5)

    def test_two_blobs_spanned(self):
        values = np.zeros((10, 10))
        values[1, 2] = 1.0
        values[7, 8] = 0.9
        values[4, 4] = 0.2  # below threshold, ignored
        box = mask_to_box(SoftMask(0, values))
        support = np.argwhere(values >= 0.5)
        assert box == Box(
            int(support[:, 1].min()),
            int(support[:, 0].min()),
            int(support[:, 1].max()),
            int(support[:, 0].max()),
        )
        assert box == Box(2, 1, 8, 7)

    def test_empty_support_raises(self):
        with pytest.raises(EmptyRegionError):
            mask_to_box(SoftMask(0, np.full((4, 4), 0.2)))


def pixel_set(box):
    return {
        (x, y)
        for x in range(box.x0, box.x1 + 1)
        for y in range(box.y0, box.y1 + 1)
    }


class TestBoxIou:
    def test_identical(self):
        assert box_iou(Box(1, 2, 5, 6), Box(1, 2, 5, 6)) == 1.0

    def test_disjoint(self):
        assert box_iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0

    def test_matches_pixel_count_oracle(self):
        a = Box(0, 0, 1, 1)
        b = Box(1, 0, 2, 1)
        sa, sb = pixel_set(a), pixel_set(b)
        assert len(sa & sb) == 2 and len(sa | sb) == 6
        assert box_iou(a, b) == pytest.approx(1 / 3)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x0, y0, x1, y1 = rng.integers(0, 8, 4)
            u0, v0, u1, v1 = rng.integers(0, 8, 4)
            a = Box(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
            b = Box(min(u0, u1), min(v0, v1), max(u0, u1), max(v0, v1))
            iou = box_iou(a, b)
            assert iou == box_iou(b, a)
            assert 0.0 <= iou <= 1.0
            sa, sb = pixel_set(a), pixel_set(b)
            assert iou == pytest.approx(len(sa & sb) / len(sa | sb))


class TestMaskIou:
    def test_equal_nonempty(self):
        values = blob(4, 4, range(2), range(3))
        assert mask_iou(SoftMask(0, values), SoftMask(1, values.copy())) == 1.0

    def test_one_empty(self):
        assert mask_iou(SoftMask(0, blob(4, 4, [0], [0])), SoftMask(1, np.zeros((4, 4)))) == 0.0

    def test_both_empty(self):
        assert mask_iou(SoftMask(0, np.zeros((4, 4))), SoftMask(1, np.zeros((4, 4)))) == 1.0

    def test_half_overlap_pixel_enumeration(self):
        a = SoftMask(0, blob(2, 4, range(2), range(2)))
        b = SoftMask(1, blob(2, 4, range(2), range(1, 3)))
        sa = {tuple(p) for p in np.argwhere(a.values >= 0.5)}
        sb = {tuple(p) for p in np.argwhere(b.values >= 0.5)}
        assert len(sa & sb) == 2 and len(sa | sb) == 6
        assert mask_iou(a, b) == pytest.approx(1 / 3)

    def test_dimension_mismatch(self):
        with pytest.raises(MaskDimensionError):
            mask_iou(SoftMask(0, np.zeros((2, 2))), SoftMask(1, np.zeros((3, 3))))

    def test_symmetric(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            a = SoftMask(0, quantized_soft(rng, (5, 5)))
            b = SoftMask(1, quantized_soft(rng, (5, 5)))
            assert mask_iou(a, b) == mask_iou(b, a)


def test_box_from_rle_round_trip_matches_runs():
    """Box from a round-tripped mask equals the box computed from RLE runs."""
    rng = np.random.default_rng(77)
    for _ in range(20):
        values = (rng.random(size=(12, 9)) > 0.6).astype(np.float32)
        if not values.any():
            values[3, 3] = 1.0
        mask_set = make_mask_set([SoftMask(0, values)])
        buf = io.BytesIO()
        save_mask_set(mask_set, buf)
        loaded = load_mask_set(buf.getvalue())

        # box straight from the decoded runs
        support = loaded.supports[0]
        ys, xs = np.nonzero(support)
        from_runs = Box(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        assert mask_to_box(loaded.masks[0]) == from_runs
