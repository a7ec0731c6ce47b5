"""Engine core: crop planning, fusion, global-patch filtering, pooling."""

import numpy as np
import pytest

from textregion import (
    EngineConfig,
    HeadSpec,
    LinearLayer,
    PatchFeatures,
    PatchMask,
    filter_global,
    fuse_multires,
    local_similarity,
    plan_crops,
    pool_regions,
    pool_regions_delegate,
)
from textregion.region_engine import GridMismatchError

from helpers import random_head


class TestPlanCrops:
    def test_exact_division(self):
        layout = plan_crops((672, 672), 336)
        assert layout.grid == (2, 2)
        assert layout.resized_image == (672, 672)

    def test_rounding(self):
        layout = plan_crops((896, 1344), 336)
        assert layout.grid == (3, 4)
        assert layout.resized_image == (1008, 1344)

    def test_clamped_to_one(self):
        layout = plan_crops((100, 100), 336)
        assert layout.grid == (1, 1)
        assert layout.resized_image == (336, 336)


def constant_features(grid, vector):
    h, w = grid
    return PatchFeatures(np.tile(np.asarray(vector, dtype=np.float64), (h * w, 1)), grid)


class TestFuseMultires:
    def test_zero_high_constant_low(self):
        layout = plan_crops((672, 672), 336)
        low = constant_features((4, 4), [1.0, -2.0, 3.0])
        high = constant_features((8, 8), [0.0, 0.0, 0.0])
        fused = fuse_multires(low, high, layout, 1.0)
        assert np.allclose(fused.features, [1.0, -2.0, 3.0])

    def test_delegate_weight_half(self):
        layout = plan_crops((672, 672), 336)
        low = constant_features((4, 4), [2.0, 4.0])
        high = constant_features((8, 8), [1.0, 1.0])
        fused = fuse_multires(low, high, layout, 0.5)
        assert np.allclose(fused.features, [1.0 + 0.5 * 2.0, 1.0 + 0.5 * 4.0])

    def test_output_grid_shape(self):
        layout = plan_crops((448, 448), 224)
        rng = np.random.default_rng(0)
        low = PatchFeatures(rng.normal(size=(14 * 14, 6)), (14, 14))
        high = PatchFeatures(rng.normal(size=(28 * 28, 6)), (28, 28))
        fused = fuse_multires(low, high, layout, 1.0)
        assert fused.grid == (28, 28)
        assert fused.features.shape == (28 * 28, 6)

    def test_zero_weight_keeps_high_exactly(self):
        layout = plan_crops((448, 448), 224)
        rng = np.random.default_rng(1)
        low = PatchFeatures(rng.normal(size=(9, 3)), (3, 3))
        high = PatchFeatures(rng.normal(size=(36, 3)), (6, 6))
        fused = fuse_multires(low, high, layout, 0.0)
        assert np.array_equal(fused.features, high.features)

    def test_incompatible_grids_rejected(self):
        layout = plan_crops((672, 672), 336)  # 2x2 crops
        low = constant_features((4, 4), [1.0])
        high = constant_features((5, 5), [1.0])  # not divisible by 2
        with pytest.raises(GridMismatchError):
            fuse_multires(low, high, layout, 1.0)


def masks_from_rows(grid, rows_per_region):
    """One patch mask per region, covering the given flat indices."""
    h, w = grid
    masks = []
    for region_id, (indices, weight) in enumerate(rows_per_region):
        values = np.zeros(h * w)
        values[list(indices)] = weight
        masks.append(PatchMask(region_id, values.reshape(h, w)))
    return masks


class TestLocalSimilarity:
    def test_identical_features_zero_local_score(self):
        feats = constant_features((2, 2), [1.0, 2.0])
        masks = masks_from_rows((2, 2), [([0, 1], 1.0)])
        report = local_similarity(feats, masks)
        assert np.allclose(report.s_in, 1.0)
        assert np.allclose(report.s_out, 1.0)
        assert np.allclose(report.s_local, 0.0)

    def test_orthogonal_inside_outside(self):
        features = np.array(
            [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
        )
        feats = PatchFeatures(features, (2, 2))
        masks = masks_from_rows((2, 2), [([0, 1], 1.0)])
        report = local_similarity(feats, masks)
        row = np.flatnonzero(report.patch_index == 0)[0]
        assert report.s_in[row] == pytest.approx(1.0)
        assert report.s_out[row] == pytest.approx(0.0)
        assert report.s_local[row] == pytest.approx(1.0)

    def test_flagging_threshold_is_strict_less_than(self):
        report_like = local_similarity(
            constant_features((2, 2), [1.0]), masks_from_rows((2, 2), [([0, 1, 2, 3], 1.0)])
        )
        # covering every patch: s_out = 0, s_local = s_in = 1
        assert np.allclose(report_like.s_out, 0.0)
        # synthetic s_local of 0.05 is flagged at tau = 0.07
        report_like.s_local = np.array([0.05])
        assert report_like.flagged(0.07).tolist() == [True]
        report_like.s_local = np.array([0.07])
        assert report_like.flagged(0.07).tolist() == [False]

    def test_empty_membership_contributes_no_rows(self):
        feats = constant_features((2, 2), [1.0])
        masks = masks_from_rows((2, 2), [([], 1.0), ([0], 1.0)])
        report = local_similarity(feats, masks)
        assert set(report.region_index.tolist()) == {1}

    def test_invariant_to_positive_feature_rescaling(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(9, 4))
        masks = masks_from_rows((3, 3), [([0, 3, 4], 1.0), ([5, 6], 1.0)])
        base = local_similarity(PatchFeatures(features, (3, 3)), masks)
        scaled = features.copy()
        scaled[4] *= 37.5
        rescaled = local_similarity(PatchFeatures(scaled, (3, 3)), masks)
        assert np.allclose(base.s_local, rescaled.s_local)


class TestFilterGlobal:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.feats = PatchFeatures(rng.normal(size=(9, 4)), (3, 3))
        self.masks = masks_from_rows((3, 3), [([0, 1, 2], 0.8), ([4, 5], 0.6)])
        self.report = local_similarity(self.feats, self.masks)

    def test_low_tau_is_identity(self):
        tau = float(self.report.s_local.min()) - 0.1
        out = filter_global(self.masks, self.report, tau)
        for before, after in zip(self.masks, out):
            assert np.array_equal(before.values, after.values)

    def test_flagged_patch_zeroed_in_its_region_only(self):
        report = local_similarity(self.feats, self.masks)
        # flag exactly region 0 / patch 1 by picking tau between scores
        row = np.flatnonzero((report.region_index == 0) & (report.patch_index == 1))[0]
        score = report.s_local[row]
        report.s_local = np.where(
            (report.region_index == 0) & (report.patch_index == 1),
            -10.0,
            np.inf,
        )
        out = filter_global(self.masks, report, tau=0.0)
        assert out[0].values.reshape(-1)[1] == 0.0
        assert out[0].values.reshape(-1)[0] == 0.8
        assert np.array_equal(out[1].values, self.masks[1].values)
        assert np.isfinite(score)

    def test_all_flagged_with_fallback_restores(self):
        report = local_similarity(self.feats, self.masks)
        report.s_local = np.full_like(report.s_local, -10.0)
        out = filter_global(self.masks, report, tau=0.0, policy="fallback_unfiltered")
        assert len(out) == 2
        for before, after in zip(self.masks, out):
            assert np.array_equal(before.values, after.values)

    def test_all_flagged_with_drop_removes(self):
        report = local_similarity(self.feats, self.masks)
        report.s_local = np.full_like(report.s_local, -10.0)
        out = filter_global(self.masks, report, tau=0.0, policy="drop")
        assert out == []

    def test_monotone_in_tau(self):
        taus = [-1.5, -0.5, 0.0, 0.05, 0.5, 1.5]
        previous = None
        for tau in taus:
            out = filter_global(self.masks, self.report, tau, policy="drop")
            total = sum(float(m.values.sum()) for m in out)
            if previous is not None:
                assert total <= previous + 1e-12
            previous = total


class TestPoolRegions:
    def test_one_hot_mask_selects_row(self):
        rng = np.random.default_rng(4)
        feats = PatchFeatures(rng.normal(size=(6, 3)), (2, 3))
        masks = masks_from_rows((2, 3), [([4], 1.0)])
        tokens = pool_regions(feats, masks)
        assert np.allclose(tokens.tokens[0], feats.features[4])

    def test_binary_mask_sums(self):
        feats = PatchFeatures(np.array([[1.0, 0.0], [0.0, 1.0]]), (1, 2))
        masks = masks_from_rows((1, 2), [([0, 1], 1.0)])
        tokens = pool_regions(feats, masks)
        assert np.allclose(tokens.tokens[0], [1.0, 1.0])

    def test_soft_mask_weights(self):
        feats = PatchFeatures(np.array([[1.0, 0.0], [0.0, 1.0]]), (1, 2))
        masks = masks_from_rows((1, 2), [([0, 1], 0.5)])
        tokens = pool_regions(feats, masks)
        assert np.allclose(tokens.tokens[0], [0.5, 0.5])

    def test_all_zero_mask_flagged_empty(self):
        feats = PatchFeatures(np.ones((4, 2)), (2, 2))
        masks = masks_from_rows((2, 2), [([], 1.0), ([1], 1.0)])
        tokens = pool_regions(feats, masks)
        assert tokens.is_empty.tolist() == [True, False]
        assert np.allclose(tokens.tokens[0], 0.0)

    def test_linearity_in_mask(self):
        rng = np.random.default_rng(6)
        feats = PatchFeatures(rng.normal(size=(9, 5)), (3, 3))
        m1 = rng.random(size=(3, 3)) * 0.5
        m2 = rng.random(size=(3, 3)) * 0.5
        pool = lambda m: pool_regions(feats, [PatchMask(0, m)]).tokens[0]
        for alpha in (0.1, 0.5, 1.0):
            assert np.allclose(pool(alpha * m1), alpha * pool(m1))
        assert np.allclose(pool(m1 + m2), pool(m1) + pool(m2))

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            h = int(rng.integers(1, 6))
            w = int(rng.integers(1, 6))
            d = int(rng.integers(1, 9))
            n_regions = int(rng.integers(1, 5))
            feats = PatchFeatures(rng.normal(size=(h * w, d)), (h, w))
            masks = [PatchMask(r, rng.random(size=(h, w))) for r in range(n_regions)]
            tokens = pool_regions(feats, masks)
            for r in range(n_regions):
                expected = np.zeros(d)
                flat = masks[r].flat()
                for i in range(h * w):
                    expected += flat[i] * feats.features[i]
                scale = max(1.0, np.abs(expected).max())
                assert np.abs(tokens.tokens[r] - expected).max() / scale < 1e-6

    def test_grid_mismatch_rejected(self):
        feats = PatchFeatures(np.ones((4, 2)), (2, 2))
        with pytest.raises(GridMismatchError):
            pool_regions(feats, [PatchMask(0, np.ones((3, 3)))])


class TestDelegatePooling:
    def test_empty_head_is_mean_over_support(self):
        rng = np.random.default_rng(10)
        feats = PatchFeatures(rng.normal(size=(6, 4)), (2, 3))
        head = HeadSpec(enabled=True, post_pool_layers=[])
        masks = masks_from_rows((2, 3), [([0, 2, 5], 1.0)])
        tokens = pool_regions_delegate(feats, masks, head)
        assert np.allclose(tokens.tokens[0], feats.features[[0, 2, 5]].mean(axis=0))

    def test_soft_values_binarized(self):
        rng = np.random.default_rng(11)
        feats = PatchFeatures(rng.normal(size=(4, 3)), (2, 2))
        head = HeadSpec(enabled=True, post_pool_layers=[])
        soft = np.zeros((2, 2))
        soft.reshape(-1)[0] = 0.3
        soft.reshape(-1)[3] = 0.9
        hard = (soft > 0).astype(np.float64)
        out_soft = pool_regions_delegate(feats, [PatchMask(0, soft)], head)
        out_hard = pool_regions_delegate(feats, [PatchMask(0, hard)], head)
        assert np.allclose(out_soft.tokens, out_hard.tokens)

    def test_single_linear_head_matches_matrix_oracle(self):
        feats = PatchFeatures(np.array([[1.0, 2.0], [3.0, 4.0]]), (1, 2))
        weight = np.array([[1.0, -1.0], [0.5, 0.25]])
        bias = np.array([0.1, -0.2])
        head = HeadSpec(enabled=True, post_pool_layers=[LinearLayer(weight, bias)])
        masks = masks_from_rows((1, 2), [([0, 1], 1.0)])
        tokens = pool_regions_delegate(feats, masks, head)
        mean = np.array([2.0, 3.0])
        expected = weight @ mean + bias
        assert np.allclose(tokens.tokens[0], expected)

    def test_equals_binarized_mean_pooling(self):
        rng = np.random.default_rng(12)
        head = HeadSpec(enabled=True, post_pool_layers=[])
        for _ in range(60):
            h = int(rng.integers(1, 5))
            w = int(rng.integers(1, 5))
            d = int(rng.integers(1, 7))
            feats = PatchFeatures(rng.normal(size=(h * w, d)), (h, w))
            values = rng.random(size=(h, w)) * (rng.random(size=(h, w)) > 0.4)
            if not values.any():
                values[0, 0] = 0.7
            mask = PatchMask(0, values)
            delegate = pool_regions_delegate(feats, [mask], head).tokens[0]
            binarized = (values > 0).astype(np.float64)
            plain = pool_regions(feats, [PatchMask(0, binarized / binarized.sum())])
            assert np.abs(delegate - plain.tokens[0]).max() < 1e-6

    def test_empty_region_policies(self):
        feats = PatchFeatures(np.ones((4, 2)), (2, 2))
        head = HeadSpec(enabled=True, post_pool_layers=[])
        masks = masks_from_rows((2, 2), [([], 1.0), ([0], 1.0)])
        kept = pool_regions_delegate(feats, masks, head, policy="fallback_unfiltered")
        assert kept.is_empty.tolist() == [True, False]
        dropped = pool_regions_delegate(feats, masks, head, policy="drop")
        assert dropped.region_ids == [1]

    def test_random_head_applies_after_mean(self):
        rng = np.random.default_rng(13)
        feats = PatchFeatures(rng.normal(size=(9, 4)), (3, 3))
        head = random_head(rng, 4)
        masks = masks_from_rows((3, 3), [([1, 2, 7], 1.0)])
        tokens = pool_regions_delegate(feats, masks, head)
        mean = feats.features[[1, 2, 7]].mean(axis=0)
        assert np.allclose(tokens.tokens[0], head.apply(mean))


def test_engine_config_validation():
    assert EngineConfig().tau == 0.07
    with pytest.raises(ValueError):
        EngineConfig(tau=2.5)
    with pytest.raises(ValueError):
        EngineConfig(fusion_weight=0.0)
    with pytest.raises(ValueError):
        EngineConfig(similarity_source="nope")
