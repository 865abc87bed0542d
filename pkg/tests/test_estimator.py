"""Estimator tests: robust fitting, level refinement, full hierarchy."""

import numpy as np
import pytest

from imagegen import make_texture

from irvreg import estimator, features, geometry, imaging
from irvreg.errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    InvalidRadius,
    ShapeMismatch,
)
from irvreg.estimator import EstimatorConfig

FRAME_256 = geometry.frame_corners(256, 256)
FRAME_100 = geometry.frame_corners(100, 100)


def corner_error(h_a, h_b, frame=FRAME_100):
    return geometry.average_corner_error(
        geometry.offsets_from_homography(h_a, frame),
        geometry.offsets_from_homography(h_b, frame),
    )


def exact_correspondences(h, n, seed, extent=100.0):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0.0, extent, size=(n, 2))
    dst = geometry.project_points(h, src)
    return src, dst


def warped_pair(pair_seed, size=256, reach=8.0):
    g = np.random.default_rng(pair_seed)
    img = make_texture(int(g.integers(1 << 31)), size, size)
    offsets = g.uniform(-reach, reach, size=(4, 2))
    h_gt = geometry.dlt_from_offsets(
        offsets, geometry.frame_corners(size, size)
    )
    tgt = imaging.warp(img, h_gt)[0]
    return img, tgt, offsets, h_gt


class TestEstimatorConfig:
    def test_defaults_are_valid(self):
        cfg = EstimatorConfig()
        assert cfg.levels == 3 and cfg.rounds == 2 and cfg.radius == 4
        assert cfg.dilation_schedule == (2, 1)

    def test_dict_round_trip(self):
        cfg = EstimatorConfig(rounds=3, fit_method="irls", inlier_px=1.5,
                              confidence_floor=0.01, seed=7)
        again = EstimatorConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_nested_fit_keys(self):
        cfg = EstimatorConfig.from_dict(
            {"fit": {"method": "irls", "inlier_px": 3.0, "max_iter": 50}}
        )
        assert cfg.fit_method == "irls"
        assert cfg.inlier_px == 3.0 and cfg.max_iter == 50

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            EstimatorConfig.from_dict({"radus": 4})
        with pytest.raises(ValueError):
            EstimatorConfig.from_dict({"fit": {"methd": "irls"}})

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rounds": 0},
            {"inlier_px": 0.0},
            {"max_iter": 0},
            {"fit_method": "hough"},
            {"confidence_floor": 1.0},
            {"confidence_floor": -0.1},
            {"levels": 4},
            {"levels": 0},
            {"seed": -1},
            {"dilation_schedule": ()},
            {"dilation_schedule": (0,)},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            EstimatorConfig(**kwargs)

    def test_bad_radius(self):
        with pytest.raises(InvalidRadius):
            EstimatorConfig(radius=0)
        with pytest.raises(InvalidRadius):
            EstimatorConfig(radius=3)  # 7 candidates, not a square grid


class TestFitHomographyRobust:
    @pytest.mark.parametrize("method", ["ransac", "irls"])
    def test_exact_correspondences_recover_h(self, method):
        cfg = EstimatorConfig(fit_method=method)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            h_true = geometry.dlt_from_offsets(
                rng.uniform(-6, 6, (4, 2)), FRAME_100
            )
            src, dst = exact_correspondences(h_true, 50, 100 + seed)
            fit = estimator.fit_homography_robust(
                [(s, d, 1.0) for s, d in zip(src, dst)], cfg,
                rng=np.random.default_rng(seed),
            )
            assert corner_error(fit.h, h_true) < 1e-6
            assert fit.inlier_ratio == 1.0

    @pytest.mark.parametrize("method", ["ransac", "irls"])
    def test_four_exact_pairs_reduce_to_dlt(self, method):
        offsets = np.array([[2.0, -1.0], [-3.0, 0.5], [1.5, 2.0], [0.0, -2.5]])
        expected = geometry.dlt_from_offsets(offsets, FRAME_100)
        corrs = [
            (FRAME_100[i], FRAME_100[i] + offsets[i], 1.0) for i in range(4)
        ]
        cfg = EstimatorConfig(fit_method=method)
        fit = estimator.fit_homography_robust(corrs, cfg)
        np.testing.assert_array_equal(fit.h, expected)

    def test_ransac_rejects_30pct_outliers(self):
        cfg = EstimatorConfig(fit_method="ransac")
        failures = 0
        for trial in range(25):
            rng = np.random.default_rng([88, trial])
            h_true = geometry.dlt_from_offsets(
                rng.uniform(-8, 8, (4, 2)), FRAME_100
            )
            src = rng.uniform(0, 100, size=(60, 2))
            dst = geometry.project_points(h_true, src)
            out = rng.choice(60, 18, replace=False)
            dst[out] = rng.uniform(0, 100, size=(18, 2))
            fit = estimator.fit_homography_robust(
                [(s, d, 1.0) for s, d in zip(src, dst)], cfg,
                rng=np.random.default_rng([99, trial]),
            )
            failures += corner_error(fit.h, h_true) >= 0.5
        assert failures == 0

    def test_irls_damps_mild_outliers(self):
        cfg = EstimatorConfig(fit_method="irls")
        rng = np.random.default_rng(5)
        h_true = geometry.dlt_from_offsets(rng.uniform(-5, 5, (4, 2)), FRAME_100)
        src, dst = exact_correspondences(h_true, 50, 6)
        out = rng.choice(50, 8, replace=False)
        dst[out] += rng.uniform(2, 6, (8, 2)) * rng.choice([-1.0, 1.0], (8, 2))
        fit = estimator.fit_homography_robust(
            [(s, d, 1.0) for s, d in zip(src, dst)], cfg
        )
        assert corner_error(fit.h, h_true) < 1.5
        assert fit.inlier_ratio > 0.8

    def test_zero_weight_pairs_are_ignored(self):
        cfg = EstimatorConfig()
        h_true = geometry.translation(4.0, -2.0)
        src, dst = exact_correspondences(h_true, 20, 7)
        corrs = [(s, d, 1.0) for s, d in zip(src, dst)]
        corrs += [(s, s + 40.0, 0.0) for s in src[:10]]  # garbage, weight 0
        fit = estimator.fit_homography_robust(corrs, cfg)
        assert corner_error(fit.h, h_true) < 1e-6
        assert fit.n_used == 20

    def test_floor_filters_low_confidence(self):
        cfg = EstimatorConfig(confidence_floor=0.5)
        h_true = geometry.translation(1.0, 1.0)
        src, dst = exact_correspondences(h_true, 10, 8)
        corrs = [(s, d, 0.9) for s, d in zip(src, dst)]
        corrs += [(s, s + 25.0, 0.05) for s in src]  # below the floor
        fit = estimator.fit_homography_robust(corrs, cfg)
        assert corner_error(fit.h, h_true) < 1e-6

    def test_insufficient_correspondences(self):
        cfg = EstimatorConfig()
        pts = [((0.0, 0.0), (1.0, 1.0), 1.0)] * 3
        with pytest.raises(InsufficientCorrespondences):
            estimator.fit_homography_robust(pts, cfg)
        low = [((float(i), float(i * i)), (float(i), float(i * i)), 1e-9)
               for i in range(10)]
        with pytest.raises(InsufficientCorrespondences):
            estimator.fit_homography_robust(low, cfg)

    @pytest.mark.parametrize("method", ["ransac", "irls"])
    def test_collinear_points_degenerate(self, method):
        cfg = EstimatorConfig(fit_method=method)
        src = np.stack([np.arange(10.0), 2.0 * np.arange(10.0)], axis=1)
        corrs = [(s, s + 1.0, 1.0) for s in src]
        with pytest.raises(DegenerateConfiguration):
            estimator.fit_homography_robust(corrs, cfg)


@pytest.fixture(scope="module")
def level_features():
    img = make_texture(3021, 256, 256)
    return features.extract_features(img).levels[0]  # 128x128


class TestRefineLevel:
    def test_fixed_point(self, level_features):
        res = estimator.refine_level(
            level_features, level_features, geometry.identity(),
            EstimatorConfig(),
        )
        frame = geometry.frame_corners(128, 128)
        assert corner_error(res.h, geometry.identity(), frame) < 1e-6
        assert np.abs(res.offsets).max() < 1e-6
        assert not res.degraded

    def test_translation_within_reach(self, level_features):
        shifted = np.zeros_like(level_features)
        shifted[:, :, 3:] = level_features[:, :, :-3]
        res = estimator.refine_level(
            level_features, shifted, geometry.identity(), EstimatorConfig()
        )
        err = geometry.average_corner_error(
            res.offsets, np.tile([3.0, 0.0], (4, 1))
        )
        assert err < 0.5

    def test_truth_init_does_not_diverge(self):
        img, tgt, _, h_gt = warped_pair([21, 0], reach=4.0)
        f_src = features.extract_features(img).levels[0]
        f_tgt = features.extract_features(tgt).levels[0]
        h_level = geometry.rescale_homography(h_gt, 0.5)
        res = estimator.refine_level(f_src, f_tgt, h_level, EstimatorConfig())
        assert corner_error(res.h, h_level,
                            geometry.frame_corners(128, 128)) < 0.25

    def test_blank_target_degrades_to_init(self, level_features):
        h_init = geometry.translation(2.0, 0.0)
        res = estimator.refine_level(
            level_features, np.zeros_like(level_features), h_init,
            EstimatorConfig(),
        )
        assert res.degraded
        assert all(s.degraded for s in res.stages)
        assert all(s.reason == "InsufficientCorrespondences"
                   for s in res.stages)
        np.testing.assert_array_equal(res.h, h_init)

    def test_stage_schedule(self, level_features):
        cfg = EstimatorConfig(rounds=2)
        res = estimator.refine_level(
            level_features, level_features, geometry.identity(), cfg
        )
        labels = [(s.round_index, s.stage) for s in res.stages]
        assert labels == [(0, "1d"), (0, "2d"), (1, "1d"), (1, "2d")]

    def test_capture_callback(self, level_features):
        seen = []
        estimator.refine_level(
            level_features, level_features, geometry.identity(),
            EstimatorConfig(rounds=1), capture=seen.append,
        )
        stages = [r["stage"] for r in seen]
        assert stages == ["1d-h", "1d-v", "2d"]
        assert all({"level", "round", "volume", "field"} <= set(r) for r in seen)

    def test_shape_mismatch(self, level_features):
        with pytest.raises(ShapeMismatch):
            estimator.refine_level(
                level_features, level_features[:, :64, :64],
                geometry.identity(), EstimatorConfig(),
            )


class TestRegisterHierarchical:
    def test_identity_fixed_point(self):
        img = make_texture(3050, 256, 256)
        res = estimator.register_hierarchical(img, img, cfg=EstimatorConfig())
        assert corner_error(res.h_full, geometry.identity(), FRAME_256) < 1e-6
        assert np.abs(res.delta1).max() < 1e-6
        assert not res.degraded

    def test_recovers_known_warp(self):
        img, tgt, offsets, _ = warped_pair([11, 0])
        res = estimator.register_hierarchical(img, tgt, cfg=EstimatorConfig())
        assert geometry.average_corner_error(res.delta1, offsets) < 1.0

    def test_delta1_consistent_with_h_full(self):
        img, tgt, _, _ = warped_pair([11, 1])
        res = estimator.register_hierarchical(img, tgt, cfg=EstimatorConfig())
        np.testing.assert_allclose(
            geometry.offsets_from_homography(res.h_full, FRAME_256),
            res.delta1, atol=1e-9,
        )

    def test_per_level_scale_consistency(self):
        img, tgt, _, _ = warped_pair([11, 2])
        res = estimator.register_hierarchical(img, tgt, cfg=EstimatorConfig())
        deltas = {3: res.delta3, 2: res.delta2, 1: res.delta1}
        for lvl_res in res.levels:
            width = 256 // (2 ** lvl_res.level)
            lifted = geometry.rescale_homography(lvl_res.h, 256 / width)
            np.testing.assert_allclose(
                geometry.offsets_from_homography(lifted, FRAME_256),
                deltas[lvl_res.level], atol=1e-6,
            )

    def test_deterministic(self):
        img, tgt, _, _ = warped_pair([11, 3])
        a = estimator.register_hierarchical(img, tgt, cfg=EstimatorConfig())
        b = estimator.register_hierarchical(img, tgt, cfg=EstimatorConfig())
        np.testing.assert_array_equal(a.h_full, b.h_full)
        np.testing.assert_array_equal(a.delta1, b.delta1)
        np.testing.assert_array_equal(a.delta3, b.delta3)

    def test_irls_variant_converges(self):
        img, tgt, offsets, _ = warped_pair([11, 4])
        res = estimator.register_hierarchical(
            img, tgt, cfg=EstimatorConfig(fit_method="irls")
        )
        assert geometry.average_corner_error(res.delta1, offsets) < 1.5

    def test_fewer_levels_reuse_finest_delta(self):
        img, tgt, _, _ = warped_pair([11, 5])
        res = estimator.register_hierarchical(
            img, tgt, cfg=EstimatorConfig(levels=1)
        )
        np.testing.assert_array_equal(res.delta1, res.delta3)
        np.testing.assert_array_equal(res.delta2, res.delta3)
        assert len(res.levels) == 1
        np.testing.assert_allclose(
            geometry.offsets_from_homography(res.h_full, FRAME_256),
            res.delta1, atol=1e-9,
        )

    def test_blank_target_degrades(self):
        img = make_texture(3060, 256, 256)
        res = estimator.register_hierarchical(
            img, np.full_like(img, 0.5), cfg=EstimatorConfig()
        )
        assert res.degraded
        assert corner_error(res.h_full, geometry.identity(), FRAME_256) < 1e-9

    def test_shape_mismatch(self):
        img = make_texture(3070, 256, 256)
        with pytest.raises(ShapeMismatch):
            estimator.register_hierarchical(img, img[:128, :], cfg=EstimatorConfig())

    def test_inverted_target_still_registers(self):
        img, tgt, offsets, _ = warped_pair([13, 0])
        res = estimator.register_hierarchical(
            img, imaging.invert_intensity(tgt), cfg=EstimatorConfig()
        )
        ace = geometry.average_corner_error(res.delta1, offsets)
        identity_ace = geometry.average_corner_error(
            np.zeros((4, 2)), offsets
        )
        assert ace < 0.5 * identity_ace
