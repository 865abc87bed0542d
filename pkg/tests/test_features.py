"""Feature transform tests.

The gradient-structure oracle below re-derives the transform with plain
per-pixel loops: orientation modulo pi, linear weight split between the
two nearest of 8 bins, 3x3 zero-padded window sums, unit normalization.
"""

import numpy as np
import pytest

from irvreg import features, imaging
from irvreg.errors import EmptyMask, ShapeMismatch, UnknownTransform

from imagegen import make_color_texture, make_texture


def grad_struct_oracle(img):
    gx, gy = imaging.gradient(img)
    h, w = img.shape
    raw = np.zeros((8, h, w))
    for y in range(h):
        for x in range(w):
            mag = np.hypot(gx[y, x], gy[y, x])
            ang = np.arctan2(gy[y, x], gx[y, x]) % np.pi
            t = ang / (np.pi / 8)
            low = int(np.floor(t)) % 8
            frac = t - np.floor(t)
            raw[low, y, x] += (1.0 - frac) * mag
            raw[(low + 1) % 8, y, x] += frac * mag
    summed = np.zeros_like(raw)
    for c in range(8):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w:
                            acc += raw[c, yy, xx]
                summed[c, y, x] = acc
    return summed


class TestGradientStructure:
    def test_matches_per_pixel_oracle(self):
        img = make_texture(101, 12, 14)
        got = features.gradient_structure_features(img)
        np.testing.assert_allclose(got, grad_struct_oracle(img), atol=1e-12)

    def test_constant_image_gives_zero_features(self):
        img = np.full((70, 66), 0.42)
        pyr = features.extract_features(img)
        for level in pyr.levels:
            np.testing.assert_array_equal(level, 0.0)

    def test_step_edge_support(self):
        img = np.full((16, 16), 0.2)
        img[:, 8:] = 0.8
        raw = features.gradient_structure_features(img)
        energy = raw.sum(axis=0)
        assert energy[:, 6:10].min() > 0.0
        np.testing.assert_array_equal(energy[:, :5], 0.0)
        np.testing.assert_array_equal(energy[:, 12:], 0.0)

    def test_additive_shift_invariance(self):
        img = 0.2 + 0.6 * make_texture(102, 24, 24)
        a = features.gradient_structure_features(img)
        b = features.gradient_structure_features(img + 0.1)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_positive_scaling_invariance_after_normalization(self):
        img = make_texture(103, 24, 24)
        a = features.normalize_features(features.gradient_structure_features(img))
        b = features.normalize_features(features.gradient_structure_features(0.5 * img))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_intensity_inversion_invariance(self):
        img = make_texture(104, 24, 24)
        a = features.normalize_features(features.gradient_structure_features(img))
        b = features.normalize_features(features.gradient_structure_features(1.0 - img))
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestNormalizeFeatures:
    def test_unit_vectors_unchanged(self):
        fmap = np.zeros((2, 2, 2))
        fmap[:, 0, 0] = [0.6, 0.8]
        fmap[:, 0, 1] = [1.0, 0.0]
        fmap[:, 1, 0] = [0.0, -1.0]
        np.testing.assert_array_equal(features.normalize_features(fmap), fmap)

    def test_zero_vectors_stay_zero(self):
        fmap = np.zeros((4, 3, 3))
        fmap[:, 1, 1] = [2.0, 0.0, 0.0, 0.0]
        out = features.normalize_features(fmap)
        np.testing.assert_array_equal(out[:, 0, 0], 0.0)
        np.testing.assert_array_equal(out[:, 1, 1], [1.0, 0.0, 0.0, 0.0])

    def test_norms_are_unit_or_zero(self):
        rng = np.random.default_rng(105)
        fmap = rng.normal(size=(8, 10, 10))
        fmap[:, 0, :3] = 0.0
        out = features.normalize_features(fmap)
        norms = np.linalg.norm(out, axis=0)
        zero = np.linalg.norm(fmap, axis=0) == 0.0
        np.testing.assert_allclose(norms[~zero], 1.0, atol=1e-12)
        np.testing.assert_array_equal(norms[zero], 0.0)

    def test_idempotent(self):
        rng = np.random.default_rng(106)
        fmap = rng.normal(size=(8, 6, 6))
        once = features.normalize_features(fmap)
        twice = features.normalize_features(once)
        np.testing.assert_allclose(twice, once, atol=1e-15)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            features.normalize_features(np.zeros((4, 4)))


class TestExtractFeatures:
    def test_level_geometry(self):
        img = make_texture(111, 256, 192)
        pyr = features.extract_features(img)
        assert pyr.channels == 8
        assert [lvl.shape for lvl in pyr.levels] == [
            (8, 128, 96),
            (8, 64, 48),
            (8, 32, 24),
        ]
        assert pyr.scale_of(0) == 2.0
        assert pyr.scale_of(2) == 8.0
        assert pyr.f3.shape == (8, 32, 24)

    def test_levels_are_normalized(self):
        pyr = features.extract_features(make_texture(112, 128, 128))
        for level in pyr.levels:
            norms = np.linalg.norm(level, axis=0)
            nz = norms > 0
            np.testing.assert_allclose(norms[nz], 1.0, atol=1e-12)

    def test_color_uses_luma(self):
        img = make_color_texture(113, 96, 96)
        via_color = features.extract_features(img)
        via_gray = features.extract_features(imaging.to_gray(img))
        for a, b in zip(via_color.levels, via_gray.levels):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self):
        img = make_texture(114, 96, 96)
        a = features.extract_features(img)
        b = features.extract_features(img)
        for la, lb in zip(a.levels, b.levels):
            np.testing.assert_array_equal(la, lb)

    def test_unknown_transform(self):
        with pytest.raises(UnknownTransform):
            features.extract_features(make_texture(115, 64, 64), transform="sift")


class TestConsistencyMetrics:
    def test_identical_images(self):
        img = make_texture(121, 32, 32)
        m = features.consistency_metrics(img, img)
        assert m.l1 == 0.0 and m.l_str == 0.0

    def test_constant_shift(self):
        img = 0.2 + 0.6 * make_texture(122, 32, 32)
        m = features.consistency_metrics(img, img + 0.1)
        assert abs(m.l1 - 0.1) < 1e-12
        assert m.l_str < 1e-12

    def test_symmetry(self):
        a = make_texture(123, 24, 24)
        b = make_texture(124, 24, 24)
        assert features.consistency_metrics(a, b) == features.consistency_metrics(b, a)

    def test_masked_region_only(self):
        a = make_texture(125, 16, 16)
        b = a.copy()
        b[:8] += 0.5  # corrupt the top half
        mask = np.zeros((16, 16), dtype=bool)
        mask[10:] = True  # gradients there never touch the corrupted rows
        m = features.consistency_metrics(a, b, mask)
        assert m.l1 == 0.0 and m.l_str == 0.0

    def test_empty_mask_raises(self):
        img = make_texture(126, 8, 8)
        with pytest.raises(EmptyMask):
            features.consistency_metrics(img, img, np.zeros((8, 8), dtype=bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            features.consistency_metrics(np.zeros((8, 8)), np.zeros((8, 9)))
