"""Homography algebra tests.

Oracles used here are independent of the implementation under test:
projection goes through explicit homogeneous coordinates, and reference
homographies are constructed directly (translations, affine maps, and a
hand-built projective matrix).
"""

import numpy as np
import pytest

from irvreg import geometry
from irvreg.errors import (
    DegenerateCorrespondence,
    ProjectiveDegenerate,
    SingularMatrix,
)


def project_oracle(h, pts):
    """Reference projective mapping: explicit homogeneous coordinates."""
    pts = np.asarray(pts, dtype=float)
    ones = np.ones((pts.shape[0], 1))
    homog = np.concatenate([pts, ones], axis=1) @ np.asarray(h, dtype=float).T
    return homog[:, :2] / homog[:, 2:3]


FRAME_256 = geometry.frame_corners(256, 256)


class TestFrameCorners:
    def test_order_and_values(self):
        frame = geometry.frame_corners(256, 128)
        expected = np.array([[0, 0], [255, 0], [0, 127], [255, 127]], dtype=float)
        np.testing.assert_array_equal(frame, expected)

    def test_too_small(self):
        with pytest.raises(ValueError):
            geometry.frame_corners(1, 50)


class TestDltFromOffsets:
    def test_zero_offsets_is_identity(self):
        h = geometry.dlt_from_offsets(np.zeros((4, 2)), FRAME_256)
        np.testing.assert_allclose(h, np.eye(3), atol=1e-10)

    def test_pure_translation_offsets(self):
        offsets = np.tile([3.0, -7.0], (4, 1))
        h = geometry.dlt_from_offsets(offsets, FRAME_256)
        np.testing.assert_allclose(h, geometry.translation(3.0, -7.0), atol=1e-9)

    def test_affine_offsets_recover_affine_matrix(self):
        a = np.array([[1.02, 0.03, -4.0], [-0.01, 0.97, 2.5], [0.0, 0.0, 1.0]])
        offsets = project_oracle(a, FRAME_256) - FRAME_256
        h = geometry.dlt_from_offsets(offsets, FRAME_256)
        np.testing.assert_allclose(h, a, atol=1e-9)

    def test_projective_oracle_recovered(self):
        h_true = np.array(
            [
                [1.05, 0.02, -3.0],
                [0.01, 0.98, 5.0],
                [1.5e-4, -2.0e-4, 1.0],
            ]
        )
        offsets = project_oracle(h_true, FRAME_256) - FRAME_256
        h = geometry.dlt_from_offsets(offsets, FRAME_256)
        np.testing.assert_allclose(h, h_true, rtol=0, atol=1e-8)

    def test_corner_projection_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            offsets = rng.uniform(-32.0, 32.0, size=(4, 2))
            h = geometry.dlt_from_offsets(offsets, FRAME_256)
            assert h[2, 2] == 1.0
            hit = project_oracle(h, FRAME_256)
            err = np.abs(hit - (FRAME_256 + offsets)).max()
            assert err < 1e-6

    def test_round_trip_offsets(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            offsets = rng.uniform(-32.0, 32.0, size=(4, 2))
            h = geometry.dlt_from_offsets(offsets, FRAME_256)
            back = geometry.offsets_from_homography(h, FRAME_256)
            assert np.abs(back - offsets).max() < 1e-6

    def test_small_frame_skips_conditioning_but_still_works(self):
        frame = geometry.frame_corners(32, 32)
        rng = np.random.default_rng(3)
        offsets = rng.uniform(-4.0, 4.0, size=(4, 2))
        h = geometry.dlt_from_offsets(offsets, frame)
        back = geometry.offsets_from_homography(h, frame)
        np.testing.assert_allclose(back, offsets, atol=1e-9)

    def test_collinear_displaced_corners_raise(self):
        line = np.array([[0.0, 0.0], [85.0, 85.0], [170.0, 170.0], [255.0, 255.0]])
        offsets = line - FRAME_256
        with pytest.raises(DegenerateCorrespondence):
            geometry.dlt_from_offsets(offsets, FRAME_256)

    def test_coincident_displaced_corners_raise(self):
        offsets = np.zeros((4, 2))
        offsets[1] = [-255.0, 0.0]  # top-right lands on top-left
        with pytest.raises(DegenerateCorrespondence):
            geometry.dlt_from_offsets(offsets, FRAME_256)

    def test_collinear_frame_raises(self):
        frame = np.array([[0.0, 0.0], [10.0, 10.0], [20.0, 20.0], [5.0, 0.0]])
        with pytest.raises(DegenerateCorrespondence):
            geometry.dlt_from_offsets(np.zeros((4, 2)), frame)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            geometry.dlt_from_offsets(np.zeros((3, 2)), FRAME_256)
        with pytest.raises(ValueError):
            geometry.dlt_from_offsets(np.full((4, 2), np.nan), FRAME_256)


class TestHomographyFromPoints:
    def test_matches_dlt_from_offsets(self):
        rng = np.random.default_rng(5)
        offsets = rng.uniform(-20.0, 20.0, size=(4, 2))
        via_offsets = geometry.dlt_from_offsets(offsets, FRAME_256)
        via_points = geometry.homography_from_points(FRAME_256, FRAME_256 + offsets)
        np.testing.assert_allclose(via_points, via_offsets, atol=1e-12)


class TestGroupOperations:
    def rand_h(self, rng):
        offsets = rng.uniform(-24.0, 24.0, size=(4, 2))
        return geometry.dlt_from_offsets(offsets, FRAME_256)

    def test_compose_matches_sequential_projection(self):
        rng = np.random.default_rng(21)
        pts = rng.uniform(0.0, 255.0, size=(32, 2))
        for _ in range(20):
            a = self.rand_h(rng)
            b = self.rand_h(rng)
            lhs = project_oracle(geometry.compose(a, b), pts)
            rhs = project_oracle(a, project_oracle(b, pts))
            np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            h = self.rand_h(rng)
            round_trip = geometry.compose(h, geometry.invert(h))
            np.testing.assert_allclose(round_trip, np.eye(3), atol=1e-9)

    def test_invert_translation_is_exact(self):
        inv = geometry.invert(geometry.translation(2.0, 3.0))
        np.testing.assert_array_equal(inv, geometry.translation(-2.0, -3.0))

    def test_invert_singular_raises(self):
        h = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(SingularMatrix):
            geometry.invert(h)

    def test_normalized_rejects_zero_w(self):
        h = np.eye(3)
        h[2, 2] = 0.0
        with pytest.raises(SingularMatrix):
            geometry.normalized(h)

    def test_compose_keeps_unit_corner(self):
        rng = np.random.default_rng(23)
        h = geometry.compose(self.rand_h(rng), self.rand_h(rng))
        assert h[2, 2] == 1.0


class TestRescale:
    def test_identity_unchanged(self):
        np.testing.assert_array_equal(
            geometry.rescale_homography(np.eye(3), 4.0), np.eye(3)
        )

    def test_unit_scale_is_noop(self):
        rng = np.random.default_rng(31)
        offsets = rng.uniform(-10.0, 10.0, size=(4, 2))
        h = geometry.dlt_from_offsets(offsets, FRAME_256)
        np.testing.assert_allclose(geometry.rescale_homography(h, 1.0), h, atol=1e-15)

    def test_commutes_with_coordinate_scaling(self):
        rng = np.random.default_rng(32)
        pts = rng.uniform(0.0, 255.0, size=(16, 2))
        offsets = rng.uniform(-16.0, 16.0, size=(4, 2))
        h = geometry.dlt_from_offsets(offsets, FRAME_256)
        for s in (0.5, 2.0, 8.0):
            hs = geometry.rescale_homography(h, s)
            lhs = project_oracle(hs, pts * s)
            rhs = project_oracle(h, pts) * s
            np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_inverse_scale_round_trip(self):
        rng = np.random.default_rng(33)
        offsets = rng.uniform(-16.0, 16.0, size=(4, 2))
        h = geometry.dlt_from_offsets(offsets, FRAME_256)
        back = geometry.rescale_homography(geometry.rescale_homography(h, 2.0), 0.5)
        np.testing.assert_allclose(back, h, atol=1e-12)

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            geometry.rescale_homography(np.eye(3), 0.0)


class TestOffsetsFromHomography:
    def test_translation_offsets(self):
        h = geometry.translation(4.0, -2.0)
        offsets = geometry.offsets_from_homography(h, FRAME_256)
        np.testing.assert_allclose(offsets, np.tile([4.0, -2.0], (4, 1)), atol=1e-12)

    def test_degenerate_projection_raises(self):
        h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0 / 255.0, 0.0, 1.0]])
        with pytest.raises(ProjectiveDegenerate):
            geometry.offsets_from_homography(h, FRAME_256)


class TestProjectPoints:
    def test_matches_oracle(self):
        rng = np.random.default_rng(41)
        h = geometry.dlt_from_offsets(rng.uniform(-8, 8, (4, 2)), FRAME_256)
        pts = rng.uniform(0, 255, (64, 2))
        np.testing.assert_allclose(
            geometry.project_points(h, pts), project_oracle(h, pts), atol=1e-9
        )

    def test_masked_variant_flags_bad_rows(self):
        h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0 / 10.0, 0.0, 1.0]])
        pts = np.array([[0.0, 0.0], [10.0, 0.0]])
        out, valid = geometry.project_points_masked(h, pts)
        assert valid.tolist() == [True, False]
        np.testing.assert_array_equal(out[1], [0.0, 0.0])


class TestAverageCornerError:
    def test_uniform_unit_shift(self):
        pred = np.zeros((4, 2))
        truth = np.tile([1.0, 0.0], (4, 1))
        assert geometry.average_corner_error(pred, truth) == 1.0

    def test_three_four_five(self):
        pred = np.tile([3.0, 4.0], (4, 1))
        assert geometry.average_corner_error(pred, np.zeros((4, 2))) == 5.0

    def test_symmetry_and_zero(self):
        rng = np.random.default_rng(51)
        a = rng.normal(size=(4, 2))
        b = rng.normal(size=(4, 2))
        assert geometry.average_corner_error(a, b) == geometry.average_corner_error(b, a)
        assert geometry.average_corner_error(a, a) == 0.0


class TestSerialization:
    def test_homography_list_round_trip(self):
        rng = np.random.default_rng(61)
        h = geometry.dlt_from_offsets(rng.uniform(-8, 8, (4, 2)), FRAME_256)
        values = geometry.homography_to_list(h)
        assert len(values) == 9 and values[8] == 1.0
        np.testing.assert_array_equal(geometry.homography_from_list(values), h)

    def test_offsets_list_round_trip(self):
        offsets = np.array([[0.5, -1.0], [2.0, 3.0], [-4.0, 0.0], [1.0, 1.0]])
        values = geometry.offsets_to_list(offsets)
        assert values[0] == [0.5, -1.0]
        np.testing.assert_array_equal(geometry.offsets_from_list(values), offsets)
