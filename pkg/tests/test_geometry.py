import math

import numpy as np
import pytest

from patchattack.geometry import (
    DegenerateConfiguration,
    DegeneratePoint,
    Homography,
    Point2,
    Quad,
    Singular,
    apply_point,
    apply_points,
    compose,
    corner_error,
    dlt_from_correspondences,
    format_homography_text,
    invert,
    parse_homography_text,
)
from conftest import random_homography


class TestApplyPoint:
    def test_identity(self):
        p = apply_point(Homography.identity(), Point2(7.5, -2.0))
        assert (p.x, p.y) == (7.5, -2.0)

    def test_pure_scaling(self):
        p = apply_point(Homography.scaling(2, 2), Point2(3, 4))
        assert (p.x, p.y) == (6.0, 8.0)

    def test_scale_equivalence_exact(self):
        m = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 4.0], [0.001, 0.002, 1.0]])
        a = apply_point(Homography(m), Point2(3, 4))
        b = apply_point(Homography(2.0 * m), Point2(3, 4))
        assert (a.x, a.y) == (b.x, b.y)

    def test_scale_equivalence_random(self, rng):
        for _ in range(50):
            h = random_homography(rng)
            c = 2.0 ** rng.integers(-8, 9)  # power of two: products stay exact
            p = Point2(*rng.uniform(-100, 700, size=2))
            a = apply_point(h, p)
            b = apply_point(Homography(c * h.m), p)
            assert (a.x, a.y) == (b.x, b.y)

    def test_degenerate_point(self):
        h = Homography([[1, 0, 0], [0, 1, 0], [0, -1, 1]])
        with pytest.raises(DegeneratePoint):
            apply_point(h, Point2(0.0, 1.0))

    def test_apply_points_marks_infinite_rows(self):
        h = Homography([[1, 0, 0], [0, 1, 0], [0, -1, 1]])
        out = apply_points(h, np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert not np.isfinite(out[0]).all()
        assert np.allclose(out[1], [1.0, 0.0])


class TestInvert:
    def test_identity(self):
        assert np.allclose(invert(Homography.identity()).m, np.eye(3))

    def test_diag(self):
        hinv = invert(Homography.scaling(2, 2))
        assert np.allclose(hinv.m, np.diag([0.5, 0.5, 1.0]))

    def test_roundtrip_random_points(self, rng):
        h = random_homography(rng)
        hinv = invert(h)
        for _ in range(100):
            p = Point2(*rng.uniform(0, 640, size=2))
            q = apply_point(hinv, apply_point(h, p))
            assert math.hypot(q.x - p.x, q.y - p.y) < 1e-6

    def test_singular_rejected(self):
        with pytest.raises(Singular):
            Homography(np.array([[1.0, 0, 0], [0, 1, 0], [1, 1, 0]]) * 0 + np.outer([1, 2, 3], [1, 1, 1]))


class TestCompose:
    def test_with_inverse_is_identity(self, rng):
        h = random_homography(rng)
        assert np.allclose(compose(h, invert(h)).m, np.eye(3), atol=1e-9)

    def test_identity_neutral(self, rng):
        h = random_homography(rng)
        assert np.allclose(compose(Homography.identity(), h).m, h.m)

    def test_matches_sequential_application(self, rng):
        a, b = random_homography(rng), random_homography(rng)
        for _ in range(20):
            p = Point2(*rng.uniform(0, 640, size=2))
            lhs = apply_point(compose(a, b), p)
            rhs = apply_point(a, apply_point(b, p))
            assert math.hypot(lhs.x - rhs.x, lhs.y - rhs.y) < 1e-6

    def test_associative_pointwise(self, rng):
        a, b, c = (random_homography(rng) for _ in range(3))
        for _ in range(20):
            p = Point2(*rng.uniform(0, 640, size=2))
            lhs = apply_point(compose(compose(a, b), c), p)
            rhs = apply_point(compose(a, compose(b, c)), p)
            assert math.hypot(lhs.x - rhs.x, lhs.y - rhs.y) < 1e-6


class TestDlt:
    def test_unit_square_scaling(self):
        square = [Point2(0, 0), Point2(1, 0), Point2(1, 1), Point2(0, 1)]
        pairs = [(p, Point2(2 * p.x, 2 * p.y)) for p in square]
        h = dlt_from_correspondences(pairs)
        assert np.allclose(h.m, np.diag([2.0, 2.0, 1.0]), atol=1e-9)

    def test_exact_recovery_eight_points(self, rng):
        h_true = random_homography(rng)
        pts = [Point2(*rng.uniform(0, 640, size=2)) for _ in range(8)]
        pairs = [(p, apply_point(h_true, p)) for p in pts]
        h = dlt_from_correspondences(pairs)
        for p, q in pairs:
            r = apply_point(h, p)
            assert math.hypot(r.x - q.x, r.y - q.y) < 1e-6

    def test_recovers_matrix_up_to_scale(self, rng):
        h_true = random_homography(rng)
        pts = [Point2(*rng.uniform(0, 640, size=2)) for _ in range(12)]
        h = dlt_from_correspondences([(p, apply_point(h_true, p)) for p in pts])
        a = h.m / np.linalg.norm(h.m)
        b = h_true.m / np.linalg.norm(h_true.m)
        assert min(np.linalg.norm(a - b), np.linalg.norm(a + b)) < 1e-6

    def test_collinear_degenerate(self):
        pairs = [
            (Point2(0, 0), Point2(0, 0)),
            (Point2(1, 1), Point2(1, 1)),
            (Point2(2, 2), Point2(2, 2)),
            (Point2(5, 1), Point2(5, 1)),
        ]
        with pytest.raises(DegenerateConfiguration):
            dlt_from_correspondences(pairs)

    def test_too_few_points(self):
        pairs = [(Point2(0, 0), Point2(0, 0))] * 3
        with pytest.raises(DegenerateConfiguration):
            dlt_from_correspondences(pairs)


class TestCornerError:
    def test_equal_transforms(self, rng):
        h = random_homography(rng)
        assert corner_error(h, h, 640, 480) == (0.0, 0.0, 0.0, 0.0)

    def test_unit_translation(self):
        h_est = Homography.translation(1.0, 0.0)
        dists = corner_error(h_est, Homography.identity(), 640, 480)
        assert all(abs(d - 1.0) < 1e-12 for d in dists)

    def test_matches_direct_recomputation(self, rng):
        h_gt = random_homography(rng)
        h_est = Homography(h_gt.m + rng.normal(0, 1e-3, size=(3, 3)))
        dists = corner_error(h_est, h_gt, 640, 480)
        corners = [Point2(0, 0), Point2(640, 0), Point2(640, 480), Point2(0, 480)]
        for d, c in zip(dists, corners):
            pg = apply_point(h_gt, c)
            pe = apply_point(h_est, c)
            assert abs(d - math.hypot(pg.x - pe.x, pg.y - pe.y)) < 1e-12


class TestQuad:
    def test_zero_area_rejected(self):
        with pytest.raises(Exception):
            Quad.from_xy([(0, 0), (1, 1), (2, 2), (3, 3)])

    def test_axis_aligned_bounds(self):
        q = Quad.axis_aligned(1, 2, 5, 7)
        assert q.bounds() == (1, 2, 5, 7)


class TestTextFormat:
    def test_roundtrip(self, rng):
        h = random_homography(rng)
        parsed = parse_homography_text(format_homography_text(h))
        assert np.allclose(parsed.m, h.m, atol=1e-12)

    def test_hpatches_layout(self):
        text = "2 0 0\n0 2 0\n0 0 1\n"
        h = parse_homography_text(text)
        assert np.allclose(h.m, np.diag([2.0, 2.0, 1.0]))

    def test_bad_count(self):
        with pytest.raises(Exception):
            parse_homography_text("1 2 3 4")
