import numpy as np
import pytest

from patchattack.geometry import Quad
from patchattack.imagecore import (
    CropTooLarge,
    ImageBuffer,
    MalformedHeader,
    TruncatedPayload,
    UnsupportedMaxval,
    bilinear_sample,
    decode_ppm,
    encode_ppm,
    patch_footprint,
    quad_contains,
    random_crop,
    random_crop_with_offset,
    resize,
    resize_gradient,
    to_grayscale,
    warp_into_quad,
)


class TestDecodePpm:
    def test_p5_single_pixel(self):
        img = decode_ppm(b"P5\n1 1\n255\n\xff")
        assert img.channels == 1 and img.data[0, 0, 0] == 1.0

    def test_p6_two_pixels(self):
        img = decode_ppm(b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\x00")
        assert img.channels == 3
        assert tuple(img.data[0, 0]) == (1.0, 0.0, 0.0)
        assert tuple(img.data[0, 1]) == (0.0, 0.0, 0.0)

    def test_truncated_payload(self):
        raw = b"P5\n4 4\n255\n" + b"\x00" * 15
        with pytest.raises(TruncatedPayload):
            decode_ppm(raw)

    def test_bad_magic(self):
        with pytest.raises(MalformedHeader):
            decode_ppm(b"P3\n1 1\n255\n0 0 0")

    def test_maxval_too_large(self):
        with pytest.raises(UnsupportedMaxval):
            decode_ppm(b"P5\n1 1\n65535\n\x00\x00")

    def test_comments_in_header(self):
        img = decode_ppm(b"P5\n# a comment\n2 1\n# another\n255\n\x80\x00")
        assert img.width == 2 and img.height == 1

    def test_maxval_scaling(self):
        img = decode_ppm(b"P5\n1 1\n100\n\x64")
        assert img.data[0, 0, 0] == 1.0

    def test_roundtrip_quantization(self):
        img = ImageBuffer(np.array([[[0.0], [0.5], [1.0]]]))
        again = decode_ppm(encode_ppm(img))
        # round-half-up: 0.5*255 + 0.5 = 128.0
        assert np.allclose(again.data[0, :, 0], [0.0, 128 / 255, 1.0])


class TestGrayscale:
    def test_white(self):
        img = ImageBuffer(np.ones((1, 1, 3)))
        assert to_grayscale(img).data[0, 0, 0] == pytest.approx(1.0)

    def test_red_coefficient(self):
        img = ImageBuffer(np.array([[[1.0, 0.0, 0.0]]]))
        assert to_grayscale(img).data[0, 0, 0] == pytest.approx(0.299)

    def test_passthrough_single_channel(self):
        img = ImageBuffer(np.full((2, 2, 1), 0.25))
        assert to_grayscale(img) is img

    def test_bounded_by_channel_extremes(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 3)))
        gray = to_grayscale(img).plane()
        lo = img.data.min(axis=2)
        hi = img.data.max(axis=2)
        assert np.all(gray >= lo - 1e-12) and np.all(gray <= hi + 1e-12)


class TestBilinear:
    def test_integer_coordinates_exact(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(5, 7, 1)))
        for y in range(5):
            for x in range(7):
                assert bilinear_sample(img, x, y) == img.data[y, x, 0]

    def test_midpoint(self):
        img = ImageBuffer(np.array([[[0.0], [1.0]]]))
        assert bilinear_sample(img, 0.5, 0.0) == pytest.approx(0.5)

    def test_matches_naive_oracle(self, rng):
        plane = rng.uniform(0, 1, size=(6, 9))
        img = ImageBuffer(plane[:, :, None])

        def naive(x, y):
            x = min(max(x, 0.0), 8.0)
            y = min(max(y, 0.0), 5.0)
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            x1, y1 = min(x0 + 1, 8), min(y0 + 1, 5)
            fx, fy = x - x0, y - y0
            return (
                plane[y0, x0] * (1 - fx) * (1 - fy)
                + plane[y0, x1] * fx * (1 - fy)
                + plane[y1, x0] * (1 - fx) * fy
                + plane[y1, x1] * fx * fy
            )

        for x in np.linspace(-1.0, 9.5, 22):
            for y in np.linspace(-1.0, 6.5, 16):
                assert abs(bilinear_sample(img, x, y) - naive(x, y)) < 1e-12

    def test_out_of_bounds_clamps(self):
        img = ImageBuffer(np.array([[[0.2], [0.8]]]))
        assert bilinear_sample(img, -5.0, 0.0) == pytest.approx(0.2)
        assert bilinear_sample(img, 99.0, 0.0) == pytest.approx(0.8)


class TestResize:
    def test_same_size_identity(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(6, 6, 1)))
        assert np.array_equal(resize(img, 6, 6).data, img.data)

    def test_constant_stays_constant(self):
        img = ImageBuffer(np.full((4, 5, 1), 0.375))
        out = resize(img, 13, 9)
        assert np.allclose(out.data, 0.375)

    def test_ramp_up_down(self):
        ramp = np.tile(np.linspace(0.0, 1.0, 16), (16, 1))
        img = ImageBuffer(ramp[:, :, None])
        up = resize(img, 32, 32)
        down = resize(up, 16, 16)
        assert np.abs(down.plane() - ramp).max() < 1e-2

    def test_gradient_is_transpose(self, rng):
        x = rng.uniform(0, 1, size=(7, 5))
        g = rng.normal(size=(11, 9))
        fwd = resize(ImageBuffer(x[:, :, None]), 9, 11).plane()
        lhs = float((fwd * g).sum())
        rhs = float((x * resize_gradient(g, 7, 5)).sum())
        assert abs(lhs - rhs) < 1e-9


class TestRandomCrop:
    def test_full_size_identity(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(5, 5, 1)))
        out = random_crop(img, 5, 5, np.random.default_rng(0))
        assert np.array_equal(out.data, img.data)

    def test_deterministic_given_seed(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(32, 32, 1)))
        a = random_crop(img, 8, 8, np.random.default_rng(99))
        b = random_crop(img, 8, 8, np.random.default_rng(99))
        assert np.array_equal(a.data, b.data)

    def test_too_large(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(4, 4, 1)))
        with pytest.raises(CropTooLarge):
            random_crop(img, 5, 4, np.random.default_rng(0))

    def test_offsets_roughly_uniform(self, rng):
        img = ImageBuffer(rng.uniform(0, 1, size=(4, 11, 1)))
        gen = np.random.default_rng(7)
        counts = np.zeros(8)
        n = 10_000
        for _ in range(n):
            _, (ox, _) = random_crop_with_offset(img, 4, 4, gen)
            counts[ox] += 1
        expected = n / 8
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # 7 dof; 24.3 is the 0.1% critical value
        assert chi2 < 24.3


class TestWarpIntoQuad:
    def test_identity_placement_bit_exact(self, rng):
        canvas = ImageBuffer(rng.uniform(0, 1, size=(12, 12, 1)))
        patch = ImageBuffer(rng.uniform(0, 1, size=(5, 5, 1)))
        out = warp_into_quad(canvas, patch, patch_footprint(patch))
        assert np.array_equal(out.data[:5, :5], patch.data)
        assert np.array_equal(out.data[5:, :], canvas.data[5:, :])
        assert np.array_equal(out.data[:5, 5:], canvas.data[:5, 5:])

    def test_quad_outside_canvas(self, rng):
        canvas = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 1)))
        patch = ImageBuffer(np.ones((4, 4, 1)))
        quad = Quad.axis_aligned(100, 100, 104, 104)
        out = warp_into_quad(canvas, patch, quad)
        assert np.array_equal(out.data, canvas.data)

    def test_double_scale_matches_resize(self, rng):
        canvas = ImageBuffer(np.zeros((24, 24, 1)))
        patch = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 1)))
        quad = Quad.axis_aligned(0, 0, 14, 14)  # footprint scaled 2x
        warped = warp_into_quad(canvas, patch, quad)
        oracle = resize(patch, 15, 15)
        assert np.abs(warped.data[:15, :15] - oracle.data).max() < 1e-6

    def test_idempotent(self, rng):
        canvas = ImageBuffer(rng.uniform(0, 1, size=(16, 16, 1)))
        patch = ImageBuffer(rng.uniform(0, 1, size=(6, 6, 1)))
        quad = Quad.from_xy([(2.5, 1.0), (12.0, 2.0), (13.0, 13.5), (1.0, 12.0)])
        once = warp_into_quad(canvas, patch, quad)
        twice = warp_into_quad(once, patch, quad)
        assert np.array_equal(once.data, twice.data)

    def test_gray_patch_on_color_canvas(self, rng):
        canvas = ImageBuffer(rng.uniform(0, 1, size=(10, 10, 3)))
        patch = ImageBuffer(np.full((4, 4, 1), 0.7))
        out = warp_into_quad(canvas, patch, patch_footprint(patch))
        assert np.allclose(out.data[:4, :4], 0.7)

    def test_outputs_stay_bounded(self, rng):
        canvas = ImageBuffer(rng.uniform(0, 1, size=(16, 16, 1)))
        patch = ImageBuffer(rng.uniform(0, 1, size=(8, 8, 1)))
        quad = Quad.from_xy([(1, 1), (14, 2), (15, 15), (0, 13)])
        out = warp_into_quad(canvas, patch, quad)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestQuadContains:
    def test_rectangle_pixel_count(self):
        quad = Quad.axis_aligned(0, 0, 4, 4)
        gx, gy = np.meshgrid(np.arange(8, dtype=float), np.arange(8, dtype=float))
        assert int(quad_contains(quad, gx, gy).sum()) == 25  # centers 0..4 inclusive

    def test_winding_insensitive(self):
        cw = Quad.from_xy([(0, 0), (4, 0), (4, 4), (0, 4)])
        ccw = Quad.from_xy([(0, 0), (0, 4), (4, 4), (4, 0)])
        gx, gy = np.meshgrid(np.linspace(-1, 5, 20), np.linspace(-1, 5, 20))
        assert np.array_equal(quad_contains(cw, gx, gy), quad_contains(ccw, gx, gy))
