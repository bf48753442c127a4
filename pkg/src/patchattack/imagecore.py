"""Raster images: PPM/PGM codec, grayscale, bilinear sampling, warping.

Images are stored as float64 arrays of shape (height, width, channels) with
intensities in [0, 1].  Quantization to 8 bits happens only at file I/O
boundaries so that the optimisation pipeline keeps real-valued gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateConfiguration, Point2, Quad, apply_points, dlt_from_correspondences, invert


class ImageError(Exception):
    """Base class for raster failures."""


class MalformedHeader(ImageError):
    pass


class TruncatedPayload(ImageError):
    pass


class UnsupportedMaxval(ImageError):
    pass


class CropTooLarge(ImageError):
    pass


class DegenerateQuad(ImageError):
    """Placement quad does not admit a homography."""


@dataclass(frozen=True)
class ImageBuffer:
    """Pixel raster with 1 (gray) or 3 (RGB) channels, values in [0, 1]."""

    data: np.ndarray  # (height, width, channels), float64

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ImageError(f"expected (h, w, 1|3) array, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ImageError("empty image")
        d.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """The (h, w) view of a single-channel image."""
        if self.channels != 1:
            raise ImageError("plane() requires a single-channel image")
        return self.data[:, :, 0]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        a = np.asarray(arr, dtype=float)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(np.clip(a, 0.0, 1.0).copy())

    @classmethod
    def constant(cls, width: int, height: int, value: float, channels: int = 1) -> "ImageBuffer":
        return cls(np.full((height, width, channels), float(value)))


# A GrayImage is an ImageBuffer with channels == 1.
GrayImage = ImageBuffer


def _read_header_tokens(raw: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    """Read whitespace-separated header tokens, skipping '#' comments."""
    tokens: list[bytes] = []
    n = len(raw)
    while len(tokens) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeader("header ended prematurely")
        tokens.append(raw[start:pos])
    return tokens, pos


def decode_ppm(raw: bytes) -> ImageBuffer:
    """Decode binary PGM (P5) or PPM (P6) with maxval <= 255."""
    if len(raw) < 2 or raw[:2] not in (b"P5", b"P6"):
        raise MalformedHeader("not a binary PGM/PPM (magic must be P5 or P6)")
    channels = 1 if raw[:2] == b"P5" else 3
    try:
        tokens, pos = _read_header_tokens(raw, 3, 2)
        width, height, maxval = (int(t) for t in tokens)
    except (ValueError, MalformedHeader) as exc:
        raise MalformedHeader(f"bad PNM header: {exc}") from exc
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise UnsupportedMaxval(f"maxval {maxval} unsupported (only <= 255)")
    if maxval < 1:
        raise MalformedHeader(f"bad maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    payload = raw[pos : pos + expected]
    if len(payload) < expected:
        raise TruncatedPayload(f"need {expected} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype=np.uint8).astype(float) / float(maxval)
    return ImageBuffer(values.reshape(height, width, channels))


def encode_ppm(img: ImageBuffer) -> bytes:
    """Encode as binary P5/P6 with maxval 255 (round-half-up quantization)."""
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    q = np.clip(np.floor(img.data * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return header + q.tobytes()


def read_image(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_image(path, img: ImageBuffer) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def to_grayscale(img: ImageBuffer) -> GrayImage:
    """Rec.601 luma; single-channel input passes through unchanged."""
    if img.channels == 1:
        return img
    luma = img.data[:, :, 0] * 0.299 + img.data[:, :, 1] * 0.587 + img.data[:, :, 2] * 0.114
    return ImageBuffer(luma[:, :, None].copy())


def _bilinear_plane(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Clamped 4-neighbour interpolation of a (h, w) plane at float coords."""
    h, w = plane.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = plane[y0, x0] * (1.0 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1.0 - fx) + plane[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_sample(img: GrayImage, x: float, y: float) -> float:
    """Sample a single-channel image at (x, y); coordinates clamp to borders."""
    plane = img.plane()
    return float(_bilinear_plane(plane, np.array([x]), np.array([y]))[0])


def resize(img: ImageBuffer, new_w: int, new_h: int) -> ImageBuffer:
    """Bilinear resample with corner-aligned coordinate mapping."""
    if new_w < 1 or new_h < 1:
        raise ImageError(f"bad target size {new_w}x{new_h}")
    if new_w == img.width and new_h == img.height:
        return ImageBuffer(img.data.copy())
    xs = _corner_aligned_coords(new_w, img.width)
    ys = _corner_aligned_coords(new_h, img.height)
    gx, gy = np.meshgrid(xs, ys)
    out = np.empty((new_h, new_w, img.channels))
    for c in range(img.channels):
        out[:, :, c] = _bilinear_plane(img.data[:, :, c], gx, gy)
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def _corner_aligned_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_gradient(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of the resize sampling map: scatter-add output gradients back.

    grad_out has shape (out_h, out_w); the return value has shape (in_h, in_w)
    and satisfies <resize(x), g> = <x, resize_gradient(g)> for the same sizes.
    """
    out_h, out_w = grad_out.shape
    xs = _corner_aligned_coords(out_w, in_w)
    ys = _corner_aligned_coords(out_h, in_h)
    gx, gy = np.meshgrid(xs, ys)
    x0 = np.floor(gx).astype(int)
    y0 = np.floor(gy).astype(int)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fx = gx - x0
    fy = gy - y0
    grad_in = np.zeros((in_h, in_w))
    np.add.at(grad_in, (y0, x0), grad_out * (1.0 - fx) * (1.0 - fy))
    np.add.at(grad_in, (y0, x1), grad_out * fx * (1.0 - fy))
    np.add.at(grad_in, (y1, x0), grad_out * (1.0 - fx) * fy)
    np.add.at(grad_in, (y1, x1), grad_out * fx * fy)
    return grad_in


def random_crop(img: ImageBuffer, crop_w: int, crop_h: int, rng: np.random.Generator) -> ImageBuffer:
    """Axis-aligned crop at a uniformly drawn integer offset."""
    img_out, _ = random_crop_with_offset(img, crop_w, crop_h, rng)
    return img_out


def random_crop_with_offset(
    img: ImageBuffer, crop_w: int, crop_h: int, rng: np.random.Generator
) -> tuple[ImageBuffer, tuple[int, int]]:
    if crop_w > img.width or crop_h > img.height:
        raise CropTooLarge(f"crop {crop_w}x{crop_h} exceeds image {img.width}x{img.height}")
    ox = int(rng.integers(0, img.width - crop_w + 1))
    oy = int(rng.integers(0, img.height - crop_h + 1))
    out = ImageBuffer(img.data[oy : oy + crop_h, ox : ox + crop_w, :].copy())
    return out, (ox, oy)


def quad_contains(quad: Quad, xs: np.ndarray, ys: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Vectorised convex containment test; boundary points count as inside."""
    corners = quad.as_array()
    if quad.signed_area() < 0:
        corners = corners[::-1]
    inside = np.ones(np.shape(xs), dtype=bool)
    for i in range(4):
        x1, y1 = corners[i]
        x2, y2 = corners[(i + 1) % 4]
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        inside &= cross >= -eps
    return inside


def patch_footprint(patch: ImageBuffer) -> Quad:
    """The patch's own pixel-center rectangle, used as the warp source."""
    return Quad.axis_aligned(0.0, 0.0, patch.width - 1.0, patch.height - 1.0)


def warp_into_quad(canvas: ImageBuffer, patch: ImageBuffer, quad: Quad) -> ImageBuffer:
    """Backward-warp the patch into the quad region of a copy of the canvas.

    The homography maps the patch's pixel-center rectangle onto the quad.
    Every canvas pixel whose center lies inside the quad is filled with a
    bilinear sample of the patch; everything else is untouched.  Parts of the
    quad outside the canvas are clipped.  A gray patch broadcasts across a
    colour canvas.
    """
    if patch.channels not in (1, canvas.channels):
        raise ImageError(f"cannot place {patch.channels}-channel patch on {canvas.channels}-channel canvas")
    src = patch_footprint(patch)
    try:
        fwd = dlt_from_correspondences(list(zip(src.corners, quad.corners)))
        back = invert(fwd)
    except DegenerateConfiguration as exc:
        raise DegenerateQuad(str(exc)) from exc

    x_min, y_min, x_max, y_max = quad.bounds()
    x0 = max(0, int(np.ceil(x_min - 1e-9)))
    y0 = max(0, int(np.ceil(y_min - 1e-9)))
    x1 = min(canvas.width - 1, int(np.floor(x_max + 1e-9)))
    y1 = min(canvas.height - 1, int(np.floor(y_max + 1e-9)))
    if x0 > x1 or y0 > y1:
        return ImageBuffer(canvas.data.copy())

    gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=float), np.arange(y0, y1 + 1, dtype=float))
    mask = quad_contains(quad, gx, gy)
    if not mask.any():
        return ImageBuffer(canvas.data.copy())

    coords = apply_points(back, np.column_stack([gx[mask], gy[mask]]))
    # Snap float noise from the corner fit so integer-aligned placements copy
    # source pixels bit-exactly.
    snapped = np.rint(coords)
    near = np.abs(coords - snapped) < 1e-7
    coords[near] = snapped[near]
    out = canvas.data.copy()
    ys_idx, xs_idx = np.nonzero(mask)
    for c in range(canvas.channels):
        plane = patch.data[:, :, 0] if patch.channels == 1 else patch.data[:, :, c]
        samples = _bilinear_plane(plane, coords[:, 0], coords[:, 1])
        out[ys_idx + y0, xs_idx + x0, c] = samples
    return ImageBuffer(np.clip(out, 0.0, 1.0))
