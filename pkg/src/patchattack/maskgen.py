"""Placement of the two patch regions in the source view.

The source mask is an axis-aligned square; the target mask is the source
quad mapped through the inverse scene homography plus the smallest grid
translation that keeps it inside the image without overlapping the source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Homography, Point2, Quad, apply_point, invert, transform_quad


class MaskError(Exception):
    pass


class MaskTooLarge(MaskError):
    pass


class NoValidPlacement(MaskError):
    pass


SEARCH_STEP = 8  # px grid for the translation search


@dataclass(frozen=True)
class MaskPair:
    """Source quad, translated target quad (both source-view) and the translation."""

    source: Quad
    target: Quad
    translation: tuple[float, float]


def place_source_mask(
    img_w: int,
    img_h: int,
    mask_size: int,
    strategy: str = "center",
    rng: np.random.Generator | None = None,
) -> Quad:
    """Axis-aligned square fully inside the image.

    "center" centers it on the image; "seeded-random" draws a uniform integer
    offset from the provided generator.
    """
    if mask_size > min(img_w, img_h):
        raise MaskTooLarge(f"mask {mask_size} exceeds image {img_w}x{img_h}")
    if strategy == "center":
        x0 = img_w / 2.0 - mask_size / 2.0
        y0 = img_h / 2.0 - mask_size / 2.0
    elif strategy == "seeded-random":
        if rng is None:
            raise MaskError("seeded-random placement needs a generator")
        x0 = float(rng.integers(0, img_w - mask_size + 1))
        y0 = float(rng.integers(0, img_h - mask_size + 1))
    else:
        raise MaskError(f"unknown placement strategy {strategy!r}")
    return Quad.axis_aligned(x0, y0, x0 + mask_size, y0 + mask_size)


def point_in_quad(q: Quad, p: Point2) -> bool:
    """Convex containment with the boundary counted as inside."""
    corners = q.as_array()
    if q.signed_area() < 0:
        corners = corners[::-1]
    for i in range(4):
        x1, y1 = corners[i]
        x2, y2 = corners[(i + 1) % 4]
        if (x2 - x1) * (p.y - y1) - (y2 - y1) * (p.x - x1) < -1e-9:
            return False
    return True


def transfer_quad(h: Homography, q: Quad) -> Quad:
    """Map each corner through the homography (keeps masks scene-consistent)."""
    return transform_quad(h, q)


def _translate(q: Quad, dx: float, dy: float) -> Quad:
    return Quad(tuple(Point2(p.x + dx, p.y + dy) for p in q.corners))  # type: ignore[arg-type]


def _quad_inside_image(q: Quad, img_w: float, img_h: float) -> bool:
    return all(0.0 <= p.x <= img_w and 0.0 <= p.y <= img_h for p in q.corners)


def _projections_disjoint(a: np.ndarray, b: np.ndarray, axis: np.ndarray) -> bool:
    pa = a @ axis
    pb = b @ axis
    return pa.max() <= pb.min() + 1e-9 or pb.max() <= pa.min() + 1e-9


def quads_overlap(a: Quad, b: Quad) -> bool:
    """Separating-axis test on convex quads; touching edges do not overlap."""
    pa, pb = a.as_array(), b.as_array()
    for poly in (pa, pb):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            if _projections_disjoint(pa, pb, axis):
                return False
    return True


def _search_offsets(max_radius: float):
    """Grid offsets ordered by norm from (0,0) outward (ties: dx, then dy)."""
    n = int(max_radius // SEARCH_STEP)
    coords = np.arange(-n, n + 1) * SEARCH_STEP
    dx, dy = np.meshgrid(coords, coords)
    flat = np.column_stack([dx.ravel(), dy.ravel()])
    order = np.lexsort((flat[:, 1], flat[:, 0], np.hypot(flat[:, 0], flat[:, 1])))
    return flat[order]


def derive_target_mask(h: Homography, source: Quad, img_w: int, img_h: int) -> MaskPair:
    """Build the target mask: inverse-mapped source quad plus a separating shift.

    Corners go through h^-1, then the smallest translation on an 8 px grid is
    chosen so the translated quad stays inside the image and does not overlap
    the source quad.  Raises NoValidPlacement when the search radius (the
    larger image dimension) is exhausted.
    """
    hinv = invert(h)
    base = transform_quad(hinv, source)
    for dx, dy in _search_offsets(float(max(img_w, img_h))):
        candidate = _translate(base, float(dx), float(dy))
        if not _quad_inside_image(candidate, img_w, img_h):
            continue
        if quads_overlap(candidate, source):
            continue
        return MaskPair(source=source, target=candidate, translation=(float(dx), float(dy)))
    raise NoValidPlacement(
        f"no in-bounds non-overlapping translation for mask in {img_w}x{img_h} frame"
    )


def format_masks(mp: MaskPair) -> str:
    """Two quad lines (8 reals each, x y order) plus the translation line."""
    lines = []
    for quad in (mp.source, mp.target):
        lines.append(" ".join(f"{v:.6f}" for p in quad.corners for v in (p.x, p.y)))
    lines.append(f"{mp.translation[0]:.6f} {mp.translation[1]:.6f}")
    return "\n".join(lines) + "\n"


def parse_masks(text: str) -> MaskPair:
    rows = [line.split() for line in text.strip().splitlines()]
    if len(rows) != 3 or len(rows[0]) != 8 or len(rows[1]) != 8 or len(rows[2]) != 2:
        raise MaskError("mask file must be two 8-number quad lines and a translation line")
    quads = []
    for row in rows[:2]:
        vals = [float(v) for v in row]
        quads.append(Quad.from_xy(list(zip(vals[0::2], vals[1::2]))))
    dx, dy = (float(v) for v in rows[2])
    return MaskPair(source=quads[0], target=quads[1], translation=(dx, dy))
