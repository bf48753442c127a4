"""Planar projective geometry: homographies, points and quads.

Coordinate convention used everywhere in this package: origin at the top-left
of the image, x to the right, y downward, pixel centers on integer
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GeometryError(Exception):
    """Base class for geometry failures."""


class DegeneratePoint(GeometryError):
    """The point maps to infinity under the transform."""


class Singular(GeometryError):
    """The matrix is not invertible."""


class DegenerateConfiguration(GeometryError):
    """The correspondences do not determine a homography."""


DET_EPS = 1e-12
DENOM_EPS = 1e-12


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Quad:
    """Four corners in a fixed winding order (no self-intersection)."""

    corners: tuple[Point2, Point2, Point2, Point2]

    def __post_init__(self):
        if len(self.corners) != 4:
            raise GeometryError("quad needs exactly 4 corners")
        if abs(self.signed_area()) <= 0.0:
            raise GeometryError("quad has zero area")

    @classmethod
    def from_xy(cls, xy: Iterable[tuple[float, float]]) -> "Quad":
        pts = tuple(Point2(float(x), float(y)) for x, y in xy)
        return cls(pts)  # type: ignore[arg-type]

    @classmethod
    def axis_aligned(cls, x0: float, y0: float, x1: float, y1: float) -> "Quad":
        """Rectangle given by opposite corners, wound TL, TR, BR, BL."""
        return cls.from_xy([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.corners], dtype=float)

    def signed_area(self) -> float:
        a = self.as_array()
        x, y = a[:, 0], a[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def bounds(self) -> tuple[float, float, float, float]:
        a = self.as_array()
        return float(a[:, 0].min()), float(a[:, 1].min()), float(a[:, 0].max()), float(a[:, 1].max())


class Homography:
    """3x3 homogeneous projective transform.

    The matrix is canonicalised on construction: scaled so that h33 = 1 when
    |h33| is not tiny, otherwise to unit Frobenius norm (sign fixed by the
    largest-magnitude entry).  Construction rejects singular matrices.
    """

    __slots__ = ("m",)

    def __init__(self, matrix: Sequence[Sequence[float]] | np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise GeometryError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("homography has non-finite entries")
        m = _canonicalize(m)
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise Singular("homography matrix is singular")
        self.m = m
        self.m.setflags(write=False)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])

    @classmethod
    def scaling(cls, sx: float, sy: float) -> "Homography":
        return cls([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])

    def __repr__(self) -> str:
        rows = "; ".join(" ".join(f"{v:.6g}" for v in row) for row in self.m)
        return f"Homography([{rows}])"


def _canonicalize(m: np.ndarray) -> np.ndarray:
    if abs(m[2, 2]) > 1e-9:
        return m / m[2, 2]
    m = m / np.linalg.norm(m)
    flat = m.ravel()
    lead = flat[np.argmax(np.abs(flat))]
    return m if lead >= 0 else -m


def apply_point(h: Homography, p: Point2) -> Point2:
    """Map a point through the homography.

    Raises DegeneratePoint when the homogeneous denominator vanishes (the
    point maps to infinity).
    """
    m = h.m
    w = m[2, 0] * p.x + m[2, 1] * p.y + m[2, 2]
    if abs(w) <= DENOM_EPS:
        raise DegeneratePoint(f"point ({p.x}, {p.y}) maps to infinity")
    x = (m[0, 0] * p.x + m[0, 1] * p.y + m[0, 2]) / w
    y = (m[1, 0] * p.x + m[1, 1] * p.y + m[1, 2]) / w
    return Point2(x, y)


def apply_points(h: Homography, xy: np.ndarray) -> np.ndarray:
    """Vectorised apply_point for an (n, 2) array.

    Rows whose denominator vanishes come back as +inf instead of raising,
    so robust estimators can treat them as unusable.
    """
    xy = np.asarray(xy, dtype=float)
    ones = np.ones((xy.shape[0], 1))
    ph = np.hstack([xy, ones]) @ h.m.T
    w = ph[:, 2]
    out = np.full_like(xy, np.inf)
    ok = np.abs(w) > DENOM_EPS
    out[ok] = ph[ok, :2] / w[ok, None]
    return out


def invert(h: Homography) -> Homography:
    """Inverse transform; raises Singular for non-invertible input."""
    det = np.linalg.det(h.m)
    if abs(det) <= DET_EPS:
        raise Singular("cannot invert: determinant too small")
    return Homography(np.linalg.inv(h.m))


def compose(a: Homography, b: Homography) -> Homography:
    """Composition: apply_point(compose(a, b), p) == apply_point(a, apply_point(b, p))."""
    return Homography(a.m @ b.m)


def transform_quad(h: Homography, q: Quad) -> Quad:
    return Quad(tuple(apply_point(h, p) for p in q.corners))  # type: ignore[arg-type]


def _hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate the centroid to the origin and scale mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    shifted = pts - centroid
    mean_dist = np.mean(np.linalg.norm(shifted, axis=1))
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    t = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return shifted * scale, t


def dlt_from_correspondences(pairs: Sequence[tuple[Point2, Point2]]) -> Homography:
    """Least-squares homography from >= 4 correspondences (normalized DLT).

    Each pair maps source -> destination.  Points are Hartley-normalized,
    the stacked 2n x 9 system is solved by SVD, and the result is
    denormalized.  Raises DegenerateConfiguration when the system is
    rank-deficient (e.g. three collinear source points).
    """
    if len(pairs) < 4:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {len(pairs)}")
    src = np.array([[p.x, p.y] for p, _ in pairs], dtype=float)
    dst = np.array([[q.x, q.y] for _, q in pairs], dtype=float)

    src_n, t_src = _hartley_normalization(src)
    dst_n, t_dst = _hartley_normalization(dst)

    n = len(pairs)
    a = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = src_n[i]
        u, v = dst_n[i]
        a[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]

    _, s, vt = np.linalg.svd(a)
    # A one-dimensional null space is expected; a second tiny singular value
    # means the configuration does not pin down the homography.
    if s[0] <= 0 or s[7] / s[0] < 1e-10:
        raise DegenerateConfiguration("design matrix is rank-deficient")
    h_norm = vt[-1].reshape(3, 3)

    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    try:
        return Homography(h)
    except Singular as exc:
        raise DegenerateConfiguration("estimated homography is singular") from exc


def corner_error(
    h_est: Homography, h_gt: Homography, width: float, height: float
) -> tuple[float, float, float, float]:
    """Per-corner displacement between the two transforms.

    The four corners of the (0,0)-(width,height) rectangle are mapped by both
    homographies; returns the Euclidean distance at each corner.
    """
    corners = [Point2(0.0, 0.0), Point2(width, 0.0), Point2(width, height), Point2(0.0, height)]
    dists = []
    for c in corners:
        pg = apply_point(h_gt, c)
        pe = apply_point(h_est, c)
        dists.append(math.hypot(pg.x - pe.x, pg.y - pe.y))
    return tuple(dists)  # type: ignore[return-value]


def parse_homography_text(text: str) -> Homography:
    """Parse the 9-number whitespace-separated text format (row-major)."""
    values = text.split()
    if len(values) != 9:
        raise GeometryError(f"expected 9 numbers, got {len(values)}")
    try:
        nums = [float(v) for v in values]
    except ValueError as exc:
        raise GeometryError(f"unparseable homography value: {exc}") from exc
    return Homography(np.array(nums).reshape(3, 3))


def format_homography_text(h: Homography) -> str:
    """Serialise as three lines of three decimals (HPatches-compatible)."""
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in h.m) + "\n"
