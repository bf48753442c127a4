"""Descriptor matching and robust homography estimation.

Matching is exact exhaustive nearest-neighbour in Euclidean distance with a
budget cap; the estimator is a seeded RANSAC loop over 4-point DLT fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    DegenerateConfiguration,
    Homography,
    Point2,
    apply_points,
    dlt_from_correspondences,
)
from .spnet import Keypoint


class MatchError(Exception):
    pass


class DimensionMismatch(MatchError):
    pass


class TooFewMatches(MatchError):
    pass


class NoModel(MatchError):
    pass


@dataclass(frozen=True)
class MatchSet:
    """(source index, target index, distance) triples sorted by distance."""

    pairs: tuple[tuple[int, int, float], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def source_indices(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=int)

    def target_indices(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=int)


@dataclass(frozen=True)
class RansacResult:
    h_est: Homography
    inlier_flags: tuple[bool, ...]
    iterations_used: int

    @property
    def inlier_count(self) -> int:
        return int(sum(self.inlier_flags))


def knn_match(desc_a: np.ndarray, desc_b: np.ndarray, top_n: int = 1000) -> MatchSet:
    """Nearest neighbour in B for every descriptor in A, kept up to top_n.

    Distances are exact Euclidean; the match list is sorted ascending by
    distance with ties broken by (source index, target index).
    """
    a = np.asarray(desc_a, dtype=float)
    b = np.asarray(desc_b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"descriptor shapes {a.shape} vs {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return MatchSet(())

    # Gram-matrix selection (chunked), exact distance recomputed per winner.
    b_sq = (b * b).sum(axis=1)
    pairs = []
    chunk = max(1, int(4e6 // max(b.shape[0], 1)))
    for start in range(0, a.shape[0], chunk):
        part = a[start : start + chunk]
        d2 = (part * part).sum(axis=1)[:, None] + b_sq[None, :] - 2.0 * (part @ b.T)
        nn = np.argmin(d2, axis=1)
        for row, j in enumerate(nn):
            i = start + row
            dist = float(np.sqrt(((a[i] - b[j]) ** 2).sum()))
            pairs.append((i, int(j), dist))
    pairs.sort(key=lambda t: (t[2], t[0], t[1]))
    return MatchSet(tuple(pairs[: min(top_n, len(pairs))]))


def _as_xy(kps) -> np.ndarray:
    if isinstance(kps, np.ndarray):
        return np.asarray(kps, dtype=float)
    return np.array([[kp.position.x, kp.position.y] for kp in kps], dtype=float)


def _reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    proj = apply_points(h, src)
    with np.errstate(invalid="ignore"):
        err = np.linalg.norm(proj - dst, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def ransac_homography(
    kps_a,
    kps_b,
    matches: MatchSet,
    iters: int = 2000,
    inlier_px: float = 3.0,
    seed: int = 0,
) -> RansacResult:
    """Seeded minimal-sample RANSAC over DLT with an all-inlier refit.

    Every valid iteration draws 4 distinct matches, fits a homography and
    counts matches with reprojection error < inlier_px.  Degenerate samples
    (three collinear points) are skipped without consuming an iteration.
    Best model by (inlier count, lower mean inlier error); the winner is
    re-fit on all its inliers and the flags recomputed under the refit.
    """
    if len(matches) < 4:
        raise TooFewMatches(f"need >= 4 matches, got {len(matches)}")
    xy_a = _as_xy(kps_a)
    xy_b = _as_xy(kps_b)
    src = xy_a[matches.source_indices()]
    dst = xy_b[matches.target_indices()]
    n = len(matches)

    rng = np.random.default_rng(seed)
    best: tuple[int, float] | None = None  # (count, mean inlier error)
    best_h: Homography | None = None
    best_flags: np.ndarray | None = None

    done = 0
    attempts = 0
    max_attempts = iters * 20
    while done < iters and attempts < max_attempts:
        attempts += 1
        pick = rng.choice(n, size=4, replace=False)
        try:
            h = dlt_from_correspondences(
                [(Point2(*src[i]), Point2(*dst[i])) for i in pick]
            )
        except DegenerateConfiguration:
            continue
        done += 1
        err = _reprojection_errors(h, src, dst)
        flags = err < inlier_px
        count = int(flags.sum())
        if count < 4:
            continue
        mean_err = float(err[flags].mean())
        if best is None or (count, -mean_err) > (best[0], -best[1]):
            best = (count, mean_err)
            best_h = h
            best_flags = flags

    if best_h is None or best_flags is None:
        raise NoModel(f"no usable 4-point sample in {attempts} attempts")

    # Final least-squares refit on the consensus set.
    inlier_pairs = [
        (Point2(*src[i]), Point2(*dst[i])) for i in np.nonzero(best_flags)[0]
    ]
    try:
        refit = dlt_from_correspondences(inlier_pairs)
        refit_err = _reprojection_errors(refit, src, dst)
        refit_flags = refit_err < inlier_px
        if refit_flags.sum() >= 4:
            best_h, best_flags = refit, refit_flags
    except DegenerateConfiguration:
        pass

    return RansacResult(
        h_est=best_h,
        inlier_flags=tuple(bool(f) for f in best_flags),
        iterations_used=done,
    )
