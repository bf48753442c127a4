"""Self-contained DoG + gradient-histogram extractor (SIFT-like).

Serves as the hand-crafted transfer target: Gaussian pyramid, 3x3x3
difference-of-Gaussian extrema, contrast and edge-ratio rejection, a single
dominant orientation from a 36-bin histogram, and the classic 4x4x8
trilinearly-binned descriptor (L2-normalised, clamped at 0.2, renormalised).
No subpixel refinement and no multi-orientation duplication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Point2
from .imagecore import GrayImage
from .spnet import Keypoint


class ClassicalError(Exception):
    pass


class ImageTooSmall(ClassicalError):
    pass


BASE_SIGMA = 1.6
ASSUMED_BLUR = 0.5
ORI_HIST_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
DESC_SCALE_FACTOR = 3.0
DESC_MAG_CLAMP = 0.2
BORDER = 5


@dataclass(frozen=True)
class ClassicalConfig:
    octaves: int = 4
    scales_per_octave: int = 3
    contrast_threshold: float = 0.03
    edge_ratio_threshold: float = 10.0
    descriptor_width: int = 4
    orientations: int = 8

    def __post_init__(self):
        if self.octaves < 1 or self.scales_per_octave < 1:
            raise ClassicalError("octaves and scales_per_octave must be >= 1")
        if self.contrast_threshold <= 0 or self.edge_ratio_threshold <= 0:
            raise ClassicalError("thresholds must be positive")


def _gaussian_pyramid(plane: np.ndarray, cfg: ClassicalConfig) -> list[list[np.ndarray]]:
    s = cfg.scales_per_octave
    k = 2.0 ** (1.0 / s)
    first = ndimage.gaussian_filter(plane, math.sqrt(max(BASE_SIGMA**2 - ASSUMED_BLUR**2, 0.01)))
    n_octaves = min(cfg.octaves, max(1, int(math.log2(min(plane.shape) / 16.0)) + 1))
    pyramid = []
    base = first
    for _ in range(n_octaves):
        octave = [base]
        for i in range(1, s + 3):
            prev_sigma = BASE_SIGMA * k ** (i - 1)
            step = prev_sigma * math.sqrt(k * k - 1.0)
            octave.append(ndimage.gaussian_filter(octave[-1], step))
        pyramid.append(octave)
        base = octave[s][::2, ::2]
    return pyramid


def _strict_extrema(dog: np.ndarray) -> np.ndarray:
    """Boolean mask of strict 3x3x3 extrema on the (layers, h, w) stack."""
    fp = np.ones((3, 3, 3), dtype=bool)
    fp[1, 1, 1] = False
    nb_max = ndimage.maximum_filter(dog, footprint=fp, mode="constant", cval=np.inf)
    nb_min = ndimage.minimum_filter(dog, footprint=fp, mode="constant", cval=-np.inf)
    return (dog > nb_max) | (dog < nb_min)


def _edge_ok(layer: np.ndarray, y: np.ndarray, x: np.ndarray, ratio: float) -> np.ndarray:
    c = layer[y, x]
    hxx = layer[y, x + 1] + layer[y, x - 1] - 2.0 * c
    hyy = layer[y + 1, x] + layer[y - 1, x] - 2.0 * c
    hxy = 0.25 * (layer[y + 1, x + 1] - layer[y + 1, x - 1] - layer[y - 1, x + 1] + layer[y - 1, x - 1])
    tr = hxx + hyy
    det = hxx * hyy - hxy * hxy
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (det > 0) & (tr * tr / det < (ratio + 1.0) ** 2 / ratio)
    return ok


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    return mag, ang


def _dominant_orientation(mag: np.ndarray, ang: np.ndarray, y: int, x: int, sigma: float) -> float:
    """Peak of the Gaussian-weighted 36-bin gradient histogram (radians)."""
    h, w = mag.shape
    radius = max(1, int(round(ORI_RADIUS_FACTOR * ORI_SIGMA_FACTOR * sigma)))
    y0, y1 = max(1, y - radius), min(h - 2, y + radius)
    x0, x1 = max(1, x - radius), min(w - 2, x + radius)
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    weight = np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2.0 * (ORI_SIGMA_FACTOR * sigma) ** 2))
    contrib = weight * mag[yy, xx]
    bins = np.round(ang[yy, xx] * ORI_HIST_BINS / (2.0 * math.pi)).astype(int) % ORI_HIST_BINS
    hist = np.zeros(ORI_HIST_BINS)
    np.add.at(hist, bins.ravel(), contrib.ravel())
    # circular [1, 4, 6, 4, 1]/16 smoothing, applied twice
    for _ in range(2):
        hist = (
            6.0 * hist
            + 4.0 * (np.roll(hist, 1) + np.roll(hist, -1))
            + np.roll(hist, 2)
            + np.roll(hist, -2)
        ) / 16.0
    peak = int(np.argmax(hist))
    left = hist[(peak - 1) % ORI_HIST_BINS]
    right = hist[(peak + 1) % ORI_HIST_BINS]
    denom = left - 2.0 * hist[peak] + right
    offset = 0.5 * (left - right) / denom if abs(denom) > 1e-12 else 0.0
    return ((peak + offset) % ORI_HIST_BINS) * 2.0 * math.pi / ORI_HIST_BINS


def _descriptor(
    mag: np.ndarray, ang: np.ndarray, y: int, x: int, sigma: float, theta: float, cfg: ClassicalConfig
) -> np.ndarray:
    """4x4 spatial cells x orientation bins, trilinear binning."""
    d = cfg.descriptor_width
    nbins = cfg.orientations
    hist_width = DESC_SCALE_FACTOR * sigma
    half = int(round(hist_width * math.sqrt(2.0) * (d + 1) * 0.5))
    h, w = mag.shape
    y0, y1 = max(1, y - half), min(h - 2, y + half)
    x0, x1 = max(1, x - half), min(w - 2, x + half)
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dy = (yy - y).astype(float)
    dx = (xx - x).astype(float)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    u = (dx * cos_t + dy * sin_t) / hist_width + 0.5 * d - 0.5
    v = (-dx * sin_t + dy * cos_t) / hist_width + 0.5 * d - 0.5
    keep = (u > -1.0) & (u < d) & (v > -1.0) & (v < d)
    if not keep.any():
        return np.zeros(d * d * nbins)
    u, v = u[keep], v[keep]
    weight = np.exp(-(u - 0.5 * d + 0.5) ** 2 / (0.5 * d * d) - (v - 0.5 * d + 0.5) ** 2 / (0.5 * d * d))
    contrib = weight * mag[yy, xx][keep]
    obin = ((ang[yy, xx][keep] - theta) % (2.0 * math.pi)) * nbins / (2.0 * math.pi)

    hist = np.zeros((d + 2, d + 2, nbins))
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    o0 = np.floor(obin).astype(int)
    fu, fv, fo = u - u0, v - v0, obin - o0
    for du, wu in ((0, 1.0 - fu), (1, fu)):
        for dv, wv in ((0, 1.0 - fv), (1, fv)):
            for do, wo in ((0, 1.0 - fo), (1, fo)):
                np.add.at(
                    hist,
                    (v0 + dv + 1, u0 + du + 1, (o0 + do) % nbins),
                    contrib * wu * wv * wo,
                )
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm > 1e-12:
        vec = np.minimum(vec / norm, DESC_MAG_CLAMP)
        norm = np.linalg.norm(vec)
        if norm > 1e-12:
            vec = vec / norm
    return vec


def extract(img: GrayImage, cfg: ClassicalConfig | None = None) -> list[tuple[Keypoint, np.ndarray]]:
    """Detect scale-space extrema and describe them.

    Returns (keypoint, unit 128-vector) pairs sorted by descending score and
    then row-major full-resolution position.  Positions are extremum pixels
    mapped back to the input resolution (no subpixel refinement).
    """
    cfg = cfg or ClassicalConfig()
    if img.width < 32 or img.height < 32:
        raise ImageTooSmall(f"{img.width}x{img.height} below the 32x32 minimum")
    plane = img.plane().astype(float)
    pyramid = _gaussian_pyramid(plane, cfg)
    s = cfg.scales_per_octave
    k = 2.0 ** (1.0 / s)

    results: list[tuple[Keypoint, np.ndarray]] = []
    for octave_idx, gaussians in enumerate(pyramid):
        dog = np.stack([gaussians[i + 1] - gaussians[i] for i in range(s + 2)])
        extrema = _strict_extrema(dog)
        extrema[:, :BORDER, :] = False
        extrema[:, -BORDER:, :] = False
        extrema[:, :, :BORDER] = False
        extrema[:, :, -BORDER:] = False
        extrema &= np.abs(dog) > cfg.contrast_threshold
        grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for layer in range(1, s + 1):
            ys, xs = np.nonzero(extrema[layer])
            if len(ys) == 0:
                continue
            ok = _edge_ok(dog[layer], ys, xs, cfg.edge_ratio_threshold)
            ys, xs = ys[ok], xs[ok]
            if len(ys) == 0:
                continue
            if layer not in grads:
                grads[layer] = _gradients(gaussians[layer])
            mag, ang = grads[layer]
            sigma = BASE_SIGMA * k**layer
            scale = 2.0**octave_idx
            for y, x in zip(ys.tolist(), xs.tolist()):
                theta = _dominant_orientation(mag, ang, y, x, sigma)
                desc = _descriptor(mag, ang, y, x, sigma, theta, cfg)
                if not desc.any():
                    continue
                kp = Keypoint(
                    position=Point2(x * scale, y * scale),
                    score=float(min(abs(dog[layer, y, x]), 1.0)),
                )
                results.append((kp, desc))

    results.sort(key=lambda t: (-t[0].score, t[0].position.y, t[0].position.x))
    return results
