"""Scene synthesis and matching-based evaluation over viewpoint sequences.

A dataset sequence is one reference image, five compared images and the five
ground-truth homographies (reference -> compared).  The harness composites a
patch into the source/target masks, runs an extractor on both views, matches
descriptors, estimates a homography with RANSAC, and scores the attack with
mask-membership ratios, repeatability and homography-estimation correctness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classical as classical_mod
from . import spnet
from .geometry import GeometryError, Homography, Point2, apply_points, corner_error, parse_homography_text
from .imagecore import GrayImage, ImageBuffer, read_image, resize, to_grayscale, warp_into_quad
from .maskgen import MaskPair, NoValidPlacement, derive_target_mask, place_source_mask, point_in_quad, transfer_quad
from .matchransac import MatchError, MatchSet, RansacResult, knn_match, ransac_homography
from .spnet import Keypoint, WeightSet

log = logging.getLogger(__name__)

N_PAIRS = 5


class BenchError(Exception):
    pass


class MissingFile(BenchError):
    def __init__(self, sequence: str, name: str):
        super().__init__(f"sequence {sequence!r} is missing {name!r}")
        self.sequence = sequence
        self.name = name


class UnreadableHomography(BenchError):
    pass


@dataclass
class Sequence:
    name: str
    reference: ImageBuffer
    compared: list[ImageBuffer]  # 5 images
    homographies: list[Homography]  # reference -> compared[i]


@dataclass(frozen=True)
class EvalThresholds:
    repeatability_eps: float = 3.0
    homography_eps: tuple[float, float, float] = (1.0, 3.0, 5.0)
    top_n: int = 1000
    detect_threshold: float = 0.015
    nms_radius: int = 4


@dataclass
class EvalRecord:
    sequence: str
    pair_index: int
    patch_name: str = "benign"
    protocol: str = "targeted"
    mask_size: int = 0
    spr: float | None = None
    tp: float | None = None
    fp: float | None = None
    repeatability: float | None = None
    he_correct: tuple[float | None, float | None, float | None] = (None, None, None)
    n_matches: int = 0
    n_source_in_mask: int = 0
    n_true_positive: int = 0
    n_false_positive: int = 0
    n_projected: int = 0
    n_repeated: int = 0
    mean_corner_error: float | None = None
    error: str | None = None


def load_hpatches(root) -> list[Sequence]:
    """Load the viewpoint (v_*) sequences; anything else is skipped with a warning."""
    root = Path(root)
    if not root.is_dir():
        raise BenchError(f"dataset root {root} is not a directory")
    sequences = []
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        if not entry.name.startswith("v_"):
            log.warning("skipping non-viewpoint sequence %s", entry.name)
            continue
        images = []
        for i in range(1, 7):
            path = entry / f"{i}.ppm"
            if not path.exists():
                raise MissingFile(entry.name, path.name)
            images.append(read_image(path))
        homos = []
        for i in range(2, 7):
            path = entry / f"H_1_{i}"
            if not path.exists():
                raise MissingFile(entry.name, path.name)
            try:
                homos.append(parse_homography_text(path.read_text()))
            except (GeometryError, ValueError) as exc:
                raise UnreadableHomography(f"{entry.name}/{path.name}: {exc}") from exc
        sequences.append(Sequence(entry.name, images[0], images[1:], homos))
    return sequences


def synthesize_pair(
    seq: Sequence, pair_idx: int, patch: GrayImage, masks: MaskPair
) -> tuple[GrayImage, GrayImage]:
    """Composite the patch into both masks on both views of one pair.

    The masks live in the source (reference) view; their target-view
    placements follow the pair's ground-truth homography, so the patches sit
    at fixed scene locations seen from both viewpoints.
    """
    h_gt = seq.homographies[pair_idx - 1]
    src = to_grayscale(seq.reference)
    src = warp_into_quad(src, patch, masks.source)
    src = warp_into_quad(src, patch, masks.target)
    tgt = to_grayscale(seq.compared[pair_idx - 1])
    tgt = warp_into_quad(tgt, patch, transfer_quad(h_gt, masks.source))
    tgt = warp_into_quad(tgt, patch, transfer_quad(h_gt, masks.target))
    return src, tgt


def compute_metrics(
    src_kps: list[Keypoint],
    tgt_kps: list[Keypoint],
    matches: MatchSet,
    masks: MaskPair,
    h_gt: Homography,
    th: EvalThresholds,
    ransac: RansacResult | None,
    src_size: tuple[int, int],
    tgt_size: tuple[int, int],
    he_per_corner: bool = False,
) -> EvalRecord:
    """Mask-membership ratios over matched points, repeatability, HE correctness.

    Ratios with a zero denominator are reported as None and skipped during
    aggregation rather than silently counted as zero.
    """
    rec = EvalRecord(sequence="", pair_index=0)
    rec.n_matches = len(matches)

    src_quad_t = transfer_quad(h_gt, masks.source)
    tgt_quad_t = transfer_quad(h_gt, masks.target)

    n_src_in = 0
    n_tp = 0
    n_fp = 0
    for i, j, _dist in matches.pairs:
        p_src = src_kps[i].position
        p_tgt = tgt_kps[j].position
        if not point_in_quad(masks.source, p_src):
            continue
        n_src_in += 1
        if point_in_quad(src_quad_t, p_tgt):
            n_tp += 1
        if point_in_quad(tgt_quad_t, p_tgt):
            n_fp += 1
    rec.n_source_in_mask = n_src_in
    rec.n_true_positive = n_tp
    rec.n_false_positive = n_fp
    rec.spr = n_src_in / len(matches) if len(matches) else None
    rec.tp = n_tp / n_src_in if n_src_in else None
    rec.fp = n_fp / n_src_in if n_src_in else None

    # Repeatability: ground-truth projections of source points that land in
    # the target frame and have a target detection within eps.
    if src_kps and tgt_kps:
        src_xy = np.array([[k.position.x, k.position.y] for k in src_kps])
        tgt_xy = np.array([[k.position.x, k.position.y] for k in tgt_kps])
        proj = apply_points(h_gt, src_xy)
        w, h = tgt_size
        in_frame = (
            np.isfinite(proj).all(axis=1)
            & (proj[:, 0] >= 0)
            & (proj[:, 0] <= w - 1)
            & (proj[:, 1] >= 0)
            & (proj[:, 1] <= h - 1)
        )
        rec.n_projected = int(in_frame.sum())
        if rec.n_projected:
            d = np.linalg.norm(proj[in_frame][:, None, :] - tgt_xy[None, :, :], axis=2)
            rec.n_repeated = int((d.min(axis=1) <= th.repeatability_eps).sum())
            rec.repeatability = rec.n_repeated / rec.n_projected

    if ransac is not None:
        w, h = src_size
        dists = corner_error(ransac.h_est, h_gt, float(w), float(h))
        rec.mean_corner_error = float(np.mean(dists))
        if he_per_corner:
            rec.he_correct = tuple(
                float(np.mean([d < eps for d in dists])) for eps in th.homography_eps
            )
        else:
            rec.he_correct = tuple(
                1.0 if rec.mean_corner_error < eps else 0.0 for eps in th.homography_eps
            )
    return rec


@dataclass
class RunConfig:
    extractor: str = "spnet"  # spnet | classical
    weights: WeightSet | None = None
    classical_cfg: classical_mod.ClassicalConfig = field(default_factory=classical_mod.ClassicalConfig)
    protocol: str = "targeted"  # targeted | untargeted
    mask_size: int = 128
    mask_strategy: str = "center"
    patch: GrayImage | None = None  # None = benign run
    patch_size: int | None = None
    thresholds: EvalThresholds = field(default_factory=EvalThresholds)
    ransac_iters: int = 2000
    inlier_px: float = 3.0
    seed: int = 0
    he_per_corner: bool = False
    patch_name: str = "benign"

    def __post_init__(self):
        if self.extractor not in ("spnet", "classical"):
            raise BenchError(f"unknown extractor {self.extractor!r}")
        if self.protocol not in ("targeted", "untargeted"):
            raise BenchError(f"unknown protocol {self.protocol!r}")
        if self.extractor == "spnet" and self.weights is None:
            raise BenchError("spnet extractor needs weights")


def _crop_to_multiple_of_8(img: GrayImage) -> GrayImage:
    h = (img.height // 8) * 8
    w = (img.width // 8) * 8
    if h == img.height and w == img.width:
        return img
    return ImageBuffer(img.data[:h, :w, :].copy())


def extract_features(img: GrayImage, cfg: RunConfig) -> tuple[list[Keypoint], np.ndarray]:
    """Run the configured extractor; detections capped at the top_n budget."""
    th = cfg.thresholds
    if cfg.extractor == "spnet":
        out = spnet.forward(cfg.weights, _crop_to_multiple_of_8(img))
        kps = spnet.decode_keypoints(
            out, threshold=th.detect_threshold, nms_radius=th.nms_radius, max_points=th.top_n
        )
        return kps, spnet.sample_descriptors(out, kps)
    pairs = classical_mod.extract(img, cfg.classical_cfg)[: th.top_n]
    kps = [kp for kp, _ in pairs]
    descs = np.array([d for _, d in pairs]) if pairs else np.zeros((0, 128))
    return kps, descs


def _sequence_masks(
    seq: Sequence, cfg: RunConfig, rng: np.random.Generator
) -> list[MaskPair]:
    """Per-pair masks (targeted protocol) or one shared mask set (untargeted)."""
    w, h = seq.reference.width, seq.reference.height
    source = place_source_mask(w, h, cfg.mask_size, cfg.mask_strategy, rng)
    if cfg.protocol == "targeted":
        return [derive_target_mask(seq.homographies[j], source, w, h) for j in range(N_PAIRS)]
    anchor = int(rng.integers(0, N_PAIRS))
    shared = derive_target_mask(seq.homographies[anchor], source, w, h)
    return [shared] * N_PAIRS


def run_protocol(sequences: list[Sequence], cfg: RunConfig) -> list[EvalRecord]:
    """Evaluate every sequence pair; per-pair failures are recorded, not fatal."""
    patch = cfg.patch
    if patch is not None and cfg.patch_size and cfg.patch_size != patch.width:
        patch = resize(patch, cfg.patch_size, cfg.patch_size)

    records: list[EvalRecord] = []
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sequences))
    for seq, seq_seed in zip(sequences, seeds):
        rng = np.random.default_rng(seq_seed)
        try:
            masks_by_pair = _sequence_masks(seq, cfg, rng)
        except (NoValidPlacement, BenchError, GeometryError) as exc:
            log.warning("sequence %s: mask derivation failed: %s", seq.name, exc)
            for j in range(N_PAIRS):
                records.append(
                    EvalRecord(seq.name, j + 1, cfg.patch_name, cfg.protocol, cfg.mask_size, error=str(exc))
                )
            continue
        for j in range(N_PAIRS):
            pair_idx = j + 1
            rec = EvalRecord(seq.name, pair_idx, cfg.patch_name, cfg.protocol, cfg.mask_size)
            try:
                masks = masks_by_pair[j]
                if patch is None:
                    src = to_grayscale(seq.reference)
                    tgt = to_grayscale(seq.compared[j])
                else:
                    src, tgt = synthesize_pair(seq, pair_idx, patch, masks)
                src_kps, src_desc = extract_features(src, cfg)
                tgt_kps, tgt_desc = extract_features(tgt, cfg)
                matches = knn_match(src_desc, tgt_desc, top_n=cfg.thresholds.top_n)
                try:
                    ransac = ransac_homography(
                        src_kps,
                        tgt_kps,
                        matches,
                        iters=cfg.ransac_iters,
                        inlier_px=cfg.inlier_px,
                        seed=int(rng.integers(0, 2**31)),
                    )
                except MatchError:
                    ransac = None
                metrics = compute_metrics(
                    src_kps,
                    tgt_kps,
                    matches,
                    masks,
                    seq.homographies[j],
                    cfg.thresholds,
                    ransac,
                    (src.width, src.height),
                    (tgt.width, tgt.height),
                    cfg.he_per_corner,
                )
                for name in (
                    "spr", "tp", "fp", "repeatability", "he_correct",
                    "n_matches", "n_source_in_mask", "n_true_positive", "n_false_positive",
                    "n_projected", "n_repeated", "mean_corner_error",
                ):
                    setattr(rec, name, getattr(metrics, name))
            except Exception as exc:  # keep going; the record carries the failure
                log.warning("sequence %s pair %d failed: %s", seq.name, pair_idx, exc)
                rec.error = f"{type(exc).__name__}: {exc}"
            records.append(rec)
    return records
