"""Command-line surface: patch generation, evaluation, mask export, match viz.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
A plain-text key-value config file can seed any option; explicit flags win.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, classical, maskgen, patchgen, report, spnet
from .bench import BenchError, EvalThresholds, RunConfig
from .geometry import GeometryError
from .imagecore import ImageBuffer, ImageError, read_image, to_grayscale, write_image
from .matchransac import MatchError, knn_match
from .maskgen import MaskError
from .patchgen import PatchError
from .spnet import AttackObjective, NetError
from .spwf import SpwfError

log = logging.getLogger(__name__)

DATA_ERRORS = (
    ImageError, BenchError, GeometryError, NetError, MaskError,
    MatchError, PatchError, SpwfError, report.ReportError,
    FileNotFoundError, IsADirectoryError, PermissionError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path) -> dict[str, str]:
    """key = value lines; '#' starts a comment; keys match long option names."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "yes", "on"):
        return True
    if text.lower() in ("false", "no", "off"):
        return False
    return text


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset options from --config, then from hard defaults.

    args._defaulted records which options fell through to the hard default,
    so callers can let preset-level defaults take precedence over them.
    """
    config = read_config(args.config) if getattr(args, "config", None) else {}
    defaulted: set[str] = set()
    for key, value in vars(args).items():
        if value is not None or key in ("config",):
            continue
        if key in config:
            setattr(args, key, _coerce(config[key]))
        elif key in defaults:
            setattr(args, key, defaults[key])
            defaulted.add(key)
    missing = [k for k, v in defaults.items() if v is REQUIRED and getattr(args, k) is REQUIRED]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    args._defaulted = defaulted
    return args


REQUIRED = object()


def _load_weights_file(path) -> spnet.WeightSet:
    with open(path, "rb") as fh:
        return spnet.load_weights(fh.read())


# ---------------------------------------------------------------------------
# gen-patch

GEN_DEFAULTS = dict(
    preset=REQUIRED, size=128, cell=8, steps=1000, alpha=1e-2, weights=REQUIRED,
    seed=0, out=REQUIRED, target_class=0, scale_lo=0.5, scale_hi=2.0,
    crop=True, objective_sign=1.0, figures=None,
)


def _add_gen_parser(sub):
    p = sub.add_parser("gen-patch", help="generate a patch variant")
    p.add_argument("--preset", choices=sorted(patchgen.PRESETS))
    p.add_argument("--size", type=int)
    p.add_argument("--cell", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--weights")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--target-class", type=int, dest="target_class")
    p.add_argument("--scale-lo", type=float, dest="scale_lo")
    p.add_argument("--scale-hi", type=float, dest="scale_hi")
    p.add_argument("--crop", action=argparse.BooleanOptionalAction)
    p.add_argument("--objective-sign", type=float, dest="objective_sign")
    p.add_argument("--figures")
    p.add_argument("--config")


def _run_gen(args) -> int:
    args = _resolve(args, GEN_DEFAULTS)
    weights = _load_weights_file(args.weights)
    # Only explicitly given options override the preset; hard CLI defaults
    # must not clobber e.g. the chessboard preset's steps=0.
    overrides = dict(
        size=args.size, cell=args.cell, steps=args.steps, step_size=args.alpha,
        seed=args.seed, crop=args.crop,
    )
    option_names = dict(step_size="alpha", **{k: k for k in overrides if k != "step_size"})
    overrides = {k: v for k, v in overrides.items() if option_names[k] not in args._defaulted}
    if "scale_lo" not in args._defaulted or "scale_hi" not in args._defaulted:
        overrides["scale_range"] = (args.scale_lo, args.scale_hi)
    cfg = patchgen.preset_config(args.preset, **overrides)
    if cfg.objective.mode == "targeted" or args.objective_sign != 1.0:
        cfg = patchgen.resized_copy(
            cfg,
            objective=AttackObjective(cfg.objective.mode, args.target_class, args.objective_sign),
        )
    state = patchgen.pgd_generate(weights, cfg)
    patchgen.save_patch(args.out, state, cfg, preset=args.preset)
    if args.figures and state.loss_history:
        report.render_loss_figure(state.loss_history, Path(args.figures) / "loss_curve.png")
    tail = f", final loss {state.loss_history[-1]:.6f}" if state.loss_history else ""
    print(f"wrote {args.out} ({cfg.size}x{cfg.size}, {cfg.steps} steps{tail})")
    return 0


# ---------------------------------------------------------------------------
# eval

EVAL_DEFAULTS = dict(
    dataset=REQUIRED, weights=None, patch=None, extractor="spnet", protocol="targeted",
    mask_size=128, patch_size=None, seed=0, report=REQUIRED, format="csv",
    figures=None, mask_strategy="center", ransac_iters=2000, inlier_px=3.0,
    top_n=1000, detect_threshold=0.015, nms_radius=4, he_per_corner=False,
    patch_name=None,
)


def _add_eval_parser(sub):
    p = sub.add_parser("eval", help="run the benchmark over a dataset")
    p.add_argument("--dataset")
    p.add_argument("--weights")
    p.add_argument("--patch")
    p.add_argument("--extractor", choices=("spnet", "classical"))
    p.add_argument("--protocol", choices=("targeted", "untargeted"))
    p.add_argument("--mask-size", type=int, dest="mask_size")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--report")
    p.add_argument("--format", choices=("csv", "markdown"))
    p.add_argument("--figures")
    p.add_argument("--mask-strategy", choices=("center", "seeded-random"), dest="mask_strategy")
    p.add_argument("--ransac-iters", type=int, dest="ransac_iters")
    p.add_argument("--inlier-px", type=float, dest="inlier_px")
    p.add_argument("--top-n", type=int, dest="top_n")
    p.add_argument("--detect-threshold", type=float, dest="detect_threshold")
    p.add_argument("--nms-radius", type=int, dest="nms_radius")
    p.add_argument("--he-per-corner", action=argparse.BooleanOptionalAction, dest="he_per_corner")
    p.add_argument("--patch-name", dest="patch_name")
    p.add_argument("--config")


def _run_eval(args) -> int:
    args = _resolve(args, EVAL_DEFAULTS)
    weights = _load_weights_file(args.weights) if args.weights else None
    patch = to_grayscale(read_image(args.patch)) if args.patch else None
    patch_name = args.patch_name or (Path(args.patch).stem if args.patch else "benign")
    thresholds = EvalThresholds(
        top_n=args.top_n, detect_threshold=args.detect_threshold, nms_radius=args.nms_radius
    )
    cfg = RunConfig(
        extractor=args.extractor,
        weights=weights,
        protocol=args.protocol,
        mask_size=args.mask_size,
        mask_strategy=args.mask_strategy,
        patch=patch,
        patch_size=args.patch_size,
        thresholds=thresholds,
        ransac_iters=args.ransac_iters,
        inlier_px=args.inlier_px,
        seed=args.seed,
        he_per_corner=bool(args.he_per_corner),
        patch_name=patch_name,
    )
    sequences = bench.load_hpatches(args.dataset)
    if not sequences:
        print("no viewpoint sequences found", file=sys.stderr)
    records = bench.run_protocol(sequences, cfg)
    payload = report.emit_report(records, args.format)
    Path(args.report).write_bytes(payload)
    print(f"wrote {args.report} ({len(records)} pair records)")
    if args.figures:
        for path in report.render_report_figures(records, args.figures):
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# export-masks

MASK_DEFAULTS = dict(
    dataset=REQUIRED, mask_size=128, protocol="targeted", seed=0, out=REQUIRED,
    mask_strategy="center",
)


def _add_masks_parser(sub):
    p = sub.add_parser("export-masks", help="write mask files for every sequence pair")
    p.add_argument("--dataset")
    p.add_argument("--mask-size", type=int, dest="mask_size")
    p.add_argument("--protocol", choices=("targeted", "untargeted"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--mask-strategy", choices=("center", "seeded-random"), dest="mask_strategy")
    p.add_argument("--config")


def _run_masks(args) -> int:
    args = _resolve(args, MASK_DEFAULTS)
    sequences = bench.load_hpatches(args.dataset)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(
        extractor="classical", protocol=args.protocol, mask_size=args.mask_size,
        mask_strategy=args.mask_strategy, seed=args.seed,
    )
    seeds = np.random.SeedSequence(args.seed).spawn(len(sequences))
    n = 0
    for seq, seq_seed in zip(sequences, seeds):
        rng = np.random.default_rng(seq_seed)
        masks_by_pair = bench._sequence_masks(seq, cfg, rng)
        for j, masks in enumerate(masks_by_pair):
            path = outdir / f"{seq.name}_{j + 1}.masks.txt"
            path.write_text(maskgen.format_masks(masks))
            n += 1
    print(f"wrote {n} mask files to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# match-pair

PAIR_DEFAULTS = dict(
    image_a=REQUIRED, image_b=REQUIRED, weights=None, extractor="spnet",
    top_n=1000, out=None, visualize=False, max_lines=150,
    detect_threshold=0.015, nms_radius=4,
)


def _add_pair_parser(sub):
    p = sub.add_parser("match-pair", help="match two images, optionally render the matches")
    p.add_argument("--image-a", dest="image_a")
    p.add_argument("--image-b", dest="image_b")
    p.add_argument("--weights")
    p.add_argument("--extractor", choices=("spnet", "classical"))
    p.add_argument("--top-n", type=int, dest="top_n")
    p.add_argument("--out")
    p.add_argument("--visualize", action=argparse.BooleanOptionalAction)
    p.add_argument("--max-lines", type=int, dest="max_lines")
    p.add_argument("--detect-threshold", type=float, dest="detect_threshold")
    p.add_argument("--nms-radius", type=int, dest="nms_radius")
    p.add_argument("--config")


def side_by_side_matches(
    img_a: ImageBuffer, img_b: ImageBuffer, kps_a, kps_b, matches, max_lines: int = 150
) -> ImageBuffer:
    """Compose both views side by side and draw a line per match."""
    h = max(img_a.height, img_b.height)
    w = img_a.width + img_b.width
    canvas = np.zeros((h, w, 3))
    for img, x_off in ((img_a, 0), (img_b, img_a.width)):
        gray = to_grayscale(img).plane()
        canvas[: img.height, x_off : x_off + img.width, :] = gray[:, :, None]
    for i, j, _dist in matches.pairs[:max_lines]:
        pa = kps_a[i].position
        pb = kps_b[j].position
        _draw_line(canvas, pa.x, pa.y, pb.x + img_a.width, pb.y, (0.1, 0.9, 0.1))
        _draw_dot(canvas, pa.x, pa.y, (0.9, 0.1, 0.1))
        _draw_dot(canvas, pb.x + img_a.width, pb.y, (0.9, 0.1, 0.1))
    return ImageBuffer(np.clip(canvas, 0.0, 1.0))


def _draw_line(canvas: np.ndarray, x0: float, y0: float, x1: float, y1: float, color) -> None:
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, n)).astype(int)
    ys = np.rint(np.linspace(y0, y1, n)).astype(int)
    ok = (xs >= 0) & (xs < canvas.shape[1]) & (ys >= 0) & (ys < canvas.shape[0])
    canvas[ys[ok], xs[ok]] = color


def _draw_dot(canvas: np.ndarray, x: float, y: float, color) -> None:
    xi, yi = int(round(x)), int(round(y))
    canvas[max(0, yi - 1) : yi + 2, max(0, xi - 1) : xi + 2] = color


def _run_pair(args) -> int:
    args = _resolve(args, PAIR_DEFAULTS)
    img_a = read_image(args.image_a)
    img_b = read_image(args.image_b)
    thresholds = EvalThresholds(
        top_n=args.top_n, detect_threshold=args.detect_threshold, nms_radius=args.nms_radius
    )
    cfg = RunConfig(
        extractor=args.extractor,
        weights=_load_weights_file(args.weights) if args.weights else None,
        thresholds=thresholds,
    )
    kps_a, desc_a = bench.extract_features(to_grayscale(img_a), cfg)
    kps_b, desc_b = bench.extract_features(to_grayscale(img_b), cfg)
    matches = knn_match(desc_a, desc_b, top_n=args.top_n)
    print(f"{len(kps_a)} x {len(kps_b)} keypoints, {len(matches)} matches")
    if args.visualize:
        if not args.out:
            raise UsageError("--visualize needs --out")
        viz = side_by_side_matches(img_a, img_b, kps_a, kps_b, matches, args.max_lines)
        write_image(args.out, viz)
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="patchattack", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    _add_gen_parser(sub)
    _add_eval_parser(sub)
    _add_masks_parser(sub)
    _add_pair_parser(sub)
    return parser


_RUNNERS = {
    "gen-patch": _run_gen,
    "eval": _run_eval,
    "export-masks": _run_masks,
    "match-pair": _run_pair,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 1
        return _RUNNERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
