"""Report emission: per-pair CSV, aggregate markdown, and summary figures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bench import EvalRecord

CSV_FIELDS = (
    "patch", "protocol", "mask_size", "sequence", "pair",
    "spr", "tp", "fp", "repeatability", "he1", "he3", "he5",
    "n_matches", "n_source_in_mask", "n_true_positive", "n_false_positive",
    "n_projected", "n_repeated", "mean_corner_error", "error",
)

METRIC_KEYS = ("spr", "tp", "fp", "repeatability", "he1", "he3", "he5")


class ReportError(Exception):
    pass


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _record_row(r: EvalRecord) -> dict[str, str]:
    he1, he3, he5 = r.he_correct
    return {
        "patch": r.patch_name,
        "protocol": r.protocol,
        "mask_size": str(r.mask_size),
        "sequence": r.sequence,
        "pair": str(r.pair_index),
        "spr": _cell(r.spr),
        "tp": _cell(r.tp),
        "fp": _cell(r.fp),
        "repeatability": _cell(r.repeatability),
        "he1": _cell(he1),
        "he3": _cell(he3),
        "he5": _cell(he5),
        "n_matches": str(r.n_matches),
        "n_source_in_mask": str(r.n_source_in_mask),
        "n_true_positive": str(r.n_true_positive),
        "n_false_positive": str(r.n_false_positive),
        "n_projected": str(r.n_projected),
        "n_repeated": str(r.n_repeated),
        "mean_corner_error": _cell(r.mean_corner_error),
        "error": r.error or "",
    }


@dataclass(frozen=True)
class AggregateRow:
    patch: str
    protocol: str
    mask_size: int
    means: dict[str, float | None]
    n_pairs: int


def aggregate(records: list[EvalRecord]) -> list[AggregateRow]:
    """Mean of each metric per (patch, protocol, mask size); nulls skipped."""
    groups: dict[tuple[str, str, int], list[EvalRecord]] = {}
    for r in records:
        groups.setdefault((r.patch_name, r.protocol, r.mask_size), []).append(r)
    rows = []
    for (patch, protocol, mask_size), recs in sorted(groups.items()):
        means: dict[str, float | None] = {}
        values = {
            "spr": [r.spr for r in recs],
            "tp": [r.tp for r in recs],
            "fp": [r.fp for r in recs],
            "repeatability": [r.repeatability for r in recs],
            "he1": [r.he_correct[0] for r in recs],
            "he3": [r.he_correct[1] for r in recs],
            "he5": [r.he_correct[2] for r in recs],
        }
        for key, vals in values.items():
            usable = [v for v in vals if v is not None]
            means[key] = float(np.mean(usable)) if usable else None
        rows.append(AggregateRow(patch, protocol, mask_size, means, len(recs)))
    return rows


def emit_report(records: list[EvalRecord], format: str = "csv") -> bytes:
    """CSV: one row per evaluated pair.  Markdown: aggregate means per group."""
    if not records:
        raise ReportError("no records to report")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(_record_row(r))
        return buf.getvalue().encode()
    if format == "markdown":
        lines = [
            "| patch | protocol | mask | SPR | TP | FP | Rep. | HE e=1 | HE e=3 | HE e=5 |",
            "|---|---|---|---|---|---|---|---|---|---|",
        ]
        for row in aggregate(records):
            cells = [row.patch, row.protocol, str(row.mask_size)] + [
                _cell(row.means[k]) if row.means[k] is None else f"{row.means[k]:.4f}"
                for k in METRIC_KEYS
            ]
            lines.append("| " + " | ".join(cells) + " |")
        return ("\n".join(lines) + "\n").encode()
    raise ReportError(f"unknown report format {format!r}")


def render_report_figures(records: list[EvalRecord], outdir) -> list[Path]:
    """Render aggregate bar charts next to the delimited output.

    Produces metrics_summary.png (SPR/TP/FP/repeatability) and
    homography_estimation.png (correctness at the three radii).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = aggregate(records)
    labels = [f"{r.patch}\n{r.protocol}/m{r.mask_size}" for r in rows]
    written = []

    def bar_chart(keys: tuple[str, ...], title: str, path: Path):
        fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(rows)), 4.0))
        x = np.arange(len(rows))
        width = 0.8 / len(keys)
        for i, key in enumerate(keys):
            vals = [r.means[key] if r.means[key] is not None else np.nan for r in rows]
            ax.bar(x + (i - (len(keys) - 1) / 2.0) * width, vals, width, label=key)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylim(0.0, 1.0)
        ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    bar_chart(("spr", "tp", "fp", "repeatability"), "Matching metrics", outdir / "metrics_summary.png")
    bar_chart(("he1", "he3", "he5"), "Homography estimation correctness", outdir / "homography_estimation.png")
    return written


def render_loss_figure(loss_history: list[float], path) -> Path:
    """Loss-curve plot for a generated patch."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(range(len(loss_history)), loss_history)
    ax.set_xlabel("step")
    ax.set_ylabel("detector loss")
    ax.set_title("Patch optimisation loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
