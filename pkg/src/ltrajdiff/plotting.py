"""Static visualization of layout sequences and evaluation reports.

Boxes are drawn as rectangle outlines with depth mapped to a blue scale:
darker blue = closer to the camera, lighter = farther away.  Ground truth is
drawn solid, predictions dashed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colormaps  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .core import Dataset, ValidationError  # noqa: E402
from .metrics import EvalReport  # noqa: E402

_CMAP = colormaps["Blues_r"]  # index 0 = darkest blue


def depth_to_color(depth: float, d_min: float, d_max: float):
    """RGBA for a depth value; nearer depths map to darker blues."""
    if d_max <= d_min:
        return _CMAP(0.0)
    frac = float(np.clip((depth - d_min) / (d_max - d_min), 0.0, 1.0))
    return _CMAP(0.85 * frac)  # cap below 1 so far boxes stay visible


def _draw_boxes(ax, layout: np.ndarray, d_min: float, d_max: float, linestyle: str, label: str):
    for i, (x, y, w, h, d) in enumerate(layout):
        ax.add_patch(
            Rectangle(
                (x, y),
                max(w, 0.0),
                max(h, 0.0),
                fill=False,
                edgecolor=depth_to_color(d, d_min, d_max),
                linestyle=linestyle,
                linewidth=1.0,
                label=label if i == 0 else None,
            )
        )


def render_sequence_figure(
    truth: np.ndarray,
    pred: np.ndarray | None = None,
    title: str = "",
    image_size: tuple[int, int] | None = None,
):
    """Figure with truth (solid) and optional prediction (dashed) boxes."""
    truth = np.asarray(truth, dtype=np.float64)
    stacks = [truth] if pred is None else [truth, np.asarray(pred, dtype=np.float64)]
    depths = np.concatenate([s[:, 4] for s in stacks])
    d_min, d_max = float(depths.min()), float(depths.max())

    fig, ax = plt.subplots(figsize=(7, 4.5))
    _draw_boxes(ax, truth, d_min, d_max, "-", "truth")
    if pred is not None:
        _draw_boxes(ax, stacks[1], d_min, d_max, "--", "prediction")
    if image_size is not None:
        ax.add_patch(
            Rectangle((0, 0), image_size[0], image_size[1], fill=False, edgecolor="0.6", linewidth=0.8)
        )
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    if title:
        ax.set_title(title)
    if pred is not None:
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig


def plot_dataset(dataset: Dataset, out_dir: Path | str, max_samples: int = 4) -> list[Path]:
    """Render the first few ground-truth sequences to PNG files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_size = None
    gen = dataset.metadata.get("generator_config") if dataset.metadata else None
    if gen and "image_size" in gen:
        image_size = tuple(gen["image_size"])
    paths = []
    for sample in dataset.samples[:max_samples]:
        fig = render_sequence_figure(sample.layout.values, title=sample.agent_id, image_size=image_size)
        path = out_dir / f"sequence_{sample.agent_id}.png"
        fig.savefig(path, dpi=110, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def plot_report(report: EvalReport, out_dir: Path | str, max_samples: int = 4) -> list[Path]:
    """Render per-sample overlays (when the report kept sequences) and the
    metric distribution summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scored = [s for s in report.per_sample if s.error is None]
    if not scored:
        raise ValidationError("report has no scored samples to plot")
    paths = []

    def hist(ax, values):
        values = np.asarray(values, dtype=float)
        span = (values.min(), values.max()) if values.min() < values.max() else None
        ax.hist(values, bins=min(30, max(3, len(values))), range=span, color="#4878a8")

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    hist(axes[0], [s.mse_t for s in scored])
    axes[0].set_title(f"layout error per sample (mean {report.mse_t:.3g})")
    axes[0].set_xlabel("mean squared error per timestamp")
    hist(axes[1], [s.iou_d for s in scored])
    axes[1].set_title(f"depth-weighted overlap (mean {report.iou_d:.3g})")
    axes[1].set_xlabel("IoU-D")
    fig.tight_layout()
    summary_path = out_dir / "metrics_summary.png"
    fig.savefig(summary_path, dpi=110, metadata={"Date": None})
    plt.close(fig)
    paths.append(summary_path)

    with_seqs = [s for s in scored if s.truth is not None and s.pred is not None]
    for s in with_seqs[:max_samples]:
        fig = render_sequence_figure(
            s.truth, s.pred, title=f"{s.agent_id}  mse_t={s.mse_t:.3g}  iou_d={s.iou_d:.3g}"
        )
        path = out_dir / f"overlay_{s.agent_id}.png"
        fig.savefig(path, dpi=110, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def plot_ablation_rows(rows: list[dict], out_path: Path | str) -> Path:
    """Bar chart of per-variant metric means from ablation-suite rows."""
    out_path = Path(out_path)
    ok = [r for r in rows if r.get("status") == "ok"]
    if not ok:
        raise ValidationError("no successful ablation rows to plot")
    variants = sorted({r["variant"] for r in ok}, key=lambda v: (v != "complete", v))
    mse = [float(np.mean([r["mse_t"] for r in ok if r["variant"] == v])) for v in variants]
    iou = [float(np.mean([r["iou_d"] for r in ok if r["variant"] == v])) for v in variants]

    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    pos = np.arange(len(variants))
    axes[0].bar(pos, mse, color="#4878a8")
    axes[0].set_xticks(pos, variants, rotation=30, ha="right")
    axes[0].set_title("layout error by variant (lower is better)")
    axes[1].bar(pos, iou, color="#4878a8")
    axes[1].set_xticks(pos, variants, rotation=30, ha="right")
    axes[1].set_title("IoU-D by variant (higher is better)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110, metadata={"Date": None})
    plt.close(fig)
    return out_path
