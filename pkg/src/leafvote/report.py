"""Report figures: confusion heatmap and configuration comparison bars."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .ablation import AblationGrid  # noqa: E402
from .errors import ReportIOError  # noqa: E402
from .metrics import ConfusionMatrix, MetricsReport  # noqa: E402

HEATMAP_FILE = "confusion_matrix.png"
COMPARISON_FILE = "model_comparison.png"
FULL_COLOR = "#c0392b"
OTHER_COLOR = "#5b84b1"


def confusion_figure(cm: ConfusionMatrix, class_names: Sequence[str]) -> Figure:
    n = cm.n_classes
    size = max(5.0, 0.55 * n + 2)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(cm.counts, cmap="Blues", vmin=0, vmax=max(int(cm.counts.max()), 1))
    ax.set_xticks(range(n), labels=list(class_names), rotation=90, fontsize=7)
    ax.set_yticks(range(n), labels=list(class_names), fontsize=7)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    thresh = cm.counts.max() / 2 if cm.counts.size else 0
    for i in range(n):
        for j in range(n):
            v = int(cm.counts[i, j])
            ax.text(j, i, str(v), ha="center", va="center", fontsize=6, color="white" if v > thresh else "black")
    ax.set_title("Confusion matrix (ensemble)")
    fig.tight_layout()
    return fig


def _is_full_equal(row) -> bool:
    return row.kind == "scheme" and len(set(row.weights)) == 1


def comparison_figure(grid: AblationGrid) -> Figure:
    names = [r.config_name for r in grid.rows]
    accs = np.array([100 * r.test_accuracy for r in grid.rows])
    colors = [FULL_COLOR if _is_full_equal(r) else OTHER_COLOR for r in grid.rows]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(names) + 2), 5))
    bars = ax.bar(range(len(names)), accs, color=colors)
    for b, a in zip(bars, accs):
        ax.annotate(f"{a:.2f}", (b.get_x() + b.get_width() / 2, b.get_height()), ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(names)), labels=names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("Test accuracy (%)")
    lo = accs.min() if len(accs) else 0
    ax.set_ylim(max(0.0, lo - 5), 100.5)
    ax.set_title("Model comparison")
    fig.tight_layout()
    return fig


def _save(fig: Figure, path: Path) -> Path:
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def emit_figures(rep: MetricsReport, grid: AblationGrid, out_dir: str | Path, class_names: Sequence[str] | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportIOError(f"cannot create {out_dir}: {exc}") from exc
    names = list(class_names) if class_names is not None else [str(i) for i in range(rep.confusion.n_classes)]
    heat = _save(confusion_figure(rep.confusion, names), out_dir / HEATMAP_FILE)
    bars = _save(comparison_figure(grid), out_dir / COMPARISON_FILE)
    return heat, bars
