"""Report figures: ROC shift arrows, seven-axis radar maps, agreement matrix.

SVG only, rendered byte-reproducibly: fixed hash salt, no date stamp, text
kept as text elements so the annotations stay greppable. Every printed number
must arrive preformatted (fmt3 strings from the tables module); the figures
never format values themselves.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .tables import METRIC_KEYS, METRIC_TITLES, fmt3  # noqa: E402

ARM_COLORS = {"unassisted": "#d9a520", "assisted": "#2d6fb5"}
MODEL_COLOR = "#c23b22"

_SVG_RC = {
    "svg.hashsalt": "nodulebench",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "figure.dpi": 100,
}


def save_svg(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def roc_figure(bundle: Mapping, path: str | Path,
               model_curve: Sequence[tuple[float, float]] | None = None,
               ) -> Path:
    """Reader operating points with an arrow from unassisted to assisted,
    plus the model's point (and its full curve when scores are available).

    Legend AUC values are the same fmt3 strings the tables print.
    """
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6.0, 6.0))
        ax.plot([0, 1], [0, 1], color="#bbbbbb", lw=0.8, ls="--", zorder=1)
        for entry in bundle["roc"]["readers"]:
            src, dst = entry["from"], entry["to"]
            if None in src or None in dst:
                continue
            reader = bundle["readers"][entry["reader_id"]]
            auc_u = fmt3(reader["unassisted"]["metrics"]["auc"]["value"])
            auc_a = fmt3(reader["assisted"]["metrics"]["auc"]["value"])
            ax.annotate("", xy=dst, xytext=src,
                        arrowprops=dict(arrowstyle="->", lw=1.1,
                                        color="#555555"), zorder=2)
            ax.plot(*src, "o", ms=5, color=ARM_COLORS["unassisted"],
                    zorder=3)
            ax.plot(*dst, "o", ms=5, color=ARM_COLORS["assisted"], zorder=3)
            ax.plot([], [], " ",
                    label=f"{entry['reader_id']}: AUC {auc_u} → {auc_a}")
        if model_curve:
            xs = [p[0] for p in model_curve]
            ys = [p[1] for p in model_curve]
            ax.plot(xs, ys, color=MODEL_COLOR, lw=1.4, zorder=2)
        if bundle.get("model") and bundle["roc"]["model"]:
            fpr, tpr = bundle["roc"]["model"]
            if fpr is not None and tpr is not None:
                auc_m = fmt3(bundle["model"]["metrics"]["metrics"]["auc"]
                             ["value"])
                ax.plot(fpr, tpr, "*", ms=12, color=MODEL_COLOR, zorder=4,
                        label=f"model: AUC {auc_m}")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title("reader operating points, unassisted → assisted")
        ax.legend(loc="lower right", fontsize=7, frameon=False)
        return save_svg(fig, path)


def model_roc_figure(curves: Sequence[tuple[str, Sequence[tuple[float, float]], str]],
                     path: str | Path) -> Path:
    """Full model ROC per dataset; legend AUCs arrive preformatted."""
    palette = (MODEL_COLOR, "#2d6fb5", "#4a9d5b", "#8b5ca6", "#d9a520")
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6.0, 6.0))
        ax.plot([0, 1], [0, 1], color="#bbbbbb", lw=0.8, ls="--", zorder=1)
        for i, (name, points, auc_text) in enumerate(curves):
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            ax.plot(xs, ys, color=palette[i % len(palette)], lw=1.4,
                    label=f"{name}: AUC {auc_text}")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title("model ROC")
        ax.legend(loc="lower right", fontsize=8, frameon=False)
        return save_svg(fig, path)


def radar_axes_values(report: Mapping) -> list[float]:
    """The seven radar values in table order; undefined metrics plot at 0."""
    metrics = report["metrics"]
    return [metrics[k]["value"] if metrics[k]["value"] is not None else 0.0
            for k in METRIC_KEYS]


def radar_figure(reader_id: str, entry: Mapping, path: str | Path) -> Path:
    """One reader's seven-metric polygon per arm on a shared polar frame."""
    angles = np.linspace(0.0, 2.0 * np.pi, len(METRIC_KEYS), endpoint=False)
    closed = np.concatenate([angles, angles[:1]])
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(5.2, 5.2),
                               subplot_kw={"polar": True})
        for arm in ("unassisted", "assisted"):
            values = radar_axes_values(entry[arm])
            auc_text = fmt3(entry[arm]["metrics"]["auc"]["value"])
            loop = values + values[:1]
            ax.plot(closed, loop, color=ARM_COLORS[arm], lw=1.2,
                    label=f"{arm} (AUC {auc_text})")
            ax.fill(closed, loop, color=ARM_COLORS[arm], alpha=0.18)
        ax.set_xticks(angles)
        ax.set_xticklabels(METRIC_TITLES, fontsize=8)
        ax.set_ylim(0.0, 1.0)
        ax.set_yticks([0.25, 0.5, 0.75, 1.0])
        ax.set_yticklabels(["0.25", "0.50", "0.75", "1.00"], fontsize=6)
        ax.set_title(reader_id)
        ax.legend(loc="lower left", bbox_to_anchor=(-0.12, -0.12),
                  fontsize=7, frameon=False)
        return save_svg(fig, path)


def kappa_figure(kappa: Mapping, path: str | Path, title: str) -> Path:
    """Pairwise agreement matrix with the coefficient printed in each cell."""
    readers = list(kappa["readers"])
    matrix = np.asarray(kappa["matrix"], dtype=float)
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(0.7 * len(readers) + 2.2,
                                        0.7 * len(readers) + 2.0))
        ax.imshow(matrix, vmin=-1.0, vmax=1.0, cmap="RdYlBu")
        ax.set_xticks(range(len(readers)))
        ax.set_yticks(range(len(readers)))
        ax.set_xticklabels(readers, fontsize=7, rotation=45, ha="right")
        ax.set_yticklabels(readers, fontsize=7)
        for i in range(len(readers)):
            for j in range(len(readers)):
                ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center",
                        va="center", fontsize=6)
        overall = kappa.get("overall")
        band = kappa.get("band", "")
        suffix = "" if overall is None else (
            f" (overall κ {fmt3(overall)}, {band})")
        ax.set_title(f"{title}{suffix}", fontsize=9)
        return save_svg(fig, path)
