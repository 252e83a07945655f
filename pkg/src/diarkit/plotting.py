"""Report figures: similarity heatmaps, threshold sweeps and DER bars."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": False,
    "svg.hashsalt": "diarkit",
}

NAMES = {"plda": "PLDA", "bilstm": "Bi-LSTM", "ahc": "AHC", "sc": "SC"}


def _label(scorer, clusterer):
    return f"{NAMES.get(scorer, scorer)}+{NAMES.get(clusterer, clusterer)}"


def plot_similarity(S: np.ndarray, path, title: str = "", labels=None) -> Path:
    """Heatmap of a similarity matrix; ticks mark reference speaker changes when labels are given."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(S, cmap="viridis", interpolation="nearest", vmin=np.min(S), vmax=np.max(S))
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        if labels is not None:
            changes = [i for i in range(1, len(labels)) if labels[i] != labels[i - 1]]
            for c in changes:
                ax.axhline(c - 0.5, color="w", lw=0.3, alpha=0.6)
                ax.axvline(c - 0.5, color="w", lw=0.3, alpha=0.6)
        ax.set_xlabel("segment")
        ax.set_ylabel("segment")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_sweeps(tables: dict, path) -> Path:
    """DER against threshold, one line per system."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for (scorer, clusterer), table in tables.items():
            t, d = zip(*table)
            ax.plot(t, d, marker="o", ms=3, lw=1.2, label=_label(scorer, clusterer))
        ax.set_xlabel("threshold")
        ax.set_ylabel("DER (%)")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_der_bars(rows, path) -> Path:
    """Pooled DER per system, split into its error components."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        names = [_label(r["scorer"], r["clusterer"]) for r in rows]
        x = np.arange(len(rows))
        bottom = np.zeros(len(rows))
        for attr, name in (("err_spk", "speaker"), ("err_fas", "false alarm"), ("err_miss", "miss")):
            vals = np.array([100.0 * getattr(r["report"], attr) / r["report"].scored_time for r in rows])
            ax.bar(x, vals, 0.6, bottom=bottom, label=name)
            bottom += vals
        for xi, total in zip(x, bottom):
            ax.text(xi, total, f"{total:.1f}", ha="center", va="bottom", fontsize=8)
        ax.set_xticks(x, names)
        ax.set_ylabel("DER (%)")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def render_all(pipeline, rows, per_combo, eval_ids) -> list[Path]:
    """Write the standard report figures under ``<out>/figures``."""
    fig_dir = pipeline.out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = [plot_der_bars(rows, fig_dir / "der_by_system.png")]
    tables = {}
    for scorer, clusterer in per_combo:
        p = pipeline.stage_dir("sweep") / f"{scorer}_{clusterer}.csv"
        if p.is_file():
            data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
            tables[(scorer, clusterer)] = [tuple(r) for r in data]
    if tables:
        written.append(plot_sweeps(tables, fig_dir / "threshold_sweeps.png"))
    if eval_ids:
        rec = eval_ids[0]
        emb = pipeline.embeddings(rec)
        labels = pipeline.segment_labels(rec, emb)
        for scorer in dict.fromkeys(s for s, _ in per_combo):
            sim = pipeline.similarity(scorer, "sc", rec)
            written.append(
                plot_similarity(sim.values, fig_dir / f"similarity_{scorer}_{rec}.png", f"{NAMES[scorer]} {rec}", labels)
            )
    return written
