"""Static figures rendered next to the delimited reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_tsv(path) -> list[dict]:
    rows = []
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.DictReader(lines, delimiter="\t")
    for row in reader:
        rows.append(row)
    return rows


def plot_loss_curves(ckpt_dir, out_dir) -> list[Path]:
    ckpt_dir, out_dir = Path(ckpt_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for curve in sorted(ckpt_dir.glob("curve_*.tsv")):
        rows = _read_tsv(curve)
        if not rows:
            continue
        stage = curve.stem.replace("curve_", "")
        fig, ax = plt.subplots(figsize=(5, 3.2))
        epochs = [float(r["epoch"]) for r in rows]
        for key in rows[0]:
            if key in ("epoch", "lr") or not rows[0][key]:
                continue
            vals = [float(r[key]) for r in rows]
            if any(v != v for v in vals):  # skip all-NaN columns
                vals = [v for v in vals]
            ax.plot(epochs, vals, marker="o", markersize=3, label=key)
        ax.set_xlabel("epoch")
        ax.set_title(f"{stage} training")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"loss_{stage}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def plot_recall_bars(report_path, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = {r["metric"]: float(r["value"]) for r in _read_tsv(report_path)}
    keys = ["r_v", "r_sr1", "r_sr2"]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = range(len(keys))
    ax.bar([x - 0.2 for x in xs], [rows.get(k, 0.0) for k in keys],
           width=0.4, label="pipeline")
    if "oracle_r_v" in rows:
        ax.bar([x + 0.2 for x in xs], [rows.get(f"oracle_{k}", 0.0) for k in keys],
               width=0.4, label="oracle verb")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(["verb", "sub-roles", "role pairs"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    ax.set_title("controllability recall")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "recall_bars.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_diversity_scatter(diversity_path, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_tsv(diversity_path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.scatter([float(r["div1"]) for r in rows],
               [float(r["best_cider"]) for r in rows],
               s=14, alpha=0.6)
    ax.set_xlabel("distinct-1 ratio (6 captions)")
    ax.set_ylabel("best-1 consensus score")
    ax.set_title("diversity vs accuracy")
    fig.tight_layout()
    path = out_dir / "diversity_scatter.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
