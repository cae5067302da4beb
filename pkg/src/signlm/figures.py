"""Matplotlib report figures, rendered headlessly to files."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_loss_curve(losses: Sequence[float], path, title: str = "training loss"):
    """Per-step loss with a light running-mean overlay."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(losses, lw=0.6, alpha=0.5, label="step loss")
    if len(losses) >= 20:
        k = max(len(losses) // 50, 5)
        smooth = [sum(losses[max(0, i - k):i + 1]) / (i + 1 - max(0, i - k))
                  for i in range(len(losses))]
        ax.plot(smooth, lw=1.5, label=f"running mean (k={k})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_usage_histogram(usage, path, title: str = "codebook usage"):
    """EMA usage per code, sorted descending; dead region is visually obvious."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    vals = sorted(float(u) for u in usage)[::-1]
    ax.bar(range(len(vals)), vals, width=1.0)
    ax.set_xlabel("code (sorted by usage)")
    ax.set_ylabel("EMA usage share")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_codebook_sweep(rows: List[Dict], path):
    """Reconstruction quality and perplexity versus codebook size.

    rows: dicts with keys codebook_size, mpjpe, pampjpe, perplexity."""
    path = Path(path)
    rows = sorted(rows, key=lambda r: r["codebook_size"])
    sizes = [r["codebook_size"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(sizes, [r["mpjpe"] for r in rows], "o-", label="MPJPE")
    ax1.plot(sizes, [r["pampjpe"] for r in rows], "s-", label="PAMPJPE")
    ax1.set_xscale("log", base=2)
    ax1.set_xlabel("codebook size K")
    ax1.set_ylabel("error (m)")
    ax1.legend(fontsize=8)
    ax1.set_title("reconstruction vs K")
    ax2.plot(sizes, [r["perplexity"] for r in rows], "o-", color="tab:green")
    ax2.set_xscale("log", base=2)
    ax2.set_xlabel("codebook size K")
    ax2.set_ylabel("usage perplexity")
    ax2.set_title("codebook utilization")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eval_report(report: dict, path, title: str = "evaluation"):
    """Bar chart of the text metrics in one report dict."""
    path = Path(path)
    keys = ["bleu1", "bleu4", "rougeL", "cider", "wer"]
    labels = ["BLEU@1", "BLEU@4", "ROUGE-L", "CIDEr", "WER (%)"]
    vals = [float(report.get(k, 0.0)) for k in keys]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bars = ax.bar(labels, vals, color="tab:blue")
    for b, v in zip(bars, vals):
        ax.text(b.get_x() + b.get_width() / 2, b.get_height(), f"{v:.3g}",
                ha="center", va="bottom", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
