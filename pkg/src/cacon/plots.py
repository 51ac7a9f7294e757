"""Report figures rendered to PNG files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curve(epoch_losses, lrs, path, title: str) -> None:
    """Per-epoch mean loss with the learning-rate schedule on a twin axis."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    epochs = range(len(epoch_losses))
    ax.plot(epochs, epoch_losses, marker="o", ms=3, lw=1.2, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss", color="tab:blue")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if lrs:
        ax2 = ax.twinx()
        ax2.plot(epochs, lrs, lw=1.0, color="tab:orange", alpha=0.7)
        ax2.set_ylabel("learning rate", color="tab:orange")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_identification_figure(report, path) -> None:
    """Per-age-group rank-1 accuracy bars."""
    groups = report.details.get("per_age_group", {})
    fig, ax = plt.subplots(figsize=(6, 3.6))
    if groups:
        keys = sorted(groups, key=int)
        accs = [groups[k]["accuracy_pct"] for k in keys]
        ax.bar(keys, accs, color="tab:blue")
        ax.set_xlabel("age group")
    ax.axhline(report.accuracy_pct, color="tab:red", lw=1.0, ls="--",
               label=f"overall {report.accuracy_pct:.1f}%")
    ax.set_ylabel("rank-1 accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"identification: {report.tag}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_verification_figure(report, path) -> None:
    """Per-fold held-out accuracy bars around the mean."""
    accs = report.details.get("fold_accuracy_pct", [])
    fig, ax = plt.subplots(figsize=(6, 3.6))
    if accs:
        ax.bar([str(i) for i in range(len(accs))], accs, color="tab:green")
        ax.set_xlabel("fold")
    ax.axhline(report.accuracy_pct, color="tab:red", lw=1.0, ls="--",
               label=f"mean {report.accuracy_pct:.1f}%")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"{report.protocol}: {report.tag}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_accuracy_figure(report, path) -> None:
    """Single-number protocols: one bar with the headline accuracy."""
    fig, ax = plt.subplots(figsize=(4, 3.6))
    ax.bar([report.protocol], [report.accuracy_pct], color="tab:purple")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"{report.tag}: {report.accuracy_pct:.2f}%")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)
