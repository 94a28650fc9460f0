"""Static figure emission for evaluation reports (no interactive UI)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def pr_curve(scored, path: str | Path) -> None:
    scores = np.array([s.score for s in scored])
    labels = np.array([s.label for s in scored])
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / max(1, labels.sum())
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(recall, precision)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title("precision-recall")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def breakdown_bars(report, path: str | Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, (title, section) in zip(
        axes, [("face size", report.face_size_map), ("faces in frame", report.faces_in_frame_map)]
    ):
        keys = [k for k, v in section.items() if v is not None]
        vals = [section[k] for k in keys]
        ax.bar(keys, vals)
        ax.set_ylim(0, 1.0)
        ax.set_title(f"AP by {title}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def desync_curve(report, path: str | Path) -> None:
    shifts = sorted(int(k) for k in report.desync_map)
    vals = [report.desync_map[str(s)] for s in shifts]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(shifts, vals, marker="o")
    ax.set_xlabel("audio shift (frames)")
    ax.set_ylabel("mAP")
    ax.set_title("robustness to audio-video desynchronization")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
