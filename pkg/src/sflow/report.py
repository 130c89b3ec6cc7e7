"""Delimited output and figure rendering for experiment runs.

Reports are JSON with deterministic content only (wall times live in the
metrics CSV), so identical config + seed reproduces them byte for byte.
Figures are rendered to PNG files next to the delimited output.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRICS_HEADER = ("step", "loss", "wall_ms")


def git_rev() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            check=False,
        )
        rev = out.stdout.strip()
        return rev if out.returncode == 0 and rev else "unknown"
    except OSError:
        return "unknown"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_report(path, report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def plot_loss_curve(path, steps, losses, title="training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    if np.min(losses) > 0:
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_marginals(path, target: np.ndarray, empirical: np.ndarray) -> Path:
    """Per-position bar comparison of target vs generated token frequencies."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seq_len, vocab = target.shape
    fig, axes = plt.subplots(
        seq_len, 1, figsize=(max(6, vocab * 0.25), 1.8 * seq_len), sharex=True
    )
    axes = np.atleast_1d(axes)
    idx = np.arange(vocab)
    for pos, ax in enumerate(axes):
        ax.bar(idx - 0.2, target[pos], width=0.4, label="target")
        ax.bar(idx + 0.2, empirical[pos], width=0.4, label="generated")
        ax.set_ylabel(f"pos {pos}")
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("token")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trace(path, header, rows) -> Path:
    """Entropy and max-prob curves of a single sampled trajectory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(rows, dtype=float)
    t = arr[:, header.index("t")]
    ent_cols = [i for i, h in enumerate(header) if h.startswith("entropy_")]
    max_cols = [i for i, h in enumerate(header) if h.startswith("max_prob_")]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for i in ent_cols:
        ax1.plot(t, arr[:, i], lw=0.9)
    ax1.set_xlabel("t")
    ax1.set_ylabel("entropy")
    for i in max_cols:
        ax2.plot(t, arr[:, i], lw=0.9)
    ax2.set_xlabel("t")
    ax2.set_ylabel("max prob")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_guidance_trace(path, traces) -> Path:
    """Mean candidate classifier score per step, one line per guided run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for rows in traces:
        arr = np.asarray(rows, dtype=float)
        ax.plot(arr[:, 1], arr[:, 2], lw=0.8, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("mean candidate score")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
