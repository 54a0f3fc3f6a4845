"""Figures and delimited tables written by the report commands."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import albedo_to_image  # noqa: E402
from .nn import CATEGORY_LABELS, AttentionReport  # noqa: E402
from .training import EpochStats  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
PNG_META = {"Software": None}


def write_tsv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return path


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)
    return path


def panel_figure(path, real: np.ndarray | None, synthetic: np.ndarray, infrared: np.ndarray,
                 nwp_cloud: np.ndarray | None, title: str = "") -> Path:
    """Stacked rows: real visible, synthetic visible, one IR channel, NWP cloud cover."""
    rows = [
        ("real visible", None if real is None else albedo_to_image(real), None),
        ("synthetic visible", albedo_to_image(synthetic), None),
        ("infrared", infrared, "gray_r"),
        ("NWP cloud", nwp_cloud, "Blues_r"),
    ]
    fig, axes = plt.subplots(len(rows), 1, figsize=(3.2, 11))
    for ax, (label, img, cmap) in zip(axes, rows):
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_ylabel(label)
        if img is None:
            ax.text(0.5, 0.5, "not available", ha="center", va="center", transform=ax.transAxes)
        else:
            ax.imshow(img, cmap=cmap, interpolation="nearest")
    if title:
        axes[0].set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def attention_figure(path, report: AttentionReport) -> Path:
    names = [n for n, _, _ in report.channels]
    weights = [w for _, _, w in report.channels]
    cats = [c for _, c, _ in report.channels]
    palette = {c: f"C{i}" for i, c in enumerate(dict.fromkeys(cats))}
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * len(names)), 4))
    ax.bar(range(len(names)), weights, color=[palette[c] for c in cats])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel("excitation weight")
    ax.set_ylim(0, 1)
    handles = [plt.Rectangle((0, 0), 1, 1, color=col) for col in palette.values()]
    ax.legend(handles, [CATEGORY_LABELS.get(c, c) for c in palette], fontsize=7, loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def training_figure(path, history: Sequence[EpochStats]) -> Path:
    ep = [s.epoch for s in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.2))
    a.plot(ep, [s.loss_d for s in history], label="L_D")
    a.plot(ep, [s.loss_g for s in history], label="L_G")
    a.set_xlabel("epoch")
    a.set_yscale("log")
    a.legend()
    b.plot(ep, [s.l1 for s in history], color="C2")
    b.set_xlabel("epoch")
    b.set_ylabel("mean |y - G(x)|")
    fig.tight_layout()
    return _save(fig, path)


def ablation_figure(path, rows: dict[str, float], ylabel: str = "mean MAE (albedo)") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(list(rows), list(rows.values()), color=[f"C{i}" for i in range(len(rows))])
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)
