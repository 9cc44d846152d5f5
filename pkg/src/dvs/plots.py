"""Report figures rendered next to the delimited outputs.

Every figure is written through the Agg backend with stripped metadata so
output trees stay byte-reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = dict(dpi=110, metadata={"Software": None})


def save_loss_trajectory_figure(rows, path):
    """Loss components over iterations, one panel, level changes marked.

    Args:
        rows: (level, iteration, L, L_g, L_l, L_s, L_e) tuples.
        path: output PNG.
    """
    rows = list(rows)
    if not rows:
        return
    arr = np.array([r[2:] for r in rows], dtype=float)
    levels = [r[0] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    labels = ["L", "L_g", "L_l", "L_s", "L_e"]
    for i, lab in enumerate(labels):
        ax.plot(x, np.maximum(arr[:, i], 1e-12), label=lab,
                lw=1.6 if i == 0 else 1.0)
    for i in range(1, len(levels)):
        if levels[i] != levels[i - 1]:
            ax.axvline(i - 0.5, color="0.6", ls="--", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("loss")
    ax.legend(ncol=5, fontsize=8, loc="upper right")
    ax.set_title("fusion loss trajectory (dashed: pyramid level change)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_depth_overview_figure(dsv_values, dmv, fused_values, path,
                               frame_index=0):
    """Side-by-side panels of the fusion inputs and output for one frame."""
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.6))
    axes[0].imshow(dsv_values, cmap="viridis")
    axes[0].set_title(f"DSV (normalized inverse), frame {frame_index}")
    masked = np.where(dmv.valid, dmv.values, np.nan)
    im1 = axes[1].imshow(masked, cmap="magma")
    axes[1].set_title("DMV (holes blank)")
    im2 = axes[2].imshow(fused_values, cmap="magma",
                         vmin=np.nanmin(masked), vmax=np.nanmax(masked))
    axes[2].set_title("fused depth")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im2, ax=axes[2], fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_eval_figure(rows, path):
    """Per-method bars of the view-synthesis metrics.

    Args:
        rows: dicts with method, frame, flow_mag, psnr keys.
        path: output PNG.
    """
    methods = sorted({r["method"] for r in rows})
    if not methods:
        return
    flow = [np.mean([r["flow_mag"] for r in rows if r["method"] == m])
            for m in methods]
    ps = [np.mean([r["psnr"] for r in rows if r["method"] == m])
          for m in methods]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    xs = np.arange(len(methods))
    ax1.bar(xs, flow, color="#4477aa")
    ax1.set_xticks(xs, methods)
    ax1.set_ylabel("mean flow magnitude (px)")
    ax1.set_title("view-synthesis flow error")
    ax2.bar(xs, ps, color="#66ccee")
    ax2.set_xticks(xs, methods)
    ax2.set_ylabel("PSNR (dB)")
    ax2.set_title("view-synthesis PSNR")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
