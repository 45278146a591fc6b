"""Matplotlib renderings of run artifacts, written next to the CSV/JSON.

Rendering is deliberately separate from tracking: records carry the data,
these functions only draw.  Everything goes through the Agg backend so
runs work headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

MAX_GROUP_LINES = 512


def _style(ax):
    ax.grid(True, alpha=0.25, linewidth=0.6)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def render_curves(records, path) -> Path:
    epochs = [r.epoch for r in records]
    has_acc = records[0].train_acc is not None
    fig, axes = plt.subplots(1, 2 if has_acc else 1, figsize=(9 if has_acc else 5, 3.4))
    axes = np.atleast_1d(axes)
    ax = axes[0]
    ax.plot(epochs, [r.train_loss for r in records], label="train", color="C0")
    ax.plot(epochs, [r.val_loss for r in records], label="val", color="C1")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    _style(ax)
    if has_acc:
        ax = axes[1]
        ax.plot(epochs, [r.train_acc for r in records], label="train", color="C0")
        ax.plot(epochs, [r.val_acc for r in records], label="val", color="C1")
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy")
        ax.legend(frameon=False)
        _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_sparsity(records, path) -> Path | None:
    layers = sorted(records[0].layer_sparsity)
    if not layers:
        return None
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for li in layers:
        ax.plot(epochs, [r.layer_sparsity[li] for r in records], label=f"layer {li}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("nonzero fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_gamma_paths(records, layer: int, path) -> Path:
    """Per-group companion magnitudes over epochs, final support in color."""
    epochs = [r.epoch for r in records]
    norms = np.array([r.gamma_norms[layer] for r in records])  # (epochs, groups)
    final_active = np.asarray(records[-1].support[layer], dtype=bool)
    n_groups = norms.shape[1]
    order = np.argsort(-norms[-1])
    shown = order[:MAX_GROUP_LINES]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for g in shown:
        color = "C0" if final_active[g] else "C3"
        alpha = 0.8 if final_active[g] else 0.35
        ax.plot(epochs, norms[:, g], color=color, alpha=alpha, linewidth=0.9)
    title = f"layer {layer} companion magnitudes"
    if n_groups > MAX_GROUP_LINES:
        title += f" (top {MAX_GROUP_LINES} of {n_groups})"
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("epoch")
    ax.set_ylabel("group magnitude")
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_monitor(monitor, path) -> Path:
    recs = monitor.records
    ks = [r.k for r in recs]
    fig, (top, bot) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    top.plot(ks, [r.F for r in recs], color="C0")
    top.set_ylabel("Lyapunov F")
    _style(top)
    bot.plot(ks[1:], [r.H_norm for r in recs[1:]], color="C0", label="residual")
    bot.plot(ks[1:], [r.rho1 * r.delta_Q for r in recs[1:]], color="C1",
             linestyle="--", label="certified bound")
    bad = [r.k for r in recs if not (r.descent_ok and r.relerr_ok)]
    for k in bad:
        bot.axvline(k, color="C3", alpha=0.4, linewidth=0.8)
    bot.set_xlabel("step")
    bot.set_ylabel("relative error")
    bot.legend(frameon=False, fontsize=8)
    _style(bot)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_grid(means: dict, path, label: str = "nonzero fraction") -> Path:
    kappas = sorted({k for k, _ in means})
    nus = sorted({n for _, n in means})
    grid = np.array([[means[(k, n)] for n in nus] for k in kappas])
    fig, ax = plt.subplots(figsize=(1.4 * len(nus) + 2, 1.1 * len(kappas) + 1.5))
    im = ax.imshow(grid, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(nus)), [str(n) for n in nus])
    ax.set_yticks(range(len(kappas)), [str(k) for k in kappas])
    ax.set_xlabel("nu")
    ax.set_ylabel("kappa")
    for i in range(len(kappas)):
        for j in range(len(nus)):
            ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                    color="white", fontsize=9)
    fig.colorbar(im, ax=ax, label=label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_run(result, run_dir) -> list:
    """All applicable figures for one run directory."""
    run_dir = Path(run_dir)
    written = [render_curves(result.records, run_dir / "curves.png")]
    sp = render_sparsity(result.records, run_dir / "sparsity.png")
    if sp is not None:
        written.append(sp)
    for li in sorted(result.records[0].gamma_norms):
        written.append(
            render_gamma_paths(result.records, li, run_dir / f"gamma_paths_layer{li}.png")
        )
    if result.monitor is not None:
        written.append(render_monitor(result.monitor, run_dir / "monitor.png"))
    return written
