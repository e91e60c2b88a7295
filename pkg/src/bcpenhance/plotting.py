"""Report figures written next to the JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_SAVE_KW = dict(dpi=100, metadata={"Software": None})

rc = {
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "figure.facecolor": "w",
}


def _show(ax, img, title, cmap=None):
    ax.imshow(img, cmap=cmap, vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])


def enhance_figure(visible, thermal, result, path):
    """Six-panel overview: inputs, attention, initial and refined illumination, output."""
    with plt.rc_context(rc):
        fig, axes = plt.subplots(2, 3, figsize=(9, 5.6))
        _show(axes[0, 0], visible.hwc(), "visible")
        th = thermal.data.max(axis=0)
        _show(axes[0, 1], th, "thermal (V)", cmap="inferno")
        _show(axes[0, 2], result.attention.values, f"attention, gamma={result.attention.gamma:g}", cmap="gray")
        _show(axes[1, 0], result.t_tilde.values, "initial illumination", cmap="gray")
        _show(axes[1, 1], result.t.values, "refined illumination", cmap="gray")
        _show(axes[1, 2], result.enhanced.hwc(), "enhanced")
        fig.suptitle(
            f"objective {result.loss_initial.total:.4g} -> {result.loss_refined.total:.4g}   "
            f"mean bright channel {result.bright_in:.3f} -> {result.bright_out:.3f}"
        )
        fig.tight_layout()
        fig.savefig(path, **_SAVE_KW)
        plt.close(fig)


def training_figure(history, path, extra=None):
    """Loss curves per gradient step on a log scale."""
    steps = np.arange(len(history))
    total = np.array([h.total for h in history])
    data = np.array([h.data_term / h.n for h in history])
    smooth = np.array([h.lam * h.smoothness_term / h.n for h in history])
    with plt.rc_context(rc):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(steps, total, "k-", lw=1.2, label="total")
        ax.plot(steps, data, "C0--", lw=0.9, label="data / N")
        if np.any(smooth > 0):
            ax.plot(steps, smooth, "C1:", lw=0.9, label="lambda * smoothness / N")
        if extra is not None and np.any(np.asarray(extra) > 0):
            ax.plot(steps, extra, "C2-.", lw=0.9, label="beta * detector")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, **_SAVE_KW)
        plt.close(fig)
