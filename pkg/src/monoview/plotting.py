"""Report figures written straight to image files (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .schedule import TrainingSchedule, lr_at, omega_at, stride_at, weights_at  # noqa: E402


def colorize_depth(depth: np.ndarray, mask: np.ndarray | None = None, vmin=None, vmax=None,
                   cmap: str = "turbo") -> np.ndarray:
    """Map depth to RGB in [0, 1]; masked-out pixels are black."""
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.isfinite(depth) if mask is None else np.asarray(mask, dtype=bool) & np.isfinite(depth)
    if not mask.any():
        return np.zeros(depth.shape + (3,))
    lo = depth[mask].min() if vmin is None else vmin
    hi = depth[mask].max() if vmax is None else vmax
    norm = np.clip((depth - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    rgb = matplotlib.colormaps[cmap](norm)[..., :3]
    rgb[~mask] = 0.0
    return rgb


def plot_schedule(sched: TrainingSchedule, path, points: int = 400):
    its = np.unique(np.linspace(0, sched.total_iterations, points).astype(int))
    w = [weights_at(int(i), sched) for i in its]
    fig, axes = plt.subplots(2, 2, figsize=(10, 6.5))
    axes[0, 0].step(its, [stride_at(int(i), sched) for i in its], where="post")
    axes[0, 0].set_title("patch stride")
    axes[0, 1].plot(its, np.degrees([omega_at(int(i), sched) for i in its]))
    axes[0, 1].set_title("pose std (deg)")
    axes[1, 0].plot(its, [x.adv for x in w], label="adversarial")
    axes[1, 0].plot(its, [x.cls for x in w], label="global feature")
    axes[1, 0].set_title("semantic loss weights")
    axes[1, 0].legend()
    lrs = np.array([lr_at(int(i), sched) for i in its])
    axes[1, 1].semilogy(its, lrs[:, 0], label="field")
    axes[1, 1].semilogy(its, lrs[:, 1], label="critic")
    axes[1, 1].set_title("learning rate")
    axes[1, 1].legend()
    for ax in axes.flat:
        ax.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_losses(history: list, path, keys=("total", "pix", "depth_ref", "geo", "adv_g", "adv_d", "cls")):
    fig, ax = plt.subplots(figsize=(8, 4.5))
    its = np.array([h["iteration"] for h in history])
    for key in keys:
        vals = np.array([h.get(key, np.nan) for h in history], dtype=np.float64)
        if np.isfinite(vals).any():
            ax.plot(its, vals, label=key, lw=1)
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(ncol=4, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_view_metrics(report, path):
    """Per-view PSNR and SSIM, against orbit yaw when the views carry one."""
    views = report.views
    yaw = [v.extra.get("yaw_deg") for v in views]
    x = np.array(yaw, dtype=np.float64) if all(y is not None for y in yaw) else np.arange(len(views))
    fig, ax1 = plt.subplots(figsize=(8, 4))
    ax1.plot(x, [v.psnr for v in views], "o-", color="tab:blue", ms=3)
    ax1.set_ylabel("PSNR (dB)", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(x, [v.ssim for v in views], "s--", color="tab:orange", ms=3)
    ax2.set_ylabel("SSIM", color="tab:orange")
    ax1.set_xlabel("yaw (deg)" if x.dtype.kind == "f" and yaw and yaw[0] is not None else "view index")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_comparison(path, panels: dict):
    """Side-by-side image panels, e.g. render vs. ground truth vs. depth."""
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.4))
    for ax, (title, img) in zip(np.atleast_1d(axes), panels.items()):
        ax.imshow(np.clip(img, 0, 1))
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
