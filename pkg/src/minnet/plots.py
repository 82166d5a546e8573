"""PNG figures rendered with matplotlib's Agg backend (written next to the CSV/SVG reports)."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss(report, path, title="Loss", log_y=False):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    epochs = np.arange(1, report.epochs_run + 1)
    for name, values in (("training", report.train_loss), ("validation", report.val_loss),
                         ("test", report.test_loss)):
        values = np.asarray(values, dtype=float)
        if np.any(~np.isnan(values)):
            ax.plot(epochs, values, label=name)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_surface(sample, class_points, path, title="Separation surface"):
    fig, ax = plt.subplots(figsize=(5.2, 5.6))
    pts = sample.points
    ax.scatter(pts[:, 0], pts[:, 1], s=0.3, c="#1f77b4", label="separation surface")
    for (name, p), color in zip(class_points.items(), ("#d62728", "#2ca02c")):
        p = np.asarray(p).reshape(-1, 2)
        ax.scatter(p[:, 0], p[:, 1], s=60, c=color, label=name)
    (x0, x1), (y0, y1) = sample.region
    px, py = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
    ax.set_xlim(x0 - px, x1 + px)
    ax.set_ylim(y0 - py, y1 + py)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title)
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.12), ncol=3, fontsize=8)
    _save(fig, path)


def plot_confusion(counts, path, title="Confusion matrix"):
    fig, ax = plt.subplots(figsize=(5.6, 5.0))
    im = ax.imshow(counts, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("true class")
    ax.set_ylabel("predicted class")
    ax.set_xticks(range(counts.shape[1]))
    ax.set_yticks(range(counts.shape[0]))
    ax.set_title(title)
    _save(fig, path)


def plot_filters(weight, path, cols=6, title="First-layer filters"):
    """One panel per output channel of the first input channel."""
    k = weight[:, 0]
    rows = math.ceil(len(k) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(1.2 * cols, 1.2 * rows + 0.4), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < len(k):
            ax.imshow(k[i], cmap="gray")
    fig.suptitle(title)
    _save(fig, path)


def plot_bench(rows, path):
    """Bar chart of mean seconds (with standard deviation) per configuration."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    labels = [f"{r['arch']}\n{r['batch_mode']}" for r in rows]
    ax.bar(range(len(rows)), [r["mean_seconds"] for r in rows],
           yerr=[r["std_seconds"] for r in rows], capsize=4)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("seconds")
    ax.set_title("Training time")
    _save(fig, path)
