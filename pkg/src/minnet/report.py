"""Accuracy, confusion matrices, separation-surface sampling and CSV / SVG output."""

import csv
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .training import predict

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _is_scalar_output(pred):
    return pred.ndim == 1 or pred.shape[1] == 1


def _labels(pred):
    return pred.argmax(axis=1) if pred.ndim == 2 else np.asarray(pred, dtype=np.int64)


def accuracy(pred, target):
    """Fraction correct.

    Single-output predictions count as correct when |pred - target| < 0.5;
    multi-column predictions when their argmax equals the target class
    (given as indices or one-hot rows).
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if _is_scalar_output(pred):
        return float(np.mean(np.abs(pred.reshape(-1) - target.reshape(-1)) < 0.5))
    truth = target.argmax(axis=1) if target.ndim == 2 else target
    return float(np.mean(pred.argmax(axis=1) == truth))


def confusion_matrix(pred, target, num_classes):
    """counts[i, j] = number of samples predicted as i whose true class is j."""
    predicted = _labels(np.asarray(pred))
    target = np.asarray(target)
    truth = target.argmax(axis=1) if target.ndim == 2 else target.astype(np.int64)
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (predicted, truth), 1)
    return counts


def write_confusion_csv(counts, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["predicted\\true"] + [str(j) for j in range(counts.shape[1])])
        for i, row in enumerate(counts):
            w.writerow([str(i)] + [str(int(v)) for v in row])


@dataclass
class SurfaceSample:
    region: tuple
    n_points: int
    band: tuple
    points: np.ndarray = field(repr=False)
    outputs: np.ndarray = field(repr=False)


def sample_separation_surface(model, region, n_points, band, rng, batch_size=10_000):
    """Draw uniform points in ``region`` and keep those whose output lies in ``band`` (inclusive).

    ``region`` is ((x_lo, x_hi), (y_lo, y_hi)); the model must map [B x 2] to [B x 1].
    """
    (x0, x1), (y0, y1) = region
    lo, hi = band
    kept, outs = [], []
    for start in range(0, n_points, batch_size):
        m = min(batch_size, n_points - start)
        pts = rng.random((m, 2)) * [x1 - x0, y1 - y0] + [x0, y0]
        out = predict(model, pts, batch_size)[:, 0]
        mask = (out >= lo) & (out <= hi)
        kept.append(pts[mask])
        outs.append(out[mask])
    return SurfaceSample(region, n_points, band, np.concatenate(kept), np.concatenate(outs))


def export_loss_trend(report, path):
    report.write_csv(path)


# ---------------------------------------------------------------- SVG output

class _Axes:
    def __init__(self, xlim, ylim, width, height, margin, log_y=False):
        self.x0, self.x1 = xlim
        self.log_y = log_y
        y0, y1 = ylim
        self.y0, self.y1 = (math.log10(y0), math.log10(y1)) if log_y else (y0, y1)
        self.left, self.top = margin
        self.w = width - margin[0] - 20
        self.h = height - margin[1] - 50

    def px(self, x):
        span = (self.x1 - self.x0) or 1.0
        return self.left + (x - self.x0) / span * self.w

    def py(self, y):
        if self.log_y:
            y = math.log10(y)
        span = (self.y1 - self.y0) or 1.0
        return self.top + self.h - (y - self.y0) / span * self.h


def _ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / count))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def _fmt_tick(v):
    return f"{v:.4g}"


def _frame(ax, title, xlabel, ylabel, xticks, yticks, width, height):
    parts = [
        f'<rect x="{ax.left:.2f}" y="{ax.top:.2f}" width="{ax.w:.2f}" height="{ax.h:.2f}" '
        f'fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{ax.left + ax.w / 2:.1f}" y="{height - 10:.1f}" text-anchor="middle" '
        f'font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{ax.top + ax.h / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {ax.top + ax.h / 2:.1f})">{escape(ylabel)}</text>',
    ]
    ticks = ['<g class="ticks" font-size="10">']
    for t in xticks:
        x = ax.px(t)
        ticks.append(f'<line x1="{x:.2f}" y1="{ax.top + ax.h:.2f}" x2="{x:.2f}" '
                     f'y2="{ax.top + ax.h + 4:.2f}" stroke="black"/>')
        ticks.append(f'<text x="{x:.2f}" y="{ax.top + ax.h + 16:.2f}" '
                     f'text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in yticks:
        y = ax.py(t)
        ticks.append(f'<line x1="{ax.left - 4:.2f}" y1="{y:.2f}" x2="{ax.left:.2f}" '
                     f'y2="{y:.2f}" stroke="black"/>')
        ticks.append(f'<text x="{ax.left - 6:.2f}" y="{y + 3:.2f}" '
                     f'text-anchor="end">{_fmt_tick(t)}</text>')
    ticks.append("</g>")
    return parts + ticks


def _legend(ax, names, markers=None):
    out = ['<g class="legend" font-size="11">']
    for i, name in enumerate(names):
        y = ax.top + 12 + 16 * i
        x = ax.left + ax.w - 130
        color = PALETTE[i % len(PALETTE)]
        if markers is None:
            out.append(f'<line x1="{x:.2f}" y1="{y:.2f}" x2="{x + 20:.2f}" y2="{y:.2f}" '
                       f'stroke="{color}" stroke-width="2"/>')
        else:
            out.append(f'<circle cx="{x + 10:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
        out.append(f'<text x="{x + 26:.2f}" y="{y + 4:.2f}">{escape(name)}</text>')
    out.append("</g>")
    return out


def _document(width, height, body):
    return "\n".join(
        ['<?xml version="1.0" encoding="UTF-8"?>',
         f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
         f'height="{height}" viewBox="0 0 {width} {height}">',
         '<rect width="100%" height="100%" fill="white"/>']
        + body + ["</svg>", ""])


def render_lines_svg(series, path, title="", xlabel="epoch", ylabel="loss",
                     log_y=False, width=640, height=420):
    """Line chart with one <polyline> per named series.

    ``series`` maps a name to (xs, ys); NaN points are dropped, and so are
    non-positive ones under ``log_y``.
    """
    clean = {}
    for name, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if not math.isnan(y) and (not log_y or y > 0)]
        if pts:
            clean[name] = pts
    allx = [p[0] for pts in clean.values() for p in pts] or [0.0, 1.0]
    ally = [p[1] for pts in clean.values() for p in pts] or [1.0, 2.0]
    ylo, yhi = min(ally), max(ally)
    if ylo == yhi:
        ylo, yhi = (ylo / 2, yhi * 2) if log_y else (ylo - 1, yhi + 1)
    ax = _Axes((min(allx), max(allx)), (ylo, yhi), width, height, (70, 35), log_y)
    if log_y:
        yticks = [10.0 ** e for e in range(math.ceil(math.log10(ylo)), math.floor(math.log10(yhi)) + 1)]
    else:
        yticks = _ticks(ylo, yhi)
    body = _frame(ax, title, xlabel, ylabel + (" (log)" if log_y else ""),
                  _ticks(ax.x0, ax.x1), yticks, width, height)
    for i, (name, pts) in enumerate(clean.items()):
        coords = " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in pts)
        body.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                    f'stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5" points="{coords}"/>')
    body += _legend(ax, list(clean))
    with open(path, "w") as f:
        f.write(_document(width, height, body))


def render_scatter_svg(series, path, region, title="", xlabel="x1", ylabel="x2",
                       width=520, height=520, radius=None):
    """Scatter plot; ``series`` maps a name to an [N x 2] array (or (array, radius))."""
    (x0, x1), (y0, y1) = region
    ax = _Axes((x0, x1), (y0, y1), width, height, (60, 35))
    body = _frame(ax, title, xlabel, ylabel, _ticks(x0, x1), _ticks(y0, y1), width, height)
    for i, (name, spec) in enumerate(series.items()):
        pts, r = spec if isinstance(spec, tuple) else (spec, radius or 1.2)
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<g class="series" data-name="{escape(name)}" fill="{color}">')
        body += [f'<circle cx="{ax.px(x):.2f}" cy="{ax.py(y):.2f}" r="{r}"/>'
                 for x, y in np.asarray(pts).reshape(-1, 2)]
        body.append("</g>")
    body += _legend(ax, list(series), markers=True)
    with open(path, "w") as f:
        f.write(_document(width, height, body))


def render_loss_svg(report, path, title="Loss", log_y=False):
    epochs = list(range(1, report.epochs_run + 1))
    series = {"training": (epochs, report.train_loss)}
    if any(not math.isnan(v) for v in report.val_loss):
        series["validation"] = (epochs, report.val_loss)
    if any(not math.isnan(v) for v in report.test_loss):
        series["test"] = (epochs, report.test_loss)
    render_lines_svg(series, path, title=title, log_y=log_y)


def render_surface_svg(sample, class_points, path, title="Separation surface"):
    """Band points plus the labelled training points (``class_points``: name -> [N x 2])."""
    series = {"separation surface": (sample.points, 0.8)}
    for name, pts in class_points.items():
        series[name] = (pts, 6)
    render_scatter_svg(series, path, sample.region, title=title)


def render_image_svg(img, path, scale=12):
    """Grayscale uint8 image as a grid of rects (used for convolution filters)."""
    h, w = img.shape
    body = []
    for r in range(h):
        for c in range(w):
            v = int(img[r, c])
            body.append(f'<rect x="{c * scale}" y="{r * scale}" width="{scale}" height="{scale}" '
                        f'fill="rgb({v},{v},{v})"/>')
    with open(path, "w") as f:
        f.write(_document(w * scale, h * scale, body))
