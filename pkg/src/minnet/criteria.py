"""Loss functions: ``forward`` returns a scalar, ``backward`` the gradient w.r.t. predictions.

With ``reduction="mean"`` the gradient is already divided by the batch size (or
by batch x width for MSE); this is the single place where batch averaging
happens in the library.
"""

import numpy as np

from .tensor import ShapeError

PROB_FLOOR = 1e-12


def _class_indices(target, pred):
    """Accept class indices [B] or a one-hot matrix [B x C]; return int indices."""
    target = np.asarray(target)
    if target.ndim == 2:
        if target.shape != pred.shape:
            raise ShapeError(f"one-hot target {target.shape} vs prediction {pred.shape}")
        target = target.argmax(axis=1)
    if target.shape != (pred.shape[0],):
        raise ShapeError(f"target {target.shape} does not match batch of {pred.shape[0]}")
    idx = target.astype(np.int64)
    if np.any(idx != target) or idx.min(initial=0) < 0 or idx.max(initial=0) >= pred.shape[1]:
        raise ValueError(f"class index out of range [0, {pred.shape[1]})")
    return idx


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Criterion:
    def __init__(self, reduction="mean"):
        if reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
        self.reduction = reduction
        self.output = None
        self.grad_input = None

    def forward(self, pred, target):
        self.output = float(self._forward(pred, target))
        return self.output

    def backward(self, pred, target):
        self.grad_input = self._backward(pred, target)
        return self.grad_input

    __call__ = forward


class MSECriterion(Criterion):
    """Squared error; mean over every element, or plain sum."""

    def _check(self, pred, target):
        target = np.asarray(target, dtype=pred.dtype)
        if target.shape != pred.shape:
            raise ShapeError(f"MSE: prediction {pred.shape} vs target {target.shape}")
        return target

    def _forward(self, pred, target):
        diff = pred - self._check(pred, target)
        total = np.sum(diff * diff)
        return total / diff.size if self.reduction == "mean" else total

    def _backward(self, pred, target):
        grad = 2.0 * (pred - self._check(pred, target))
        return grad / pred.size if self.reduction == "mean" else grad


class CrossEntropyCriterion(Criterion):
    """Cross-entropy on raw logits: logsumexp(z) - z[target] per row."""

    def _forward(self, pred, target):
        idx = _class_indices(target, pred)
        losses = -_log_softmax(pred)[np.arange(len(idx)), idx]
        return losses.mean() if self.reduction == "mean" else losses.sum()

    def _backward(self, pred, target):
        idx = _class_indices(target, pred)
        z = pred - pred.max(axis=1, keepdims=True)
        grad = np.exp(z)
        grad /= grad.sum(axis=1, keepdims=True)
        grad[np.arange(len(idx)), idx] -= 1.0
        return grad / len(idx) if self.reduction == "mean" else grad


class NLLCriterion(Criterion):
    """Negative log-likelihood of probabilities, clamped at ``PROB_FLOOR``."""

    def _forward(self, pred, target):
        idx = _class_indices(target, pred)
        p = np.maximum(pred[np.arange(len(idx)), idx], PROB_FLOOR)
        losses = -np.log(p)
        return losses.mean() if self.reduction == "mean" else losses.sum()

    def _backward(self, pred, target):
        idx = _class_indices(target, pred)
        rows = np.arange(len(idx))
        p = pred[rows, idx]
        grad = np.zeros_like(pred)
        grad[rows, idx] = np.where(p > PROB_FLOOR, -1.0 / np.maximum(p, PROB_FLOOR), 0.0)
        return grad / len(idx) if self.reduction == "mean" else grad


CRITERIA = {
    "mse": lambda: MSECriterion("mean"),
    "mse-sum": lambda: MSECriterion("sum"),
    "cross-entropy": lambda: CrossEntropyCriterion("mean"),
    "nll": lambda: NLLCriterion("mean"),
}


def criterion(kind):
    try:
        return CRITERIA[kind]()
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; choose from {sorted(CRITERIA)}") from None
