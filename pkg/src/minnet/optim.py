"""Parameter update rules and stopping checks."""

import numpy as np

from .tensor import ShapeError


def _check(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")


def sgd_momentum_step(params, grads, state, lr, momentum):
    """Classical momentum, in place: v <- m*v - lr*g; p <- p + v.

    ``state`` is a dict that receives the velocity buffers on first use.
    """
    _check(params, grads)
    velocity = state.setdefault("velocity", [np.zeros_like(p) for p in params])
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v -= lr * g
        p += v


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam, in place: p <- p - lr * m_hat / (sqrt(v_hat) + eps)."""
    _check(params, grads)
    first = state.setdefault("m", [np.zeros_like(p) for p in params])
    second = state.setdefault("v", [np.zeros_like(p) for p in params])
    state["t"] = t = state.get("t", 0) + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, first, second):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Optimizer:
    """Applies one of the update rules to a module's parameters.

    With ``weight_decay`` alpha > 0 the gradient of (alpha/2)||p||^2 is added
    to every gradient before the step.
    """

    def __init__(self, kind="gd", momentum=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("gd", "sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.momentum = momentum
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {}

    def step(self, model, lr, weight_decay=0.0):
        pairs = model.parameters()
        params = [p for p, _ in pairs]
        grads = [g if weight_decay == 0 else g + weight_decay * p for p, g in pairs]
        if self.kind == "gd":
            for p, g in zip(params, grads):
                if lr != 0:
                    p -= lr * g
        elif self.kind == "sgd-momentum":
            sgd_momentum_step(params, grads, self.state, lr, self.momentum)
        else:
            adam_step(params, grads, self.state, lr, self.beta1, self.beta2, self.eps)


def early_stop_check(prev_val, curr_val, counter, factor=0.9999, patience=10):
    """One epoch of the validation rule: a failure is curr >= prev*factor.

    Returns (new counter, stop); the counter resets to 0 on any improvement.
    """
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    counter = counter + 1 if curr_val >= prev_val * factor else 0
    return counter, counter >= patience


class EarlyStopping:
    """Validation-loss patience tracker.

    ``policy="previous"`` compares with the previous epoch's loss (the value
    is replaced every epoch); ``policy="best"`` compares with the best loss
    seen so far, like Matlab's max_fail.
    """

    def __init__(self, patience=10, factor=0.9999, policy="previous"):
        if policy not in ("previous", "best"):
            raise ValueError(f"unknown early-stopping policy {policy!r}")
        self.patience, self.factor, self.policy = patience, factor, policy
        self.reference = np.inf
        self.counter = 0

    def update(self, val_loss):
        self.counter, stop = early_stop_check(
            self.reference, val_loss, self.counter, self.factor, self.patience)
        if self.policy == "previous":
            self.reference = val_loss
        else:
            self.reference = min(self.reference, val_loss)
        return stop


def gradient_floor_check(model, floor=1e-6):
    """True when the largest absolute gradient entry is below ``floor``."""
    norm = max((float(np.max(np.abs(g))) for _, g in model.parameters() if g.size), default=0.0)
    return norm < floor
