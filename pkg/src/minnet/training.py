"""Mini-batch training with validation early stopping, and loss evaluation."""

import copy
import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import BatchCursor
from .optim import EarlyStopping, Optimizer, gradient_floor_check
from .tensor import make_rng, split

log = logging.getLogger(__name__)

STOP_REASONS = ("max-epochs", "validation-patience", "gradient-floor", "goal-reached")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainOptions:
    nepochs: int = 1000
    learning_rate: float = 0.01
    batch_size: int = 32
    patience: int = 10
    improvement_factor: float = 0.9999
    early_stop_policy: str = "previous"
    momentum: float = 0.0
    weight_decay_alpha: float = 0.0
    grad_inf_norm_floor: float = 1e-6
    goal: float = 0.0
    optimizer: str = "gd"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    # "split": fixed consecutive chunks of the (already shuffled) training set;
    # "next_batch": draws from a reshuffling cursor, ``batches_per_epoch`` of
    # them per epoch (default N // batch_size)
    batching: str = "split"
    batches_per_epoch: int = None
    eval_batch_size: int = 1000
    threads: int = 1

    def __post_init__(self):
        if self.nepochs < 1:
            raise ValueError("nepochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.improvement_factor <= 1:
            raise ValueError("improvement_factor must be in (0, 1]")
        if self.weight_decay_alpha < 0:
            raise ValueError("weight_decay_alpha must be >= 0")
        if self.batching not in ("split", "next_batch"):
            raise ValueError(f"unknown batching mode {self.batching!r}")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be >= 1")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    epochs_run: int = 0
    stop_reason: str = "max-epochs"
    seconds: float = 0.0

    def rows(self):
        for i in range(self.epochs_run):
            yield [i + 1] + [_fmt(s[i]) for s in (self.train_loss, self.val_loss, self.test_loss)]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "test_loss"])
            w.writerows(self.rows())

    def summary(self):
        return {"stop_reason": self.stop_reason, "epochs_run": self.epochs_run,
                "seconds": self.seconds}

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2)

    def to_dict(self):
        return asdict(self)


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _batch_losses(model, criterion, batches):
    out = []
    for x, y in batches:
        out.append(criterion.forward(model.forward(x), y))
    return out


def evaluate(model, criterion, ds, batch_size=32, threads=1):
    """Mean of per-batch losses over ``ds`` in eval mode; gradients are zeroed afterwards.

    With a ragged last batch this mean-of-means differs slightly from the
    loss over the whole set at once.
    """
    was_training = model.training
    model.set_training(False)
    batches = list(zip(split(ds.data, batch_size), split(ds.label, batch_size)))
    if threads > 1 and len(batches) > 1:
        chunks = [batches[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(
                lambda part: _batch_losses(copy.deepcopy(model), criterion.__class__(criterion.reduction), part),
                chunks))
        losses = [None] * len(batches)
        for i, part in enumerate(parts):
            losses[i::threads] = part
    else:
        losses = _batch_losses(model, criterion, batches)
    model.zero_grad_parameters()
    model.set_training(was_training)
    return float(sum(losses) / len(losses))


def train(model, criterion, train_ds, val_ds=None, test_ds=None, opts=None, on_epoch=None):
    """Train ``model`` in place and return a TrainReport.

    Each epoch runs the mini-batch updates, records the mean batch loss, then
    evaluates validation and test loss.  Training stops on the first of: goal
    reached, gradient infinity-norm below the floor, validation patience
    exhausted, or ``nepochs``.  Non-finite losses raise TrainingDiverged.
    """
    opts = opts or TrainOptions()
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    rng = make_rng(opts.seed)
    optimizer = Optimizer(opts.optimizer, opts.momentum, opts.beta1, opts.beta2, opts.epsilon)
    stopper = EarlyStopping(opts.patience, opts.improvement_factor, opts.early_stop_policy)
    report = TrainReport()
    if opts.batching == "split":
        fixed = list(zip(split(train_ds.data, opts.batch_size), split(train_ds.label, opts.batch_size)))
    else:
        cursor = BatchCursor(train_ds, rng)
        per_epoch = opts.batches_per_epoch or max(1, len(train_ds) // opts.batch_size)

    start = time.perf_counter()
    for epoch in range(1, opts.nepochs + 1):
        model.set_training(True)
        if opts.batching == "split":
            batches = fixed
        else:
            batches = ((b.data, b.label) for b in
                       (cursor.next_batch(opts.batch_size) for _ in range(per_epoch)))
        total, count = 0.0, 0
        for x, y in batches:
            out = model.forward(x)
            loss = criterion.forward(out, y)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss
            count += 1
            model.zero_grad_parameters()
            model.backward(x, criterion.backward(out, y))
            optimizer.step(model, opts.learning_rate, opts.weight_decay_alpha)
        train_loss = total / count
        grad_stop = gradient_floor_check(model, opts.grad_inf_norm_floor)

        val_loss = test_loss = float("nan")
        if val_ds is not None:
            val_loss = evaluate(model, criterion, val_ds, opts.eval_batch_size, opts.threads)
            if not math.isfinite(val_loss):
                raise TrainingDiverged(epoch, val_loss)
        if test_ds is not None:
            test_loss = evaluate(model, criterion, test_ds, opts.eval_batch_size, opts.threads)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.test_loss.append(test_loss)
        report.epochs_run = epoch
        log.info("epoch %d train %.6g val %.6g test %.6g", epoch, train_loss, val_loss, test_loss)
        if on_epoch is not None:
            on_epoch(epoch, report)

        val_stop = val_ds is not None and stopper.update(val_loss)
        if train_loss <= opts.goal:
            report.stop_reason = "goal-reached"
            break
        if grad_stop:
            report.stop_reason = "gradient-floor"
            break
        if val_stop:
            report.stop_reason = "validation-patience"
            break
    else:
        report.stop_reason = "max-epochs"
    model.set_training(False)
    report.seconds = time.perf_counter() - start
    return report


def predict(model, data, batch_size=1000):
    was_training = model.training
    model.set_training(False)
    out = np.concatenate([model.forward(x) for x in split(data, batch_size)])
    model.set_training(was_training)
    return out
