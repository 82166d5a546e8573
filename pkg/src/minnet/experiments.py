"""Run presets end to end: data preparation, training and evaluation."""

import logging
from dataclasses import dataclass

import numpy as np

from .criteria import criterion
from .data import (LabeledDataset, make_xor_dataset, split_data, split_matlab, split_tf,
                   split_torch)
from .report import accuracy, confusion_matrix
from .tensor import make_rng
from .training import TrainOptions, predict, train

log = logging.getLogger(__name__)

TF_VALIDATION_FRACTION = 5000 / 60000


@dataclass
class ExperimentResult:
    model: object
    report: object
    accuracy: float
    confusion: np.ndarray = None
    train_size: int = 0
    val_size: int = 0
    test_size: int = 0


def train_options(preset, seed, threads=1, **overrides):
    fields = {**preset.train, **{k: v for k, v in overrides.items() if v is not None}}
    return TrainOptions(seed=seed, threads=threads, **fields)


def run_xor(preset, seed, **overrides):
    """Train an XOR preset; accuracy is over the four points."""
    ds = make_xor_dataset(preset.encoding)
    model = preset.build(make_rng(seed))
    report = train(model, criterion(preset.loss), ds, opts=train_options(preset, seed, **overrides))
    return ExperimentResult(model, report, accuracy(predict(model, ds.data), ds.label),
                            train_size=len(ds))


def as_images(ds):
    return LabeledDataset(ds.data.reshape(len(ds), 1, 28, 28), ds.label, ds.num_classes)


def prepare_mnist(preset, train_full, test, seed, subset=None):
    """(train, validation or None, test) for the preset's split policy.

    ``subset`` keeps only the first ``subset`` training images; the split
    policy is then applied proportionally and the test set is unchanged.
    """
    if preset.task == "mnist-cnn":
        train_full, test = as_images(train_full), as_images(test)
    if subset is not None:
        if not 1 <= subset <= len(train_full):
            raise ValueError(f"subset must be in [1, {len(train_full)}], got {subset}")
    pool = train_full.head(subset) if subset else train_full
    rng = make_rng(seed)
    if preset.split == "torch":
        tr, va = split_torch(pool, rng, 0.75)
    elif preset.split == "tf":
        tr, va = split_tf(pool, int(round(len(pool) * TF_VALIDATION_FRACTION)))
    elif preset.split == "matlab":
        if subset:
            tr, va = split_data(pool, 0.75)
        else:
            tr, va, test = split_matlab(train_full, test)
    elif preset.split == "none":
        tr, va = pool, None
    else:
        raise ValueError(f"unknown split policy {preset.split!r}")
    return tr, va, test


def run_mnist(preset, train_full, test, seed, subset=None, threads=1, on_epoch=None, **overrides):
    tr, va, te = prepare_mnist(preset, train_full, test, seed, subset)
    model = preset.build(make_rng(seed))
    opts = train_options(preset, seed, threads, **overrides)
    log.info("%s: %d train / %d validation / %d test", preset.name, len(tr),
             0 if va is None else len(va), len(te))
    report = train(model, criterion(preset.loss), tr, va, te, opts, on_epoch)
    pred = predict(model, te.data, opts.eval_batch_size)
    return ExperimentResult(model, report, accuracy(pred, te.label),
                            confusion_matrix(pred, te.label, 10),
                            len(tr), 0 if va is None else len(va), len(te))
