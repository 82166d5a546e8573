"""Network builders and named replication presets.

A preset pins every hyperparameter of one experiment: architecture,
initialisation, loss, optimizer settings, batching and the data split.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .conv import Conv2D, Flatten, MaxPool2D
from .nn import (Linear, ReLU, Sequential, SoftMax, activation, init_truncated_normal,
                 init_uniform)

CNN_ARCHS = ("figure", "half-res", "tf-same")
BENCH_ARCHS = ("mlp-1000", "mlp-300x3", "cnn")


def initialise(model, scheme, rng):
    """Re-draw every Linear/Conv2D parameter.

    ``fan-in``: uniform +-1/sqrt(fan_in) for weights and biases (Torch default).
    ``uniform:a``: weights uniform(-a, a), biases zero.
    ``uniform-all:a``: weights and biases uniform(-a, a).
    ``normal:s``: weights N(0, s^2), biases zero.
    ``truncated:s:c``: weights truncated normal with stddev s, biases c.
    """
    kind, *args = scheme.split(":")
    for m in _param_layers(model):
        fan_in = int(np.prod(m.W.shape[1:]))
        if kind == "fan-in":
            bound = 1.0 / np.sqrt(fan_in)
            init_uniform(m, -bound, bound, rng)
        elif kind == "uniform":
            init_uniform(m, -float(args[0]), float(args[0]), rng, bias=False)
        elif kind == "uniform-all":
            init_uniform(m, -float(args[0]), float(args[0]), rng)
        elif kind == "normal":
            m.W[...] = rng.normal(0.0, float(args[0]), m.W.shape)
            m.b[...] = 0.0
        elif kind == "truncated":
            init_truncated_normal(m, float(args[0]), float(args[1]), rng)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
    return model


def _param_layers(model):
    out = []
    for m in model.children():
        if isinstance(m, (Linear, Conv2D)):
            out.append(m)
        else:
            out.extend(_param_layers(m))
    return out


def build_mlp(sizes, hidden="relu", output="identity"):
    """Fully connected net; ``sizes`` = [n_in, h1, ..., n_out]."""
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    net = Sequential()
    for i in range(len(sizes) - 1):
        net.add(Linear(sizes[i], sizes[i + 1]))
        net.add(activation(hidden if i < len(sizes) - 2 else output))
    return net


def build_xor_net(hidden, act="tanh", output="identity"):
    return build_mlp([2, hidden, 1], act, output)


def build_cnn(arch, softmax_output=False):
    """The three convolutional architectures (input [B x 1 x 28 x 28]).

    figure:   conv5 pad2 (12) ReLU pool2 | conv3 pad1 (16) ReLU pool2 | 784 -> 256 ReLU -> 10
    half-res: pool2 on the input | conv5 pad2 (12) ReLU pool2 | conv3 pad1 (16) ReLU | 784 -> 256 ReLU -> 10
    tf-same:  conv5 SAME (12) ReLU pool3/3 SAME | conv5 SAME (16) ReLU pool3/3 SAME | 256 -> 1024 ReLU -> 10
    """
    if arch == "figure":
        layers = [Conv2D(1, 12, 5, padding=2), ReLU(), MaxPool2D(2),
                  Conv2D(12, 16, 3, padding=1), ReLU(), MaxPool2D(2),
                  Flatten(784), Linear(784, 256), ReLU(), Linear(256, 10)]
    elif arch == "half-res":
        layers = [MaxPool2D(2),
                  Conv2D(1, 12, 5, padding=2), ReLU(), MaxPool2D(2),
                  Conv2D(12, 16, 3, padding=1), ReLU(),
                  Flatten(784), Linear(784, 256), ReLU(), Linear(256, 10)]
    elif arch == "tf-same":
        layers = [Conv2D(1, 12, 5, padding="same"), ReLU(), MaxPool2D(3, 3, "same"),
                  Conv2D(12, 16, 5, padding="same"), ReLU(), MaxPool2D(3, 3, "same"),
                  Flatten(256), Linear(256, 1024), ReLU(), Linear(1024, 10)]
    else:
        raise ValueError(f"unknown CNN architecture {arch!r}; choose from {CNN_ARCHS}")
    if softmax_output:
        layers.append(SoftMax())
    return Sequential(*layers)


def first_conv(model):
    return next((m for m in model.children() if isinstance(m, Conv2D)), None)


@dataclass(frozen=True)
class Preset:
    """Everything needed to rerun one experiment.

    ``split`` is one of "torch" (shuffle, 75/25), "tf" (first 5000 for
    validation), "matlab" (45000/15000/10000 index split) or "none" (no
    validation set).
    """

    name: str
    task: str
    layers: tuple = ()
    hidden: str = "relu"
    output: str = "identity"
    arch: str = None
    softmax_output: bool = False
    init: str = "fan-in"
    loss: str = "cross-entropy"
    encoding: str = "zero-one"
    split: str = "none"
    train: dict = field(default_factory=dict)

    def build(self, rng):
        if self.task == "mnist-cnn":
            model = build_cnn(self.arch, self.softmax_output)
        else:
            model = build_mlp(list(self.layers), self.hidden, self.output)
            if self.softmax_output:
                model.add(SoftMax())
        return initialise(model, self.init, rng)

    def with_options(self, **overrides):
        return replace(self, train={**self.train, **overrides})


PRESETS = {p.name: p for p in [
    # 2-2-1 tanh/identity, MSE (mean), +-0.5 encoding, full batch GD
    Preset("torch-xor", "xor", layers=(2, 2, 1), hidden="tanh", output="identity",
           init="fan-in", loss="mse", encoding="shifted",
           train=dict(nepochs=1000, learning_rate=0.05, batch_size=4, grad_inf_norm_floor=0.0)),
    # 2-3-1 sigmoid/sigmoid, summed squared error, 0/1 encoding, weights U(-1, 1), zero biases
    Preset("tf-xor", "xor", layers=(2, 3, 1), hidden="sigmoid", output="sigmoid",
           init="uniform:1.0", loss="mse-sum", encoding="zero-one",
           train=dict(nepochs=5000, learning_rate=0.1, batch_size=4, grad_inf_norm_floor=0.0)),
    Preset("torch-mnist-mlp", "mnist-mlp", layers=(784, 300, 10), hidden="relu",
           init="fan-in", loss="cross-entropy", split="torch",
           train=dict(nepochs=250, learning_rate=0.05, batch_size=64, patience=10,
                      grad_inf_norm_floor=0.0)),
    Preset("tf-mnist-mlp", "mnist-mlp", layers=(784, 300, 10), hidden="relu",
           init="uniform-all:0.1", loss="cross-entropy", split="tf",
           train=dict(nepochs=5000, learning_rate=0.5, batch_size=50, patience=5,
                      weight_decay_alpha=2e-4, batching="next_batch", grad_inf_norm_floor=0.0)),
    # tanh hidden layer as in a pattern-recognition net; the scaled conjugate
    # gradient default is replaced by momentum SGD, with max_fail-style patience
    Preset("matlab-mnist-mlp", "mnist-mlp", layers=(784, 300, 10), hidden="tanh",
           init="fan-in", loss="cross-entropy", split="matlab",
           train=dict(nepochs=1000, learning_rate=0.05, batch_size=128, optimizer="sgd-momentum",
                      momentum=0.9, patience=6, early_stop_policy="best")),
    Preset("figure", "mnist-cnn", arch="figure", init="normal:0.01", loss="cross-entropy",
           split="none",
           train=dict(nepochs=30, learning_rate=0.01, batch_size=128, optimizer="sgd-momentum",
                      momentum=0.9, weight_decay_alpha=1e-4, grad_inf_norm_floor=0.0)),
    Preset("half-res", "mnist-cnn", arch="half-res", softmax_output=True, init="fan-in",
           loss="cross-entropy", split="torch",
           train=dict(nepochs=250, learning_rate=0.05, batch_size=64, patience=10,
                      grad_inf_norm_floor=0.0)),
    Preset("tf-same", "mnist-cnn", arch="tf-same", init="truncated:0.1:0.1", loss="cross-entropy",
           split="tf",
           train=dict(nepochs=100, learning_rate=1e-4, batch_size=1000, optimizer="adam",
                      patience=6, batching="next_batch", batches_per_epoch=60,
                      grad_inf_norm_floor=0.0)),
]}

DEFAULT_PRESET = {"xor": "torch-xor", "mnist-mlp": "torch-mnist-mlp", "mnist-cnn": "tf-same"}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def bench_model(arch, rng):
    """Benchmark architectures: 784-1000-10, 784-300-300-300-10 and the figure CNN."""
    if arch == "mlp-1000":
        model = build_mlp([784, 1000, 10], "relu")
    elif arch == "mlp-300x3":
        model = build_mlp([784, 300, 300, 300, 10], "relu")
    elif arch == "cnn":
        model = build_cnn("figure")
    else:
        raise ValueError(f"unknown bench architecture {arch!r}; choose from {BENCH_ARCHS}")
    return initialise(model, "fan-in", rng)
