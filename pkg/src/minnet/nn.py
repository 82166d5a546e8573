"""Layer modules with a forward / backward / update contract.

Every module keeps the result of its last ``forward`` in ``output`` and of its
last ``backward`` in ``grad_input``.  Parameterised modules *add* into their
gradient buffers on ``backward``; call ``zero_grad_parameters`` between steps.
Layers never rescale gradients by the batch size; the criteria do that.
"""

import json

import numpy as np

from .tensor import DTYPE, ShapeError, rand_uniform, truncated_normal


class Module:
    # (parameter attribute, gradient attribute) pairs, in a fixed order
    param_slots = ()

    def __init__(self):
        self.output = None
        self.grad_input = None
        self.training = True
        self._input_shape = None

    def forward(self, x):
        self._input_shape = x.shape
        self.output = self._forward(x)
        return self.output

    def backward(self, x, grad_output):
        if self._input_shape is None:
            raise RuntimeError(f"{type(self).__name__}: backward called before forward")
        if x.shape != self._input_shape:
            raise ShapeError(
                f"{type(self).__name__}: backward input {x.shape} differs from the "
                f"forward input {self._input_shape}")
        if grad_output.shape != self.output.shape:
            raise ShapeError(
                f"{type(self).__name__}: grad_output {grad_output.shape} does not match "
                f"output {self.output.shape}")
        self.grad_input = self._backward(x, grad_output)
        return self.grad_input

    __call__ = forward

    def _forward(self, x):
        raise NotImplementedError

    def _backward(self, x, grad_output):
        raise NotImplementedError

    def children(self):
        return []

    def named_slots(self, prefix=""):
        """Yield (name, module, param_attr, grad_attr) for every parameter, in layer order."""
        for p, g in self.param_slots:
            yield prefix + p, self, p, g
        for i, child in enumerate(self.children()):
            yield from child.named_slots(f"{prefix}{i}.")

    def parameters(self):
        """List of (param, grad) array pairs; the arrays are the live layer buffers."""
        return [(getattr(m, p), getattr(m, g)) for _, m, p, g in self.named_slots()]

    def zero_grad_parameters(self):
        for _, grad in self.parameters():
            grad.fill(0.0)

    def update_parameters(self, lr):
        for param, grad in self.parameters():
            if lr != 0:
                param -= lr * grad

    def get_parameters(self):
        """Flatten every parameter and gradient into two 1-D buffers.

        Layer attributes are rebound to views of the buffers, so writes through
        either side are visible on the other (as with Torch's getParameters).
        """
        slots = list(self.named_slots())
        total = sum(getattr(m, p).size for _, m, p, _ in slots)
        flat_p = np.empty(total, dtype=DTYPE)
        flat_g = np.empty(total, dtype=DTYPE)
        offset = 0
        for _, m, p, g in slots:
            param, grad = getattr(m, p), getattr(m, g)
            n = param.size
            flat_p[offset:offset + n] = param.ravel()
            flat_g[offset:offset + n] = grad.ravel()
            setattr(m, p, flat_p[offset:offset + n].reshape(param.shape))
            setattr(m, g, flat_g[offset:offset + n].reshape(grad.shape))
            offset += n
        return flat_p, flat_g

    def num_parameters(self):
        return sum(p.size for p, _ in self.parameters())

    def set_training(self, flag=True):
        self.training = flag
        for child in self.children():
            child.set_training(flag)
        return self

    def output_shape(self, in_shape):
        """Per-sample output shape for a per-sample input shape (no batch axis)."""
        return tuple(in_shape)


class Linear(Module):
    """y = x W^T + b with W stored as [out x in]."""

    param_slots = (("W", "gradW"), ("b", "gradb"))

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.W = np.zeros((n_out, n_in), dtype=DTYPE)
        self.b = np.zeros(n_out, dtype=DTYPE)
        self.gradW = np.zeros_like(self.W)
        self.gradb = np.zeros_like(self.b)
        if rng is not None:
            bound = 1.0 / np.sqrt(n_in)
            init_uniform(self, -bound, bound, rng)

    def _forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Linear({self.n_in}->{self.n_out}): got input {x.shape}")
        return x @ self.W.T + self.b

    def _backward(self, x, grad_output):
        self.gradW += grad_output.T @ x
        self.gradb += grad_output.sum(axis=0)
        return grad_output @ self.W

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise ShapeError(f"Linear({self.n_in}->{self.n_out}): got per-sample shape {in_shape}")
        return (self.n_out,)

    def __repr__(self):
        return f"Linear({self.n_in} -> {self.n_out})"


def init_uniform(layer, lo, hi, rng, bias=True):
    layer.W[...] = rand_uniform(layer.W.shape, lo, hi, rng)
    if bias:
        layer.b[...] = rand_uniform(layer.b.shape, lo, hi, rng)
    else:
        layer.b[...] = 0.0
    return layer


def init_truncated_normal(layer, stddev, bias_value, rng):
    layer.W[...] = truncated_normal(layer.W.shape, stddev, rng)
    layer.b[...] = bias_value
    return layer


class Identity(Module):
    def _forward(self, x):
        return x.copy()

    def _backward(self, x, grad_output):
        return grad_output.copy()


class Tanh(Module):
    def _forward(self, x):
        return np.tanh(x)

    def _backward(self, x, grad_output):
        return grad_output * (1.0 - self.output ** 2)


class Sigmoid(Module):
    def _forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def _backward(self, x, grad_output):
        return grad_output * self.output * (1.0 - self.output)


class ReLU(Module):
    def _forward(self, x):
        return np.maximum(x, 0.0)

    def _backward(self, x, grad_output):
        return grad_output * (x > 0)


class SoftMax(Module):
    """Row-wise softmax over the last axis of a [batch x classes] input."""

    def _forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def _backward(self, x, grad_output):
        y = self.output
        return y * (grad_output - (grad_output * y).sum(axis=1, keepdims=True))


class HardLim(Module):
    """Heaviside step, 1 where x >= 0.  Its gradient is zero wherever defined."""

    def _forward(self, x):
        return (x >= 0).astype(DTYPE)

    def _backward(self, x, grad_output):
        return np.zeros_like(grad_output)


ACTIVATIONS = {
    "tanh": Tanh,
    "sigmoid": Sigmoid,
    "relu": ReLU,
    "softmax": SoftMax,
    "hardlim": HardLim,
    "identity": Identity,
}


def activation(kind):
    try:
        return ACTIVATIONS[kind]()
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None


class Sequential(Module):
    def __init__(self, *modules):
        super().__init__()
        self.modules = list(modules)

    def add(self, module):
        self.modules.append(module)
        return self

    def children(self):
        return self.modules

    def __len__(self):
        return len(self.modules)

    def __getitem__(self, i):
        return self.modules[i]

    def _forward(self, x):
        out = x
        for i, m in enumerate(self.modules):
            try:
                out = m.forward(out)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({type(m).__name__}): {exc}") from exc
        return out

    def _backward(self, x, grad_output):
        grad = grad_output
        for i in range(len(self.modules) - 1, -1, -1):
            inp = self.modules[i - 1].output if i > 0 else x
            grad = self.modules[i].backward(inp, grad)
        return grad

    def output_shape(self, in_shape):
        shape = tuple(in_shape)
        for i, m in enumerate(self.modules):
            try:
                shape = m.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({type(m).__name__}): {exc}") from exc
        return shape

    def shape_trace(self, in_shape):
        """Per-sample shape after every child, starting with the input shape."""
        shapes = [tuple(in_shape)]
        for m in self.modules:
            shapes.append(m.output_shape(shapes[-1]))
        return shapes

    def __repr__(self):
        inner = "\n".join(f"  ({i}) {m!r}" for i, m in enumerate(self.modules))
        return f"Sequential(\n{inner}\n)"


class WeightDecayWrapper(Sequential):
    """Sequential container with an L2 penalty (alpha/2)·||p||² on every parameter."""

    def __init__(self, *modules):
        super().__init__(*modules)
        self.weight_decay = 0.0

    def get_weight_decay(self, alpha=0.0):
        if alpha < 0:
            raise ValueError(f"weight decay alpha must be >= 0, got {alpha}")
        penalty = 0.0
        for param, _ in self.parameters():
            penalty += float(np.dot(param.ravel(), param.ravel())) * alpha / 2
        self.weight_decay = penalty
        return penalty

    def update_parameters(self, lr, alpha=0.0):
        if alpha < 0:
            raise ValueError(f"weight decay alpha must be >= 0, got {alpha}")
        if alpha == 0:
            return super().update_parameters(lr)
        for param, grad in self.parameters():
            param -= lr * (grad + alpha * param)


def save_parameters(model, path):
    """Write every named parameter tensor as JSON: {"format", "tensors": [{name, shape, data}]}.

    Floats are written with ``repr`` precision, so a load restores them bit-exactly.
    """
    tensors = [
        {"name": name, "shape": list(getattr(m, p).shape), "data": getattr(m, p).ravel().tolist()}
        for name, m, p, _ in model.named_slots()
    ]
    with open(path, "w") as f:
        json.dump({"format": "minnet-parameters", "version": 1, "tensors": tensors}, f)


def load_parameters(model, path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "minnet-parameters":
        raise ValueError(f"{path}: not a minnet parameter file")
    stored = {t["name"]: t for t in doc["tensors"]}
    for name, m, p, _ in model.named_slots():
        if name not in stored:
            raise KeyError(f"{path}: missing tensor {name!r}")
        t = stored[name]
        target = getattr(m, p)
        if tuple(t["shape"]) != target.shape:
            raise ShapeError(f"{name}: stored shape {tuple(t['shape'])} vs layer {target.shape}")
        target[...] = np.asarray(t["data"], dtype=DTYPE).reshape(target.shape)
    return model
