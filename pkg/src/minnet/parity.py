"""Hand-set shallow and deep networks that compute n-ary parity exactly.

Deep: parity(x1..xn) = XOR(parity(x1..x(n-1)), xn), so n-1 chained XOR blocks
of three threshold units (two "one-sided AND" units and an OR) give 3(n-1)
neurons in 2(n-1) layers.  Shallow: one hidden unit per odd-weight input
pattern (2^(n-1) of them) OR-ed by a single output unit.
"""

import numpy as np

from .data import all_bit_patterns, parity
from .nn import HardLim, Linear, Module, Sequential, Sigmoid

PAIR_WEIGHTS = np.array([[1.0, -1.0], [-1.0, 1.0]])
PAIR_BIAS = np.array([-0.5, -0.5])
OR_WEIGHTS = np.array([[1.0, 1.0]])
OR_BIAS = np.array([-0.5])


class SteepSigmoid(Sigmoid):
    """sigmoid(k * x): a differentiable stand-in for the hard threshold."""

    def __init__(self, steepness=20.0):
        super().__init__()
        self.k = steepness

    def _forward(self, x):
        return super()._forward(self.k * x)

    def _backward(self, x, grad_output):
        return self.k * super()._backward(x, grad_output)


def _unit(kind, steepness):
    return HardLim() if kind == "hardlim" else SteepSigmoid(steepness)


def _fixed_linear(weights, bias):
    layer = Linear(weights.shape[1], weights.shape[0])
    layer.W[...] = weights
    layer.b[...] = bias
    return layer


class DeepParityNet(Module):
    """Chain of XOR blocks; block k sees (parity state so far, bit k+2).

    Block 0 reads (x1, x2) directly.  Every block is a pair layer (2 units,
    weights [[1,-1],[-1,1]], biases -0.5) followed by an OR layer (weights
    [1,1], bias -0.5).
    """

    def __init__(self, n, activation="hardlim", steepness=20.0):
        super().__init__()
        if n < 2:
            raise ValueError(f"parity arity must be >= 2, got {n}")
        self.n = n
        self.blocks = []
        for _ in range(n - 1):
            self.blocks.append([
                _fixed_linear(PAIR_WEIGHTS, PAIR_BIAS), _unit(activation, steepness),
                _fixed_linear(OR_WEIGHTS, OR_BIAS), _unit(activation, steepness),
            ])
        self.states = []

    def children(self):
        return [m for block in self.blocks for m in block]

    def layers(self):
        return [m for m in self.children() if isinstance(m, Linear)]

    def _block_input(self, k, x, state):
        if k == 0:
            return x[:, 0:2]
        return np.column_stack([state, x[:, k + 1]])

    def _forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n:
            raise ValueError(f"expected [B x {self.n}] bits, got {x.shape}")
        self._inputs = []
        self.states = []
        state = None
        for k, block in enumerate(self.blocks):
            h = self._block_input(k, x, state)
            self._inputs.append(h)
            for m in block:
                h = m.forward(h)
            state = h[:, 0]
            self.states.append(state)
        return h

    def _backward(self, x, grad_output):
        grad_x = np.zeros_like(x)
        g = grad_output
        for k in range(len(self.blocks) - 1, -1, -1):
            block = self.blocks[k]
            for i in range(len(block) - 1, -1, -1):
                inp = block[i - 1].output if i > 0 else self._inputs[k]
                g = block[i].backward(inp, g)
            if k == 0:
                grad_x[:, 0:2] += g
            else:
                grad_x[:, k + 1] += g[:, 1]
                g = g[:, 0:1]
        return grad_x

    def output_shape(self, in_shape):
        return (1,)


def build_deep_parity_net(n, activation="hardlim", steepness=20.0):
    return DeepParityNet(n, activation, steepness)


def build_shallow_parity_net(n, activation="hardlim", steepness=20.0):
    """Hidden unit per odd pattern p: weights +1 where p_i = 1 else -1, bias 0.5 - |p|."""
    if n < 2:
        raise ValueError(f"parity arity must be >= 2, got {n}")
    patterns = all_bit_patterns(n)
    odd = patterns[parity(patterns) == 1]
    hidden = _fixed_linear(np.where(odd == 1, 1.0, -1.0), 0.5 - odd.sum(axis=1))
    out = _fixed_linear(np.ones((1, len(odd))), np.array([-0.5]))
    net = Sequential(hidden, _unit(activation, steepness), out, _unit(activation, steepness))
    net.n = n
    return net


def linear_layers(net):
    if isinstance(net, DeepParityNet):
        return net.layers()
    return [m for m in net.children() if isinstance(m, Linear)]


def count_neurons(net):
    return sum(layer.n_out for layer in linear_layers(net))


def count_layers(net):
    return len(linear_layers(net))


def verify_truth_table(net, n):
    """Evaluate all 2^n inputs against the parity oracle.

    Returns (accuracy, first failing input or None).
    """
    x = all_bit_patterns(n)
    expected = parity(x)
    got = (net.forward(x)[:, 0] >= 0.5).astype(np.int64)
    wrong = np.flatnonzero(got != expected)
    first = None if wrong.size == 0 else x[wrong[0]].astype(int).tolist()
    return float(np.mean(got == expected)), first


def net_spec(net):
    """JSON-ready description: arity, counts and every layer's weights."""
    layers = []
    for i, layer in enumerate(linear_layers(net)):
        entry = {"index": i, "in": layer.n_in, "out": layer.n_out,
                 "weights": layer.W.tolist(), "bias": layer.b.tolist()}
        if isinstance(net, DeepParityNet):
            block, role = divmod(i, 2)
            entry["role"] = "or" if role else "pair"
            if not role:
                entry["inputs"] = ["x1", "x2"] if block == 0 else ["state", f"x{block + 2}"]
        layers.append(entry)
    return {
        "kind": "deep" if isinstance(net, DeepParityNet) else "shallow",
        "n": net.n,
        "neurons": count_neurons(net),
        "layers": count_layers(net),
        "activation": "hardlim",
        "linear_layers": layers,
    }


def expected_counts(n, kind):
    """(neurons, layers) the constructions must have."""
    if kind == "deep":
        return 3 * (n - 1), 2 * (n - 1)
    return 2 ** (n - 1) + 1, 2

