"""Dense float64 tensors and the handful of primitives the layers are built on.

Tensors are plain row-major ``numpy.ndarray`` objects of dtype float64.  The
functions here add the shape checking the rest of the library relies on, so a
mismatch fails loudly with both shapes in the message instead of silently
broadcasting.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def make_rng(seed):
    """Deterministic generator: numpy's PCG64 bit generator seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=DTYPE)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ {a.shape} x {b.shape}")
    return a @ b


def rand_uniform(shape, lo, hi, rng):
    if not lo < hi:
        raise ValueError(f"rand_uniform: need lo < hi, got lo={lo} hi={hi}")
    out = rng.uniform(lo, hi, size=shape)
    # uniform() can round up to hi for tiny ranges; keep the half-open contract
    return np.where(out >= hi, lo, out)


def truncated_normal(shape, stddev, rng):
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.normal(0.0, stddev, size=shape)
    bad = np.abs(out) > 2 * stddev
    while bad.any():
        out[bad] = rng.normal(0.0, stddev, size=int(bad.sum()))
        bad = np.abs(out) > 2 * stddev
    return out


def fill(shape, value):
    return np.full(shape, value, dtype=DTYPE)


def elementwise_map(a, f):
    return np.vectorize(f, otypes=[DTYPE])(a) if a.size else a.copy()


def add(a, b):
    if np.isscalar(b):
        return a + b
    _same_shape(a, b, "add")
    return a + b


def sub(a, b):
    if np.isscalar(b):
        return a - b
    _same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    if np.isscalar(b):
        return a * b
    _same_shape(a, b, "mul")
    return a * b


def add_bias_rows(x, b):
    """The one broadcast the library allows: add a bias vector to every row."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias_rows: cannot add bias {b.shape} to rows of {x.shape}")
    return x + b


def reduce(a, dim, kind="sum"):
    if not 0 <= dim < a.ndim:
        raise IndexError(f"reduce: dim {dim} out of range for rank {a.ndim}")
    if kind == "sum":
        return a.sum(axis=dim)
    if kind == "mean":
        return a.mean(axis=dim)
    raise ValueError(f"reduce: unknown kind {kind!r}")


def argmax(a, dim=1):
    """Index of the first maximum along ``dim`` (ties go to the lowest index)."""
    if a.shape[dim] == 0:
        raise ValueError("argmax: empty axis")
    return np.argmax(a, axis=dim)


def axpy_update(w, s, g):
    """In place: w <- w + s * g."""
    _same_shape(w, g, "axpy_update")
    if s != 0:
        w += s * g


def split(a, size, dim=0):
    if size < 1:
        raise ValueError(f"split: chunk size must be >= 1, got {size}")
    head = (slice(None),) * dim
    return [a[head + (slice(i, i + size),)] for i in range(0, a.shape[dim], size)]


def concat(chunks, dim=0):
    return np.concatenate(chunks, axis=dim)
