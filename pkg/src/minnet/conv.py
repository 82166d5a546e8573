"""Convolution, pooling, dropout and flatten layers for [batch x channels x H x W] inputs.

Convolution is cross-correlation (no kernel flip).  The forward kernel adds
the products for one output cell in (channel, kernel row, kernel column) order
and adds the bias last, the same order as the naive loop in
``conv2d_reference``, so the two agree bit-for-bit.
"""

import math

import numba
import numpy as np

from .nn import Module, init_truncated_normal
from .tensor import DTYPE, ShapeError, rand_uniform


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def same_padding(size, kernel, stride):
    """(before, after) padding for SAME mode; the odd cell goes after (bottom/right)."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def output_extent(size, kernel, stride, padding):
    """Output length along one axis; ``padding`` is an int or "same"."""
    if size < 1:
        raise ValueError(f"input extent must be positive, got {size}")
    if padding == "same":
        out = math.ceil(size / stride)
    else:
        out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"kernel {kernel} stride {stride} padding {padding} on extent {size} "
            f"leaves no output")
    return out


def conv_output_shape(in_hw, layer):
    (h, w), (kh, kw), (sh, sw) = in_hw, layer.kernel, layer.stride
    ph, pw = ("same", "same") if layer.padding == "same" else layer.padding
    return output_extent(h, kh, sh, ph), output_extent(w, kw, sw, pw)


def _pad_amounts(h, w, kernel, stride, padding):
    if padding == "same":
        return same_padding(h, kernel[0], stride[0]), same_padding(w, kernel[1], stride[1])
    ph, pw = padding
    return (ph, ph), (pw, pw)


# Kernels work on batch-last buffers ([C x H x W x B]) so the innermost loop
# runs over the batch: it vectorises without reordering any per-cell sum.

@numba.njit(cache=True)
def _conv_forward(xpt, weight, bias, sh, sw, ho, wo):
    nc, nb = xpt.shape[0], xpt.shape[3]
    no, kh, kw = weight.shape[0], weight.shape[2], weight.shape[3]
    out = np.zeros((no, ho, wo, nb))
    for o in range(no):
        bo = bias[o]
        for y in range(ho):
            for x in range(wo):
                dst = out[o, y, x]
                for c in range(nc):
                    for i in range(kh):
                        for j in range(kw):
                            wv = weight[o, c, i, j]
                            src = xpt[c, y * sh + i, x * sw + j]
                            for n in range(nb):
                                dst[n] += wv * src[n]
                for n in range(nb):
                    dst[n] += bo
    return out


# Gradient sums may be reassociated; NaN/Inf semantics are kept.  The output
# channel loop sits inside the kernel-tap loops so each input-gradient row is
# updated by every channel while it is still in cache.
@numba.njit(cache=True, fastmath={"reassoc", "nsz", "contract"})
def _conv_backward(xpt, weight, gt, sh, sw, grad_weight, grad_bias):
    nc, nb = xpt.shape[0], xpt.shape[3]
    no, kh, kw = weight.shape[0], weight.shape[2], weight.shape[3]
    ho, wo = gt.shape[1], gt.shape[2]
    gxt = np.zeros_like(xpt)
    for y in range(ho):
        for x in range(wo):
            for o in range(no):
                g = gt[o, y, x]
                s = 0.0
                for n in range(nb):
                    s += g[n]
                grad_bias[o] += s
            for c in range(nc):
                for i in range(kh):
                    for j in range(kw):
                        src = xpt[c, y * sh + i, x * sw + j]
                        dst = gxt[c, y * sh + i, x * sw + j]
                        for o in range(no):
                            g = gt[o, y, x]
                            wv = weight[o, c, i, j]
                            acc = 0.0
                            for n in range(nb):
                                acc += g[n] * src[n]
                                dst[n] += wv * g[n]
                            grad_weight[o, c, i, j] += acc
    return gxt


@numba.njit(cache=True)
def _transpose_2d(a):
    """Cache-blocked copy of a 2-D array into its transpose."""
    rows, cols = a.shape
    out = np.empty((cols, rows))
    for r0 in range(0, rows, 32):
        for c0 in range(0, cols, 32):
            for r in range(r0, min(r0 + 32, rows)):
                for c in range(c0, min(c0 + 32, cols)):
                    out[c, r] = a[r, c]
    return out


def _batch_last(a):
    nb = a.shape[0]
    return _transpose_2d(np.ascontiguousarray(a).reshape(nb, -1)).reshape(a.shape[1:] + (nb,))


def _batch_first(a):
    nb = a.shape[-1]
    return _transpose_2d(np.ascontiguousarray(a).reshape(-1, nb)).reshape((nb,) + a.shape[:-1])


def conv2d_reference(x, weight, bias, stride=1, padding=0):
    """Direct nested-loop cross-correlation.  Slow; used as the test oracle."""
    stride = _pair(stride)
    kernel = weight.shape[2:]
    if padding != "same":
        padding = _pair(padding)
    nb, nc, h, w = x.shape
    (pt, pb), (pl, pr) = _pad_amounts(h, w, kernel, stride, padding)
    xp = np.zeros((nb, nc, h + pt + pb, w + pl + pr))
    xp[:, :, pt:pt + h, pl:pl + w] = x
    ho = (xp.shape[2] - kernel[0]) // stride[0] + 1
    wo = (xp.shape[3] - kernel[1]) // stride[1] + 1
    out = np.zeros((nb, weight.shape[0], ho, wo))
    for n in range(nb):
        for o in range(weight.shape[0]):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for c in range(nc):
                        for i in range(kernel[0]):
                            for j in range(kernel[1]):
                                acc += float(weight[o, c, i, j]) * float(
                                    xp[n, c, y * stride[0] + i, xx * stride[1] + j])
                    out[n, o, y, xx] = acc + float(bias[o])
    return out


class Conv2D(Module):
    """2-D cross-correlation with weight [out x in x kh x kw] and bias [out].

    ``padding`` is an int, an (h, w) pair or "same".  Default init draws weights
    uniformly in +-1/sqrt(fan_in), like Torch's SpatialConvolution.
    """

    param_slots = (("W", "gradW"), ("b", "gradb"))

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, rng=None):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.padding = "same" if padding == "same" else _pair(padding)
        self.W = np.zeros((out_channels, in_channels) + self.kernel, dtype=DTYPE)
        self.b = np.zeros(out_channels, dtype=DTYPE)
        self.gradW = np.zeros_like(self.W)
        self.gradb = np.zeros_like(self.b)
        if rng is not None:
            bound = 1.0 / math.sqrt(in_channels * self.kernel[0] * self.kernel[1])
            self.W[...] = rand_uniform(self.W.shape, -bound, bound, rng)
            self.b[...] = rand_uniform(self.b.shape, -bound, bound, rng)

    def _padded_batch_last(self, x):
        nb, nc, h, w = x.shape
        (pt, pb), (pl, pr) = _pad_amounts(h, w, self.kernel, self.stride, self.padding)
        xpt = np.zeros((nc, h + pt + pb, w + pl + pr, nb), dtype=DTYPE)
        xpt[:, pt:pt + h, pl:pl + w, :] = x.transpose(1, 2, 3, 0)
        return xpt, (pt, pl)

    def _forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2D expects [B x {self.in_channels} x H x W], got {x.shape}")
        ho, wo = conv_output_shape(x.shape[2:], self)
        xpt, offset = self._padded_batch_last(x)
        self._cache = (x, xpt, offset)
        out = _conv_forward(xpt, self.W, self.b, self.stride[0], self.stride[1], ho, wo)
        return _batch_first(out)

    def _backward(self, x, grad_output):
        cached_x, xpt, (pt, pl) = self._cache
        if cached_x is not x:
            xpt, (pt, pl) = self._padded_batch_last(x)
        gxt = _conv_backward(xpt, self.W, _batch_last(grad_output),
                             self.stride[0], self.stride[1], self.gradW, self.gradb)
        h, w = x.shape[2:]
        return _batch_first(np.ascontiguousarray(gxt[:, pt:pt + h, pl:pl + w, :]))

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"Conv2D expects {self.in_channels} channels, got {c}")
        return (self.out_channels,) + conv_output_shape((h, w), self)

    def __repr__(self):
        return (f"Conv2D({self.in_channels}->{self.out_channels}, kernel={self.kernel}, "
                f"stride={self.stride}, padding={self.padding})")


# Pooling kernels index the unpadded input directly: a window cell outside the
# image is skipped, so it never wins a max and is not counted in an average.

@numba.njit(cache=True)
def _window(o, stride, pad, kernel, size):
    start = o * stride - pad
    return max(start, 0), min(start + kernel, size)


@numba.njit(cache=True)
def _max_pool_forward(x, kh, kw, sh, sw, pt, pl, ho, wo):
    nb, nc, h, w = x.shape
    out = np.empty((nb, nc, ho, wo))
    arg = np.empty((nb, nc, ho, wo), dtype=np.int64)
    for n in range(nb):
        for c in range(nc):
            img = x[n, c]
            for y in range(ho):
                y0, y1 = _window(y, sh, pt, kh, h)
                for xx in range(wo):
                    x0, x1 = _window(xx, sw, pl, kw, w)
                    best = -np.inf
                    where = y0 * w + x0
                    for i in range(y0, y1):
                        for j in range(x0, x1):
                            if img[i, j] > best:
                                best = img[i, j]
                                where = i * w + j
                    out[n, c, y, xx] = best
                    arg[n, c, y, xx] = where
    return out, arg


@numba.njit(cache=True)
def _max_pool_backward(arg, g, h, w):
    nb, nc, ho, wo = g.shape
    gx = np.zeros((nb, nc, h * w))
    for n in range(nb):
        for c in range(nc):
            for y in range(ho):
                for xx in range(wo):
                    gx[n, c, arg[n, c, y, xx]] += g[n, c, y, xx]
    return gx.reshape(nb, nc, h, w)


@numba.njit(cache=True)
def _avg_pool_forward(x, kh, kw, sh, sw, pt, pl, ho, wo):
    nb, nc, h, w = x.shape
    out = np.empty((nb, nc, ho, wo))
    for n in range(nb):
        for c in range(nc):
            img = x[n, c]
            for y in range(ho):
                y0, y1 = _window(y, sh, pt, kh, h)
                for xx in range(wo):
                    x0, x1 = _window(xx, sw, pl, kw, w)
                    acc = 0.0
                    for i in range(y0, y1):
                        for j in range(x0, x1):
                            acc += img[i, j]
                    out[n, c, y, xx] = acc / ((y1 - y0) * (x1 - x0))
    return out


@numba.njit(cache=True)
def _avg_pool_backward(g, h, w, kh, kw, sh, sw, pt, pl):
    nb, nc, ho, wo = g.shape
    gx = np.zeros((nb, nc, h, w))
    for n in range(nb):
        for c in range(nc):
            for y in range(ho):
                y0, y1 = _window(y, sh, pt, kh, h)
                for xx in range(wo):
                    x0, x1 = _window(xx, sw, pl, kw, w)
                    share = g[n, c, y, xx] / ((y1 - y0) * (x1 - x0))
                    for i in range(y0, y1):
                        for j in range(x0, x1):
                            gx[n, c, i, j] += share
    return gx


class Pool2D(Module):
    """Max or average pooling.

    Padding cells never win a max and are left out of an average's divisor.
    Max-pool routes the gradient to the first maximal cell in row-major window
    order.
    """

    def __init__(self, kind, kernel, stride=None, padding=0):
        super().__init__()
        if kind not in ("max", "average"):
            raise ValueError(f"pool kind must be 'max' or 'average', got {kind!r}")
        self.kind = kind
        self.kernel = _pair(kernel)
        self.stride = self.kernel if stride is None else _pair(stride)
        self.padding = "same" if padding == "same" else _pair(padding)
        if self.padding != "same" and any(2 * p > k for p, k in zip(self.padding, self.kernel)):
            raise ValueError(f"padding {self.padding} too large for window {self.kernel}")
        self._argmax = None

    def _geometry(self, x):
        h, w = x.shape[2:]
        ho, wo = conv_output_shape((h, w), self)
        (pt, _), (pl, _) = _pad_amounts(h, w, self.kernel, self.stride, self.padding)
        return ho, wo, pt, pl

    def _forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"Pool2D expects [B x C x H x W], got {x.shape}")
        ho, wo, pt, pl = self._geometry(x)
        args = (np.ascontiguousarray(x, dtype=DTYPE), self.kernel[0], self.kernel[1],
                self.stride[0], self.stride[1], pt, pl, ho, wo)
        if self.kind == "max":
            out, self._argmax = _max_pool_forward(*args)
            return out
        return _avg_pool_forward(*args)

    def _backward(self, x, grad_output):
        ho, wo, pt, pl = self._geometry(x)
        g = np.ascontiguousarray(grad_output, dtype=DTYPE)
        if self.kind == "max":
            if self._argmax is None or self._argmax.shape != g.shape:
                raise RuntimeError("backward called before a matching forward")
            return _max_pool_backward(self._argmax, g, x.shape[2], x.shape[3])
        return _avg_pool_backward(g, x.shape[2], x.shape[3], self.kernel[0], self.kernel[1],
                                  self.stride[0], self.stride[1], pt, pl)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c,) + conv_output_shape((h, w), self)

    def __repr__(self):
        return f"Pool2D({self.kind}, kernel={self.kernel}, stride={self.stride}, padding={self.padding})"


def MaxPool2D(kernel, stride=None, padding=0):
    return Pool2D("max", kernel, stride, padding)


def AvgPool2D(kernel, stride=None, padding=0):
    return Pool2D("average", kernel, stride, padding)


class Dropout(Module):
    """Inverted dropout: in training, zero each unit with probability ``rate`` and
    scale survivors by 1/(1-rate).  Identity in eval mode.

    With ``frozen`` set, the last mask is reused while the input shape is
    unchanged (used by gradient checks).
    """

    def __init__(self, rate=0.5, rng=None):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.mask = None
        self.frozen = False

    def _forward(self, x):
        if not self.training or self.rate == 0:
            self.mask = None
            return x.copy()
        if not (self.frozen and self.mask is not None and self.mask.shape == x.shape):
            keep = self.rng.random(x.shape) >= self.rate
            self.mask = keep / (1.0 - self.rate)
        return x * self.mask

    def _backward(self, x, grad_output):
        if self.mask is None:
            return grad_output.copy()
        return grad_output * self.mask


class Flatten(Module):
    """[B x C x H x W] -> [B x C*H*W] in channel-major order."""

    def __init__(self, length=None):
        super().__init__()
        self.length = length

    def _forward(self, x):
        n = int(np.prod(x.shape[1:]))
        if self.length is not None and n != self.length:
            raise ShapeError(f"Flatten({self.length}): input {x.shape} has {n} features per sample")
        return x.reshape(x.shape[0], n)

    def _backward(self, x, grad_output):
        return grad_output.reshape(x.shape)

    def output_shape(self, in_shape):
        n = int(np.prod(in_shape))
        if self.length is not None and n != self.length:
            raise ShapeError(f"Flatten({self.length}): per-sample shape {in_shape} has {n} features")
        return (n,)

    def __repr__(self):
        return f"Flatten({self.length})"


class Reshape(Module):
    """Per-sample reshape, e.g. flat 784 vectors back to 1x28x28 images."""

    def __init__(self, *shape):
        super().__init__()
        self.shape = tuple(shape)

    def _forward(self, x):
        return x.reshape((x.shape[0],) + self.shape)

    def _backward(self, x, grad_output):
        return grad_output.reshape(x.shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"Reshape{self.shape}: incompatible per-sample shape {in_shape}")
        return self.shape

    def __repr__(self):
        return f"Reshape{self.shape}"


def init_conv_truncated_normal(layer, stddev=0.1, bias_value=0.1, rng=None):
    return init_truncated_normal(layer, stddev, bias_value, rng)


def filter_grid(weight, cols=6, gap=1):
    """Tile first-input-channel kernels into one uint8 image normalised to [0, 255].

    Gaps between tiles are left at 0.
    """
    k = weight[:, 0]
    lo, hi = float(k.min()), float(k.max())
    scaled = np.zeros_like(k) if hi == lo else (k - lo) / (hi - lo) * 255.0
    n, kh, kw = k.shape
    cols = min(cols, n)
    rows = math.ceil(n / cols)
    img = np.zeros((rows * (kh + gap) - gap, cols * (kw + gap) - gap), dtype=np.uint8)
    for idx in range(n):
        r, c = divmod(idx, cols)
        img[r * (kh + gap):r * (kh + gap) + kh, c * (kw + gap):c * (kw + gap) + kw] = \
            np.rint(scaled[idx]).astype(np.uint8)
    return img


def write_pgm(img, path):
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
