"""A small reverse-mode neural network core on numpy arrays.

Arrays are NCHW for image tensors and (N, features) for dense tensors.
Each layer caches what it needs during a training forward pass and
consumes the cache in ``backward``; a second backward without a fresh
forward raises :class:`StaleCache`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeMismatch(ValueError):
    def __init__(self, layer_index, layer_name, expected, actual):
        self.layer_index = layer_index
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"layer {layer_index} ({layer_name}): expected input shape {expected}, got {actual}")


class StaleCache(RuntimeError):
    pass


class LabelOutOfRange(IndexError):
    pass


class EmptyDataset(ValueError):
    pass


KINDS = ("Conv", "BatchNorm", "Tanh", "MaxPool", "Dense", "SoftmaxOutput", "Flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for key in ("filters", "kernel", "stride", "units", "window", "channels"):
            if key in self.params and int(self.params[key]) < 1:
                raise ValueError(f"{self.kind}.{key} must be >= 1")


def xavier_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def expected_shape(self):
        """Per-sample input shape this layer accepts, None entries are free."""
        return None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StaleCache(f"{self.kind}: backward called without a matching forward")
        cache, self._cache = self._cache, None
        return cache

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Conv(Layer):
    kind = "Conv"

    def __init__(self, in_channels, filters, kernel, stride=1, padding=None, rng=None):
        super().__init__()
        self.in_channels, self.filters, self.kernel, self.stride = in_channels, filters, kernel, stride
        # "same" padding for odd kernels at stride 1
        self.padding = kernel // 2 if padding is None else padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in, fan_out = in_channels * kernel * kernel, filters * kernel * kernel
        self.params["W"] = xavier_uniform(rng, (filters, in_channels, kernel, kernel), fan_in, fan_out)
        self.params["b"] = np.zeros(filters, dtype=np.float32)

    def expected_shape(self):
        return (self.in_channels, None, None)

    def out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, train=False):
        n, _, h, w = x.shape
        ho, wo = self.out_hw(h, w)
        W2 = self.params["W"].reshape(self.filters, -1)
        cols = kernels.im2col(np.ascontiguousarray(x), self.kernel, self.stride, self.padding)
        out = np.matmul(W2, cols)
        out += self.params["b"][:, None]
        if train:
            self._cache = (cols, x.shape)
        return out.reshape(n, self.filters, ho, wo)

    def backward(self, dout):
        cols, shape = self._take_cache()
        W = self.params["W"]
        W2 = W.reshape(self.filters, -1)
        d = np.ascontiguousarray(dout).reshape(dout.shape[0], self.filters, -1)
        self.grads["W"] = np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0).reshape(W.shape)
        self.grads["b"] = d.sum(axis=(0, 2))
        dcols = np.matmul(W2.T, d)
        return kernels.col2im(dcols, shape, self.kernel, self.stride, self.padding)


class BatchNorm(Layer):
    """Per-channel batch normalization for NCHW or (N, C) input."""

    kind = "BatchNorm"

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def expected_shape(self):
        return (self.channels,)

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        x3 = np.ascontiguousarray(x).reshape(x.shape[0], self.channels, -1)
        if not train:
            a = gamma / np.sqrt(self.running_var + self.eps)
            off = beta - self.running_mean * a
            return (x3 * a[:, None] + off[:, None]).astype(x.dtype).reshape(x.shape)
        out, mean, inv, var = kernels.batchnorm_forward(x3, gamma, beta, self.eps)
        m = self.momentum
        count = x3.shape[0] * x3.shape[2]
        unbiased = var * (count / max(count - 1, 1))
        self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
        self.running_var = (m * self.running_var + (1 - m) * unbiased).astype(x.dtype)
        self._cache = (x3, mean, inv)
        return out.reshape(x.shape)

    def backward(self, dout):
        x3, mean, inv = self._take_cache()
        d3 = np.ascontiguousarray(dout, dtype=x3.dtype).reshape(x3.shape)
        dx, dg, db = kernels.batchnorm_backward(d3, x3, mean, inv, self.params["gamma"])
        self.grads["gamma"], self.grads["beta"] = dg, db
        return dx.reshape(dout.shape)


class Tanh(Layer):
    kind = "Tanh"

    def forward(self, x, train=False):
        y = np.tanh(x)
        if train:
            self._cache = y
        return y

    def backward(self, dout):
        y = self._take_cache()
        return dout * (1.0 - y * y)


class MaxPool(Layer):
    kind = "MaxPool"

    def __init__(self, window=2, stride=2):
        super().__init__()
        self.window, self.stride = window, stride

    def forward(self, x, train=False):
        out, arg = kernels.maxpool_forward(np.ascontiguousarray(x), self.window, self.stride)
        if train:
            self._cache = (arg, x.shape)
        return out

    def backward(self, dout):
        arg, shape = self._take_cache()
        return kernels.maxpool_backward(np.ascontiguousarray(dout), arg, shape, self.window, self.stride)


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._take_cache())


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_features, units, rng=None):
        super().__init__()
        self.in_features, self.units = in_features, units
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = xavier_uniform(rng, (in_features, units), in_features, units)
        self.params["b"] = np.zeros(units, dtype=np.float32)

    def expected_shape(self):
        return (self.in_features,)

    def forward(self, x, train=False):
        if train:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._take_cache()
        self.grads["W"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __iter__(self):
        return iter(self.layers)

    def _check(self, i, layer, x):
        exp = layer.expected_shape()
        if exp is None:
            return
        got = x.shape[1:]
        if len(got) < len(exp) or any(e is not None and e != g for e, g in zip(exp, got)) \
                or (isinstance(layer, Dense) and len(got) != 1):
            raise ShapeMismatch(i, layer.kind, exp, tuple(got))

    def forward(self, x, train=False):
        for i, layer in enumerate(self.layers):
            self._check(i, layer, x)
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                yield f"{i}.{layer.kind}.{k}", layer, k, v

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            for k, v in layer.buffers().items():
                yield f"{i}.{layer.kind}.{k}", layer, k, v

    def state(self) -> dict[str, np.ndarray]:
        out = {name: v for name, _, _, v in self.named_params()}
        out.update({name: v for name, _, _, v in self.named_buffers()})
        return out

    def load_state(self, state):
        for name, layer, k, v in self.named_params():
            if state[name].shape != v.shape:
                raise ShapeMismatch(-1, name, v.shape, state[name].shape)
            layer.params[k] = np.array(state[name], dtype=v.dtype)
        for name, layer, k, v in self.named_buffers():
            setattr(layer, k, np.array(state[name], dtype=v.dtype))

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def param_count(self) -> int:
        return sum(v.size for _, _, _, v in self.named_params())


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label):
    """Cross-entropy of softmax(logits) against integer labels.

    ``logits`` may be a vector with a scalar label, or a batch (N, K) with N
    labels; the batch loss is the mean and the gradient is scaled to match.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(label))
    k = z.shape[1]
    if k < 2:
        raise ValueError("softmax_xent needs at least 2 logits")
    if y.shape[0] != z.shape[0]:
        raise ValueError("one label per row of logits required")
    if np.any(y < 0) or np.any(y >= k):
        raise LabelOutOfRange(f"label outside 0..{k - 1}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = logsum - shifted[rows, y]
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, y] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    n = z.shape[0]
    return float(losses.mean()), grad / n


@dataclass(frozen=True)
class SgdSchedule:
    initial_lr: float
    decay_factor: float
    decay_every: int
    total_epochs: int
    momentum: float = 0.9
    batch_size: int = 32

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_every < 1 or self.total_epochs < 1 or self.batch_size < 1:
            raise ValueError("decay_every, total_epochs and batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.decay_factor ** (epoch // self.decay_every)

    def replace(self, **kw) -> SgdSchedule:
        d = dict(self.__dict__)
        d.update(kw)
        return SgdSchedule(**d)


STAGE1_SCHEDULE = SgdSchedule(0.001, 0.5, 3, 50)
STAGE2_SCHEDULE = SgdSchedule(0.005, 0.7, 3, 60)


class SGD:
    """Momentum SGD; velocity buffers persist across epochs."""

    def __init__(self, net: Sequential):
        self.net = net
        self.velocity = {name: np.zeros_like(v) for name, _, _, v in net.named_params()}

    def step(self, lr, momentum):
        for name, layer, k, p in self.net.named_params():
            v = self.velocity[name]
            v *= momentum
            v -= lr * layer.grads[k]
            p += v


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    accuracy: float
    samples: int


def sgd_epoch(net, X, y, schedule: SgdSchedule, epoch: int, seed: int, optimizer=None,
              log=None) -> EpochStats:
    """One pass of mini-batch SGD over (X, y) in a seeded random order."""
    if epoch >= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} beyond schedule of {schedule.total_epochs}")
    n = len(y)
    if n == 0:
        raise EmptyDataset("no training samples")
    optimizer = optimizer or SGD(net)
    lr = schedule.lr_at(epoch)
    order = np.random.default_rng([seed, epoch]).permutation(n)
    total_loss, correct = 0.0, 0
    bs = schedule.batch_size
    for start in range(0, n, bs):
        idx = np.sort(order[start:start + bs])
        xb, yb = X[idx], y[idx]
        logits = net.forward(xb, train=True)
        loss, grad = softmax_xent(logits, yb)
        net.backward(grad.astype(logits.dtype))
        optimizer.step(lr, schedule.momentum)
        total_loss += loss * len(idx)
        correct += int((logits.argmax(axis=1) == yb).sum())
        if log is not None:
            log(start + len(idx), n, loss)
    return EpochStats(epoch, lr, total_loss / n, correct / n, n)


def recalibrate_batchnorm(net: Sequential, X, batch_size: int = 64) -> None:
    """Replace BN running statistics with population statistics of `X`.

    Batches are normalized with their own statistics on the way through (as
    in training) while per-layer means and second moments are accumulated.
    """
    bns = [layer for layer in net.layers if isinstance(layer, BatchNorm)]
    if not bns or len(X) == 0:
        return
    acc = {id(layer): [0.0, 0.0, 0.0] for layer in bns}
    for start in range(0, len(X), batch_size):
        h = X[start:start + batch_size]
        for layer in net.layers:
            if isinstance(layer, BatchNorm):
                h3 = np.ascontiguousarray(h).reshape(h.shape[0], layer.channels, -1)
                out, mean, _, var = kernels.batchnorm_forward(
                    h3, layer.params["gamma"], layer.params["beta"], layer.eps)
                cnt = h3.shape[0] * h3.shape[2]
                a = acc[id(layer)]
                a[0] += cnt
                a[1] = a[1] + mean * cnt
                a[2] = a[2] + (var + mean * mean) * cnt
                h = out.reshape(h.shape)
            else:
                h = layer.forward(h, train=False)
    for layer in bns:
        cnt, s1, s2 = acc[id(layer)]
        mean = s1 / cnt
        var = np.maximum(s2 / cnt - mean * mean, 0.0) * (cnt / max(cnt - 1, 1))
        layer.running_mean = mean.astype(layer.running_mean.dtype)
        layer.running_var = var.astype(layer.running_var.dtype)
