"""Layers that run in streaming (causal) and full-context mode with shared weights.

Every layer here takes an explicit :class:`Mode`.  In streaming mode the
output at position t may depend only on inputs 1..t; in full-context mode
the whole sequence is visible.  Weights are shared between the modes; the
only per-mode parameters are the normalization scale/offset pairs (and,
for batch-style normalization, the running statistics).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Mode(Enum):
    STREAMING = "streaming"
    FULL_CONTEXT = "fullcontext"


def xavier_init(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base: parameters are exposed as an ordered {name: Tensor} mapping."""

    def params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable persistent state (e.g. running statistics)."""
        return {}


class Linear(Layer):
    """Pointwise affine map; connects channels within each timestep only."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(xavier_init(rng, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class DualConv1D(Layer):
    """Convolution over time whose streaming form is the masked full kernel.

    The full kernel has odd size k and symmetric same-padding.  In streaming
    mode the kernel is multiplied by a constant Boolean mask keeping the
    leftmost (k+1)/2 taps (self-inclusive), which behaves exactly like a
    causal convolution of size (k+1)/2.

    ``causal_only=True`` builds the standalone streaming variant: the kernel
    stores only the (k+1)/2 causal taps and full-context mode is rejected.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        depthwise: bool = False,
        stride: int = 1,
        causal_only: bool = False,
    ):
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd, got %d" % kernel_size)
        if depthwise and in_channels != out_channels:
            raise ValueError("depthwise convolution requires in_channels == out_channels")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.full_kernel_size = kernel_size
        self.causal_kernel_size = (kernel_size + 1) // 2
        self.depthwise = depthwise
        self.stride = stride
        self.causal_only = causal_only

        stored = self.causal_kernel_size if causal_only else kernel_size
        shape = (stored, in_channels) if depthwise else (stored, in_channels, out_channels)
        self.kernel = Tensor(xavier_init(rng, shape), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

        mask_shape = (kernel_size, 1) if depthwise else (kernel_size, 1, 1)
        mask = np.zeros(mask_shape)
        mask.reshape(kernel_size, -1)[: self.causal_kernel_size] = 1.0
        self.stream_mask = mask  # constant, not trainable

    def _conv(self, x, kernel, pad_left, pad_right):
        op = T.depthwise_conv1d if self.depthwise else T.conv1d
        return op(x, kernel, self.bias, stride=self.stride, pad_left=pad_left, pad_right=pad_right)

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        if x.data.shape[1] != self.in_channels:
            raise T.ShapeMismatchError("dual_conv", x.data.shape, (self.in_channels,))
        half = (self.full_kernel_size - 1) // 2
        if self.causal_only:
            if mode is not Mode.STREAMING:
                raise ValueError("causal-only convolution supports streaming mode only")
            return self._conv(x, self.kernel, pad_left=self.causal_kernel_size - 1, pad_right=0)
        if mode is Mode.FULL_CONTEXT:
            return self._conv(x, self.kernel, pad_left=half, pad_right=half)
        masked = self.kernel * Tensor(self.stream_mask)
        return self._conv(x, masked, pad_left=half, pad_right=half)

    def causal_slice_forward(self, x: Tensor) -> Tensor:
        """Streaming output via kernel slicing instead of mask multiply.

        Equivalent to ``__call__(x, Mode.STREAMING)``; kept as the reference
        for the mask/slice equality check.
        """
        if self.causal_only:
            return self(x, Mode.STREAMING)
        sliced = self.kernel[: self.causal_kernel_size]
        return self._conv(x, sliced, pad_left=self.causal_kernel_size - 1, pad_right=0)

    def params(self):
        return {"kernel": self.kernel, "bias": self.bias}


def dual_conv_forward(layer: DualConv1D, x: Tensor, mode: Mode) -> Tensor:
    return layer(x, mode)


def dual_avg_pool_forward(x: Tensor, mode: Mode) -> Tensor:
    """Mean over time: cumulative (streaming) or global broadcast (full-context)."""
    t = x.data.shape[0]
    if mode is Mode.STREAMING:
        counts = Tensor(np.arange(1, t + 1, dtype=np.float64)[:, None])
        return T.cumulative_sum(x, axis=0) / counts
    mean = T.reduce_mean(x, axis=0, keepdims=True)
    return T.broadcast_to(mean, x.data.shape)


class DualAvgPool(Layer):
    """Parameter-free pooling through time."""

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        return dual_avg_pool_forward(x, mode)

    def params(self):
        return {}


class DualSelfAttention(Layer):
    """Multi-head scaled dot-product attention with a mode-dependent key range.

    Projections are fully shared; streaming restricts each query to the
    self-inclusive left context, full-context attends over everything.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        if channels % heads != 0:
            raise ValueError("channels (%d) must divide evenly into heads (%d)" % (channels, heads))
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        self.wq = Linear(channels, channels, rng)
        self.wk = Linear(channels, channels, rng)
        self.wv = Linear(channels, channels, rng)
        self.wo = Linear(channels, channels, rng)

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        if x.data.shape[1] != self.channels:
            raise T.ShapeMismatchError("dual_attention", x.data.shape, (self.channels,))
        t = x.data.shape[0]
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        if mode is Mode.STREAMING:
            mask = np.tril(np.ones((t, t), dtype=bool))
        else:
            mask = np.ones((t, t), dtype=bool)
        scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            scores = T.matmul(q[:, cols], T.transpose(k[:, cols])) * scale
            attn = T.masked_softmax(scores, mask, axis=-1)
            outs.append(T.matmul(attn, v[:, cols]))
        merged = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
        return self.wo(merged)

    def params(self):
        out = {}
        for name, lin in (("q", self.wq), ("k", self.wk), ("v", self.wv), ("o", self.wo)):
            for pname, p in lin.params().items():
                out["%s_%s" % (name, pname)] = p
        return out


def dual_attention_forward(layer: DualSelfAttention, x: Tensor, mode: Mode) -> Tensor:
    return layer(x, mode)


class DualNorm(Layer):
    """Normalization with a dedicated parameter set per mode.

    ``kind="layer"`` normalizes each position over channels.  ``kind="batch"``
    normalizes over the time axis of the (unpadded) utterance and keeps
    per-mode running statistics: training updates the active mode's EMA,
    inference normalizes with it.  One mode's parameters and statistics are
    never touched by a pass in the other mode.
    """

    EPS = 1e-5

    def __init__(self, channels: int, kind: str = "layer", modes=(Mode.STREAMING, Mode.FULL_CONTEXT), momentum: float = 0.1):
        if kind not in ("layer", "batch"):
            raise ValueError("unknown norm kind %r" % kind)
        self.channels = channels
        self.kind = kind
        self.momentum = momentum
        self.modes = tuple(modes)
        self.gamma = {m: Tensor(np.ones(channels), requires_grad=True) for m in self.modes}
        self.beta = {m: Tensor(np.zeros(channels), requires_grad=True) for m in self.modes}
        if kind == "batch":
            self.running_mean = {m: np.zeros(channels) for m in self.modes}
            self.running_var = {m: np.ones(channels) for m in self.modes}

    def __call__(self, x: Tensor, mode: Mode, training: bool = False) -> Tensor:
        if mode not in self.modes:
            raise ValueError("norm has no parameters for mode %s" % mode)
        if self.kind == "layer":
            mu = T.reduce_mean(x, axis=1, keepdims=True)
            centered = x - mu
            var = T.reduce_mean(centered * centered, axis=1, keepdims=True)
            normed = centered * ((var + self.EPS) ** -0.5)
        else:
            if training:
                mu = T.reduce_mean(x, axis=0, keepdims=True)
                centered = x - mu
                var = T.reduce_mean(centered * centered, axis=0, keepdims=True)
                normed = centered * ((var + self.EPS) ** -0.5)
                m = self.momentum
                self.running_mean[mode] = (1 - m) * self.running_mean[mode] + m * mu.data[0]
                self.running_var[mode] = (1 - m) * self.running_var[mode] + m * var.data[0]
            else:
                mu = Tensor(self.running_mean[mode][None, :])
                std_inv = Tensor(1.0 / np.sqrt(self.running_var[mode][None, :] + self.EPS))
                normed = (x - mu) * std_inv
        return normed * self.gamma[mode] + self.beta[mode]

    def params(self):
        out = {}
        for m in self.modes:
            out["%s_gamma" % m.value] = self.gamma[m]
            out["%s_beta" % m.value] = self.beta[m]
        return out

    def state(self):
        if self.kind != "batch":
            return {}
        out = {}
        for m in self.modes:
            out["%s_running_mean" % m.value] = self.running_mean[m]
            out["%s_running_var" % m.value] = self.running_var[m]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if self.kind != "batch":
            return
        for m in self.modes:
            self.running_mean[m] = np.array(state["%s_running_mean" % m.value])
            self.running_var[m] = np.array(state["%s_running_var" % m.value])


def dual_norm_forward(layer: DualNorm, x: Tensor, mode: Mode, training: bool = False) -> Tensor:
    return layer(x, mode, training)


class SEBlock(Layer):
    """Squeeze-and-excitation gate: pool over time, bottleneck, rescale channels."""

    def __init__(self, channels: int, bottleneck: int, rng: np.random.Generator):
        self.pool = DualAvgPool()
        self.ff1 = Linear(channels, bottleneck, rng)
        self.ff2 = Linear(bottleneck, channels, rng)

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        pooled = self.pool(x, mode)
        gate = T.sigmoid(self.ff2(T.swish(self.ff1(pooled))))
        return x * gate

    def params(self):
        out = {}
        for name, lin in (("ff1", self.ff1), ("ff2", self.ff2)):
            for pname, p in lin.params().items():
                out["%s_%s" % (name, pname)] = p
        return out


def se_block_forward(block: SEBlock, x: Tensor, mode: Mode) -> Tensor:
    return block(x, mode)


def sinusoidal_positions(length: int, channels: int) -> np.ndarray:
    """Fixed sinusoidal position features; position t depends on t only."""
    pos = np.arange(length)[:, None].astype(np.float64)
    dim = np.arange(channels)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2 * (dim // 2) / channels)
    enc = np.zeros((length, channels))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc
