"""Toy-scale encoders assembled from dual-mode layers.

Two architectures are provided: ``contextnet_lite`` (depthwise-separable
convolutions with squeeze-and-excitation gates) and ``conformer_lite``
(feed-forward + self-attention + convolution blocks).  Every layer is
either dual-mode or pointwise, so the whole encoder runs in streaming or
full-context mode with shared weights.

Time reduction is a strided depthwise dual-mode convolution of kernel size
2 * stride - 1 right after the input projection, so every source frame is
read; reduced frame t' (1-based) covers source frames <= t' * stride.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .layers import (
    DualAvgPool,
    DualConv1D,
    DualNorm,
    DualSelfAttention,
    Linear,
    Mode,
    SEBlock,
    sinusoidal_positions,
)
from .tensor import Tensor


class ConfigError(ValueError):
    def __init__(self, fld: str, message: str):
        self.field = fld
        super().__init__("encoder config field %r: %s" % (fld, message))


@dataclass
class EncoderConfig:
    architecture: str = "contextnet_lite"
    blocks: int = 2
    channels: int = 32
    kernel_size: int = 5
    heads: int = 2
    stride: int = 2
    feature_dim: int = 8
    causal_only: bool = False

    def validate(self) -> "EncoderConfig":
        if self.architecture not in ("contextnet_lite", "conformer_lite"):
            raise ConfigError("architecture", "unknown architecture %r" % self.architecture)
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError("kernel_size", "must be odd and >= 1, got %d" % self.kernel_size)
        if self.stride < 1:
            raise ConfigError("stride", "must be >= 1, got %d" % self.stride)
        for name in ("blocks", "channels", "heads", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1, got %d" % getattr(self, name))
        if self.architecture == "conformer_lite" and self.channels % self.heads != 0:
            raise ConfigError("heads", "%d does not divide channels %d" % (self.heads, self.channels))
        return self


@dataclass
class EncoderOutput:
    hidden: Tensor
    length: int
    mode: Mode


class Encoder:
    """Common shell: owns named layers and runs them in sequence."""

    def __init__(self, cfg: EncoderConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.stride_total = cfg.stride
        self._norm_modes = (Mode.STREAMING,) if cfg.causal_only else (Mode.STREAMING, Mode.FULL_CONTEXT)
        rng = np.random.default_rng(seed)
        self._layers: "OrderedDict[str, object]" = OrderedDict()
        self._build(rng)

    def _add(self, name: str, layer):
        self._layers[name] = layer
        return layer

    def _conv(self, name, c_in, c_out, k, rng, depthwise=False, stride=1):
        return self._add(
            name,
            DualConv1D(
                c_in, c_out, k, rng,
                depthwise=depthwise, stride=stride, causal_only=self.cfg.causal_only,
            ),
        )

    def _build(self, rng):
        raise NotImplementedError

    def forward(self, x: Tensor, mode: Mode, training: bool = False) -> Tensor:
        raise NotImplementedError

    def encode(self, x, mode: Mode, training: bool = False) -> EncoderOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.cfg.feature_dim:
            raise T.ShapeMismatchError("encode", x.data.shape, (self.cfg.feature_dim,))
        if self.cfg.causal_only and mode is not Mode.STREAMING:
            raise ValueError("causal-only encoder supports streaming mode only")
        hidden = self.forward(x, mode, training=training)
        return EncoderOutput(hidden=hidden, length=hidden.data.shape[0], mode=mode)

    # parameter bookkeeping ------------------------------------------------

    def params(self) -> "OrderedDict[str, Tensor]":
        out: "OrderedDict[str, Tensor]" = OrderedDict()
        for lname, layer in self._layers.items():
            for pname, p in layer.params().items():
                out["%s.%s" % (lname, pname)] = p
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for lname, layer in self._layers.items():
            for sname, s in layer.state().items():
                out["%s.%s" % (lname, sname)] = s
        return out

    def load_state(self, state: dict) -> None:
        for lname, layer in self._layers.items():
            sub = {
                sname.split(".", 1)[1]: arr
                for sname, arr in state.items()
                if sname.startswith(lname + ".")
            }
            if sub and hasattr(layer, "load_state"):
                layer.load_state(sub)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params().values())

    def extra_future_tap_count(self) -> int:
        """Trainable weights serving only full-context convolution windows."""
        total = 0
        for layer in self._layers.values():
            if isinstance(layer, DualConv1D) and not layer.causal_only:
                per_tap = layer.kernel.data.size // layer.kernel.data.shape[0]
                total += (layer.full_kernel_size - 1) // 2 * per_tap
        return total

    def norm_duplicate_count(self) -> int:
        """Trainable weights duplicated per mode (one extra gamma/beta set)."""
        total = 0
        for layer in self._layers.values():
            if isinstance(layer, DualNorm) and len(layer.modes) == 2:
                total += 2 * layer.channels
        return total


class ContextNetLite(Encoder):
    """Depthwise-separable conv blocks with squeeze-and-excitation gates."""

    def _build(self, rng):
        cfg = self.cfg
        c = cfg.channels
        self.input_proj = self._conv("input_proj", cfg.feature_dim, c, 1, rng)
        self.time_reduce = self._conv(
            "time_reduce", c, c, 2 * cfg.stride - 1, rng, depthwise=True, stride=cfg.stride
        )
        self.blocks = []
        for b in range(cfg.blocks):
            name = "block%d" % b
            block = {
                "dw": self._conv(name + ".dw", c, c, cfg.kernel_size, rng, depthwise=True),
                "pw": self._conv(name + ".pw", c, c, 1, rng),
                "norm": self._add(name + ".norm", DualNorm(c, kind="batch", modes=self._norm_modes)),
                "pw2": self._conv(name + ".pw2", c, c, 1, rng),
                "pw3": self._conv(name + ".pw3", c, c, 1, rng),
                "se": self._add(name + ".se", SEBlock(c, max(1, c // 2), rng)),
            }
            self.blocks.append(block)

    def forward(self, x, mode, training=False):
        h = self.input_proj(x, mode)
        h = self.time_reduce(h, mode)
        for block in self.blocks:
            y = block["dw"](h, mode)
            y = block["pw"](y, mode)
            y = block["norm"](y, mode, training=training)
            y = T.swish(y)
            y = block["pw2"](y, mode)
            y = T.swish(y)
            y = block["pw3"](y, mode)
            y = T.swish(y)
            y = block["se"](y, mode)
            h = h + y
        return h


class ConformerLite(Encoder):
    """Feed-forward + self-attention + convolution blocks, pre-norm residuals."""

    def _build(self, rng):
        cfg = self.cfg
        c = cfg.channels
        self.input_proj = self._conv("input_proj", cfg.feature_dim, c, 1, rng)
        self.time_reduce = self._conv(
            "time_reduce", c, c, 2 * cfg.stride - 1, rng, depthwise=True, stride=cfg.stride
        )
        self.blocks = []
        for b in range(cfg.blocks):
            name = "block%d" % b
            block = {
                "norm_ff": self._add(name + ".norm_ff", DualNorm(c, modes=self._norm_modes)),
                "ff1": self._add(name + ".ff1", Linear(c, 2 * c, rng)),
                "ff2": self._add(name + ".ff2", Linear(2 * c, c, rng)),
                "norm_attn": self._add(name + ".norm_attn", DualNorm(c, modes=self._norm_modes)),
                "attn": self._add(name + ".attn", DualSelfAttention(c, cfg.heads, rng)),
                "norm_conv": self._add(name + ".norm_conv", DualNorm(c, modes=self._norm_modes)),
                "dw": self._conv(name + ".dw", c, c, cfg.kernel_size, rng, depthwise=True),
                "pw": self._conv(name + ".pw", c, c, 1, rng),
            }
            self.blocks.append(block)
        self.final_norm = self._add("final_norm", DualNorm(c, modes=self._norm_modes))

    def forward(self, x, mode, training=False):
        h = self.input_proj(x, mode)
        h = self.time_reduce(h, mode)
        pe = sinusoidal_positions(h.data.shape[0], self.cfg.channels)
        h = h + Tensor(pe)
        for block in self.blocks:
            y = block["norm_ff"](h, mode, training=training)
            y = block["ff2"](T.swish(block["ff1"](y)))
            h = h + y
            y = block["norm_attn"](h, mode, training=training)
            y = block["attn"](y, mode)
            h = h + y
            y = block["norm_conv"](h, mode, training=training)
            y = T.swish(block["dw"](y, mode))
            y = block["pw"](y, mode)
            h = h + y
        return self.final_norm(h, mode, training=training)


_ARCHITECTURES = {
    "contextnet_lite": ContextNetLite,
    "conformer_lite": ConformerLite,
}


def build_encoder(cfg: EncoderConfig, seed: int = 0) -> Encoder:
    """Construct an encoder with deterministic seed-derived initialization."""
    cfg.validate()
    return _ARCHITECTURES[cfg.architecture](cfg, seed)


def encode(enc: Encoder, x, mode: Mode, training: bool = False) -> EncoderOutput:
    return enc.encode(x, mode, training=training)
