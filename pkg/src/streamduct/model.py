"""Full transducer model: dual-mode encoder + prediction net + joint net."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .encoder import Encoder, EncoderConfig, build_encoder
from .layers import Mode
from .transducer import (
    EmissionRecord,
    JointNet,
    PredictionNet,
    TransducerLattice,
    greedy_decode,
)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vocab_size: int = 4
    pred_hidden: int = 64
    joint_dim: int = 32

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        for name in ("vocab_size", "pred_hidden", "joint_dim"):
            if getattr(self, name) < 1:
                raise ValueError("model config field %r must be >= 1" % name)
        return self


class TransducerModel:
    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.encoder: Encoder = build_encoder(cfg.encoder, seed=seed)
        self.prediction = PredictionNet(cfg.vocab_size, cfg.pred_hidden, np.random.default_rng(seed + 1))
        self.joint = JointNet(
            enc_dim=cfg.encoder.channels,
            pred_dim=cfg.pred_hidden,
            joint_dim=cfg.joint_dim,
            vocab_size=cfg.vocab_size,
            rng=np.random.default_rng(seed + 2),
        )

    def forward_lattice(self, x, y, mode: Mode, training: bool = False) -> TransducerLattice:
        h = self.encoder.encode(x, mode, training=training)
        g = self.prediction.forward(y)
        return self.joint.forward(h, g)

    def decode(
        self,
        x,
        mode: Mode,
        utterance_id: str = "",
        max_symbols_per_frame: int = 4,
        frame_duration_ms: float = 10.0,
    ) -> EmissionRecord:
        return greedy_decode(
            self.encoder,
            self.prediction,
            self.joint,
            x,
            mode,
            max_symbols_per_frame=max_symbols_per_frame,
            utterance_id=utterance_id,
            frame_duration_ms=frame_duration_ms,
        )

    def params(self) -> "OrderedDict[str, object]":
        out: "OrderedDict[str, object]" = OrderedDict()
        for name, p in self.encoder.params().items():
            out["encoder.%s" % name] = p
        for name, p in self.prediction.params().items():
            out["prediction.%s" % name] = p
        for name, p in self.joint.params().items():
            out["joint.%s" % name] = p
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, s in self.encoder.state().items():
            out["encoder.%s" % name] = s
        return out

    def load_state(self, state: dict) -> None:
        self.encoder.load_state(
            {name.split(".", 1)[1]: arr for name, arr in state.items() if name.startswith("encoder.")}
        )

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params().values())
