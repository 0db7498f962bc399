"""Experiment configuration: one JSON document describing a full run.

Sections: "seed" (mandatory), "data" (synthetic-task parameters), "model"
(encoder + transducer dimensions), "train" (loop and loss settings), and
"paths" (manifests and default output directory).  Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .checkpoint import load_checkpoint, restore_arrays
from .data import SynthTaskConfig
from .encoder import EncoderConfig
from .model import ModelConfig, TransducerModel
from .training import TrainConfig


class ExperimentConfigError(ValueError):
    def __init__(self, fld: str, message: str):
        self.field = fld
        super().__init__("experiment config %r: %s" % (fld, message))


@dataclass
class ExperimentConfig:
    seed: int
    data: SynthTaskConfig = field(default_factory=SynthTaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_manifest: str = ""
    eval_manifest: str = ""
    output_dir: str = ""

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": asdict(self.data),
            "model": {
                "vocab_size": self.model.vocab_size,
                "pred_hidden": self.model.pred_hidden,
                "joint_dim": self.model.joint_dim,
                "encoder": asdict(self.model.encoder),
            },
            "train": asdict(self.train),
            "paths": {
                "train_manifest": self.train_manifest,
                "eval_manifest": self.eval_manifest,
                "output_dir": self.output_dir,
            },
        }


def _build_section(cls, raw: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ExperimentConfigError(section, "unknown key(s) %s" % sorted(unknown))
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ExperimentConfigError(section, str(exc)) from None


def experiment_from_dict(doc: dict) -> ExperimentConfig:
    if "seed" not in doc:
        raise ExperimentConfigError("seed", "mandatory field is missing")
    known_top = {"seed", "data", "model", "train", "paths"}
    unknown = set(doc) - known_top
    if unknown:
        raise ExperimentConfigError("<top level>", "unknown key(s) %s" % sorted(unknown))

    data_cfg = _build_section(SynthTaskConfig, dict(doc.get("data", {})), "data")

    model_raw = dict(doc.get("model", {}))
    enc_raw = dict(model_raw.pop("encoder", {}))
    enc_raw.setdefault("feature_dim", data_cfg.feature_dim)
    encoder_cfg = _build_section(EncoderConfig, enc_raw, "model.encoder")
    model_raw.setdefault("vocab_size", data_cfg.vocab_size)
    known_model = {"vocab_size", "pred_hidden", "joint_dim"}
    unknown = set(model_raw) - known_model
    if unknown:
        raise ExperimentConfigError("model", "unknown key(s) %s" % sorted(unknown))
    model_cfg = ModelConfig(encoder=encoder_cfg, **model_raw)

    train_raw = dict(doc.get("train", {}))
    train_had_seed = "seed" in train_raw
    train_cfg = _build_section(TrainConfig, train_raw, "train")
    if not train_had_seed:
        train_cfg.seed = int(doc["seed"])

    paths = dict(doc.get("paths", {}))
    unknown = set(paths) - {"train_manifest", "eval_manifest", "output_dir"}
    if unknown:
        raise ExperimentConfigError("paths", "unknown key(s) %s" % sorted(unknown))

    exp = ExperimentConfig(
        seed=int(doc["seed"]),
        data=data_cfg,
        model=model_cfg,
        train=train_cfg,
        train_manifest=paths.get("train_manifest", ""),
        eval_manifest=paths.get("eval_manifest", ""),
        output_dir=paths.get("output_dir", ""),
    )
    try:
        exp.data.validate()
        exp.model.validate()
        exp.train.validate()
    except ValueError as exc:
        raise ExperimentConfigError("<validation>", str(exc)) from None
    return exp


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ExperimentConfigError("<config path>", "file not found: %s" % path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ExperimentConfigError("<config path>", "invalid JSON in %s: %s" % (path, exc)) from None
    return experiment_from_dict(doc)


def rebuild_from_checkpoint(path):
    """Reconstruct model(s) from a checkpoint: (header, exp, {role: model})."""
    header, params, state = load_checkpoint(path)
    exp = experiment_from_dict(header["config"])
    separate = exp.train.weight_sharing == "separate"
    if separate:
        models = {
            "teacher": TransducerModel(exp.model, seed=exp.seed + 7919),
            "student": TransducerModel(exp.model, seed=exp.seed),
        }
    else:
        models = {"model": TransducerModel(exp.model, seed=exp.seed)}
    target_params = {}
    target_state = {}
    for role, m in models.items():
        prefix = "" if role == "model" else role + "."
        for name, p in m.params().items():
            target_params[prefix + name] = p
        for name, arr in m.state().items():
            target_state[prefix + name] = arr
    restore_arrays(target_params, params, "parameter")
    restore_arrays(target_state, state, "state")
    return header, exp, models
