"""Joint dual-mode training with inplace knowledge distillation.

One optimizer step of the reference recipe runs the full-context forward,
the streaming forward (same weights), both transducer losses, and a
distillation loss from the full-context prediction (teacher, treated as a
constant) into the streaming prediction (student), collapsed per lattice
node to (P_label, P_blank, remainder).  Ablation variants: randomly
sampled single-mode training, and separate (non-weight-shared) teacher and
student models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import batch_utterances, load_manifest, vocab_range_check
from .layers import Mode
from .model import TransducerModel
from .tensor import Tensor
from .transducer import TransducerLattice, rnnt_loss

_EPS = 1e-12


class TrainingDivergedError(RuntimeError):
    def __init__(self, component: str, step: int):
        self.component = component
        self.step = step
        super().__init__("non-finite %s loss at step %d" % (component, step))


@dataclass
class TrainConfig:
    w_full: float = 1.0
    w_stream: float = 1.0
    w_distill: float = 1.0
    teacher_shift: int = 0
    stream_sample_prob: float = 0.5
    learning_rate: float = 2e-3
    warmup_steps: int = 50
    total_steps: int = 800
    batch_size: int = 4
    seed: int = 0
    mode_strategy: str = "joint"  # joint | sampled
    weight_sharing: str = "shared"  # shared | separate
    distill: str = "on"  # on | off
    kl_direction: str = "teacher_student"  # teacher_student | student_teacher
    distill_reduction: str = "node_mean"  # node_mean | node_sum
    max_symbols_per_frame: int = 4
    log_every: int = 10
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def validate(self) -> "TrainConfig":
        for name in ("w_full", "w_stream", "w_distill"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError("loss weight %s must be finite and >= 0, got %r" % (name, v))
        if not -2 <= self.teacher_shift <= 2:
            raise ValueError("teacher_shift must be in -2..2, got %d" % self.teacher_shift)
        if not 0.0 <= self.stream_sample_prob <= 1.0:
            raise ValueError("stream_sample_prob must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.warmup_steps < 0 or self.total_steps < 0 or self.batch_size < 1:
            raise ValueError("bad schedule fields")
        if self.mode_strategy not in ("joint", "sampled"):
            raise ValueError("mode_strategy must be joint or sampled")
        if self.weight_sharing not in ("shared", "separate"):
            raise ValueError("weight_sharing must be shared or separate")
        if self.distill not in ("on", "off"):
            raise ValueError("distill must be on or off")
        if self.kl_direction not in ("teacher_student", "student_teacher"):
            raise ValueError("unknown kl_direction %r" % self.kl_direction)
        if self.distill_reduction not in ("node_mean", "node_sum"):
            raise ValueError("unknown distill_reduction %r" % self.distill_reduction)
        if self.weight_sharing == "separate" and self.mode_strategy != "joint":
            raise ValueError("weight_sharing=separate requires joint training")
        return self


# optimizer -------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: dict) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(p.data) for name, p in params.items()},
        v={name: np.zeros_like(p.data) for name, p in params.items()},
    )


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear warmup to a constant rate; ``step`` is 1-based."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


def optimizer_update(state: OptimizerState, params: dict, grads: dict, lr_t: float) -> None:
    """One Adam update with bias correction; parameters replaced in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise T.ShapeMismatchError("optimizer_update", g.shape, p.data.shape)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        p.data = p.data - lr_t * m_hat / (np.sqrt(v_hat) + state.eps)


# distillation ----------------------------------------------------------------


def collapsed_kl(q_teacher, q_student) -> float:
    """KL divergence between two small probability vectors, in nats."""
    qt = np.asarray(q_teacher, dtype=np.float64)
    qs = np.asarray(q_student, dtype=np.float64)
    terms = np.where(qt > 0, qt * (np.log(np.maximum(qt, _EPS)) - np.log(np.maximum(qs, _EPS))), 0.0)
    return float(terms.sum())


def _collapse_targets_onehot(u_states: int, vocab_plus_1: int, y) -> np.ndarray:
    onehot = np.zeros((u_states, vocab_plus_1))
    for u, tok in enumerate(y):
        onehot[u, tok] = 1.0
    return onehot


def _collapse_numpy(z: np.ndarray, onehot: np.ndarray):
    ez = np.exp(z)
    p_lab = (ez * onehot[None, :, :]).sum(axis=2) + _EPS
    p_blank = ez[:, :, 0] + _EPS
    rem_raw = 1.0 - p_lab - p_blank
    rem = np.maximum(rem_raw - _EPS, 0.0) + _EPS
    return p_lab, p_blank, rem


def inplace_distill_loss(
    teacher: TransducerLattice,
    student: TransducerLattice,
    y,
    shift: int = 0,
    direction: str = "teacher_student",
    reduction: str = "node_mean",
) -> Tensor:
    """Per-node KL between collapsed (P_label, P_blank, remainder) triples.

    The teacher lattice is read as a constant (no gradient flows into it);
    its node (t, u) pairs with student node (t - shift, u), i.e. the teacher
    frame index is clamp(t + shift, 1, T').  At u = U no next label exists,
    so the split degenerates to (blank, rest).
    """
    zt = teacher.log_probs.data
    zs_tensor = student.log_probs
    if zt.shape != zs_tensor.data.shape:
        raise T.ShapeMismatchError("inplace_distill_loss", zt.shape, zs_tensor.data.shape)
    t_len, u_states, vocab_plus_1 = zt.shape
    if u_states != len(y) + 1:
        raise T.ShapeMismatchError("inplace_distill_loss", (u_states,), (len(y) + 1,))
    onehot = _collapse_targets_onehot(u_states, vocab_plus_1, y)

    # teacher side: plain arrays, time-shifted with boundary clamping
    qt_lab, qt_blank, qt_rem = _collapse_numpy(zt, onehot)
    idx = np.clip(np.arange(t_len) + shift, 0, t_len - 1)
    qt_lab, qt_blank, qt_rem = qt_lab[idx], qt_blank[idx], qt_rem[idx]

    # student side: same collapse, through the graph
    ez = T.exp(zs_tensor)
    qs_lab = T.reduce_sum(ez * Tensor(onehot[None, :, :]), axis=2) + _EPS
    qs_blank = ez[:, :, 0] + _EPS
    rem_raw = 1.0 - qs_lab - qs_blank
    qs_rem = T.relu(rem_raw - _EPS) + _EPS

    if direction == "teacher_student":
        ref_entropy = (
            qt_lab * np.log(qt_lab) + qt_blank * np.log(qt_blank) + qt_rem * np.log(qt_rem)
        )
        cross = (
            Tensor(qt_lab) * T.log(qs_lab)
            + Tensor(qt_blank) * T.log(qs_blank)
            + Tensor(qt_rem) * T.log(qs_rem)
        )
        node_kl = Tensor(ref_entropy) - cross
    elif direction == "student_teacher":
        log_qt = (np.log(qt_lab), np.log(qt_blank), np.log(qt_rem))
        node_kl = (
            qs_lab * (T.log(qs_lab) - Tensor(log_qt[0]))
            + qs_blank * (T.log(qs_blank) - Tensor(log_qt[1]))
            + qs_rem * (T.log(qs_rem) - Tensor(log_qt[2]))
        )
    else:
        raise ValueError("unknown kl direction %r" % direction)

    if reduction == "node_mean":
        return T.reduce_mean(node_kl)
    if reduction == "node_sum":
        return T.reduce_sum(node_kl)
    raise ValueError("unknown reduction %r" % reduction)


# train steps -----------------------------------------------------------------


def _finite_or_raise(value: float, component: str, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingDivergedError(component, step)
    return value


def _zero_grads(params: dict) -> None:
    for p in params.values():
        p.zero_grad()


def _grad_map(params: dict) -> dict:
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def joint_train_step(model: TransducerModel, batch, cfg: TrainConfig, opt: OptimizerState) -> dict:
    """Both-mode forward, summed losses over the batch, one Adam update."""
    use_distill = cfg.distill == "on"
    need_full = cfg.w_full > 0 or use_distill
    need_stream = cfg.w_stream > 0 or use_distill
    step = opt.step + 1

    full_losses, stream_losses, distill_losses = [], [], []
    for _, x, y in batch.items():
        lat_full = model.forward_lattice(x, y, Mode.FULL_CONTEXT, training=True) if need_full else None
        lat_stream = model.forward_lattice(x, y, Mode.STREAMING, training=True) if need_stream else None
        if need_full:
            full_losses.append(rnnt_loss(lat_full, y))
        if need_stream:
            stream_losses.append(rnnt_loss(lat_stream, y))
        if use_distill:
            distill_losses.append(
                inplace_distill_loss(
                    lat_full,
                    lat_stream,
                    y,
                    shift=cfg.teacher_shift,
                    direction=cfg.kl_direction,
                    reduction=cfg.distill_reduction,
                )
            )

    def total_of(parts):
        if not parts:
            return None
        acc = parts[0]
        for p in parts[1:]:
            acc = acc + p
        return acc

    loss_full = total_of(full_losses)
    loss_stream = total_of(stream_losses)
    loss_distill = total_of(distill_losses)

    total = None
    for weight, part, name in (
        (cfg.w_full, loss_full, "full-context"),
        (cfg.w_stream, loss_stream, "streaming"),
        (cfg.w_distill if use_distill else 0.0, loss_distill, "distillation"),
    ):
        if part is None:
            continue
        _finite_or_raise(part.item(), name, step)
        if weight == 0:
            continue
        term = part * weight
        total = term if total is None else total + term

    params = model.params()
    if total is not None:
        _zero_grads(params)
        total.backward()
        optimizer_update(opt, params, _grad_map(params), warmup_lr(cfg.learning_rate, step, cfg.warmup_steps))
    else:
        opt.step += 1

    return {
        "loss_full": loss_full.item() if loss_full is not None else None,
        "loss_stream": loss_stream.item() if loss_stream is not None else None,
        "loss_distill": loss_distill.item() if loss_distill is not None else None,
        "loss_total": total.item() if total is not None else 0.0,
    }


def sampled_train_step(model: TransducerModel, batch, cfg: TrainConfig, opt: OptimizerState, rng) -> dict:
    """Single-mode step: draw streaming with probability p, else full-context.

    Only one prediction exists per step, so no distillation term is possible.
    """
    step = opt.step + 1
    mode = Mode.STREAMING if rng.random() < cfg.stream_sample_prob else Mode.FULL_CONTEXT
    losses = []
    for _, x, y in batch.items():
        lat = model.forward_lattice(x, y, mode, training=True)
        losses.append(rnnt_loss(lat, y))
    total = losses[0]
    for part in losses[1:]:
        total = total + part
    _finite_or_raise(total.item(), mode.value, step)

    params = model.params()
    _zero_grads(params)
    total.backward()
    optimizer_update(opt, params, _grad_map(params), warmup_lr(cfg.learning_rate, step, cfg.warmup_steps))
    return {"mode_chosen": mode, "loss": total.item()}


def separate_joint_train_step(
    teacher: TransducerModel,
    student: TransducerModel,
    batch,
    cfg: TrainConfig,
    opt: OptimizerState,
) -> dict:
    """No weight sharing: full-context teacher and streaming student models."""
    use_distill = cfg.distill == "on"
    step = opt.step + 1
    full_losses, stream_losses, distill_losses = [], [], []
    for _, x, y in batch.items():
        lat_full = teacher.forward_lattice(x, y, Mode.FULL_CONTEXT, training=True)
        lat_stream = student.forward_lattice(x, y, Mode.STREAMING, training=True)
        full_losses.append(rnnt_loss(lat_full, y))
        stream_losses.append(rnnt_loss(lat_stream, y))
        if use_distill:
            distill_losses.append(
                inplace_distill_loss(
                    lat_full, lat_stream, y,
                    shift=cfg.teacher_shift,
                    direction=cfg.kl_direction,
                    reduction=cfg.distill_reduction,
                )
            )

    def tsum(parts):
        acc = parts[0]
        for p in parts[1:]:
            acc = acc + p
        return acc

    loss_full, loss_stream = tsum(full_losses), tsum(stream_losses)
    loss_distill = tsum(distill_losses) if distill_losses else None
    _finite_or_raise(loss_full.item(), "full-context", step)
    _finite_or_raise(loss_stream.item(), "streaming", step)
    total = cfg.w_full * loss_full + cfg.w_stream * loss_stream
    if loss_distill is not None:
        _finite_or_raise(loss_distill.item(), "distillation", step)
        total = total + cfg.w_distill * loss_distill

    params = {}
    for name, p in teacher.params().items():
        params["teacher.%s" % name] = p
    for name, p in student.params().items():
        params["student.%s" % name] = p
    _zero_grads(params)
    total.backward()
    optimizer_update(opt, params, _grad_map(params), warmup_lr(cfg.learning_rate, step, cfg.warmup_steps))
    return {
        "loss_full": loss_full.item(),
        "loss_stream": loss_stream.item(),
        "loss_distill": loss_distill.item() if loss_distill is not None else None,
        "loss_total": total.item(),
    }


# training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    models: dict  # role -> TransducerModel ("model" or "teacher"/"student")
    steps_run: int


def _experiment_snapshot(exp) -> dict:
    return exp.to_dict()


def run_training(exp, out_dir) -> TrainResult:
    """Run the configured training loop; write metrics log and checkpoint(s).

    Fully deterministic for a fixed experiment config: model init comes from
    the experiment seed, data order and mode sampling from the train seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg: TrainConfig = exp.train.validate()

    utts = load_manifest(exp.train_manifest)
    vocab_range_check(utts, exp.model.vocab_size)
    if not utts and cfg.total_steps > 0:
        raise ValueError("training requires a non-empty dataset: %s" % exp.train_manifest)

    separate = cfg.weight_sharing == "separate"
    if separate:
        teacher = TransducerModel(exp.model, seed=exp.seed + 7919)
        student_cfg = exp.model
        student = TransducerModel(student_cfg, seed=exp.seed)
        models = {"teacher": teacher, "student": student}
        params = {}
        for name, p in teacher.params().items():
            params["teacher.%s" % name] = p
        for name, p in student.params().items():
            params["student.%s" % name] = p
    else:
        model = TransducerModel(exp.model, seed=exp.seed)
        models = {"model": model}
        params = model.params()

    opt = init_optimizer(params)
    rng_data = np.random.default_rng(cfg.seed)
    rng_mode = np.random.default_rng(cfg.seed + 1)

    metrics_path = out_dir / "metrics.jsonl"
    checkpoint_path = out_dir / "checkpoint.ckpt"
    snapshot = _experiment_snapshot(exp)

    def write_checkpoint(path, step):
        tensors = {name: p.data for name, p in params.items()}
        state = {}
        for role, m in models.items():
            prefix = "" if role == "model" else role + "."
            for name, arr in m.state().items():
                state[prefix + name] = arr
        save_checkpoint(path, tensors, state, snapshot, step)

    step = 0
    with open(metrics_path, "w", encoding="utf-8") as mf:
        while step < cfg.total_steps:
            order = rng_data.permutation(len(utts))
            epoch_utts = [utts[i] for i in order]
            for batch in batch_utterances(epoch_utts, cfg.batch_size):
                if step >= cfg.total_steps:
                    break
                step += 1
                if separate:
                    losses = separate_joint_train_step(teacher, student, batch, cfg, opt)
                elif cfg.mode_strategy == "joint":
                    losses = joint_train_step(models["model"], batch, cfg, opt)
                else:
                    res = sampled_train_step(models["model"], batch, cfg, opt, rng_mode)
                    chosen = res["mode_chosen"]
                    losses = {
                        "loss_full": res["loss"] if chosen is Mode.FULL_CONTEXT else None,
                        "loss_stream": res["loss"] if chosen is Mode.STREAMING else None,
                        "loss_distill": None,
                    }
                if cfg.log_every > 0 and (step % cfg.log_every == 0 or step == cfg.total_steps):
                    mf.write(
                        json.dumps(
                            {
                                "step": step,
                                "loss_full": losses["loss_full"],
                                "loss_stream": losses["loss_stream"],
                                "loss_distill": losses["loss_distill"],
                                "lr": warmup_lr(cfg.learning_rate, step, cfg.warmup_steps),
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
                if cfg.checkpoint_every > 0 and step % cfg.checkpoint_every == 0:
                    write_checkpoint(out_dir / ("checkpoint_step%06d.ckpt" % step), step)

    write_checkpoint(checkpoint_path, step)
    return TrainResult(
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
        models=models,
        steps_run=step,
    )
