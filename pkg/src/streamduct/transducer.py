"""Transducer head: prediction network, joint network, loss, greedy decode.

The lattice holds normalized log-probabilities z(t, u, v) over blank (index
0) and labels 1..V for every encoder frame t and consumed-label count u.
The loss is the negative log marginal over all monotonic alignments,
computed by a log-space forward recursion with a hand-derived backward
(occupancy weights from the alpha/beta products).  A brute-force path
enumerator serves as the independent oracle for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import Encoder, EncoderOutput
from .layers import Mode, xavier_init
from .tensor import Tensor

BLANK = 0


class LatticeError(ValueError):
    pass


@dataclass
class TransducerLattice:
    """Per-node log-probabilities over V+1 outputs, shape [T', U+1, V+1]."""

    log_probs: Tensor

    def __post_init__(self):
        if self.log_probs.data.ndim != 3:
            raise LatticeError("lattice must be [T', U+1, V+1], got %s" % (self.log_probs.shape,))

    @property
    def num_frames(self) -> int:
        return self.log_probs.data.shape[0]

    @property
    def num_states(self) -> int:
        return self.log_probs.data.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.log_probs.data.shape[2] - 1

    def check_normalized(self, tol: float = 1e-6) -> None:
        lse = np.log(np.exp(self.log_probs.data).sum(axis=-1))
        worst = np.max(np.abs(lse))
        if worst > tol:
            raise LatticeError("lattice not normalized: max |logsumexp| = %g" % worst)


@dataclass
class EmissionRecord:
    """Greedy-decode hypothesis with the encoder frame of each emission."""

    utterance_id: str
    tokens: list[int]
    emission_frames: list[int]  # 1-based encoder frames, non-decreasing
    frame_duration_ms: float
    stride_total: int

    def __post_init__(self):
        if len(self.tokens) != len(self.emission_frames):
            raise ValueError("tokens and emission_frames must have equal length")
        if any(b < a for a, b in zip(self.emission_frames, self.emission_frames[1:])):
            raise ValueError("emission frames must be non-decreasing")


class PredictionNet:
    """Auto-regressive label encoder: embedding + one gated recurrent cell.

    Row u of the output is the state after consuming the blank start symbol
    followed by y_1..y_u; row 0 is the start state.
    """

    def __init__(self, vocab_size: int, hidden: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.embedding = Tensor(xavier_init(rng, (vocab_size + 1, hidden)), requires_grad=True)
        def lin(shape):
            return Tensor(xavier_init(rng, shape), requires_grad=True)
        self.w_z, self.u_z, self.b_z = lin((hidden, hidden)), lin((hidden, hidden)), Tensor(np.zeros(hidden), requires_grad=True)
        self.w_r, self.u_r, self.b_r = lin((hidden, hidden)), lin((hidden, hidden)), Tensor(np.zeros(hidden), requires_grad=True)
        self.w_n, self.u_n, self.b_n = lin((hidden, hidden)), lin((hidden, hidden)), Tensor(np.zeros(hidden), requires_grad=True)

    def _check_tokens(self, y) -> list[int]:
        y = [int(v) for v in y]
        for v in y:
            if not 1 <= v <= self.vocab_size:
                raise ValueError("token %d out of range 1..%d" % (v, self.vocab_size))
        return y

    def _cell(self, x: Tensor, h: Tensor) -> Tensor:
        z = T.sigmoid(T.matmul(x, self.w_z) + T.matmul(h, self.u_z) + self.b_z)
        r = T.sigmoid(T.matmul(x, self.w_r) + T.matmul(h, self.u_r) + self.b_r)
        n = T.tanh(T.matmul(x, self.w_n) + r * T.matmul(h, self.u_n) + self.b_n)
        return (1.0 - z) * n + z * h

    def forward(self, y) -> Tensor:
        y = self._check_tokens(y)
        h = Tensor(np.zeros((1, self.hidden)))
        rows = []
        for tok in [BLANK] + y:
            h = self._cell(T.take_rows(self.embedding, [tok]), h)
            rows.append(h)
        return rows[0] if len(rows) == 1 else T.concat(rows, axis=0)

    # inference-path (graph-free) helpers --------------------------------

    def start_state(self) -> np.ndarray:
        return self.step_state(BLANK, np.zeros(self.hidden))

    def step_state(self, token: int, h: np.ndarray) -> np.ndarray:
        x = self.embedding.data[token]
        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))
        z = sig(x @ self.w_z.data + h @ self.u_z.data + self.b_z.data)
        r = sig(x @ self.w_r.data + h @ self.u_r.data + self.b_r.data)
        n = np.tanh(x @ self.w_n.data + r * (h @ self.u_n.data) + self.b_n.data)
        return (1.0 - z) * n + z * h

    def params(self) -> dict:
        return {
            "embedding": self.embedding,
            "w_z": self.w_z, "u_z": self.u_z, "b_z": self.b_z,
            "w_r": self.w_r, "u_r": self.u_r, "b_r": self.b_r,
            "w_n": self.w_n, "u_n": self.u_n, "b_n": self.b_n,
        }


def prediction_forward(net: PredictionNet, y) -> Tensor:
    return net.forward(y)


class JointNet:
    """Combine encoder frame t and prediction state u into V+1 log-probs."""

    def __init__(self, enc_dim: int, pred_dim: int, joint_dim: int, vocab_size: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.enc_proj = Tensor(xavier_init(rng, (enc_dim, joint_dim)), requires_grad=True)
        self.pred_proj = Tensor(xavier_init(rng, (pred_dim, joint_dim)), requires_grad=True)
        self.combine_bias = Tensor(np.zeros(joint_dim), requires_grad=True)
        self.out_proj = Tensor(xavier_init(rng, (joint_dim, vocab_size + 1)), requires_grad=True)

    def forward(self, h, g: Tensor) -> TransducerLattice:
        hidden = h.hidden if isinstance(h, EncoderOutput) else h
        if hidden.data.shape[1] != self.enc_proj.data.shape[0] or g.data.shape[1] != self.pred_proj.data.shape[0]:
            raise T.ShapeMismatchError("joint_forward", hidden.data.shape, g.data.shape)
        t_len, u_len = hidden.data.shape[0], g.data.shape[0]
        j = self.enc_proj.data.shape[1]
        e = T.reshape(T.matmul(hidden, self.enc_proj), (t_len, 1, j))
        p = T.reshape(T.matmul(g, self.pred_proj), (1, u_len, j))
        s = T.tanh(e + p + self.combine_bias)
        logits = T.reshape(T.matmul(T.reshape(s, (t_len * u_len, j)), self.out_proj), (t_len, u_len, self.vocab_size + 1))
        return TransducerLattice(T.log_softmax(logits, axis=-1))

    def log_probs_vec(self, h_t: np.ndarray, g_u: np.ndarray) -> np.ndarray:
        s = np.tanh(h_t @ self.enc_proj.data + g_u @ self.pred_proj.data + self.combine_bias.data)
        logits = s @ self.out_proj.data
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def params(self) -> dict:
        return {
            "enc_proj": self.enc_proj,
            "pred_proj": self.pred_proj,
            "combine_bias": self.combine_bias,
            "out_proj": self.out_proj,
        }


def joint_forward(joint: JointNet, h, g: Tensor) -> TransducerLattice:
    return joint.forward(h, g)


def _forward_alphas(z: np.ndarray, y: list[int]) -> np.ndarray:
    t_len, u_len = z.shape[0], z.shape[1]
    alpha = np.full((t_len, u_len), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u_len):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + z[t - 1, u, BLANK] if t > 0 else -np.inf
            b = alpha[t, u - 1] + z[t, u - 1, y[u - 1]] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(a, b)
    return alpha


def rnnt_loss(lattice: TransducerLattice, y) -> Tensor:
    """Negative log-likelihood over all monotonic alignments, in nats."""
    y = [int(v) for v in y]
    z_tensor = lattice.log_probs
    z = z_tensor.data
    t_len, u_len, _ = z.shape
    if u_len != len(y) + 1:
        raise LatticeError("lattice has %d label states but %d targets" % (u_len, len(y)))
    lattice.check_normalized()

    alpha = _forward_alphas(z, y)
    u = len(y)
    loss = -(alpha[t_len - 1, u] + z[t_len - 1, u, BLANK])
    out = Tensor(np.float64(loss), parents=(z_tensor,), op="rnnt_loss")

    def backward(g_up):
        if not z_tensor.requires_grad:
            return
        beta = np.full((t_len, u_len), -np.inf)
        beta[t_len - 1, u] = z[t_len - 1, u, BLANK]
        for t in range(t_len - 1, -1, -1):
            for uu in range(u, -1, -1):
                if t == t_len - 1 and uu == u:
                    continue
                a = z[t, uu, BLANK] + beta[t + 1, uu] if t + 1 < t_len else -np.inf
                b = z[t, uu, y[uu]] + beta[t, uu + 1] if uu < u else -np.inf
                beta[t, uu] = np.logaddexp(a, b)
        log_p = -loss
        grad = np.zeros_like(z)
        for t in range(t_len):
            for uu in range(u_len):
                if t + 1 < t_len:
                    grad[t, uu, BLANK] -= np.exp(alpha[t, uu] + z[t, uu, BLANK] + beta[t + 1, uu] - log_p)
                if uu < u:
                    grad[t, uu, y[uu]] -= np.exp(alpha[t, uu] + z[t, uu, y[uu]] + beta[t, uu + 1] - log_p)
        grad[t_len - 1, u, BLANK] -= np.exp(alpha[t_len - 1, u] + z[t_len - 1, u, BLANK] - log_p)
        T._accumulate(z_tensor, float(g_up) * grad)

    out._backward_fn = backward
    return out


def rnnt_loss_bruteforce(lattice: TransducerLattice, y) -> float:
    """Oracle: enumerate every monotonic alignment and sum path probabilities."""
    y = [int(v) for v in y]
    z = lattice.log_probs.data
    t_len, u_len, v_plus_1 = z.shape
    u_max = len(y)
    if u_len != u_max + 1:
        raise LatticeError("lattice has %d label states but %d targets" % (u_len, u_max))
    if t_len + u_max > 12 or v_plus_1 - 1 > 3:
        raise ValueError("instance too large for brute-force enumeration")

    path_logps = []

    def walk(t, u, acc):
        if t == t_len - 1 and u == u_max:
            path_logps.append(acc + z[t, u, BLANK])
            return
        if t + 1 < t_len:
            walk(t + 1, u, acc + z[t, u, BLANK])
        if u < u_max:
            walk(t, u + 1, acc + z[t, u, y[u]])

    walk(0, 0, 0.0)
    m = max(path_logps)
    return float(-(m + np.log(sum(np.exp(lp - m) for lp in path_logps))))


def greedy_decode(
    enc: Encoder,
    pred: PredictionNet,
    joint: JointNet,
    x,
    mode: Mode,
    max_symbols_per_frame: int = 4,
    utterance_id: str = "",
    frame_duration_ms: float = 10.0,
) -> EmissionRecord:
    """Frame-synchronous greedy search recording the frame of each emission.

    Streaming mode walks frames in order and never reads future frames; a
    per-frame symbol cap guards against label loops.
    """
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    out = enc.encode(x, mode)
    hidden = out.hidden.data
    g = pred.start_state()
    tokens: list[int] = []
    frames: list[int] = []
    for t in range(out.length):
        for _ in range(max_symbols_per_frame):
            best = int(np.argmax(joint.log_probs_vec(hidden[t], g)))
            if best == BLANK:
                break
            tokens.append(best)
            frames.append(t + 1)
            g = pred.step_state(best, g)
    return EmissionRecord(
        utterance_id=utterance_id,
        tokens=tokens,
        emission_frames=frames,
        frame_duration_ms=frame_duration_ms,
        stride_total=enc.stride_total,
    )
