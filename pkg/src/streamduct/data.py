"""Deterministic synthetic streaming-recognition task and on-disk dataset.

Each utterance renders a random token sequence as feature frames: token v
occupies ``segment_frames`` consecutive frames of a v-specific orthogonal
channel pattern plus Gaussian noise, followed by trailing silence.  The
first frame of every segment carries an emphasized onset (x1.5) so that
repeated tokens have a visible boundary, like attack transients in speech.
Frames are 10 ms.  The on-disk layout is a JSON-lines manifest next to one
binary feature file per utterance:

    magic "DMF1" | u32 T | u32 D | T*D float32 little-endian, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FRAME_MS = 10.0
MAGIC = b"DMF1"


class DatasetError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # [T, D] float32
    transcript: list[int]
    end_of_speech_frame: int  # 1-based index of the last content frame

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "Utterance":
        if not 1 <= self.end_of_speech_frame <= self.num_frames:
            raise DatasetError(
                "utterance %s: end_of_speech_frame %d outside 1..%d"
                % (self.id, self.end_of_speech_frame, self.num_frames)
            )
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("utterance %s: non-finite features" % self.id)
        return self


@dataclass
class SynthTaskConfig:
    vocab_size: int = 4
    feature_dim: int = 8
    segment_frames: int = 4
    noise_sigma: float = 0.1
    min_tokens: int = 1
    max_tokens: int = 5
    silence_frames: int = 8
    seed: int = 0

    def validate(self) -> "SynthTaskConfig":
        if self.vocab_size < 2:
            raise DatasetError("vocab_size must be >= 2, got %d" % self.vocab_size)
        if self.segment_frames < 2:
            raise DatasetError("segment_frames must be >= 2, got %d" % self.segment_frames)
        if self.noise_sigma < 0:
            raise DatasetError("noise_sigma must be >= 0, got %g" % self.noise_sigma)
        if self.feature_dim < self.vocab_size:
            raise DatasetError(
                "feature_dim %d cannot hold %d orthogonal token patterns"
                % (self.feature_dim, self.vocab_size)
            )
        if not 0 <= self.min_tokens <= self.max_tokens:
            raise DatasetError("bad token-count range [%d, %d]" % (self.min_tokens, self.max_tokens))
        return self


def _token_pattern(token: int, dim: int) -> np.ndarray:
    pattern = np.zeros(dim)
    pattern[token - 1] = 1.0
    return pattern


def synthesize_utterance(cfg: SynthTaskConfig, rng: np.random.Generator, utt_id: str) -> Utterance:
    n_tokens = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    tokens = [int(v) for v in rng.integers(1, cfg.vocab_size + 1, size=n_tokens)]
    content = n_tokens * cfg.segment_frames
    total = content + cfg.silence_frames
    feats = np.zeros((total, cfg.feature_dim))
    for i, tok in enumerate(tokens):
        lo = i * cfg.segment_frames
        feats[lo : lo + cfg.segment_frames] = _token_pattern(tok, cfg.feature_dim)
        feats[lo] *= 1.5  # segment onset
    feats += rng.normal(scale=cfg.noise_sigma, size=feats.shape) if cfg.noise_sigma > 0 else 0.0
    return Utterance(
        id=utt_id,
        features=feats.astype(np.float32),
        transcript=tokens,
        end_of_speech_frame=max(1, content),
    ).validate()


def write_feature_file(path: Path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    t_len, dim = features.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", t_len, dim))
        fh.write(features.tobytes())


def read_feature_file(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise DatasetError("bad feature-file header in %s" % path)
        t_len, dim = struct.unpack("<II", head[4:])
        payload = fh.read(t_len * dim * 4)
        if len(payload) != t_len * dim * 4:
            raise DatasetError("truncated feature file %s" % path)
    return np.frombuffer(payload, dtype="<f4").reshape(t_len, dim)


def generate_dataset(cfg: SynthTaskConfig, n: int, out_dir) -> Path:
    """Write n utterances and a manifest under out_dir; returns manifest path."""
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as mf:
        for i in range(n):
            utt = synthesize_utterance(cfg, rng, "utt_%05d" % i)
            rel = "features/%s.dmf" % utt.id
            write_feature_file(out_dir / rel, utt.features)
            mf.write(
                json.dumps(
                    {
                        "id": utt.id,
                        "feature_file": rel,
                        "num_frames": utt.num_frames,
                        "feature_dim": utt.feature_dim,
                        "transcript": utt.transcript,
                        "end_of_speech_frame": utt.end_of_speech_frame,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return manifest_path


def load_manifest(manifest_path) -> list[Utterance]:
    """Load all utterances listed in a manifest, validating shapes and tokens."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError("manifest not found: %s" % manifest_path)
    root = manifest_path.parent
    utts = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            utt_id = entry.get("id", "<missing id>")
            feat_path = root / entry["feature_file"]
            if not feat_path.exists():
                raise DatasetError("utterance %s: missing feature file %s" % (utt_id, feat_path))
            feats = read_feature_file(feat_path)
            if feats.shape != (entry["num_frames"], entry["feature_dim"]):
                raise DatasetError(
                    "utterance %s: feature shape %s does not match manifest (%d, %d)"
                    % (utt_id, feats.shape, entry["num_frames"], entry["feature_dim"])
                )
            utt = Utterance(
                id=utt_id,
                features=feats,
                transcript=[int(v) for v in entry["transcript"]],
                end_of_speech_frame=int(entry["end_of_speech_frame"]),
            ).validate()
            utts.append(utt)
    return utts


def vocab_range_check(utts: list[Utterance], vocab_size: int) -> None:
    for utt in utts:
        for tok in utt.transcript:
            if not 1 <= tok <= vocab_size:
                raise DatasetError("utterance %s: token %d outside vocab 1..%d" % (utt.id, tok, vocab_size))


@dataclass
class Batch:
    """Zero-padded utterances plus validity masks.

    Padding never reaches the model: consumers iterate ``items()`` which
    slices each utterance back to its true length, so losses and pooling
    statistics exclude padding by construction.
    """

    ids: list[str]
    features: np.ndarray  # [B, T_max, D]
    frame_mask: np.ndarray  # [B, T_max] bool
    tokens: np.ndarray  # [B, U_max] int
    token_mask: np.ndarray  # [B, U_max] bool
    end_of_speech: list[int]

    def __len__(self):
        return len(self.ids)

    def items(self):
        for i in range(len(self.ids)):
            t_len = int(self.frame_mask[i].sum())
            u_len = int(self.token_mask[i].sum())
            yield (
                self.ids[i],
                self.features[i, :t_len].astype(np.float64),
                [int(v) for v in self.tokens[i, :u_len]],
            )


def batch_utterances(utts: list[Utterance], batch_size: int) -> list[Batch]:
    """Group utterances in order into padded batches with length masks."""
    if batch_size < 1:
        raise DatasetError("batch_size must be >= 1")
    batches = []
    for lo in range(0, len(utts), batch_size):
        group = utts[lo : lo + batch_size]
        t_max = max(u.num_frames for u in group)
        u_max = max((len(u.transcript) for u in group), default=0)
        u_max = max(u_max, 1)
        dim = group[0].feature_dim
        feats = np.zeros((len(group), t_max, dim), dtype=np.float32)
        frame_mask = np.zeros((len(group), t_max), dtype=bool)
        tokens = np.zeros((len(group), u_max), dtype=np.int64)
        token_mask = np.zeros((len(group), u_max), dtype=bool)
        for i, utt in enumerate(group):
            feats[i, : utt.num_frames] = utt.features
            frame_mask[i, : utt.num_frames] = True
            tokens[i, : len(utt.transcript)] = utt.transcript
            token_mask[i, : len(utt.transcript)] = True
        batches.append(
            Batch(
                ids=[u.id for u in group],
                features=feats,
                frame_mask=frame_mask,
                tokens=tokens,
                token_mask=token_mask,
                end_of_speech=[u.end_of_speech_frame for u in group],
            )
        )
    return batches
