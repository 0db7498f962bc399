"""Dataset-level decoding and report assembly."""

from __future__ import annotations

import numpy as np

from .data import Utterance
from .layers import Mode
from .metrics import LatencyReport, WerReport, latency, wer
from .model import TransducerModel
from .transducer import EmissionRecord


def decode_dataset(
    model: TransducerModel,
    utts: list[Utterance],
    mode: Mode,
    lookahead_frames: int = 0,
    max_symbols_per_frame: int = 4,
) -> list[EmissionRecord]:
    """Greedy-decode every utterance; look-ahead pads zero frames at the end."""
    records = []
    for utt in utts:
        x = utt.features.astype(np.float64)
        if lookahead_frames > 0:
            x = np.concatenate([x, np.zeros((lookahead_frames, x.shape[1]))], axis=0)
        records.append(
            model.decode(x, mode, utterance_id=utt.id, max_symbols_per_frame=max_symbols_per_frame)
        )
    return records


def evaluate_model(
    model: TransducerModel,
    utts: list[Utterance],
    mode: Mode,
    lookahead_frames: int = 0,
    max_symbols_per_frame: int = 4,
) -> dict:
    """WER (+ latency when streaming) as a JSON-ready report dict.

    Full-context decoding has no meaningful emission clock, so its latency
    block is null.
    """
    records = decode_dataset(model, utts, mode, lookahead_frames, max_symbols_per_frame)
    wer_report: WerReport = wer([r.tokens for r in records], [u.transcript for u in utts])
    report = {
        "mode": mode.value,
        "wer": wer_report.wer,
        "substitutions": wer_report.substitutions,
        "deletions": wer_report.deletions,
        "insertions": wer_report.insertions,
        "reference_tokens": wer_report.reference_tokens,
        "n": len(utts),
    }
    if mode is Mode.STREAMING:
        lat: LatencyReport = latency(records, utts, lookahead_frames=lookahead_frames)
        report["latency_ms"] = (
            {"p50": lat.latency_p50_ms, "p90": lat.latency_p90_ms}
            if lat.count
            else None
        )
        report["latency_n"] = lat.count
        report["skipped"] = lat.skipped
    else:
        report["latency_ms"] = None
        report["latency_n"] = 0
        report["skipped"] = 0
    return report
