"""Accuracy and emission-latency evaluation, plus emission-lattice export.

WER is corpus-level unit-cost Levenshtein: per-utterance minimal
(substitutions, deletions, insertions) summed over the test set, divided
by total reference tokens.  Latency is the signed time between the last
token's emission and the end of speech; the per-set summaries are the
median and 90th percentile (nearest-rank) over utterances, so a model that
finishes before speech ends reports a negative latency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FRAME_MS, Utterance
from .transducer import EmissionRecord


class MetricsError(ValueError):
    pass


@dataclass
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    reference_tokens: int
    wer: float  # percent

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@dataclass
class LatencyReport:
    per_utterance_ms: list[float]
    latency_p50_ms: float | None
    latency_p90_ms: float | None
    count: int
    skipped: int  # empty hypotheses, excluded from the percentiles


def align_counts(hyp: list[int], ref: list[int]) -> tuple[int, int, int]:
    """Minimal (S, D, I) for one pair via DP with backtrace."""
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)  # deletions
    dist[0, :] = np.arange(m + 1)  # insertions
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)
    s = d = ins_count = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins_count += 1
            j -= 1
    return s, d, ins_count


def wer(hyps: list[list[int]], refs: list[list[int]]) -> WerReport:
    """Corpus-level token error rate over parallel hypothesis/reference lists."""
    if len(hyps) != len(refs):
        raise MetricsError("got %d hypotheses for %d references" % (len(hyps), len(refs)))
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise MetricsError("reference set has zero tokens; WER undefined")
    s = d = i = 0
    for hyp, ref in zip(hyps, refs):
        ds, dd, di = align_counts(list(hyp), list(ref))
        s, d, i = s + ds, d + dd, i + di
    return WerReport(
        substitutions=s,
        deletions=d,
        insertions=i,
        reference_tokens=total_ref,
        wer=100.0 * (s + d + i) / total_ref,
    )


def nearest_rank_percentile(values: list[float], q: float) -> float:
    """Order statistic at rank ceil(q * n) of the ascending sort (1-based)."""
    if not values:
        raise MetricsError("percentile of empty sample")
    if not 0 < q <= 1:
        raise MetricsError("quantile must be in (0, 1], got %r" % q)
    ordered = sorted(values)
    rank = math.ceil(q * len(ordered))
    return ordered[rank - 1]


def emission_latency_ms(record: EmissionRecord, utterance: Utterance, lookahead_frames: int = 0) -> float | None:
    """Signed latency of the last emission; None for an empty hypothesis.

    Encoder frame t' maps to source frame t' * stride_total; a look-ahead of
    N source frames delays every emission's wall clock by N frames.
    """
    if not record.tokens:
        return None
    last_source_frame = record.emission_frames[-1] * record.stride_total + lookahead_frames
    return (last_source_frame - utterance.end_of_speech_frame) * record.frame_duration_ms


def latency(records: list[EmissionRecord], utterances: list[Utterance], lookahead_frames: int = 0) -> LatencyReport:
    """Latency@50/@90 over a test set; empty hypotheses are counted, not used."""
    if len(records) != len(utterances):
        raise MetricsError("got %d records for %d utterances" % (len(records), len(utterances)))
    by_id = {u.id: u for u in utterances}
    per_utt = []
    skipped = 0
    for rec in records:
        if rec.utterance_id not in by_id:
            raise MetricsError("emission record for unknown utterance %r" % rec.utterance_id)
        value = emission_latency_ms(rec, by_id[rec.utterance_id], lookahead_frames)
        if value is None:
            skipped += 1
        else:
            per_utt.append(value)
    return LatencyReport(
        per_utterance_ms=per_utt,
        latency_p50_ms=nearest_rank_percentile(per_utt, 0.5) if per_utt else None,
        latency_p90_ms=nearest_rank_percentile(per_utt, 0.9) if per_utt else None,
        count=len(per_utt),
        skipped=skipped,
    )


def export_lattice(record: EmissionRecord, utterance: Utterance, out_path, svg_path=None) -> Path:
    """Write the emission lattice as CSV; optionally also a step-plot SVG.

    CSV columns: token position u (1-based), token id, and the source frame
    at which it was emitted.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["u,token_id,source_frame"]
    for u, (tok, frame) in enumerate(zip(record.tokens, record.emission_frames), start=1):
        lines.append("%d,%d,%d" % (u, tok, frame * record.stride_total))
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if svg_path is not None:
        _write_step_svg(Path(svg_path), record, utterance)
    return out_path


def _write_step_svg(svg_path: Path, record: EmissionRecord, utterance: Utterance) -> None:
    width, height, margin = 480, 280, 40
    t_max = max(utterance.num_frames, (record.emission_frames[-1] * record.stride_total) if record.tokens else 1)
    u_max = max(len(record.tokens), 1)

    def sx(frame):
        return margin + (width - 2 * margin) * frame / t_max

    def sy(count):
        return height - margin - (height - 2 * margin) * count / u_max

    points = [(0, 0)]
    for u, frame in enumerate(record.emission_frames, start=1):
        src = frame * record.stride_total
        points.append((src, u - 1))
        points.append((src, u))
    points.append((t_max, len(record.tokens)))
    path = " ".join("%s%.1f,%.1f" % ("M" if i == 0 else "L", sx(f), sy(c)) for i, (f, c) in enumerate(points))
    eos_x = sx(utterance.end_of_speech_frame)
    svg = (
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d">\n'
        '<rect width="100%%" height="100%%" fill="white"/>\n'
        '<path d="%s" stroke="steelblue" stroke-width="2" fill="none"/>\n'
        '<line x1="%.1f" y1="%d" x2="%.1f" y2="%d" stroke="firebrick" stroke-dasharray="4"/>\n'
        '<text x="%.1f" y="%d" font-size="10" fill="firebrick">end of speech</text>\n'
        '<text x="%d" y="%d" font-size="11">source frame</text>\n'
        '<text x="8" y="%d" font-size="11" transform="rotate(-90 12 %d)">emitted tokens</text>\n'
        "</svg>\n"
    ) % (
        width, height, path,
        eos_x, margin, eos_x, height - margin,
        eos_x + 4, margin + 10,
        width // 2 - 30, height - 8,
        height // 2, height // 2,
    )
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
