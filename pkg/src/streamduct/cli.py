"""Command-line surface: gen-data, train, evaluate, ablate, export-lattice.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime or numeric
failure.  All reports are UTF-8 JSON.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ExperimentConfig, ExperimentConfigError, load_experiment, rebuild_from_checkpoint
from .data import DatasetError, generate_dataset, load_manifest
from .evaluation import evaluate_model
from .layers import Mode
from .metrics import MetricsError, export_lattice
from .training import TrainingDivergedError, run_training

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _apply_seed_override(exp: ExperimentConfig, seed) -> ExperimentConfig:
    if seed is None:
        return exp
    exp = copy.deepcopy(exp)
    exp.seed = int(seed)
    exp.data.seed = int(seed)
    exp.train.seed = int(seed)
    return exp


def _emit(report: dict, out_path=None):
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text + "\n", encoding="utf-8")


def cmd_gen_data(args) -> int:
    exp = _apply_seed_override(load_experiment(args.config), args.seed_override)
    manifest = generate_dataset(exp.data, args.count, args.out)
    print(json.dumps({"manifest": str(manifest), "count": args.count}))
    return 0


def cmd_train(args) -> int:
    exp = _apply_seed_override(load_experiment(args.config), args.seed_override)
    out_dir = Path(args.out or exp.output_dir or "run")
    result = run_training(exp, out_dir)
    print(
        json.dumps(
            {
                "checkpoint": str(result.checkpoint_path),
                "metrics": str(result.metrics_path),
                "steps": result.steps_run,
            }
        )
    )
    return 0


def _pick_model(models: dict, mode: Mode):
    if "model" in models:
        return models["model"]
    return models["student"] if mode is Mode.STREAMING else models["teacher"]


def cmd_evaluate(args) -> int:
    _, exp, models = rebuild_from_checkpoint(args.checkpoint)
    mode = Mode.STREAMING if args.mode == "streaming" else Mode.FULL_CONTEXT
    model = _pick_model(models, mode)
    if model.cfg.encoder.causal_only and mode is Mode.FULL_CONTEXT:
        raise UsageError("checkpoint holds a causal-only encoder; full-context evaluation is impossible")
    utts = load_manifest(args.data)
    report = evaluate_model(
        model,
        utts,
        mode,
        lookahead_frames=args.lookahead_frames,
        max_symbols_per_frame=exp.train.max_symbols_per_frame,
    )
    report["checkpoint"] = str(args.checkpoint)
    report["lookahead_frames"] = args.lookahead_frames
    _emit(report, args.out)
    return 0


ABLATION_ROWS = [
    {"name": "shared+joint+distill", "weight_sharing": "shared", "mode_strategy": "joint", "distill": "on"},
    {"name": "shared+joint", "weight_sharing": "shared", "mode_strategy": "joint", "distill": "off"},
    {"name": "shared+sampled", "weight_sharing": "shared", "mode_strategy": "sampled", "distill": "off"},
    {"name": "separate+joint+distill", "weight_sharing": "separate", "mode_strategy": "joint", "distill": "on"},
]


def run_ablation(exp: ExperimentConfig, out_dir: Path) -> dict:
    """Train the four configuration rows with identical seed and budget."""
    utts = load_manifest(exp.eval_manifest)
    rows = []
    for i, row in enumerate(ABLATION_ROWS, start=1):
        row_exp = copy.deepcopy(exp)
        row_exp.train = replace(
            row_exp.train,
            weight_sharing=row["weight_sharing"],
            mode_strategy=row["mode_strategy"],
            distill=row["distill"],
        )
        result = run_training(row_exp, out_dir / ("row%d_%s" % (i, row["name"].replace("+", "_"))))
        model = _pick_model(result.models, Mode.STREAMING)
        report = evaluate_model(
            model, utts, Mode.STREAMING,
            max_symbols_per_frame=exp.train.max_symbols_per_frame,
        )
        rows.append(
            {
                "name": row["name"],
                "weight_sharing": row["weight_sharing"],
                "mode_strategy": row["mode_strategy"],
                "distill": row["distill"],
                "wer": report["wer"],
                "latency_p50_ms": (report["latency_ms"] or {}).get("p50"),
                "latency_p90_ms": (report["latency_ms"] or {}).get("p90"),
                "skipped": report["skipped"],
            }
        )
    return {"seed": exp.seed, "total_steps": exp.train.total_steps, "rows": rows}


def format_ablation_table(result: dict) -> str:
    headers = ["row", "sharing", "training", "distill", "WER%", "Lat@50ms", "Lat@90ms"]
    lines = []
    for row in result["rows"]:
        lines.append(
            [
                row["name"],
                row["weight_sharing"],
                row["mode_strategy"],
                row["distill"],
                "%.2f" % row["wer"],
                "n/a" if row["latency_p50_ms"] is None else "%.0f" % row["latency_p50_ms"],
                "n/a" if row["latency_p90_ms"] is None else "%.0f" % row["latency_p90_ms"],
            ]
        )
    widths = [max(len(headers[c]), max(len(r[c]) for r in lines)) for c in range(len(headers))]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(headers), fmt(["-" * w for w in widths])] + [fmt(r) for r in lines])


def cmd_ablate(args) -> int:
    exp = _apply_seed_override(load_experiment(args.config), args.seed_override)
    out_dir = Path(args.out or exp.output_dir or "ablation")
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_ablation(exp, out_dir)
    table = format_ablation_table(result)
    print(table)
    (out_dir / "ablation.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    return 0


def cmd_export_lattice(args) -> int:
    _, exp, models = rebuild_from_checkpoint(args.checkpoint)
    model = _pick_model(models, Mode.STREAMING)
    utts = load_manifest(args.data)
    matches = [u for u in utts if u.id == args.utterance_id]
    if not matches:
        raise UsageError("utterance id %r not found in %s" % (args.utterance_id, args.data))
    utt = matches[0]
    record = model.decode(
        utt.features.astype("float64"), Mode.STREAMING,
        utterance_id=utt.id, max_symbols_per_frame=exp.train.max_symbols_per_frame,
    )
    out = Path(args.out)
    if out.suffix == ".svg":
        csv_path = out.with_suffix(".csv")
        export_lattice(record, utt, csv_path, svg_path=out)
        print(json.dumps({"csv": str(csv_path), "svg": str(out), "tokens": len(record.tokens)}))
    else:
        export_lattice(record, utt, out)
        print(json.dumps({"csv": str(out), "tokens": len(record.tokens)}))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="streamduct", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train per the experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="decode a dataset and report WER/latency")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--mode", choices=["streaming", "fullcontext"], required=True)
    p.add_argument("--lookahead-frames", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare the standard ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-lattice", help="export one utterance's emission lattice")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--utterance-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_lattice)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return USAGE_ERROR
    except (ExperimentConfigError, DatasetError, CheckpointError, MetricsError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return USAGE_ERROR
    except TrainingDivergedError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return RUNTIME_ERROR
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
