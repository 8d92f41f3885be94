"""Command line front end.

    fedsoft run --config run.ini [--out DIR] [--seed-override N]
    fedsoft encode --in soft.f32 --classes C --mode raw32|q1|q1delta
                   [--ref MSGFILE] [--out MSGFILE] [--tie-seed N]
    fedsoft partition --config run.ini --out clients.jsonl
    fedsoft report --run DIR [--targets 0.8,0.9]

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .codec import (
    MessageMode,
    check_soft_labels,
    decode_message,
    empirical_entropy,
    encode_upstream,
    message_from_bytes,
    message_symbols,
    quantize_matrix,
)
from .config import apply_seed_override, parse_config
from .data import dirichlet_partition, export_partition_jsonl, partition_class_shares
from .errors import ConfigError, FormatError, ValidationError
from .harness import bits_to_target, load_report_json, run_experiment, write_run_outputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsoft", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="directory for results files")
    p_run.add_argument("--seed-override", type=int, default=None)

    p_enc = sub.add_parser("encode", help="encode a flat float32 soft-label file")
    p_enc.add_argument("--in", dest="infile", required=True)
    p_enc.add_argument("--classes", type=int, required=True)
    p_enc.add_argument("--mode", choices=("raw32", "q1", "q1delta"), required=True)
    p_enc.add_argument("--ref", default=None, help="reference message file for q1delta")
    p_enc.add_argument("--out", default=None, help="output message file (default: <in>.msg)")
    p_enc.add_argument("--tie-seed", type=int, default=0)
    p_enc.add_argument(
        "--round",
        type=int,
        default=1,
        help="round number stamped in the header; q1delta with --ref needs >= 2 "
        "because the reference is taken to be the previous round",
    )
    p_enc.add_argument("--sender", type=int, default=0)

    p_part = sub.add_parser("partition", help="export the client partition")
    p_part.add_argument("--config", required=True)
    p_part.add_argument("--out", required=True)

    p_rep = sub.add_parser("report", help="bits-to-target summary for a finished run")
    p_rep.add_argument("--run", required=True, help="directory holding results.json")
    p_rep.add_argument("--targets", default=None, help="comma-separated accuracy targets")
    return parser


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed_override is not None:
        cfg = apply_seed_override(cfg, args.seed_override)

    def on_round(rec):
        print(
            f"round {rec.round:3d}  acc={rec.accuracy:.4f}  "
            f"up={rec.up_bytes}B  down={rec.down_bytes}B  "
            f"H_up={rec.up_entropy_bits:.3f}b  eta={rec.up_eta:.3f}b"
        )

    report = run_experiment(cfg, on_round=on_round)
    print(f"final accuracy {report.final_accuracy:.4f} after {len(report.rounds)} rounds")
    for target in cfg.eval_targets:
        hit = bits_to_target(report, target)
        if hit is None:
            print(f"target {target:.2f}: not reached")
        else:
            print(
                f"target {target:.2f}: round {hit.round}, "
                f"avg up {hit.avg_up_mb:.4f} MB, avg down {hit.avg_down_mb:.4f} MB"
            )
    if args.out:
        paths = write_run_outputs(report, args.out)
        print(f"wrote {paths['csv']}, {paths['json']}, {paths['plot']}")
    return EXIT_OK


def _load_reference(path: str):
    with open(path, "rb") as fh:
        msg = message_from_bytes(fh.read())
    if msg.mode == MessageMode.RAW32:
        raise ValidationError("reference must be a quantized message")
    if msg.mode == MessageMode.QUANTIZED_DELTA and not msg.is_full:
        raise ValidationError("reference message is itself a delta; chain not supported")
    return decode_message(msg)


def _cmd_encode(args) -> int:
    if args.classes < 2:
        raise ConfigError(["--classes must be >= 2"])
    raw = np.fromfile(args.infile, dtype="<f4")
    if raw.size == 0 or raw.size % args.classes != 0:
        raise ConfigError(
            [f"{args.infile}: {raw.size} float32 values do not form rows of {args.classes}"]
        )
    y = check_soft_labels(raw.reshape(-1, args.classes).astype(np.float64))

    if args.mode == "raw32":
        msg = encode_upstream(
            None, None, MessageMode.RAW32, y_raw=y, round_no=args.round, sender_id=args.sender
        )
    else:
        q = quantize_matrix(y, 1, rng=args.tie_seed)
        if args.mode == "q1":
            msg = encode_upstream(
                q, None, MessageMode.QUANTIZED, round_no=args.round, sender_id=args.sender
            )
        else:
            if args.ref and args.round < 2:
                raise ConfigError(
                    ["--ref names a previous-round message, so --round must be >= 2"]
                )
            ref = _load_reference(args.ref) if args.ref else None
            msg = encode_upstream(
                q, ref, MessageMode.QUANTIZED_DELTA, round_no=args.round, sender_id=args.sender
            )

    out_path = args.out or args.infile + ".msg"
    with open(out_path, "wb") as fh:
        fh.write(msg.to_bytes())
    if msg.mode == MessageMode.RAW32:
        entropy = 32.0
    else:
        entropy = empirical_entropy(message_symbols(msg))
    bits_per_symbol = msg.bit_length / msg.symbol_count
    print(
        f"{args.mode}: n={msg.n} C={msg.C} payload={msg.payload_bytes}B "
        f"entropy={entropy:.4f}b/sym coded={bits_per_symbol:.4f}b/sym "
        f"eta={bits_per_symbol - entropy:.4f}b"
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def _cmd_partition(args) -> int:
    cfg = parse_config(args.config)
    from .harness import _build_datasets  # shares the dataset construction

    train_ds, _ = _build_datasets(cfg)
    parts = dirichlet_partition(train_ds, cfg.partition)
    export_partition_jsonl(parts, args.out)
    shares = partition_class_shares(train_ds, parts)
    sizes = [len(p) for p in parts]
    print(f"wrote {args.out}: {len(parts)} clients, sizes {min(sizes)}..{max(sizes)}")
    print(f"max single-class share per client: {np.round(shares.max(axis=1), 3).tolist()}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = os.path.join(args.run, "results.json")
    if not os.path.exists(path):
        raise ConfigError([f"no results.json under {args.run}"])
    report = load_report_json(path)
    if args.targets is not None:
        try:
            targets = [float(tok) for tok in args.targets.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError([f"cannot parse --targets: {exc}"]) from exc
    else:
        targets = report.config.get("eval_targets", [0.8, 0.9])
    print(f"protocol {report.protocol}: best accuracy {report.best_accuracy:.4f}")
    for target in targets:
        hit = bits_to_target(report, target)
        if hit is None:
            print(f"target {target:.2f}: not reached")
        else:
            print(
                f"target {target:.2f}: round {hit.round}, "
                f"avg up {hit.avg_up_mb:.4f} MB, avg down {hit.avg_down_mb:.4f} MB, "
                f"total up {hit.total_up_mb:.4f} MB, total down {hit.total_down_mb:.4f} MB"
            )
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "encode": _cmd_encode,
        "partition": _cmd_partition,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError) and len(exc.problems) > 1:
            for problem in exc.problems:
                print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
