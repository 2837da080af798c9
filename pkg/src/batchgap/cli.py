"""``batchgap`` command-line front end.

Exit codes: 0 success (an infeasible advisory included), 1 usage error,
2 config or data error, 3 internal invariant violation. Errors go to
stderr as one line of JSON. Output files are written to a temporary file
and renamed into place, so a failed command never leaves a partial file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from batchgap.advisor import (
    SLOSpec,
    advise,
    build_curve,
    calibrate,
    read_curve,
    write_curve,
)
from batchgap.config import RunConfig, load_config
from batchgap.core import derive_geometry
from batchgap.costmodel import roofline_table
from batchgap.engine import (
    SCHEMA_VERSION,
    run,
    run_replicated,
    trace_hash,
    trace_lines,
    utilization_proxies,
)
from batchgap.errors import BatchGapError, InvariantViolation

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

ROOFLINE_HEADER = ("kernel_group", "batch_size", "flops", "bytes", "ai", "attainable_flops",
                   "boundedness")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would print and exit with status 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: str | Path, chunks: Iterable[str]) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(out, [text])


def _batch_list(text: str) -> list[int]:
    try:
        sizes = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("batch sizes must be positive integers")
    return sizes


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _load(args) -> RunConfig:
    return load_config(args.config)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    config = _load(args).with_batch_size(args.batch_size)
    metrics, trace = run(config, record_trace=args.trace is not None)
    if args.trace is not None:
        atomic_write(args.trace, trace_lines(trace))
    _emit(_json_text(metrics.to_dict()), args.metrics)
    return EXIT_OK


def cmd_sweep(args) -> int:
    curve = build_curve(_load(args), args.batch_sizes, workers=args.workers)
    _emit(write_curve(curve), args.out)
    return EXIT_OK


def _slo(args) -> SLOSpec:
    if args.slo_ms is not None:
        if args.slo_multiple is not None or args.slo_base is not None:
            raise UsageError("--slo-ms conflicts with --slo-multiple/--slo-base")
        return SLOSpec(bound=args.slo_ms / 1000)
    if args.slo_multiple is None or args.slo_base is None:
        raise UsageError("give --slo-ms, or both --slo-multiple and --slo-base")
    return SLOSpec(multiplier=args.slo_multiple, base_batch=args.slo_base)


def cmd_advise(args) -> int:
    if args.curve is not None and args.batch_sizes is not None:
        raise UsageError("--curve conflicts with --batch-sizes; give one curve source")
    if args.curve is None and (args.config is None or args.batch_sizes is None):
        raise UsageError("give --curve, or --config with --batch-sizes")
    slo = _slo(args)
    config = _load(args) if args.config is not None else None
    if args.curve is not None:
        curve = read_curve(args.curve)
    else:
        curve = build_curve(config, args.batch_sizes, workers=args.workers)
    result = advise(curve, slo, args.epsilon, config, args.percentile)
    _emit(_json_text(result.to_dict()), args.out)
    return EXIT_OK


def cmd_replicate(args) -> int:
    config = _load(args).with_batch_size(args.batch_size)
    result = run_replicated(config, args.replicas, args.mode, record_trace=True)
    series = utilization_proxies(result.trace, config.hardware)
    report = {
        "schema_version": SCHEMA_VERSION,
        "mode": result.mode,
        "replicas": result.replicas,
        "batch_size": args.batch_size,
        "aggregate": result.aggregate.to_dict(),
        "per_replica": [m.to_dict() for m in result.per_replica],
        "utilization": {
            "dram_mean": series.dram_mean,
            "dram_peak": series.dram_peak,
            "compute_mean": series.compute_mean,
            "compute_peak": series.compute_peak,
        },
        "trace_events": len(result.trace),
        "trace_sha256": trace_hash(result.trace),
    }
    if args.trace is not None:
        atomic_write(args.trace, trace_lines(result.trace))
    _emit(_json_text(report), args.out)
    return EXIT_OK


def cmd_roofline(args) -> int:
    config = _load(args)
    seq_len = args.seq_len
    if seq_len is None:
        w = config.workload
        seq_len = w.fixed_input_len + w.fixed_output_len
    rows = roofline_table(derive_geometry(config.model), config.model, config.hardware,
                          args.batch_sizes, seq_len)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROOFLINE_HEADER)
    for r in rows:
        writer.writerow([r["kernel_group"], r["batch_size"], repr(float(r["flops"])),
                         repr(float(r["bytes"])), repr(r["ai"]), repr(r["attainable_flops"]),
                         r["boundedness"]])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    measured = read_curve(args.measured)
    result = calibrate(measured, _load(args))
    _emit(_json_text(result.to_dict()), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="batchgap",
                     description="Analytical batched-serving simulator and batch-size advisor.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one batch size and report metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--batch-size", type=_positive_int, required=True)
    p.add_argument("--trace", help="trace JSONL output path")
    p.add_argument("--metrics", help="metrics JSON output path (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="simulate a batch-size grid into a curve CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--batch-sizes", type=_batch_list, required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=_positive_int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("advise", help="pick B_opt under an ITL SLO and efficiency floor")
    p.add_argument("--curve")
    p.add_argument("--config")
    p.add_argument("--batch-sizes", type=_batch_list)
    p.add_argument("--slo-ms", type=float)
    p.add_argument("--slo-multiple", type=float)
    p.add_argument("--slo-base", type=_positive_int)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--percentile", type=float, default=1.0,
                   help="request-length percentile used to size the KV cache")
    p.add_argument("--out")
    p.add_argument("--workers", type=_positive_int)
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("replicate", help="co-simulate replicas on one device")
    p.add_argument("--config", required=True)
    p.add_argument("--batch-size", type=_positive_int, required=True)
    p.add_argument("--replicas", type=_positive_int, required=True)
    p.add_argument("--mode", choices=("timeshared", "parallel"), default="parallel")
    p.add_argument("--trace", help="merged trace JSONL output path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("roofline", help="decode-step roofline rows per kernel group")
    p.add_argument("--config", required=True)
    p.add_argument("--batch-sizes", type=_batch_list, required=True)
    p.add_argument("--seq-len", type=_positive_int,
                   help="context length per sequence (default: full request length)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_roofline)

    p = sub.add_parser("calibrate", help="fit efficiencies and CPU overhead to a curve")
    p.add_argument("--measured", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)
    return parser


def _report(code: str, message: str, exit_code: int) -> int:
    sys.stderr.write(json.dumps({"schema_version": SCHEMA_VERSION, "error": code,
                                 "message": message, "exit_code": exit_code}) + "\n")
    return exit_code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _report("usage", str(exc), EXIT_USAGE)
    except InvariantViolation as exc:
        return _report(exc.code, str(exc), EXIT_INTERNAL)
    except BatchGapError as exc:
        return _report(exc.code, str(exc), exc.exit_code)
    except OSError as exc:
        return _report("io-error", f"{exc.filename}: {exc.strerror}", EXIT_DATA)
    except Exception as exc:  # noqa: BLE001 - surfaced as an internal error
        return _report("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
