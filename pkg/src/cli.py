"""
corss command-line interface
Интерфейс командной строки corss

Subcommands: synth, run, eval, bench, convert, acceptance.
Подкоманды: synth, run, eval, bench, convert, acceptance.

Exit codes: 0 success, 1 failed acceptance or unexpected error,
2 documented error (one-line JSON reason on stderr) or bad flags, 130 interrupt.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from src.acceptance import DEFAULT_SEEDS, run_acceptance
from src.config import get_settings, load_pipeline_config
from src.core.identify import IdentificationConfig
from src.core.preprocess import PreprocessConfig
from src.core.schedule import ForgettingSchedule
from src.core.separate import NonlinearityConfig
from src.core.signals import iter_blocks
from src.errors import CorssError, ErrorCode, ErrorReport, SpecError
from src.evaluation import evaluate_against_run, evaluate_against_truth, write_evaluation
from src.observability.structured_logging import get_logger, log_context, setup_logging
from src.pipeline import (
    ORICA_NONLINEARITY,
    PipelineConfig,
    benchmark,
    default_whiten_schedule,
    run_stream,
)
from src.rundir import RunWriter, load_run, write_json_atomic
from src.signal_io import export_csv, import_csv, read_signal
from src.synth import SynthSpec, generate, load_truth, truth_path_for, write_recording

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2
EXIT_INTERRUPTED = 130

TASK_ALIASES = {
    "semg": "semg-decomposition",
    "emgdi": "emgdi-monitoring",
    "semg-decomposition": "semg-decomposition",
    "emgdi-monitoring": "emgdi-monitoring",
}


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("block sizes must be positive integers")
    return values


def _first_error(e: ValidationError) -> str:
    first = e.errors()[0]
    return f"{'.'.join(str(p) for p in first['loc'])}: {first['msg']}"


# ============================================================================
# SYNTH
# ============================================================================


def handle_synth(args: argparse.Namespace) -> int:
    """Generate a synthetic recording and its truth sidecar."""
    settings = get_settings()
    task = TASK_ALIASES[args.task]
    fields: Dict[str, Any] = {
        "task": task,
        "seed": settings.seed if args.seed is None else args.seed,
    }
    for flag, name in (
        ("channels", "n_ch"),
        ("sources", "n_sources"),
        ("duration", "duration_s"),
        ("rate", "sample_rate"),
        ("snr", "snr_db"),
        ("breath_rate", "breath_rate_bpm"),
        ("ecg_rate", "ecg_rate_bpm"),
        ("ecg_ratio", "ecg_ratio"),
    ):
        value = getattr(args, flag)
        if value is not None:
            fields[name] = value
    try:
        spec = (
            SynthSpec.default_emgdi(**fields) if task == "emgdi-monitoring" else SynthSpec(**fields)
        )
    except ValidationError as e:
        raise SpecError(_first_error(e), errors=e.error_count()) from e
    out = Path(args.out) if args.out else settings.output_dir / f"{args.task}-seed{spec.seed}.sig"
    recording, truth = generate(spec)
    sig, sidecar = write_recording(out, recording, truth)
    print(f"✓ {sig}")
    print(f"✓ {sidecar}")
    return EXIT_OK


# ============================================================================
# RUN
# ============================================================================


def build_config(args: argparse.Namespace, default_task: str) -> PipelineConfig:
    """PipelineConfig from an optional JSON file overridden by flags."""
    settings = get_settings()
    base = load_pipeline_config(args.config) if args.config else None
    algorithm = args.algorithm or (base.algorithm if base else settings.default_algorithm)
    fields: Dict[str, Any] = base.model_dump(exclude_unset=True) if base else {}
    fields["algorithm"] = algorithm
    fields.setdefault("block_size", settings.default_block_size)
    fields.setdefault("task", default_task)
    if args.block is not None:
        fields["block_size"] = args.block
    if args.task is not None:
        fields["task"] = args.task
    if args.checkpoint_blocks is not None:
        fields["checkpoint_every_blocks"] = args.checkpoint_blocks
    if args.checkpoint_window is not None:
        fields["checkpoint_window_s"] = args.checkpoint_window

    if "nonlinearity" not in fields and algorithm == "orica":
        fields["nonlinearity"] = ORICA_NONLINEARITY
    if args.nonlinearity or args.a0 is not None or args.a1 is not None:
        current = NonlinearityConfig.model_validate(fields.get("nonlinearity") or {})
        fields["nonlinearity"] = NonlinearityConfig(
            kind=args.nonlinearity or current.kind,
            a0=current.a0 if args.a0 is None else args.a0,
            a1=current.a1 if args.a1 is None else args.a1,
        )

    overrides = {
        k: v
        for k, v in (("lambda0", args.lambda0), ("gamma", args.gamma), ("lambda_min", args.lambda_min))
        if v is not None
    }
    if overrides:
        defaults = {
            "whiten_schedule": default_whiten_schedule(fields["task"]),
            "separate_schedule": ForgettingSchedule(),
        }
        for key, default in defaults.items():
            current = ForgettingSchedule.model_validate(fields.get(key) or default)
            fields[key] = current.model_copy(update=overrides)
    if args.no_orthonormalize:
        fields["orthonormalize"] = False
    if args.bandpass or args.notch:
        fields["preprocess"] = PreprocessConfig(
            bandpass_hz=tuple(args.bandpass) if args.bandpass else None,
            notch_hz=args.notch,
        )
    fields.setdefault("identification", IdentificationConfig())
    return PipelineConfig.model_validate(fields)


def _default_task(input_path: Path) -> str:
    sidecar = truth_path_for(input_path)
    if sidecar.is_file() and load_truth(sidecar).task == "emgdi-monitoring":
        return "monitoring"
    return "decomposition"


def handle_run(args: argparse.Namespace) -> int:
    """Run the pipeline over a signal file, streaming outputs to a run directory."""
    input_path = Path(args.input)
    data, sample_rate = read_signal(input_path)
    config = build_config(args, _default_task(input_path))
    out_dir = Path(args.out) if args.out else get_settings().output_dir / input_path.stem

    with log_context(run=str(out_dir), algorithm=config.algorithm):
        writer = RunWriter(out_dir, data.shape[0], sample_rate, config)
        try:
            result = run_stream(
                config,
                iter_blocks(data, config.block_size, sample_rate),
                sink=writer.on_block,
                n_channels=data.shape[0],
            )
        finally:
            writer.close()
        summary = writer.finish(result, input_path.name, warmup_blocks=args.warmup)

    latency = summary.get("latency") or {}
    print(f"✓ {out_dir}")
    print(f"  blocks: {summary['n_blocks']}  samples: {summary['n_samples']}")
    if latency:
        print(f"  mean block time: {latency['mean_s']:.6f} s  realtime_ratio: {latency['realtime_ratio']:.4f}")
    return EXIT_OK


# ============================================================================
# EVAL / BENCH / CONVERT / ACCEPTANCE
# ============================================================================


def handle_eval(args: argparse.Namespace) -> int:
    """Score a run against a truth sidecar or a reference run."""
    run = load_run(args.run_dir)
    if args.reference:
        report = evaluate_against_run(
            run, load_run(args.reference), args.tolerance_ms, args.max_lag_ms
        )
        trace: list = []
    else:
        if not Path(args.truth).is_file():
            raise CorssError(
                f"no such truth file: {args.truth}", code=ErrorCode.INVALID_ARGUMENT, path=args.truth
            )
        report, trace = evaluate_against_truth(
            run,
            load_truth(args.truth),
            args.tolerance_ms,
            args.max_lag_ms,
            burn_in_k=args.burn_in_k,
        )
    out = write_evaluation(args.out or args.run_dir, report, trace)
    print(f"✓ {out}")
    if report.mean_mr is not None:
        print(f"  mean MR: {report.mean_mr:.4f}  recovered: {report.recovered}/{len(report.pairs)}")
    if report.corr is not None:
        print(f"  CORR: {report.corr:.4f}  RMSE: {report.rmse_percent}")
    return EXIT_OK


def handle_bench(args: argparse.Namespace) -> int:
    """Latency per block size, sequentially."""
    data, sample_rate = read_signal(args.input)
    settings = get_settings()
    base = PipelineConfig.for_algorithm(args.algorithm or settings.default_algorithm)
    reports = benchmark(data, sample_rate, args.blocks, base, warmup_blocks=args.warmup)

    columns = ["block_size", "n_blocks", "mean_s", "std_s", "max_s", "realtime_ratio"]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        fh = open(args.out, "w", newline="", encoding="utf-8")
    else:
        fh = sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.model_dump())
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def handle_convert(args: argparse.Namespace) -> int:
    """Signal file <-> CSV, by extension."""
    src, dst = Path(args.input), Path(args.output)
    if src.suffix.lower() == ".csv":
        out = import_csv(src, dst, sample_rate=args.rate)
    elif dst.suffix.lower() == ".csv":
        out = export_csv(src, dst)
    else:
        raise CorssError(
            "one side of convert must be a .csv file",
            code=ErrorCode.INVALID_ARGUMENT,
            input=str(src),
            output=str(dst),
        )
    print(f"✓ {out}")
    return EXIT_OK


def handle_acceptance(args: argparse.Namespace) -> int:
    """Run the acceptance criteria and write a JSON report."""
    report = run_acceptance(seeds=args.seeds, criteria=args.criteria, quick=args.quick)
    out = Path(args.out)
    write_json_atomic(out, report.model_dump(mode="json"))
    for r in report.results:
        mark = "✓" if r.passed else "✗"
        print(f"{mark} [{r.criterion}] {r.name} ({r.runtime_s:.1f} s)")
    print(f"report: {out}")
    return EXIT_OK if report.passed else EXIT_FAILED


# ============================================================================
# PARSER
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corss",
        description="Streaming blind source separation for multichannel EMG",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  corss synth --task semg --channels 16 --sources 6 --duration 30 --rate 2000 --seed 7 --out runs/mu.sig
  corss run runs/mu.sig --algorithm corss --block 200 --out runs/mu-corss
  corss eval runs/mu-corss --truth runs/mu.truth.json
  corss bench runs/emgdi.sig --blocks 100,200,400,500,1000,2000
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Traceback on unexpected errors")
    parser.add_argument("--log-level", default=None, help="Override CORSS_LOG_LEVEL")
    parser.add_argument("--json-logs", action="store_true", default=None, help="JSON log lines on stderr")

    sub = parser.add_subparsers(dest="command", help="Available commands")

    # synth
    p = sub.add_parser("synth", help="Generate a synthetic recording with ground truth")
    p.add_argument("--task", choices=sorted(TASK_ALIASES), default="semg")
    p.add_argument("--channels", type=int)
    p.add_argument("--sources", type=int)
    p.add_argument("--duration", type=float, help="Seconds")
    p.add_argument("--rate", type=float, help="Sample rate (Hz)")
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", type=float, help="dB; 'inf' for noiseless")
    p.add_argument("--breath-rate", type=float, help="Breaths per minute (emgdi)")
    p.add_argument("--ecg-rate", type=float, help="Beats per minute (emgdi)")
    p.add_argument("--ecg-ratio", type=float, help="ECG R peak / EMGdi RMS (emgdi)")
    p.add_argument("--out", help="Signal file to write (sidecar goes next to it)")
    p.set_defaults(func=handle_synth)

    # run
    p = sub.add_parser("run", help="Run the streaming pipeline on a signal file")
    p.add_argument("input")
    p.add_argument("--out", help="Run directory")
    p.add_argument("--config", help="PipelineConfig JSON")
    p.add_argument("--algorithm", choices=["corss", "orica"])
    p.add_argument("--block", type=int, help="Block size L (samples)")
    p.add_argument("--task", choices=["decomposition", "monitoring", "none"])
    p.add_argument("--nonlinearity", choices=["constrained-sigmoid", "baseline-tanh"])
    p.add_argument("--a0", type=float)
    p.add_argument("--a1", type=float)
    p.add_argument("--lambda0", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--no-orthonormalize", action="store_true")
    p.add_argument("--bandpass", type=float, nargs=2, metavar=("LOW", "HIGH"))
    p.add_argument("--notch", type=float, metavar="HZ")
    p.add_argument("--checkpoint-blocks", type=int)
    p.add_argument("--checkpoint-window", type=float, metavar="SECONDS")
    p.add_argument("--warmup", type=int, default=0, help="Blocks excluded from latency stats")
    p.set_defaults(func=handle_run)

    # eval
    p = sub.add_parser("eval", help="Evaluate a run directory")
    p.add_argument("run_dir")
    ref = p.add_mutually_exclusive_group(required=True)
    ref.add_argument("--truth", help="Ground-truth sidecar (.truth.json)")
    ref.add_argument("--reference", help="Another run directory")
    p.add_argument("--tolerance-ms", type=float, default=0.5)
    p.add_argument("--max-lag-ms", type=float, default=5.0)
    p.add_argument("--burn-in-k", type=int, default=25)
    p.add_argument("--out", help="Directory for metrics.json and trace.csv (default: run_dir)")
    p.set_defaults(func=handle_eval)

    # bench
    p = sub.add_parser("bench", help="Per-block latency for several block sizes")
    p.add_argument("input")
    p.add_argument("--blocks", type=_int_list, default=[100, 200, 400, 500, 1000, 2000])
    p.add_argument("--algorithm", choices=["corss", "orica"])
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(func=handle_bench)

    # convert
    p = sub.add_parser("convert", help="Convert between signal files and CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--rate", type=float, help="Sample rate for CSV import (else inferred)")
    p.set_defaults(func=handle_convert)

    # acceptance
    p = sub.add_parser("acceptance", help="Run the desk acceptance criteria")
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    p.add_argument("--criteria", type=int, nargs="+", choices=range(1, 11))
    p.add_argument("--quick", action="store_true", help="Shorter recordings, fewer pairs")
    p.add_argument("--out", default="acceptance.json")
    p.set_defaults(func=handle_acceptance)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    settings = get_settings()
    setup_logging(
        level=args.log_level or settings.log_level,
        json_logs=settings.json_logs if args.json_logs is None else args.json_logs,
    )

    if not args.command:
        parser.print_help()
        return EXIT_OK

    try:
        return int(args.func(args))
    except CorssError as e:
        print(f"error: {ErrorReport.from_exception(e).to_line()}", file=sys.stderr)
        return EXIT_ERROR
    except ValidationError as e:
        report = ErrorReport.create(
            ErrorCode.INVALID_CONFIG,
            _first_error(e),
            errors=e.error_count(),
        )
        print(f"error: {report.to_line()}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except Exception as e:
        print(f"✗ Unexpected error: {e}", file=sys.stderr)
        if args.verbose:
            import traceback

            traceback.print_exc()
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
