"""
Command-line surface: synth | train | eval | bench | inspect | study | serve.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from mi_tfcsp.errors import MiTfcspError
from mi_tfcsp.models import BandGrid, ClassifierKind, FilterSpec, Method, PipelineConfig, RunConfig, SynthConfig
from mi_tfcsp.services.data_service import generate_synthetic, load_trialset, save_trialset
from mi_tfcsp.services.model_service import load_pipeline, save_pipeline
from mi_tfcsp.services.pipeline_service import evaluate, inspect_trial, run_benchmark, run_study, train_pipeline

logger = logging.getLogger(__name__)


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        logger.info("Wrote %s", out)
    else:
        sys.stdout.write(text + "\n")


def _add_grid_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("band grid")
    group.add_argument("--grid-freq-width", type=float, default=2.0, help="frequency band width in Hz")
    group.add_argument("--grid-freq-step", type=float, default=1.0, help="frequency start step in Hz")
    group.add_argument("--grid-freq-top", type=float, default=30.0, help="upper edge of the last frequency band")
    group.add_argument("--grid-time-width", type=float, default=1.0, help="temporal band width in s")
    group.add_argument("--grid-time-step", type=float, default=0.5, help="temporal start step in s")


def _add_filter_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("bandpass")
    group.add_argument("--filter-order", type=int, default=8)
    group.add_argument("--filter-low", type=float, default=8.0)
    group.add_argument("--filter-high", type=float, default=30.0)


def _grid(args, duration_s: float = 4.0) -> BandGrid:
    return BandGrid.for_extent(
        freq_top=args.grid_freq_top,
        duration_s=duration_s,
        freq_band_width=args.grid_freq_width,
        freq_start_step=args.grid_freq_step,
        time_band_width=args.grid_time_width,
        time_start_step=args.grid_time_step,
    )


def _run_config(args, parser: argparse.ArgumentParser) -> RunConfig:
    try:
        return RunConfig(
            method=getattr(args, "method", Method.TFCSP),
            classifier=getattr(args, "classifier", ClassifierKind.LDA),
            grid=_grid(args),
            filter=FilterSpec(order=args.filter_order, low_hz=args.filter_low, high_hz=args.filter_high),
            n_features=getattr(args, "features", 8),
            threads=getattr(args, "threads", 1),
        )
    except ValueError as e:
        parser.error(str(e))
        raise


def cmd_synth(args, parser) -> int:
    """Write a deterministic synthetic EEGT file"""
    try:
        cfg = SynthConfig(
            seed=args.seed,
            channels=args.channels,
            sampling_rate=args.sampling_rate,
            trial_duration_s=args.duration,
            trials_per_class=args.trials_per_class,
            class_count=args.classes,
            rhythm_freqs=args.rhythm or [10.0, 20.0],
            rhythm_weights=args.rhythm_weight,
            snr=args.snr,
            window_jitter_s=args.jitter,
        )
    except ValidationError as e:
        parser.error(str(e))
    trial_set = generate_synthetic(cfg)
    save_trialset(trial_set, args.out)
    print(
        f"wrote {len(trial_set.trials)} trials ({cfg.class_count} classes, {cfg.channels} channels, "
        f"{trial_set.n_samples} samples at {cfg.sampling_rate:g} Hz, seed {cfg.seed}) to {args.out}"
    )
    if cfg.snr == 0:
        print("warning: snr 0 gives chance-level separability", file=sys.stderr)
    return 0


def cmd_train(args, parser) -> int:
    """Train a pipeline and write the model file plus the training summary"""
    run = _run_config(args, parser)
    train = load_trialset(args.train)
    pipeline = train_pipeline(run.method, train, run.pipeline_config())
    save_pipeline(pipeline, args.model)
    _emit(pipeline.summary.model_dump_json(indent=2), args.out)
    return 0


def cmd_eval(args, parser) -> int:
    """Score a model on a test file"""
    if not args.model:
        parser.error("--model or MI_TFCSP_MODEL is required")
    try:
        run = RunConfig(threads=args.threads)
    except ValueError as e:
        parser.error(str(e))
        raise
    pipeline = load_pipeline(args.model)
    report = evaluate(pipeline, load_trialset(args.test), threads=run.threads)
    _emit(report.model_dump_json(indent=2), args.out)
    return 0


def cmd_bench(args, parser) -> int:
    """Relative runtime of the three methods, single-threaded"""
    if args.repeats < 1:
        parser.error("--repeats must be >= 1")
    run = _run_config(args, parser)
    report = run_benchmark(
        load_trialset(args.train),
        load_trialset(args.test),
        methods=[Method(m) for m in args.methods],
        repeats=args.repeats,
        config=run.pipeline_config(),
    )
    _emit(report.model_dump_json(indent=2), args.out)
    return 0 if any(t.error is None for t in report.methods) else 1


def cmd_inspect(args, parser) -> int:
    """Band-energy matrix of one trial as CSV, selection summary on stderr"""
    trial_set = load_trialset(args.input)
    try:
        config = PipelineConfig(
            grid=_grid(args, trial_set.duration_s),
            filter=FilterSpec(order=args.filter_order, low_hz=args.filter_low, high_hz=args.filter_high),
            selection_channels=args.channels,
        )
    except ValueError as e:
        parser.error(str(e))
    result = inspect_trial(trial_set, args.trial, config)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["freq_start"] + [f"{t:g}" for t in result.time_starts])
    for freq, row in zip(result.freq_starts, result.energy):
        writer.writerow([f"{freq:g}"] + [repr(v) for v in row])
    _emit(buffer.getvalue().rstrip("\n"), args.out)

    selection = result.selection
    print(
        f"trial {result.trial_index} (label {result.label}): selected {selection.freq_start:g}-"
        f"{selection.freq_start + config.grid.freq_band_width:g} Hz, {selection.time_start:g}-"
        f"{selection.time_start + config.grid.time_band_width:g} s, energy {selection.energy:.6g}",
        file=sys.stderr,
    )
    return 0


def cmd_study(args, parser) -> int:
    """Kappa per subject for every classifier"""
    if not args.pair:
        parser.error("at least one --pair TRAIN TEST is required")
    run = _run_config(args, parser)
    subjects = [(Path(train).stem, load_trialset(train), load_trialset(test)) for train, test in args.pair]
    report = run_study(
        subjects,
        classifiers=[ClassifierKind(c) for c in args.classifiers],
        method=run.method,
        config=run.pipeline_config(),
        threads=run.threads,
    )
    _emit(report.model_dump_json(indent=2), args.out)
    return 0


def cmd_serve(args, parser) -> int:  # pylint: disable=unused-argument
    """Run the HTTP report service"""
    import uvicorn  # pylint: disable=import-outside-toplevel

    if args.model:
        os.environ["MI_TFCSP_MODEL"] = args.model
    uvicorn.run("mi_tfcsp.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mi-tfcsp", description="Motor imagery EEG decoding with time-frequency CSP")
    parser.add_argument("--log-level", default=os.getenv("MI_TFCSP_LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)
    methods = [m.value for m in Method]
    classifiers = [c.value for c in ClassifierKind]
    threads = int(os.getenv("MI_TFCSP_THREADS", "1"))

    p = sub.add_parser("synth", help="write a synthetic EEGT file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--trials-per-class", type=int, default=40)
    p.add_argument("--snr", type=float, default=2.0)
    p.add_argument("--sampling-rate", type=float, default=250.0)
    p.add_argument("--duration", type=float, default=4.0, help="trial duration in s")
    p.add_argument("--jitter", type=float, default=0.0, help="active window jitter in s")
    p.add_argument("--rhythm", type=float, action="append", help="rhythm frequency in Hz (repeatable)")
    p.add_argument(
        "--rhythm-weight", type=float, action="append", help="amplitude of each rhythm relative to snr (repeatable)"
    )
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train a pipeline")
    p.add_argument("--train", "--in", dest="train", required=True)
    p.add_argument("--model", required=True, help="model file to write")
    p.add_argument("--out", help="training summary JSON (stdout by default)")
    p.add_argument("--method", choices=methods, default=Method.TFCSP.value)
    p.add_argument("--classifier", choices=classifiers, default=ClassifierKind.LDA.value)
    p.add_argument("--features", type=int, default=8)
    _add_grid_flags(p)
    _add_filter_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a test file")
    p.add_argument("--model", default=os.getenv("MI_TFCSP_MODEL"))
    p.add_argument("--test", required=True)
    p.add_argument("--threads", type=int, default=threads)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="relative runtime of tfcsp, fbcsp and tdcsp")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--classifier", choices=classifiers, default=ClassifierKind.LDA.value)
    p.add_argument(
        "--methods", nargs="+", choices=methods, default=[Method.TFCSP.value, Method.FBCSP.value, Method.TDCSP.value]
    )
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--out")
    _add_grid_flags(p)
    _add_filter_flags(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("inspect", help="band-energy matrix of one trial as CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--channels", type=int, nargs="+", help="channels averaged for selection (all by default)")
    p.add_argument("--out")
    _add_grid_flags(p)
    _add_filter_flags(p)
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("study", help="kappa per subject and classifier")
    p.add_argument("--pair", nargs=2, action="append", metavar=("TRAIN", "TEST"))
    p.add_argument("--method", choices=methods, default=Method.TFCSP.value)
    p.add_argument("--classifiers", nargs="+", choices=classifiers, default=classifiers)
    p.add_argument("--threads", type=int, default=threads)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--out")
    _add_grid_flags(p)
    _add_filter_flags(p)
    p.set_defaults(handler=cmd_study)

    p = sub.add_parser("serve", help="run the HTTP report service")
    p.add_argument("--model", default=os.getenv("MI_TFCSP_MODEL"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code"""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        return args.handler(args, parser)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except (MiTfcspError, OSError) as e:
        logger.error("Command failed: %s", str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
