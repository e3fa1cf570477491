"""Command-line entry point exposing the full pipeline, stage by stage.

Every flag can also be set through an environment variable with the
DRAWAGE_ prefix (flag --per-group becomes DRAWAGE_PER_GROUP). Exit codes:
0 success, 2 usage or config errors, 3 data errors, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import elastic, pipeline, report, synth
from .errors import DataError, DrawageError, NumericError, UsageError
from .features import dump_channels_csv, extract_channels
from .ingest import load_sessions, make_split, parse_session
from .selection import SelectionResult
from .util import read_json, write_json

log = logging.getLogger(__name__)

ENV_PREFIX = "DRAWAGE_"


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        return json.dumps(payload, ensure_ascii=False)


def _configure_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper()))


def _opt(parser: argparse.ArgumentParser, flag: str, *, required: bool = False,
         type=str, default=None, **kwargs) -> None:
    """add_argument with an environment fallback (DRAWAGE_<FLAG>)."""
    env = os.environ.get(ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper())
    if env is not None:
        default = type(env) if type is not None else env
        required = False
    parser.add_argument(flag, required=required, type=type, default=default, **kwargs)


def _add_jobs(parser: argparse.ArgumentParser) -> None:
    _opt(parser, "--jobs", type=int, default=os.cpu_count(),
         help="worker cap for parallel training/evaluation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drawage",
        description="Detect children's age group from stylus drawing session logs.",
    )
    parser.add_argument(
        "--version", action="store_true", help="print version info as JSON and exit"
    )
    _opt(parser, "--log-level", default="info",
         choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _opt(p, "--out", required=True, help="target directory")
    _opt(p, "--per-group", type=int, default=20)
    _opt(p, "--seed", type=int, default=0)
    _opt(p, "--sigma", type=float, default=1.0)

    p = sub.add_parser("ingest-check", help="validate canonical session files")
    p.add_argument("paths", nargs="+", help="session CSV files or directories")

    p = sub.add_parser("extract", help="dump the 25 channels of each session as CSV")
    _opt(p, "--data", required=True)
    _opt(p, "--out", required=True)

    p = sub.add_parser("split", help="build a stratified child-level split plan")
    _opt(p, "--data", required=True)
    _opt(p, "--seed", type=int, default=0)
    _opt(p, "--out", required=True)

    p = sub.add_parser("select", help="run channel selection on train/validation")
    _opt(p, "--config", required=True)
    _opt(p, "--out", required=True)
    _add_jobs(p)

    p = sub.add_parser("train", help="train the final model on the training part")
    _opt(p, "--config", required=True)
    _opt(p, "--selection-file", help="reuse a persisted selection result")
    _opt(p, "--out", required=True)
    _add_jobs(p)

    p = sub.add_parser("evaluate", help="run the full protocol and write a report")
    _opt(p, "--config", required=True)
    _opt(p, "--out", required=True, help="artifact directory")
    _opt(p, "--seed", type=int, help="override the config seed")
    _add_jobs(p)

    p = sub.add_parser("predict", help="classify one session with a saved model")
    _opt(p, "--model", required=True)
    _opt(p, "--session", required=True)

    p = sub.add_parser("report", help="render report/selection JSON to CSV and figures")
    _opt(p, "--report", dest="report_path")
    _opt(p, "--selection", dest="selection_path")
    _opt(p, "--out", required=True)

    return parser


def _cmd_synth(args) -> int:
    cfg = synth.SynthConfig(per_group=args.per_group, seed=args.seed, sigma=args.sigma)
    paths = synth.write_corpus(synth.generate_corpus(cfg), args.out)
    log.info("wrote %d sessions to %s", len(paths), args.out)
    return 0


def _cmd_ingest_check(args) -> int:
    files: list[Path] = []
    for p in args.paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not files:
        raise DataError("no session files found")
    failures = 0
    for f in files:
        try:
            session = parse_session(f)
            log.info("ok %s (%d samples, group %d)", f, len(session.samples), session.group)
        except DrawageError as exc:
            failures += 1
            log.error("invalid %s: %s", f, exc)
    if failures:
        raise DataError(f"{failures} of {len(files)} session files invalid")
    return 0


def _cmd_extract(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for session in load_sessions(args.data):
        cs = extract_channels(session)
        dump_channels_csv(cs, out / f"{session.child_id}.{session.session_index}.channels.csv")
    return 0


def _cmd_split(args) -> int:
    plan = make_split(load_sessions(args.data), args.seed)
    write_json(args.out, plan.to_dict())
    return 0


def _cmd_select(args) -> int:
    resolved = pipeline.resolve_config(read_json(args.config))
    prep = pipeline.prepare(resolved)
    result = pipeline.select_channels(prep, resolved, jobs=args.jobs)
    doc = result.to_dict()
    doc["config_fingerprint"] = pipeline.config_fingerprint(resolved)
    write_json(args.out, doc)
    return 0


def _cmd_train(args) -> int:
    resolved = pipeline.resolve_config(read_json(args.config))
    prep = pipeline.prepare(resolved)
    if args.selection_file:
        channels = SelectionResult.from_dict(read_json(args.selection_file)).selected
    else:
        channels = pipeline.select_channels(prep, resolved, jobs=args.jobs).selected
    model = pipeline.train_final(prep, resolved, channels, jobs=args.jobs)
    doc = pipeline.model_to_dict(model)
    doc["config_fingerprint"] = pipeline.config_fingerprint(resolved)
    write_json(args.out, doc)
    return 0


def _cmd_evaluate(args) -> int:
    config = read_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    pipeline.run_experiment(config, out_dir=args.out, jobs=args.jobs)
    return 0


def _cmd_predict(args) -> int:
    prediction = pipeline.predict(args.model, args.session)
    sys.stdout.write(json.dumps(prediction.to_dict(), sort_keys=True) + "\n")
    return 0


def _cmd_report(args) -> int:
    if not args.report_path and not args.selection_path:
        raise UsageError("report needs --report and/or --selection")
    written: list[Path] = []
    if args.report_path:
        written += report.write_report_outputs(read_json(args.report_path), args.out)
    if args.selection_path:
        written += report.write_selection_outputs(read_json(args.selection_path), args.out)
    for path in written:
        log.info("wrote %s", path)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest-check": _cmd_ingest_check,
    "extract": _cmd_extract,
    "split": _cmd_split,
    "select": _cmd_select,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    if args.version:
        sys.stdout.write(json.dumps({
            "package": pipeline.PACKAGE_VERSION,
            "model_format": elastic.MODEL_VERSION,
        }, sort_keys=True) + "\n")
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        log.error("usage error: %s", exc)
        return exc.exit_code
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return exc.exit_code
    except DataError as exc:
        log.error("data error: %s", exc)
        return exc.exit_code
    except DrawageError as exc:
        log.error("error: %s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
