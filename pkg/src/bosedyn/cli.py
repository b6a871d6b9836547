"""Command-line entry point.

    bosedyn <command> [--config FILE] [--set section.key=value ...] [--out DIR]
    bosedyn plotdata RUN_DIR --series NAME [--dest FILE]
    bosedyn plot RUN_DIR --series NAME [--png FILE]

Exit codes: 0 all checks passed, 1 validation failure, 2 divergence, 3 resource cap.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import COMMANDS, load_config
from .errors import BosedynError

log = logging.getLogger("bosedyn")

# series whose natural axes are log-log
LOG_SERIES = {"norm_error_vs_N", "reduced_density_error", "kernel_scaling", "dynamics"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bosedyn", description="Mean-field and Bogoliubov dynamics of bosons.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration value (repeatable)")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p = sub.add_parser("plotdata", help="write the CSV of one output series of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--series", required=True)
    p.add_argument("--dest", help="output CSV (default: RUN_DIR/plotdata_SERIES.csv)")
    p = sub.add_parser("plot", help="render one output series of a finished run as PNG")
    p.add_argument("run_dir")
    p.add_argument("--series", required=True)
    p.add_argument("--png", help="output image (default: RUN_DIR/SERIES.png)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    from . import runner

    try:
        if args.command in ("plotdata", "plot"):
            record = runner.RunRecord.load(args.run_dir)
            if args.command == "plotdata":
                print(runner.emit_plotdata(record, args.series, args.dest))
                return 0
            from .plotting import plot_series

            data = runner.emit_plotdata(record, args.series)
            png = args.png or Path(args.run_dir) / f"{args.series}.png"
            logxy = args.series in LOG_SERIES
            print(plot_series(data, png, logx=logxy, logy=logxy, title=args.series))
            return 0
        cfg = load_config(args.config, args.set, command=args.command, output_dir=args.out)
    except BosedynError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 1
    record = runner.dispatch(cfg)
    print(json.dumps({"run_id": record.run_id, "run_dir": record.run_dir, "passed": record.passed,
                      "exit_code": record.exit_code, "error": record.error}))
    return record.exit_code


if __name__ == "__main__":
    sys.exit(main())
