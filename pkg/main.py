import argparse
import sys
from datetime import datetime
from pathlib import Path

from middleware.error_handler import CommandErrorHandler
from request.run_config import render_config_help
from routes.commands import COMMANDS
from services.log import Log

DESCRIPTION = (
    "Iteration-cycle latency characterization and anomaly detection for LLM inference traces.\n\n"
    "Exit codes: 0 success, 1 input or configuration error, 2 monitor emitted alerts."
)


def build_parser() -> argparse.ArgumentParser:
    """
    Build the command-line parser.

    Returns
    -------
    argparse.ArgumentParser
        Parser with one subcommand per pipeline stage; ``--help`` ends with
        every configuration key and its default.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML configuration file")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration key (dotted path); repeatable, applied after --config",
    )
    common.add_argument("--seed", type=int, default=None, help="Global seed")
    common.add_argument("--output", type=Path, default=None, help="Output directory")

    parser = argparse.ArgumentParser(
        prog="itersentinel",
        description=DESCRIPTION,
        epilog=render_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(
            name,
            parents=[common],
            help=help_text,
            description=help_text,
            epilog=render_config_help(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )

    ingest = add("ingest", "Validate, calibrate and merge trace files")
    ingest.add_argument("traces", nargs="+", type=Path)
    ingest.add_argument("--beacons", type=Path, default=None, help="Sidecar file of clock beacons")
    ingest.add_argument("--out", type=Path, default=None, help="Merged trace (default <output>/merged.json.gz)")
    ingest.add_argument("--stream-out", type=Path, default=None, help="Also write cycle records as NDJSON")

    train = add("train", "Train the baseline latency model on a trace")
    train.add_argument("trace", type=Path)
    train.add_argument("--model-out", type=Path, default=None, help="Model file (default <output>/model.json)")
    train.add_argument("--test-fraction", type=float, default=0.2)
    train.add_argument("--split", choices=("chronological", "unseen"), default="chronological")
    train.add_argument("--ablation", action="store_true", help="Also compare feature sets and model families")

    monitor = add("monitor", "Monitor a trace, or NDJSON cycle records on stdin ('-'), for anomalies")
    monitor.add_argument("source", help="Trace path or '-' for stdin")
    monitor.add_argument("--model", type=Path, required=True)
    monitor.add_argument("--alerts", type=Path, default=None, help="Alert NDJSON file (default stdout)")
    monitor.add_argument("--deep-dive", action="store_true", help="Write a full-fidelity slice per episode")

    diagnose = add("diagnose", "Rank root-cause suspects for one alert episode")
    diagnose.add_argument("trace", type=Path)
    diagnose.add_argument("--model", type=Path, required=True)
    diagnose.add_argument("--alert", type=int, required=True, help="Episode id")
    diagnose.add_argument("--report-out", type=Path, default=None)

    simulate = add("simulate", "Generate a labeled benchmark run directory from a suite file")
    simulate.add_argument("suite", type=Path)

    evaluate = add("evaluate", "Run the benchmark over a simulated run directory")
    evaluate.add_argument("run_dir", type=Path)
    evaluate.add_argument("--no-ablation", action="store_true")

    report = add("report", "Print the summary tables of an evaluated run directory")
    report.add_argument("run_dir", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = CommandErrorHandler()
    try:
        return handler.dispatch(args.command, COMMANDS[args.command], args)
    finally:
        Log.debug("Process finished at: " + str(datetime.now()))


if __name__ == "__main__":
    sys.exit(main())
