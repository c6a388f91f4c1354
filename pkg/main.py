import os
import sys
import logging
import argparse
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape

from commands import COMMANDS, EXIT_USAGE, run_command
from errors import ConfigError
from run_config import MODE_SETS, build_run_config


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code (64) instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def float_list(text):
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def add_common(parser):
    parser.add_argument("--config", type=str, default=None, help="Config file with CFLOW_* keys (dotenv syntax). Defaults to $CFLOW_CONFIG.")
    parser.add_argument("--max-pixels", type=int, default=None, help="Largest accepted flow map (width*height).")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging (every skipped frame).")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only warnings and errors.")


def add_scoring(parser, evaluate=False):
    parser.add_argument("--tracks", type=str, help="Track JSONL file.")
    parser.add_argument("--flows", type=str, help="Directory that flow_ref paths are relative to.")
    parser.add_argument("--out", type=str, help="Output directory.")
    parser.add_argument("--k", type=int, default=None, help="Window length in frames before t0 (default 5).")
    parser.add_argument("--min-samples", type=int, default=None, help="Minimum samples in a window (default 3).")
    parser.add_argument("--tau-d", type=float, default=None, help="Diagonal floor in px (default 1.0).")
    parser.add_argument("--tau-u", type=float, default=None, help="Flow scale floor in px/frame (default 0.1).")
    parser.add_argument("--tau-eps", type=float, default=None, help="Normalized residual floor (default 1e-3).")
    parser.add_argument("--mode", choices=sorted(MODE_SETS), default=None, help="Which boxes fill the window (default both: gt and pred).")
    parser.add_argument("--fill-gaps", action=argparse.BooleanOptionalAction, default=None, help="Hypothesize boxes for missed detections inside the window.")
    parser.add_argument("--iou-threshold", type=float, default=None, help="IoU for a prediction to count as TP (default 0.5).")
    parser.add_argument("--partial-windows", action=argparse.BooleanOptionalAction, default=None, help="Also score frames whose window starts before the track.")
    parser.add_argument("--jobs", type=int, default=None, help="Tracks scored in parallel (output order does not depend on it).")
    if evaluate:
        parser.add_argument("--xi", type=float, action="append", default=None, help="Score threshold; repeatable (default 0.1 and 0.3).")
        parser.add_argument("--ttc-bins", type=float_list, default=None, help="Comma-separated TTC bin edges in s (default 0,1,2,3,4,inf).")
        parser.add_argument("--split-fn", action=argparse.BooleanOptionalAction, default=None, help="Report FN_POOR and FN_MISS separately.")
        parser.add_argument("--plots", action=argparse.BooleanOptionalAction, default=None, help="Also write SVG plots.")
    add_common(parser)


def build_parser():
    parser = CliParser(description="c-flow credibility scores for pedestrian detections")
    subparsers = parser.add_subparsers(dest="subcommand", required=True, parser_class=CliParser)

    add_scoring(subparsers.add_parser("score", help="Score every frame and write frame_scores.csv."))
    add_scoring(subparsers.add_parser("eval", help="Score, then sweep thresholds over TTC bins and correlate."), evaluate=True)

    synth = subparsers.add_parser("synth", help="Generate a synthetic corpus from a scenario file.")
    synth.add_argument("--scenarios", type=str, help="Scenario YAML file.")
    synth.add_argument("--out", type=str, help="Corpus directory.")
    synth.add_argument("--seed", type=int, default=None, help="Overrides scenario seeds (scenario i gets seed+i).")
    synth.add_argument("--k", type=int, default=None, help="Window length the scenarios must support (default 5).")
    synth.add_argument("--force", action="store_true", default=None, help="Overwrite a non-empty corpus directory.")
    add_common(synth)

    flo = subparsers.add_parser("flo", help="Print the header and summary statistics of a .flo file.")
    flo.add_argument("path", type=str, help="The .flo file.")
    add_common(flo)
    return parser


def setup_logging(console, verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, markup=False)],
        force=True,
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    load_dotenv()
    console = Console(stderr=True)
    setup_logging(console, args.verbose, args.quiet)

    cli_values = {key: value for key, value in vars(args).items() if key not in ("config", "verbose", "quiet")}
    config_path = args.config or os.environ.get("CFLOW_CONFIG")
    try:
        if config_path and not os.path.isfile(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        config = build_run_config(args.subcommand, cli_values, config_path)
    except ConfigError as e:
        console.print(f"[bold red]Usage error:[/bold red] {escape(str(e))}")
        return EXIT_USAGE

    return run_command(COMMANDS[args.subcommand], config, console)


if __name__ == "__main__":
    sys.exit(main())
