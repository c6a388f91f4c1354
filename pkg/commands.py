"""Subcommand implementations. Each takes a RunConfig and a Console and returns an exit code."""

import logging
import os
from dataclasses import replace

from rich.console import Console
from rich.markup import escape

import reporting
from core.evaluation import (agreement, critical_summary, heatmap, histogram, paired, pearson, roc_auc,
                             score_tracks, sweep)
from core.flow_io import flow_summary, read_flo
from core.hypothesizer import WindowMode
from core.synth import load_scenarios, write_corpus
from core.tracks import load_tracks
from errors import (CFlowError, ConfigError, EvalError, FloFormatError, SpecError, TrackError)
from flow_store import FlowStore
from run_config import RunConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64
EXIT_IO = 74

# Score column used for the single-score analyses, by first requested mode
PRIMARY_SCORE = {WindowMode.GT: "gt", WindowMode.PRED: "hyp", WindowMode.MIXED: "mixed"}


class MissingInput(FileNotFoundError):
    pass


def _require(path, what, directory=False):
    if path is None:
        raise ConfigError(f"{what} is required")
    exists = os.path.isdir(path) if directory else os.path.isfile(path)
    if not exists:
        raise MissingInput(f"{what} not found: {path}")
    return path


def _require_out(config: RunConfig):
    if config.out is None:
        raise ConfigError("--out is required")
    os.makedirs(config.out, exist_ok=True)
    return config.out


def run_command(command, config: RunConfig, console: Console) -> int:
    """Runs a subcommand and maps exceptions to exit codes."""
    try:
        return command(config, console)
    except ConfigError as e:
        console.print(f"[bold red]Usage error:[/bold red] {escape(str(e))}")
        return EXIT_USAGE
    except FloFormatError as e:
        console.print(f"[bold red]Bad flow file ({e.cause}):[/bold red] {escape(str(e))}")
        return EXIT_FATAL
    except TrackError as e:
        console.print(f"[bold red]Bad track file ({e.cause}):[/bold red] {escape(str(e))}")
        return EXIT_FATAL
    except SpecError as e:
        console.print(f"[bold red]Bad scenario:[/bold red] {escape(str(e))}")
        return EXIT_FATAL
    except CFlowError as e:
        console.print(f"[bold red]Error ({e.cause}):[/bold red] {escape(str(e))}")
        return EXIT_FATAL
    except OSError as e:
        console.print(f"[bold red]I/O error:[/bold red] {escape(str(e))}")
        return EXIT_IO


def _score(config: RunConfig, console: Console):
    _require(config.tracks, "--tracks")
    _require(config.flows, "--flows", directory=True)
    out = _require_out(config)

    tracks = load_tracks(config.tracks)
    store = FlowStore(config.flows, max_pixels=config.max_pixels)
    console.print(f"[bold green] Tracks: {len(tracks)}[/bold green] [dim]({escape(config.tracks)})[/dim]")

    with console.status("[yellow]Scoring frames...[/yellow]"):
        scores, skips = score_tracks(
            tracks, store, config.params, config.modes,
            fill_gaps=config.fill_gaps,
            iou_threshold=config.iou_threshold,
            full_window=not config.partial_windows,
            jobs=config.jobs,
        )

    reporting.write_frame_scores(os.path.join(out, "frame_scores.csv"), scores)
    reporting.write_run_config(out, config.to_dict())
    console.print(f"[bold green] Scored frames: {len(scores)}[/bold green] "
                  f"[dim](unscored: {len(skips.unscored)})[/dim]")
    if skips.entries:
        console.print(reporting.skip_table(skips))
    return scores, skips


def _exit_for(skips):
    if skips.errors:
        log.warning("%d frame(s) skipped with errors; run is partial", len(skips.errors))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_score(config: RunConfig, console: Console) -> int:
    _, skips = _score(config, console)
    return _exit_for(skips)


def cmd_eval(config: RunConfig, console: Console) -> int:
    scores, skips = _score(config, console)
    out = config.out
    sweep_config = config.sweep_config
    primary = PRIMARY_SCORE[config.modes[0]]

    sweep_rows = sweep(scores, sweep_config, which=primary)
    reporting.write_sweep(os.path.join(out, "sweep.csv"), sweep_rows)

    histograms = {}
    for which in ("gt", "hyp", "mixed"):
        if any(s.score(which) is not None for s in scores):
            histograms[which] = histogram(scores, which, split_fn=config.split_fn)
            reporting.write_histogram(os.path.join(out, f"histogram_{which}.csv"), histograms[which])

    heatmap_rows = heatmap(scores, sweep_config, which=primary)
    reporting.write_heatmap(os.path.join(out, "heatmap.csv"), heatmap_rows)

    if "gt" in histograms and "hyp" in histograms:
        reporting.write_correlation(os.path.join(out, "correlation.txt"), _correlation(scores, sweep_config))

    console.print(reporting.sweep_table(sweep_rows))
    console.print(reporting.critical_table(critical_summary(scores, sweep_config, which=primary)))

    if config.plots:
        reporting.render_plots(out, histograms.get(primary, []), heatmap_rows, sweep_rows)
        console.print("[dim]Plots written: histogram.svg, heatmap.svg, sweep.svg[/dim]")
    return _exit_for(skips)


def _correlation(scores, sweep_config):
    entries = []
    for key, fn_only in (("rho", False), ("rho_fn", True)):
        xs, ys = paired(scores, fn_only=fn_only)
        try:
            entries.append((key, pearson(xs, ys)))
        except EvalError as e:
            log.info("%s undefined: %s", key, e)
            entries.append((key, None))
    entries.append(("n", len(paired(scores)[0])))
    for xi in sweep_config.thresholds:
        entries.append((f"agreement_xi{xi:g}", agreement(scores, xi)))
    entries.append(("auc_gt", roc_auc(scores, "gt")))
    entries.append(("auc_hyp", roc_auc(scores, "hyp")))
    return entries


def cmd_synth(config: RunConfig, console: Console) -> int:
    _require(config.scenarios, "--scenarios")
    if config.out is None:
        raise ConfigError("--out is required")

    specs = load_scenarios(config.scenarios)
    if config.seed is not None:
        specs = [replace(spec, seed=config.seed + i) for i, spec in enumerate(specs)]

    with console.status("[yellow]Generating scenarios...[/yellow]"):
        tracks = write_corpus(specs, config.out, force=config.force, k=config.k)
    reporting.write_run_config(config.out, config.to_dict())

    frames = sum(len(t.frames) for t in tracks)
    console.print(f"[bold green] Wrote {len(tracks)} scenario(s), {frames} frames to {escape(config.out)}[/bold green]")
    console.print(f"[dim]Score with: --tracks {os.path.join(config.out, 'tracks.jsonl')} "
                  f"--flows {os.path.join(config.out, 'flows')}[/dim]")
    return EXIT_OK


def cmd_flo(config: RunConfig, console: Console) -> int:
    path = _require(config.path, ".flo path")
    flow = read_flo(path, max_pixels=config.max_pixels)
    console.print(reporting.flo_table(path, flow_summary(flow)))
    return EXIT_OK


COMMANDS = {
    "score": cmd_score,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "flo": cmd_flo,
}
