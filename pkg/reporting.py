import csv
import json
import logging
import os

from rich.table import Table

from core.evaluation import UNBINNED

log = logging.getLogger(__name__)

FRAME_SCORE_HEADER = ["track_id", "frame_index", "ttc", "critical", "outcome", "score_gt", "score_hyp",
                      "score_mixed", "epsilon", "delta_d", "saturated"]


def fmt(value):
    """Stable text form for CSV cells: repr for floats, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(cell) for cell in row])
    log.debug("wrote %s", path)


def write_frame_scores(path, scores):
    rows = [
        (s.track_id, s.frame_index, s.ttc, s.critical, s.outcome.value, s.score_gt, s.score_hyp,
         s.score_mixed, s.epsilon, s.delta_d, s.saturated)
        for s in scores
    ]
    write_csv(path, FRAME_SCORE_HEADER, rows)


def write_sweep(path, rows):
    write_csv(path, ["ttc_bin", "xi", "outcome", "n", "flagged", "percentage"], rows)


def write_histogram(path, rows):
    write_csv(path, ["bin_low", "outcome", "count"], rows)


def write_heatmap(path, rows):
    write_csv(path, ["score_bin", "ttc_bin", "count"], rows)


def write_correlation(path, entries):
    """key=value lines; missing values are written as 'undefined'."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in entries:
            f.write(f"{key}={'undefined' if value is None else fmt(value)}\n")


def write_run_config(out_dir, config_dict):
    with open(os.path.join(out_dir, "run_config.json"), "w", encoding="utf-8", newline="\n") as f:
        json.dump(config_dict, f, indent=2, sort_keys=True)
        f.write("\n")


# --- console ---

def _pct(value):
    return "-" if value is None else f"{value:.1f}%"


def sweep_table(rows, title="FN identification / TP false alarms (score <= xi)"):
    table = Table(title=title)
    for column in ("TTC bin", "xi", "outcome", "n", "flagged", "%"):
        table.add_column(column, justify="right" if column in ("n", "flagged", "%") else "left")
    for row in rows:
        if row.n == 0 and row.ttc_bin == UNBINNED:
            continue
        table.add_row(row.ttc_bin, f"{row.xi:g}", row.outcome, str(row.n), str(row.flagged), _pct(row.percentage))
    return table


def critical_table(rows):
    table = Table(title="Critical (TTC < 2s) vs non-critical")
    for column in ("xi", "zone", "FN n", "FN identified", "TP n", "TP flagged"):
        table.add_column(column)
    for row in rows:
        table.add_row(f"{row['xi']:g}", row["zone"], str(row["fn_n"]), _pct(row["fn_identified"]),
                      str(row["tp_n"]), _pct(row["tp_flagged"]))
    return table


def skip_table(skips):
    table = Table(title="Skipped frames by cause")
    table.add_column("cause")
    table.add_column("count", justify="right")
    table.add_column("kind")
    expected = {entry.cause: entry.expected for entry in skips.entries}
    for cause, count in sorted(skips.counts().items()):
        table.add_row(cause, str(count), "expected" if expected[cause] else "[red]error[/red]")
    return table


def flo_table(path, summary):
    table = Table(title=str(path))
    table.add_column("field")
    table.add_column("value", justify="right")
    for key, value in summary.items():
        table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    return table


# --- plots (cosmetic; the CSVs are the contract) ---

def render_plots(out_dir, histogram_rows, heatmap_rows, sweep_rows):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # Fixed hash salt keeps SVG ids stable between runs
    plt.rcParams["svg.hashsalt"] = "cflow"

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for outcome in sorted({r[1] for r in histogram_rows}):
        xs = [r[0] for r in histogram_rows if r[1] == outcome]
        ys = [r[2] for r in histogram_rows if r[1] == outcome]
        ax.bar(xs, ys, width=0.09, align="edge", alpha=0.6, label=outcome)
    ax.set_xlabel("c-flow score")
    ax.set_ylabel("frames")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "histogram.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ttc_labels = list(dict.fromkeys(r[1] for r in heatmap_rows))
    if ttc_labels:
        ax.scatter([r[0] + 0.05 for r in heatmap_rows], [ttc_labels.index(r[1]) for r in heatmap_rows],
                   s=[20 + 10 * r[2] for r in heatmap_rows])
        ax.set_yticks(range(len(ttc_labels)), ttc_labels)
    ax.set_xlabel("c-flow score")
    ax.set_ylabel("TTC bin [s]")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "heatmap.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    bars = [r for r in sweep_rows if r.percentage is not None]
    labels = [f"{r.ttc_bin}\n{r.outcome} xi={r.xi:g}" for r in bars]
    ax.bar(range(len(bars)), [r.percentage for r in bars])
    ax.set_xticks(range(len(bars)), labels, rotation=90, fontsize=6)
    ax.set_ylabel("% flagged")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "sweep.svg"))
    plt.close(fig)
