"""Per-track scoring and the TP/FN analyses: threshold sweeps over TTC bins, histograms,
heatmaps, GT-vs-hypothesized correlation and ROC-AUC."""

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import pearsonr
from sklearn.metrics import roc_auc_score

from core.cflow import CFlowParams, cflow
from core.hypothesizer import WindowMode, fill_window
from core.tracks import DEFAULT_IOU_THRESHOLD, Outcome, classify_frame, is_critical
from errors import EXPECTED_SKIPS, CFlowError, ConfigError, DegenerateVariance, EmptyInput, InsufficientWindow

log = logging.getLogger(__name__)

UNBINNED = "unbinned"
SCORE_FIELDS = {"gt": "score_gt", "hyp": "score_hyp", "mixed": "score_mixed"}


@dataclass(frozen=True)
class FrameScore:
    track_id: str
    frame_index: int
    ttc: Optional[float]
    outcome: Outcome
    score_gt: Optional[float] = None
    score_hyp: Optional[float] = None
    score_mixed: Optional[float] = None
    epsilon: Optional[float] = None
    delta_d: Optional[float] = None
    saturated: Optional[bool] = None
    flags: tuple = ()

    def __post_init__(self):
        present = [s for s in (self.score_gt, self.score_hyp, self.score_mixed) if s is not None]
        if not present:
            raise ValueError(f"frame {self.track_id}/{self.frame_index} carries no score")
        if any(not 0.0 <= s <= 1.0 for s in present):
            raise ValueError(f"scores must lie in [0, 1], got {present}")

    @property
    def critical(self):
        return is_critical(self.ttc)

    def score(self, which):
        return getattr(self, SCORE_FIELDS[which])


@dataclass(frozen=True)
class SweepConfig:
    thresholds: tuple = (0.1, 0.3)
    ttc_bin_edges: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, math.inf)
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    split_fn: bool = False

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(x) for x in self.thresholds))
        object.__setattr__(self, "ttc_bin_edges", tuple(float(x) for x in self.ttc_bin_edges))

    def validate(self):
        xs = self.thresholds
        if not xs or any(not 0 < x < 1 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError(f"thresholds must lie in (0, 1) and increase strictly, got {list(xs)}")
        edges = self.ttc_bin_edges
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError(f"TTC bin edges must increase strictly, got {list(edges)}")
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        return self


class Skip(NamedTuple):
    track_id: str
    frame_index: int
    mode: str
    cause: str
    message: str
    expected: bool


@dataclass
class SkipLog:
    entries: list = field(default_factory=list)
    unscored: list = field(default_factory=list)  # (track_id, frame_index) without any score

    def add(self, track_id, frame_index, mode, error: CFlowError):
        self.entries.append(Skip(track_id, frame_index, mode, error.cause, str(error),
                                 isinstance(error, EXPECTED_SKIPS)))

    def extend(self, other):
        self.entries.extend(other.entries)
        self.unscored.extend(other.unscored)

    def counts(self):
        return Counter(entry.cause for entry in self.entries)

    @property
    def errors(self):
        return [entry for entry in self.entries if not entry.expected]


def _score_track(track, flow_store, params, modes, fill_gaps, iou_threshold, full_window):
    scores, skips = [], SkipLog()
    if not track.frames:
        return scores, skips
    first = track.frames[0].frame_index

    for frame in track.frames:
        if frame.gt_box is None:
            continue
        t0 = frame.frame_index
        if full_window and t0 - params.k < first:
            error = InsufficientWindow(f"window [{t0 - params.k}, {t0}] starts before the track")
            skips.add(track.track_id, t0, "all", error.at(track.track_id, t0))
            skips.unscored.append((track.track_id, t0))
            continue

        results = {}
        for mode in modes:
            try:
                window = fill_window(track, t0, mode, params, flow_store, fill_gaps=fill_gaps,
                                     iou_threshold=iou_threshold)
                results[mode] = cflow(window, params, t0)
            except CFlowError as e:
                skips.add(track.track_id, t0, mode.value, e.at(track.track_id, t0))

        if not results:
            skips.unscored.append((track.track_id, t0))
            continue

        gt = results.get(WindowMode.GT)
        flags = tuple(f"saturated_{m.value}" for m, r in results.items() if r.saturated)
        scores.append(FrameScore(
            track_id=track.track_id,
            frame_index=t0,
            ttc=frame.ttc,
            outcome=classify_frame(frame.gt_box, frame.pred_box, iou_threshold),
            score_gt=gt.score if gt else None,
            score_hyp=results[WindowMode.PRED].score if WindowMode.PRED in results else None,
            score_mixed=results[WindowMode.MIXED].score if WindowMode.MIXED in results else None,
            epsilon=gt.epsilon if gt else None,
            delta_d=gt.delta_d if gt else None,
            saturated=gt.saturated if gt else None,
            flags=flags,
        ))
    return scores, skips


def score_tracks(tracks, flow_store, params: CFlowParams = CFlowParams(), modes=(WindowMode.GT, WindowMode.PRED), *,
                 fill_gaps=False, iou_threshold=DEFAULT_IOU_THRESHOLD, full_window=True, jobs=1):
    """Scores every GT frame with a sufficient window. Returns (scores, SkipLog).

    Tracks may be processed in parallel; the output order follows the input order.
    """
    modes = [WindowMode(m) for m in modes]

    def work(track):
        return _score_track(track, flow_store, params, modes, fill_gaps, iou_threshold, full_window)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_track = list(pool.map(work, tracks))
    else:
        per_track = [work(track) for track in tracks]

    scores, skips = [], SkipLog()
    for track_scores, track_skips in per_track:
        scores.extend(track_scores)
        skips.extend(track_skips)
    for entry in skips.entries:
        level = logging.DEBUG if entry.expected else logging.WARNING
        log.log(level, "skip track=%s frame=%s mode=%s cause=%s: %s",
                entry.track_id, entry.frame_index, entry.mode, entry.cause, entry.message)
    expected = [entry for entry in skips.entries if entry.expected]
    for cause, count in Counter(entry.cause for entry in expected).items():
        first = next(entry for entry in expected if entry.cause == cause)
        log.info("%d skip(s) with cause=%s, first at track=%s frame=%s (use -v for all)",
                 count, cause, first.track_id, first.frame_index)
    return scores, skips


# --- binning ---

def _edge_label(x):
    return "inf" if math.isinf(x) else f"{x:g}"


def ttc_bin_labels(edges):
    labels = []
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        opening = "[" if i == 0 else "("
        labels.append(f"{opening}{_edge_label(lo)},{_edge_label(hi)}]")
    return labels


def ttc_bin(ttc, edges) -> str:
    """Label of the (lo, hi] bin holding ttc; the first bin also holds its lower edge."""
    if ttc is None:
        return UNBINNED
    labels = ttc_bin_labels(edges)
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        if lo < ttc <= hi or (i == 0 and ttc == lo):
            return labels[i]
    return UNBINNED


def score_bin(score, n_bins):
    return min(int(math.floor(score * n_bins)), n_bins - 1)


def _n_bins(bin_width):
    n_bins = round(1.0 / bin_width)
    if n_bins < 1 or abs(n_bins * bin_width - 1.0) > 1e-9:
        raise ConfigError(f"bin width must divide [0, 1] evenly, got {bin_width}")
    return n_bins


def _outcome_label(outcome: Outcome, split_fn):
    return outcome.value if split_fn else outcome.merged()


def _outcome_order(split_fn):
    return ["TP", "FN_POOR", "FN_MISS"] if split_fn else ["TP", "FN"]


# --- analyses ---

class SweepRow(NamedTuple):
    ttc_bin: str
    xi: float
    outcome: str
    n: int
    flagged: int
    percentage: Optional[float]


def sweep(scores, config: SweepConfig = SweepConfig(), which="gt") -> list:
    """Percentage of frames per (TTC bin, threshold, outcome) with score <= threshold."""
    scored = [s for s in scores if s.score(which) is not None]
    if not scored:
        raise EmptyInput("no scored frames to sweep")

    bins = ttc_bin_labels(config.ttc_bin_edges) + [UNBINNED]
    outcomes = _outcome_order(config.split_fn)
    groups = {}
    for s in scored:
        key = (ttc_bin(s.ttc, config.ttc_bin_edges), _outcome_label(s.outcome, config.split_fn))
        groups.setdefault(key, []).append(s.score(which))

    rows = []
    for label in bins:
        for xi in config.thresholds:
            for outcome in outcomes:
                values = groups.get((label, outcome), [])
                flagged = sum(1 for v in values if v <= xi)
                percentage = 100.0 * flagged / len(values) if values else None
                rows.append(SweepRow(label, xi, outcome, len(values), flagged, percentage))
    return rows


def histogram(scores, which="gt", bin_width=0.1, split_fn=False) -> list:
    """(bin_low, outcome, count) over fixed-width score bins; the last bin is closed."""
    n_bins = _n_bins(bin_width)
    counts = Counter()
    for s in scores:
        value = s.score(which)
        if value is None:
            continue
        counts[(score_bin(value, n_bins), _outcome_label(s.outcome, split_fn))] += 1

    present = {outcome for _, outcome in counts}
    order = [o for o in _outcome_order(split_fn) if o in present] + sorted(present - set(_outcome_order(split_fn)))
    return [(i / n_bins, outcome, counts[(i, outcome)]) for i in range(n_bins) for outcome in order]


def heatmap(scores, config: SweepConfig = SweepConfig(), which="gt", bin_width=0.1) -> list:
    """(score_bin_low, ttc_bin, count) for every non-empty cell."""
    n_bins = _n_bins(bin_width)
    counts = Counter()
    for s in scores:
        value = s.score(which)
        if value is not None:
            counts[(score_bin(value, n_bins), ttc_bin(s.ttc, config.ttc_bin_edges))] += 1
    ttc_order = ttc_bin_labels(config.ttc_bin_edges) + [UNBINNED]
    return [
        (i / n_bins, label, counts[(i, label)])
        for i in range(n_bins) for label in ttc_order if counts[(i, label)]
    ]


def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError(f"pearson needs two equal-length sequences, got {xs.shape} and {ys.shape}")
    if len(xs) < 2:
        raise EmptyInput(f"pearson needs >= 2 pairs, got {len(xs)}")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise DegenerateVariance("one of the series has zero variance")
    r, _ = pearsonr(xs, ys)
    return float(r)


def paired(scores, fn_only=False):
    pairs = [(s.score_gt, s.score_hyp) for s in scores
             if s.score_gt is not None and s.score_hyp is not None and (not fn_only or s.outcome.is_fn)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def agreement(scores, xi) -> Optional[float]:
    """Among FN frames with score_gt <= xi, the fraction that also has score_hyp <= xi."""
    flagged_gt = [s for s in scores
                  if s.outcome.is_fn and s.score_gt is not None and s.score_hyp is not None and s.score_gt <= xi]
    if not flagged_gt:
        return None
    return sum(1 for s in flagged_gt if s.score_hyp <= xi) / len(flagged_gt)


def roc_auc(scores, which="gt") -> Optional[float]:
    """ROC-AUC of the score as FN detector (low score = FN). None when a class is missing."""
    labelled = [(s.outcome.is_fn, s.score(which)) for s in scores
                if s.score(which) is not None and (s.outcome.is_fn or s.outcome == Outcome.TP)]
    labels = [int(is_fn) for is_fn, _ in labelled]
    if len(set(labels)) < 2:
        return None
    return float(roc_auc_score(labels, [-value for _, value in labelled]))


def critical_summary(scores, config: SweepConfig = SweepConfig(), which="gt") -> list:
    """Per threshold: identified-FN and flagged-TP percentages in critical vs non-critical frames."""
    rows = []
    for xi in config.thresholds:
        for critical in (True, False):
            group = [s for s in scores if s.score(which) is not None and s.ttc is not None and s.critical == critical]
            fn = [s.score(which) for s in group if s.outcome.is_fn]
            tp = [s.score(which) for s in group if s.outcome == Outcome.TP]
            rows.append({
                "xi": xi,
                "zone": "critical" if critical else "non-critical",
                "fn_n": len(fn),
                "fn_identified": 100.0 * sum(v <= xi for v in fn) / len(fn) if fn else None,
                "tp_n": len(tp),
                "tp_flagged": 100.0 * sum(v <= xi for v in tp) / len(tp) if tp else None,
            })
    return rows
