"""Hypothesized boxes for frames without a detection, and window assembly per box source."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from core.cflow import BoxSource, CFlowParams, WindowSample
from core.flow_io import median_flow
from core.tracks import DEFAULT_IOU_THRESHOLD, BBox, Outcome, Track, classify_frame
from errors import BadTarget, CFlowError, MissingCurrent, TooFewDetections, WindowSpanError

log = logging.getLogger(__name__)

STATIONARY_TOLERANCE = 1e-9


class WindowMode(str, Enum):
    GT = "gt"
    PRED = "pred"
    MIXED = "mixed"


@dataclass(frozen=True)
class HypothesisInput:
    detections: tuple  # (frame_index, BBox) pairs, oldest first
    target_frame: int
    k: int = 5

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class Hypothesis:
    box: BBox
    step_px: float
    direction: Optional[tuple]
    n_detections: int

    @property
    def stationary(self):
        return self.direction is None


def _principal_direction(points: np.ndarray) -> np.ndarray:
    """Unit vector along the total-least-squares line through the points."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[0]


def hypothesize_box(data: HypothesisInput) -> Hypothesis:
    """Extrapolates the upper-left corner of past detections to target_frame.

    The shift per frame is the distance between the first and last UL divided by their
    frame gap; it is applied from the last UL along the fitted line. Width and height are
    taken over from the latest detection.
    """
    detections = data.detections
    if len(detections) < 2:
        raise TooFewDetections(f"need >= 2 detections in the window, got {len(detections)}",
                               frame_index=data.target_frame)
    indices = [idx for idx, _ in detections]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise BadTarget(f"detection frame indices not strictly increasing: {indices}", frame_index=data.target_frame)
    if data.target_frame <= indices[-1]:
        raise BadTarget(f"target frame {data.target_frame} is not after the last detection {indices[-1]}",
                        frame_index=data.target_frame)
    if indices[0] < data.target_frame - data.k:
        raise WindowSpanError(f"detection at {indices[0]} lies outside the window of {data.target_frame}",
                              frame_index=data.target_frame)

    points = np.array([box.ul for _, box in detections], dtype=np.float64)
    first, last = points[0], points[-1]
    last_box = detections[-1][1]

    if np.all(np.abs(points - last) <= STATIONARY_TOLERANCE):
        return Hypothesis(box=last_box, step_px=0.0, direction=None, n_detections=len(detections))

    direction = _principal_direction(points)
    # Orient from the earliest UL toward the latest one
    if np.dot(direction, last - first) < 0:
        direction = -direction

    step_px = float(np.linalg.norm(last - first)) / (indices[-1] - indices[0])
    ul = last + step_px * (data.target_frame - indices[-1]) * direction
    box = BBox(float(ul[0]), float(ul[1]), last_box.width, last_box.height)
    return Hypothesis(box=box, step_px=step_px, direction=(float(direction[0]), float(direction[1])),
                      n_detections=len(detections))


def detections_in(frames, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """(frame_index, pred_box) of frames whose prediction counts as a detection.

    Without ground truth every prediction counts; with ground truth only TPs do.
    """
    found = []
    for frame in frames:
        if frame.pred_box is None:
            continue
        if frame.gt_box is None or classify_frame(frame.gt_box, frame.pred_box, iou_threshold) == Outcome.TP:
            found.append((frame.frame_index, frame.pred_box))
    return found


def fill_window(track: Track, t0: int, mode, params: CFlowParams, flow_store, fill_gaps=False,
                iou_threshold=DEFAULT_IOU_THRESHOLD) -> list:
    """Window samples for frame t0 of the track, with boxes taken according to mode."""
    mode = WindowMode(mode)
    current = track.frame(t0)
    if current is None:
        raise MissingCurrent(f"track has no frame {t0}", track_id=track.track_id, frame_index=t0)
    frames = track.window(t0, params.k)

    boxes = []  # (frame, box, source)
    if mode == WindowMode.GT:
        if current.gt_box is None:
            raise MissingCurrent("no ground-truth box at t0", track_id=track.track_id, frame_index=t0)
        boxes = [(f, f.gt_box, BoxSource.GT) for f in frames if f.gt_box is not None]

    elif mode == WindowMode.MIXED:
        detected = dict(detections_in(frames, iou_threshold))
        for f in frames:
            if f.frame_index in detected:
                boxes.append((f, detected[f.frame_index], BoxSource.PRED))
            elif f.gt_box is not None:
                boxes.append((f, f.gt_box, BoxSource.GT))
        if not boxes or boxes[-1][0].frame_index != t0:
            raise MissingCurrent("no box at t0", track_id=track.track_id, frame_index=t0)

    else:
        past = [f for f in frames if f.frame_index < t0]
        detected = detections_in(past, iou_threshold)
        try:
            hyp = hypothesize_box(HypothesisInput(detected, t0, params.k))
        except CFlowError as e:
            raise e.at(track.track_id, t0)

        detected_at = dict(detected)
        for f in past:
            if f.frame_index in detected_at:
                boxes.append((f, detected_at[f.frame_index], BoxSource.PRED))
            elif fill_gaps and detected and detected[0][0] < f.frame_index:
                earlier = [d for d in detected if d[0] < f.frame_index]
                if len(earlier) < 2:
                    continue
                gap = hypothesize_box(HypothesisInput(earlier, f.frame_index, params.k))
                boxes.append((f, gap.box, BoxSource.HYP))
        boxes.append((current, hyp.box, BoxSource.HYP))

    samples = []
    for frame, box, source in boxes:
        try:
            u = median_flow(flow_store.load(frame.flow_ref), box)
        except CFlowError as e:
            raise e.at(track.track_id, frame.frame_index)
        samples.append(WindowSample(timestamp=frame.timestamp, frame_index=frame.frame_index,
                                    box=box, u=u, source=source))
    log.debug("track %s frame %s: %d %s samples", track.track_id, t0, len(samples), mode.value)
    return samples
