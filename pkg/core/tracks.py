"""Boxes, detection/ground-truth tracks, IoU matching and outcome classes."""

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from errors import InvalidBox, MissingField, OrderError, TrackParseError

DEFAULT_IOU_THRESHOLD = 0.5
CRITICAL_TTC_S = 2.0


@dataclass(frozen=True)
class BBox:
    x_ul: float
    y_ul: float
    width: float
    height: float

    def __post_init__(self):
        values = (self.x_ul, self.y_ul, self.width, self.height)
        if not all(math.isfinite(v) for v in values):
            raise InvalidBox(f"non-finite box {values}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidBox(f"box width/height must be > 0, got {self.width}x{self.height}")

    @classmethod
    def from_list(cls, values):
        if len(values) != 4:
            raise InvalidBox(f"box needs [x_ul, y_ul, width, height], got {values!r}")
        return cls(*(float(v) for v in values))

    def to_list(self):
        return [self.x_ul, self.y_ul, self.width, self.height]

    @property
    def ul(self):
        return (self.x_ul, self.y_ul)

    @property
    def x2(self):
        return self.x_ul + self.width

    @property
    def y2(self):
        return self.y_ul + self.height

    @property
    def area(self):
        return self.width * self.height

    def translated(self, dx, dy):
        return BBox(self.x_ul + dx, self.y_ul + dy, self.width, self.height)


class Outcome(str, Enum):
    TP = "TP"
    FN_POOR = "FN_POOR"
    FN_MISS = "FN_MISS"
    FP = "FP"
    NONE = "NONE"

    @property
    def is_fn(self):
        return self in (Outcome.FN_POOR, Outcome.FN_MISS)

    def merged(self):
        """Label used when FN_POOR and FN_MISS are reported together."""
        return "FN" if self.is_fn else self.value


@dataclass(frozen=True)
class TrackFrame:
    frame_index: int
    timestamp: float
    flow_ref: str
    gt_box: Optional[BBox] = None
    pred_box: Optional[BBox] = None
    pred_score: Optional[float] = None
    ttc: Optional[float] = None

    def __post_init__(self):
        if self.ttc is not None and (not math.isfinite(self.ttc) or self.ttc < 0):
            raise ValueError(f"ttc must be finite and >= 0, got {self.ttc}")
        if self.pred_score is not None and not 0.0 <= self.pred_score <= 1.0:
            raise ValueError(f"pred_score must lie in [0, 1], got {self.pred_score}")
        if not math.isfinite(self.timestamp):
            raise ValueError(f"timestamp must be finite, got {self.timestamp}")


@dataclass(frozen=True)
class Track:
    track_id: str
    frames: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.frame_index <= prev.frame_index:
                raise OrderError(f"frame_index not strictly increasing ({prev.frame_index} -> {cur.frame_index})",
                                 track_id=self.track_id, frame_index=cur.frame_index)
            if cur.timestamp <= prev.timestamp:
                raise OrderError(f"timestamp not strictly increasing ({prev.timestamp} -> {cur.timestamp})",
                                 track_id=self.track_id, frame_index=cur.frame_index)

    def frame(self, frame_index):
        """Frame with the given index, or None."""
        for f in self.frames:
            if f.frame_index == frame_index:
                return f
        return None

    def window(self, t0, k):
        """Frames with index in [t0 - k, t0], in order."""
        return [f for f in self.frames if t0 - k <= f.frame_index <= t0]


def diagonal(box: BBox) -> float:
    return math.hypot(box.width, box.height)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union on continuous box geometry."""
    iw = min(a.x2, b.x2) - max(a.x_ul, b.x_ul)
    ih = min(a.y2, b.y2) - max(a.y_ul, b.y_ul)
    if iw <= 0 or ih <= 0:
        return 0.0
    if a == b:
        return 1.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def classify_frame(gt: Optional[BBox], pred: Optional[BBox], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> Outcome:
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    if gt is None:
        return Outcome.FP if pred is not None else Outcome.NONE
    if pred is None:
        return Outcome.FN_MISS
    overlap = iou(gt, pred)
    if overlap >= iou_threshold:
        return Outcome.TP
    if overlap > 0:
        return Outcome.FN_POOR
    return Outcome.FN_MISS


def is_critical(ttc: Optional[float], limit: float = CRITICAL_TTC_S) -> bool:
    return ttc is not None and ttc < limit


# --- JSONL track format ---

REQUIRED_FIELDS = ("track_id", "frame_index", "timestamp_s", "flow_ref")


def _optional_float(record, key, line):
    value = record.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TrackParseError(f"'{key}' must be a number, got {value!r}", line=line)
    return float(value)


def _parse_record(record, line):
    if not isinstance(record, dict):
        raise TrackParseError("record is not a JSON object", line=line)
    for key in REQUIRED_FIELDS:
        if key not in record:
            raise MissingField(f"missing field '{key}'", line=line)

    frame_index = record["frame_index"]
    if isinstance(frame_index, bool) or not isinstance(frame_index, int):
        raise TrackParseError(f"frame_index must be an integer, got {frame_index!r}", line=line)

    try:
        boxes = {}
        for key in ("gt_box", "pred_box"):
            raw = record.get(key)
            boxes[key] = BBox.from_list(raw) if raw is not None else None
        frame = TrackFrame(
            frame_index=frame_index,
            timestamp=float(record["timestamp_s"]),
            flow_ref=str(record["flow_ref"]),
            gt_box=boxes["gt_box"],
            pred_box=boxes["pred_box"],
            pred_score=_optional_float(record, "pred_score", line),
            ttc=_optional_float(record, "ttc_s", line),
        )
    except TrackParseError:
        raise
    except (TypeError, ValueError) as e:
        raise TrackParseError(str(e), line=line) from e
    return str(record["track_id"]), frame


def load_tracks(path) -> list:
    """Reads a track JSONL file; records are grouped by track_id and sorted by frame_index."""
    grouped = defaultdict(list)
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise TrackParseError(f"not valid UTF-8 at byte {e.start}", line=line_no) from e
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise TrackParseError(f"malformed JSON: {e.msg}", line=line_no) from e
            track_id, frame = _parse_record(record, line_no)
            grouped[track_id].append(frame)

    tracks = []
    # dict preserves first-appearance order of track ids
    for track_id, frames in grouped.items():
        frames.sort(key=lambda fr: fr.frame_index)
        for prev, cur in zip(frames, frames[1:]):
            if cur.frame_index == prev.frame_index:
                raise OrderError(f"duplicate frame_index {cur.frame_index}",
                                 track_id=track_id, frame_index=cur.frame_index)
        tracks.append(Track(track_id, frames))
    return tracks


def frame_record(track_id, frame: TrackFrame) -> dict:
    record = {
        "track_id": track_id,
        "frame_index": frame.frame_index,
        "timestamp_s": frame.timestamp,
        "flow_ref": frame.flow_ref,
    }
    if frame.gt_box is not None:
        record["gt_box"] = frame.gt_box.to_list()
    if frame.pred_box is not None:
        record["pred_box"] = frame.pred_box.to_list()
    if frame.pred_score is not None:
        record["pred_score"] = frame.pred_score
    if frame.ttc is not None:
        record["ttc_s"] = frame.ttc
    return record


def save_tracks(tracks, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for track in tracks:
            for frame in track.frames:
                f.write(json.dumps(frame_record(track.track_id, frame)) + "\n")
