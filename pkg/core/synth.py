"""Deterministic synthetic pedestrian scenes and a brute-force c-flow oracle.

Noise comes from numpy's PCG64 bit generator seeded with SeedSequence([seed, frame, stream]);
stream 0 drives flow noise and streams 1.. drive box jitter (one per JITTER event).
"""

import logging
import math
import shutil
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from core.cflow import CFlowParams
from core.flow_io import FlowMap, pixel_bounds, save_flo
from core.tracks import BBox, Track, TrackFrame, save_tracks
from errors import InsufficientWindow, SpecError, TooFewDetections

log = logging.getLogger(__name__)

NOISE_STREAM = 0
JITTER_STREAM = 1


class EventKind(str, Enum):
    FLOW_JUMP = "flow_jump"
    OCCLUSION = "occlusion"
    DROPOUT = "dropout"
    JITTER = "jitter"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    frame: int = 0
    delta_u: float = 0.0
    phi: float = 0.5
    side: str = "right"
    frames: tuple = ()
    std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(str(getattr(self.kind, "value", self.kind)).lower()))
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))

    def active(self, frame):
        return frame >= self.frame


@dataclass(frozen=True)
class ScenarioSpec:
    image_w: int = 160
    image_h: int = 120
    n_frames: int = 16
    dt: float = 0.1
    background_u: float = 0.2
    ped_start: BBox = field(default_factory=lambda: BBox(30.0, 30.0, 20.0, 40.0))
    ped_velocity: tuple = (1.0, 0.0)
    growth_rate: float = 1.0
    ped_u0: float = 2.0
    ped_u_slope: float = 0.0
    events: tuple = ()
    noise_std: float = 0.0
    seed: int = 0
    name: Optional[str] = None
    ttc_start: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "ped_velocity", tuple(float(v) for v in self.ped_velocity))

    def true_box(self, frame) -> BBox:
        """Full pedestrian extent: start box moved by velocity*frame and scaled about its center."""
        start = self.ped_start
        scale = self.growth_rate ** frame
        cx = start.x_ul + start.width / 2 + self.ped_velocity[0] * frame
        cy = start.y_ul + start.height / 2 + self.ped_velocity[1] * frame
        w, h = start.width * scale, start.height * scale
        return BBox(cx - w / 2, cy - h / 2, w, h)

    def visible_box(self, frame) -> BBox:
        box = self.true_box(frame)
        for event in self.events:
            if event.kind != EventKind.OCCLUSION or not event.active(frame):
                continue
            kept = box.width * (1 - event.phi)
            if event.side == "left":
                box = BBox(box.x2 - kept, box.y_ul, kept, box.height)
            else:
                box = BBox(box.x_ul, box.y_ul, kept, box.height)
        return box

    def ped_u(self, frame) -> float:
        value = self.ped_u0 + self.ped_u_slope * frame
        for event in self.events:
            if event.kind == EventKind.FLOW_JUMP and event.active(frame):
                value += event.delta_u
        return value

    def ttc(self, frame) -> Optional[float]:
        if self.ttc_start is None:
            return None
        return max(self.ttc_start - frame * self.dt, 0.0)

    def validate(self, k=5):
        if self.image_w <= 0 or self.image_h <= 0:
            raise SpecError(f"image size must be positive, got {self.image_w}x{self.image_h}")
        if self.n_frames < k + 2:
            raise SpecError(f"n_frames must be >= k + 2 = {k + 2}, got {self.n_frames}")
        if self.dt <= 0:
            raise SpecError(f"dt must be > 0, got {self.dt}")
        if self.growth_rate <= 0:
            raise SpecError(f"growth_rate is a scale factor and must be > 0, got {self.growth_rate}")
        if self.noise_std < 0:
            raise SpecError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.seed < 0:
            raise SpecError(f"seed must be >= 0, got {self.seed}")
        for event in self.events:
            if not 0 <= event.frame < self.n_frames:
                raise SpecError(f"{event.kind.value} event frame {event.frame} outside [0, {self.n_frames})")
            if event.kind == EventKind.OCCLUSION:
                if not 0 < event.phi < 1:
                    raise SpecError(f"occlusion phi must lie in (0, 1), got {event.phi}")
                if event.side not in ("left", "right"):
                    raise SpecError(f"occlusion side must be left or right, got {event.side!r}")
            if event.kind == EventKind.DROPOUT and any(not 0 <= f < self.n_frames for f in event.frames):
                raise SpecError(f"dropout frames {event.frames} outside [0, {self.n_frames})")
            if event.kind == EventKind.JITTER and event.std < 0:
                raise SpecError(f"jitter std must be >= 0, got {event.std}")
        for f in range(self.n_frames):
            box = self.true_box(f)
            if box.x_ul < 1 or box.y_ul < 1 or box.x2 > self.image_w - 1 or box.y2 > self.image_h - 1:
                raise SpecError(f"pedestrian box {box} leaves the {self.image_w}x{self.image_h} image at frame {f}")
        return self

    def to_mapping(self) -> dict:
        data = asdict(self)
        data["ped_start"] = self.ped_start.to_list()
        data["ped_velocity"] = list(self.ped_velocity)
        data["events"] = [
            {**asdict(e), "kind": e.kind.value, "frames": list(e.frames)} for e in self.events
        ]
        return data


def _rng(seed, frame, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, frame, stream])))


def _flow_map(spec: ScenarioSpec, frame) -> FlowMap:
    u = np.full((spec.image_h, spec.image_w), spec.background_u, dtype=np.float64)
    v = np.zeros_like(u)
    # Occluded pixels keep the background flow; only the visible part moves with the pedestrian
    x0, x1, y0, y1 = pixel_bounds(spec.visible_box(frame), spec.image_w, spec.image_h)
    u[y0:y1, x0:x1] = spec.ped_u(frame)
    if spec.noise_std > 0:
        rng = _rng(spec.seed, frame, NOISE_STREAM)
        u += rng.normal(0.0, spec.noise_std, u.shape)
        v += rng.normal(0.0, spec.noise_std, v.shape)
    return FlowMap(u=u, v=v)


def _pred_box(spec: ScenarioSpec, frame) -> Optional[BBox]:
    for event in spec.events:
        if event.kind == EventKind.DROPOUT and frame in event.frames:
            return None
    box = spec.visible_box(frame)
    for stream, event in enumerate(spec.events, start=JITTER_STREAM):
        if event.kind != EventKind.JITTER or not event.active(frame):
            continue
        d = [float(x) for x in _rng(spec.seed, frame, stream).normal(0.0, event.std, 4)]
        x1, y1 = box.x_ul + d[0], box.y_ul + d[1]
        x2, y2 = box.x2 + d[2], box.y2 + d[3]
        box = BBox(x1, y1, max(x2 - x1, 1.0), max(y2 - y1, 1.0))
    return box


def generate(spec: ScenarioSpec, k=5):
    """Flow maps (one per frame) and the pedestrian track of a scenario."""
    spec.validate(k)
    name = spec.name or "scenario"
    flows = []
    frames = []
    for f in range(spec.n_frames):
        flows.append(_flow_map(spec, f))
        frames.append(TrackFrame(
            frame_index=f,
            timestamp=f * spec.dt,
            flow_ref=f"{name}/{f:06d}.flo",
            gt_box=spec.visible_box(f),
            pred_box=_pred_box(spec, f),
            ttc=spec.ttc(f),
        ))
    return flows, Track(name, frames)


# --- oracle ---
# Everything below recomputes c-flow from scratch with plain Python floats.

def _oracle_edge(value):
    n = round(value)
    return int(n) if abs(value - n) < 1e-9 else math.ceil(value)


def _oracle_median(values):
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    return ordered[mid] if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2


def _oracle_box_median(rows, width, height, box):
    x, y, w, h = box
    values = []
    for iy in range(max(_oracle_edge(y), 0), min(_oracle_edge(y + h), height)):
        row = rows[iy]
        for ix in range(max(_oracle_edge(x), 0), min(_oracle_edge(x + w), width)):
            values.append(row[ix])
    if not values:
        raise ValueError(f"oracle: box {box} covers no pixel")
    return _oracle_median(values)


def _oracle_iou(a, b):
    ix = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    iy = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    if a == b:
        return 1.0
    inter = ix * iy
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def _oracle_extrapolate(detections, target):
    """UL extrapolation with the principal axis from the closed-form 2x2 scatter angle."""
    (i_first, first), (i_last, last) = detections[0], detections[-1]
    pts = [(b[0], b[1]) for _, b in detections]
    if all(abs(px - last[0]) <= 1e-9 and abs(py - last[1]) <= 1e-9 for px, py in pts):
        return last
    mx = sum(p[0] for p in pts) / len(pts)
    my = sum(p[1] for p in pts) / len(pts)
    sxx = sum((p[0] - mx) ** 2 for p in pts)
    syy = sum((p[1] - my) ** 2 for p in pts)
    sxy = sum((p[0] - mx) * (p[1] - my) for p in pts)
    theta = 0.5 * math.atan2(2 * sxy, sxx - syy)
    dx, dy = math.cos(theta), math.sin(theta)
    ex, ey = last[0] - first[0], last[1] - first[1]
    if dx * ex + dy * ey < 0:
        dx, dy = -dx, -dy
    step = math.sqrt(ex * ex + ey * ey) / (i_last - i_first)
    gap = target - i_last
    return (last[0] + step * gap * dx, last[1] + step * gap * dy, last[2], last[3])


def oracle_cflow(spec: ScenarioSpec, frame, mode="gt", params: CFlowParams = CFlowParams(),
                 iou_threshold=0.5, scene=None) -> float:
    """c-flow at `frame` by an independent path: pixel sort, two-pass OLS, the whole score in one expression."""
    flows, track = scene if scene is not None else generate(spec, params.k)
    k = params.k
    by_index = {f.frame_index: f for f in track.frames}
    window = [by_index[i] for i in range(frame - k, frame + 1) if i in by_index]

    def tp(f):
        if f.pred_box is None:
            return False
        return f.gt_box is None or _oracle_iou(tuple(f.gt_box.to_list()), tuple(f.pred_box.to_list())) >= iou_threshold

    picked = []  # (frame_index, (x, y, w, h))
    if mode == "gt":
        picked = [(f.frame_index, tuple(f.gt_box.to_list())) for f in window if f.gt_box is not None]
    elif mode == "mixed":
        for f in window:
            if tp(f):
                picked.append((f.frame_index, tuple(f.pred_box.to_list())))
            elif f.gt_box is not None:
                picked.append((f.frame_index, tuple(f.gt_box.to_list())))
    elif mode == "pred":
        picked = [(f.frame_index, tuple(f.pred_box.to_list())) for f in window if f.frame_index < frame and tp(f)]
        if len(picked) < 2:
            raise TooFewDetections(f"oracle: {len(picked)} detections before frame {frame}")
        picked.append((frame, _oracle_extrapolate(picked, frame)))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    n = len(picked)
    if n < params.min_samples:
        raise InsufficientWindow(f"oracle: {n} samples at frame {frame}")

    ts, us = [], []
    for idx, box in picked:
        fm = flows[idx]
        ts.append(by_index[idx].timestamp)
        us.append(_oracle_box_median(fm.u.tolist(), fm.width, fm.height, box))

    t_mean = sum(ts) / n
    u_mean = sum(us) / n
    sxy = sum((t - t_mean) * (u - u_mean) for t, u in zip(ts, us))
    sxx = sum((t - t_mean) ** 2 for t in ts)
    slope = sxy / sxx
    intercept = u_mean - slope * t_mean
    eps = sum(abs(u - (intercept + slope * t)) for t, u in zip(ts, us))

    (_, b1), (_, b0) = picked[-2], picked[-1]
    d0 = math.sqrt(b0[2] ** 2 + b0[3] ** 2)
    d1 = math.sqrt(b1[2] ** 2 + b1[3] ** 2)
    x = ((d0 - d1) / max(d0, d1, params.tau_d)) / max(
        eps / (n * max(_oracle_median([abs(u) for u in us]), params.tau_u)), params.tau_eps)
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


# --- scenario files and corpus output ---

INT_FIELDS = ("image_w", "image_h", "n_frames", "seed")
FLOAT_FIELDS = ("dt", "background_u", "growth_rate", "ped_u0", "ped_u_slope", "noise_std", "ttc_start")
EVENT_INT_FIELDS = ("frame",)
EVENT_FLOAT_FIELDS = ("delta_u", "phi", "std")


def _as_int(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or (
            isinstance(value, float) and not value.is_integer()):
        raise SpecError(f"'{key}' must be an integer, got {value!r}")
    return int(value)


def _as_float(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SpecError(f"'{key}' must be a finite number, got {value!r}")
    return float(value)


def _event_from_mapping(data, i) -> Event:
    if not isinstance(data, dict):
        raise SpecError(f"event {i} must be a mapping, got {data!r}")
    values = dict(data)
    for key in EVENT_INT_FIELDS:
        if key in values:
            values[key] = _as_int(values[key], f"events[{i}].{key}")
    for key in EVENT_FLOAT_FIELDS:
        if key in values:
            values[key] = _as_float(values[key], f"events[{i}].{key}")
    if "frames" in values:
        frames = values["frames"]
        if not isinstance(frames, (list, tuple)):
            raise SpecError(f"'events[{i}].frames' must be a list, got {frames!r}")
        values["frames"] = tuple(_as_int(f, f"events[{i}].frames") for f in frames)
    if "side" in values and not isinstance(values["side"], str):
        raise SpecError(f"'events[{i}].side' must be a string, got {values['side']!r}")
    try:
        return Event(**values)
    except (TypeError, ValueError) as e:
        raise SpecError(f"bad event {i}: {e}") from e


def spec_from_mapping(data: dict) -> ScenarioSpec:
    if not isinstance(data, dict):
        raise SpecError(f"a scenario must be a mapping, got {data!r}")
    known = set(ScenarioSpec.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise SpecError(f"unknown scenario keys: {sorted(unknown)}")
    values = dict(data)
    for key in INT_FIELDS:
        if key in values:
            values[key] = _as_int(values[key], key)
    for key in FLOAT_FIELDS:
        if values.get(key) is not None:
            values[key] = _as_float(values[key], key)
    if values.get("name") is not None:
        values["name"] = str(values["name"])
    if "ped_velocity" in values:
        velocity = values["ped_velocity"]
        if not isinstance(velocity, (list, tuple)) or len(velocity) != 2:
            raise SpecError(f"'ped_velocity' must be [vx, vy], got {velocity!r}")
        values["ped_velocity"] = tuple(_as_float(v, "ped_velocity") for v in velocity)
    if "events" in values:
        events = values["events"] or ()
        if not isinstance(events, (list, tuple)):
            raise SpecError(f"'events' must be a list, got {events!r}")
        values["events"] = tuple(_event_from_mapping(e, i) for i, e in enumerate(events))
    try:
        if "ped_start" in values:
            values["ped_start"] = BBox.from_list(values["ped_start"])
        return ScenarioSpec(**values)
    except (TypeError, ValueError) as e:
        raise SpecError(f"bad scenario definition: {e}") from e


def load_scenarios(path) -> list:
    """Scenario specs from a YAML file.

    Top-level keys describe one scenario. If a `scenarios` list is present, each entry
    is a scenario whose missing keys default to the top-level ones.
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise SpecError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise SpecError(f"{path}: expected a mapping at the top level")

    entries = data.pop("scenarios", None)
    if entries is None:
        specs = [spec_from_mapping(data)]
    else:
        if not isinstance(entries, list):
            raise SpecError(f"{path}: 'scenarios' must be a list")
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise SpecError(f"{path}: scenario {i} must be a mapping, got {entry!r}")
        specs = [spec_from_mapping({**data, **entry}) for entry in entries]

    named = []
    for i, spec in enumerate(specs):
        if spec.name is None:
            spec = replace(spec, name=f"scenario_{i:03d}")
        named.append(spec)
    names = [s.name for s in named]
    if len(set(names)) != len(names):
        raise SpecError(f"{path}: scenario names must be unique, got {names}")
    return named


CORPUS_ENTRIES = ("flows", "tracks.jsonl", "scenarios.yaml", "run_config.json")


def _clear_corpus(out: Path):
    """Removes a previous corpus; a directory holding anything else is left untouched."""
    foreign = sorted(p.name for p in out.iterdir() if p.name not in CORPUS_ENTRIES)
    if foreign:
        raise SpecError(f"output directory {out} holds files that are not part of a corpus: {foreign}")
    for name in CORPUS_ENTRIES:
        path = out / name
        if path.is_dir():
            shutil.rmtree(path)
        elif path.exists():
            path.unlink()
    log.info("cleared previous corpus in %s", out)


def write_corpus(specs, out_dir, force=False, k=5):
    """Materializes scenarios as flows/<name>/NNNNNN.flo plus one tracks.jsonl."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise SpecError(f"output directory {out} is not empty (use --force to overwrite)")
        _clear_corpus(out)
    flows_dir = out / "flows"
    flows_dir.mkdir(parents=True, exist_ok=True)

    tracks = []
    for spec in specs:
        flows, track = generate(spec, k)
        scene_dir = flows_dir / track.track_id
        scene_dir.mkdir(parents=True, exist_ok=True)
        for frame, flow in zip(track.frames, flows):
            save_flo(flows_dir / frame.flow_ref, flow)
        tracks.append(track)
        log.info("scenario %s: %d frames", track.track_id, spec.n_frames)

    save_tracks(tracks, out / "tracks.jsonl")
    with open(out / "scenarios.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump({"scenarios": [s.to_mapping() for s in specs]}, f, sort_keys=False)
    return tracks
