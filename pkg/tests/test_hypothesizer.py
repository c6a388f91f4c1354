import math

import pytest

from conftest import straight_track, uniform_store
from core.cflow import BoxSource, CFlowParams
from core.hypothesizer import HypothesisInput, WindowMode, detections_in, fill_window, hypothesize_box
from core.tracks import BBox, Track, TrackFrame
from errors import BadTarget, FlowUnavailable, MissingCurrent, TooFewDetections, WindowSpanError
from flow_store import MemoryFlowStore


def box_at(x, y, w=10.0, h=20.0):
    return BBox(float(x), float(y), w, h)


def test_gap_before_target():
    detections = [(0, box_at(100, 50)), (1, box_at(108, 50)), (3, box_at(116, 50))]
    hyp = hypothesize_box(HypothesisInput(detections, target_frame=4))
    assert hyp.step_px == pytest.approx(16 / 3)
    assert hyp.direction == pytest.approx((1.0, 0.0))
    assert hyp.box.x_ul == pytest.approx(116 + 16 / 3)
    assert hyp.box.y_ul == pytest.approx(50.0)
    assert hyp.n_detections == 3


def test_skipped_detection_at_t3():
    """Detections at t5, t4, t2, t1; t3 missed; box hypothesized for t0."""
    def ul(f):
        return (20.0 + 3.0 * f, 40.0 - 1.25 * f)

    t0 = 5
    detections = [(t0 - back, box_at(*ul(t0 - back))) for back in (5, 4, 2, 1)]
    hyp = hypothesize_box(HypothesisInput(detections, t0))
    assert hyp.box.x_ul == pytest.approx(ul(t0)[0], abs=1e-6)
    assert hyp.box.y_ul == pytest.approx(ul(t0)[1], abs=1e-6)


def test_constant_velocity_with_random_gaps(rng):
    for _ in range(200):
        vx, vy = rng.uniform(-6, 6, 2)
        x0, y0 = rng.uniform(-50, 50, 2)
        t0 = 5
        past = [f for f in range(t0) if rng.random() < 0.6]
        if len(past) < 2:
            past = [0, 3]
        detections = [(f, box_at(x0 + vx * f, y0 + vy * f)) for f in past]
        hyp = hypothesize_box(HypothesisInput(detections, t0))
        assert hyp.box.x_ul == pytest.approx(x0 + vx * t0, abs=1e-6)
        assert hyp.box.y_ul == pytest.approx(y0 + vy * t0, abs=1e-6)


def test_size_comes_from_latest_detection():
    detections = [(0, box_at(0, 0, 10, 20)), (1, box_at(1, 0, 12, 22))]
    hyp = hypothesize_box(HypothesisInput(detections, 3))
    assert (hyp.box.width, hyp.box.height) == (12, 22)


def test_stationary_detections():
    detections = [(0, box_at(5, 5)), (2, box_at(5, 5)), (3, box_at(5, 5))]
    hyp = hypothesize_box(HypothesisInput(detections, 5))
    assert hyp.stationary
    assert hyp.step_px == 0.0
    assert hyp.box.ul == (5.0, 5.0)


def test_single_detection():
    with pytest.raises(TooFewDetections):
        hypothesize_box(HypothesisInput([(3, box_at(0, 0))], 4))


def test_target_not_after_last_detection():
    with pytest.raises(BadTarget):
        hypothesize_box(HypothesisInput([(0, box_at(0, 0)), (2, box_at(1, 0))], 2))


def test_detection_outside_window():
    with pytest.raises(WindowSpanError):
        hypothesize_box(HypothesisInput([(0, box_at(0, 0)), (5, box_at(1, 0))], 6, k=5))


def test_translation_equivariance(rng):
    detections = [(0, box_at(10, 10)), (1, box_at(13, 11)), (2, box_at(15.5, 12.5))]
    base = hypothesize_box(HypothesisInput(detections, 4))
    dx, dy = rng.uniform(-20, 20, 2)
    moved = hypothesize_box(HypothesisInput([(i, b.translated(dx, dy)) for i, b in detections], 4))
    assert moved.box.x_ul == pytest.approx(base.box.x_ul + dx, abs=1e-9)
    assert moved.box.y_ul == pytest.approx(base.box.y_ul + dy, abs=1e-9)
    assert moved.step_px == pytest.approx(base.step_px)


def test_rotation_equivariance(rng):
    detections = [(0, box_at(10, 10)), (1, box_at(13, 11)), (3, box_at(17.5, 14.5))]
    base = hypothesize_box(HypothesisInput(detections, 5))
    for angle in rng.uniform(-math.pi, math.pi, 20):
        c, s = math.cos(angle), math.sin(angle)

        def rotate(x, y):
            return c * x - s * y, s * x + c * y

        turned = [(i, box_at(*rotate(b.x_ul, b.y_ul))) for i, b in detections]
        hyp = hypothesize_box(HypothesisInput(turned, 5))
        expected = rotate(base.box.x_ul, base.box.y_ul)
        assert hyp.box.x_ul == pytest.approx(expected[0], abs=1e-9)
        assert hyp.box.y_ul == pytest.approx(expected[1], abs=1e-9)
        assert hyp.step_px == pytest.approx(base.step_px)


def test_step_ignores_interior_detections(rng):
    for _ in range(50):
        points = rng.uniform(-30, 30, (5, 2))
        detections = [(i, box_at(x, y)) for i, (x, y) in enumerate(points)]
        full = hypothesize_box(HypothesisInput(detections, 6, k=6))
        ends = hypothesize_box(HypothesisInput([detections[0], detections[-1]], 6, k=6))
        assert full.step_px == pytest.approx(ends.step_px, rel=1e-12)


def test_direction_is_unit_and_points_forward():
    detections = [(0, box_at(0, 0)), (1, box_at(-2, 1)), (2, box_at(-4, 2.5))]
    hyp = hypothesize_box(HypothesisInput(detections, 3))
    assert math.hypot(*hyp.direction) == pytest.approx(1.0)
    assert hyp.direction[0] < 0 and hyp.direction[1] > 0


def test_detections_require_tp_when_ground_truth_exists():
    gt = box_at(0, 0)
    frames = [
        TrackFrame(0, 0.0, "a", gt_box=gt, pred_box=gt),
        TrackFrame(1, 0.1, "b", gt_box=gt, pred_box=box_at(30, 30)),
        TrackFrame(2, 0.2, "c", gt_box=None, pred_box=gt),
        TrackFrame(3, 0.3, "d", gt_box=gt),
    ]
    assert [i for i, _ in detections_in(frames)] == [0, 2]


class TestFillWindow:
    def test_gt_mode(self):
        track = straight_track(6)
        samples = fill_window(track, 5, WindowMode.GT, CFlowParams(), uniform_store(track))
        assert len(samples) == 6
        assert all(s.source == BoxSource.GT for s in samples)
        assert all(s.u == 2.0 for s in samples)

    def test_pred_mode_skipped_detection_at_t3(self):
        base = straight_track(6)
        frames = [
            TrackFrame(f.frame_index, f.timestamp, f.flow_ref, gt_box=f.gt_box,
                       pred_box=None if f.frame_index in (2, 5) else f.gt_box)
            for f in base.frames
        ]
        track = Track(base.track_id, frames)
        samples = fill_window(track, 5, WindowMode.PRED, CFlowParams(), uniform_store(track))
        assert [s.source for s in samples] == [BoxSource.PRED] * 4 + [BoxSource.HYP]
        assert [s.frame_index for s in samples] == [0, 1, 3, 4, 5]
        assert samples[-1].box.x_ul == pytest.approx(base.frames[5].gt_box.x_ul)

    def test_pred_mode_fills_interior_gaps(self):
        base = straight_track(6)
        frames = [
            TrackFrame(f.frame_index, f.timestamp, f.flow_ref, gt_box=f.gt_box,
                       pred_box=None if f.frame_index in (2, 5) else f.gt_box)
            for f in base.frames
        ]
        track = Track(base.track_id, frames)
        samples = fill_window(track, 5, WindowMode.PRED, CFlowParams(), uniform_store(track), fill_gaps=True)
        assert [s.frame_index for s in samples] == [0, 1, 2, 3, 4, 5]
        assert samples[2].source == BoxSource.HYP
        assert samples[2].box.x_ul == pytest.approx(base.frames[2].gt_box.x_ul)

    def test_pred_mode_with_one_detection(self):
        track = straight_track(6, pred=False)
        frames = list(track.frames)
        frames[4] = TrackFrame(4, frames[4].timestamp, frames[4].flow_ref, gt_box=frames[4].gt_box,
                               pred_box=frames[4].gt_box)
        track = Track(track.track_id, frames)
        with pytest.raises(TooFewDetections) as err:
            fill_window(track, 5, WindowMode.PRED, CFlowParams(), uniform_store(track))
        assert err.value.track_id == "ped"
        assert err.value.frame_index == 5

    def test_mixed_mode_uses_ground_truth_for_misses(self):
        base = straight_track(6)
        frames = list(base.frames)
        frames[3] = TrackFrame(3, frames[3].timestamp, frames[3].flow_ref, gt_box=frames[3].gt_box)
        track = Track(base.track_id, frames)
        samples = fill_window(track, 5, WindowMode.MIXED, CFlowParams(), uniform_store(track))
        assert len(samples) == 6
        assert samples[3].source == BoxSource.GT
        assert samples[4].source == BoxSource.PRED

    def test_gt_mode_without_current_box(self):
        base = straight_track(6)
        frames = list(base.frames)
        frames[5] = TrackFrame(5, frames[5].timestamp, frames[5].flow_ref)
        track = Track(base.track_id, frames)
        with pytest.raises(MissingCurrent):
            fill_window(track, 5, WindowMode.GT, CFlowParams(), uniform_store(track))

    def test_missing_flow_carries_frame_context(self):
        track = straight_track(6)
        with pytest.raises(FlowUnavailable) as err:
            fill_window(track, 5, WindowMode.GT, CFlowParams(), MemoryFlowStore())
        assert err.value.track_id == "ped"
        assert err.value.frame_index == 0
