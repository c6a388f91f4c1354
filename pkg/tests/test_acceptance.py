"""End-to-end checks on generated corpora: smooth approaches against occlusion onsets."""

import numpy as np
import pytest

from core.cflow import CFlowParams
from core.evaluation import paired, pearson, roc_auc, score_tracks
from core.hypothesizer import WindowMode
from core.synth import Event, ScenarioSpec, generate
from core.tracks import BBox, Outcome
from errors import DegenerateVariance
from flow_store import MemoryFlowStore

ONSET = 8
N_SCENES = 50


def approach(i, occluded=False):
    rng = np.random.default_rng(1000 + i)
    events = ()
    if occluded:
        events = (
            Event("occlusion", frame=ONSET, phi=0.5, side="right" if i % 2 else "left"),
            Event("dropout", frames=(ONSET,)),
        )
    return ScenarioSpec(
        name=f"{'occluded' if occluded else 'smooth'}_{i:03d}",
        image_w=200,
        image_h=120,
        n_frames=16,
        ped_start=BBox(float(rng.uniform(25, 60)), float(rng.uniform(25, 35)), 20.0, 40.0),
        ped_velocity=(float(rng.uniform(-1.0, 2.0)), float(rng.uniform(-0.3, 0.3))),
        growth_rate=1.02,
        ped_u0=float(rng.uniform(1.5, 3.0)),
        noise_std=0.05,
        seed=i,
        ttc_start=3.0,
        events=events,
    )


def corpus(occluded):
    specs = [approach(i, occluded) for i in range(N_SCENES)]
    store = MemoryFlowStore()
    tracks = []
    for spec in specs:
        flows, track = generate(spec)
        store.add_scene(flows, track)
        tracks.append(track)
    return tracks, store


@pytest.fixture(scope="module")
def scored():
    results = {}
    for occluded in (False, True):
        tracks, store = corpus(occluded)
        scores, skips = score_tracks(tracks, store, CFlowParams(), modes=(WindowMode.GT, WindowMode.PRED))
        assert not skips.errors
        results[occluded] = scores
    return results


def test_smooth_frames_score_high(scored):
    consistent = [s.score_gt for s in scored[False] if s.outcome == Outcome.TP]
    assert len(consistent) == N_SCENES * 11
    assert np.median(consistent) >= 0.6


def test_occlusion_onsets_score_low(scored):
    onsets = [s for s in scored[True] if s.frame_index == ONSET]
    assert len(onsets) == N_SCENES
    assert all(s.outcome == Outcome.FN_MISS for s in onsets)
    assert np.median([s.score_gt for s in onsets]) <= 0.4


def test_score_separates_tp_from_fn(scored):
    consistent = [s for s in scored[False] if s.outcome == Outcome.TP]
    onsets = [s for s in scored[True] if s.frame_index == ONSET]
    assert roc_auc(consistent + onsets, "gt") >= 0.95


def test_hypothesized_scores_are_neutral(scored):
    # A hypothesized box takes its size from the latest detection, so its diagonal change is zero
    scores = scored[False] + scored[True]
    assert all(s.score_hyp == 0.5 for s in scores if s.score_hyp is not None)
    xs, ys = paired(scores)
    with pytest.raises(DegenerateVariance):
        pearson(xs, ys)


def test_jittered_predictions_with_dropped_current_detection():
    params = CFlowParams()
    for i in range(10):
        spec = ScenarioSpec(
            name=f"jitter_{i}",
            image_w=200,
            image_h=120,
            n_frames=12,
            ped_start=BBox(40.0 + i, 30.0, 20.0, 40.0),
            growth_rate=1.02,
            noise_std=0.05,
            seed=i,
            events=(Event("jitter", std=1.0), Event("dropout", frames=(11,))),
        )
        flows, track = generate(spec)
        scores, _ = score_tracks([track], MemoryFlowStore.from_scene(flows, track), params)
        last = scores[-1]
        assert last.frame_index == 11
        assert last.outcome == Outcome.FN_MISS
        assert last.score_gt > 0.5
        assert last.score_hyp == 0.5
