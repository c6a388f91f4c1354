from dataclasses import replace

import numpy as np
import pytest

from core.flow_io import FlowMap
from core.synth import Event, ScenarioSpec
from core.tracks import BBox, Track, TrackFrame
from flow_store import MemoryFlowStore


def uniform_flow(value, width=64, height=48):
    return FlowMap(u=np.full((height, width), value), v=np.zeros((height, width)))


def straight_track(n_frames, track_id="ped", dt=0.1, start=(10.0, 10.0), velocity=(1.0, 0.0), size=(10.0, 20.0),
                   growth=1.0, pred=True, ttc_start=None):
    """Pedestrian moving at constant velocity; pred boxes equal GT unless pred=False."""
    frames = []
    for f in range(n_frames):
        scale = growth ** f
        box = BBox(start[0] + velocity[0] * f, start[1] + velocity[1] * f, size[0] * scale, size[1] * scale)
        frames.append(TrackFrame(
            frame_index=f,
            timestamp=f * dt,
            flow_ref=f"{track_id}/{f:06d}.flo",
            gt_box=box,
            pred_box=box if pred else None,
            ttc=None if ttc_start is None else max(ttc_start - f * dt, 0.0),
        ))
    return Track(track_id, frames)


def uniform_store(track, value=2.0, width=64, height=48):
    flow = uniform_flow(value, width, height)
    return MemoryFlowStore({frame.flow_ref: flow for frame in track.frames})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def smooth_spec():
    return ScenarioSpec(
        name="smooth",
        image_w=200,
        image_h=120,
        n_frames=16,
        ped_start=BBox(40.0, 30.0, 20.0, 40.0),
        ped_velocity=(1.5, 0.0),
        growth_rate=1.02,
        noise_std=0.05,
        seed=7,
        ttc_start=3.0,
    )


@pytest.fixture
def occlusion_spec(smooth_spec):
    return replace(smooth_spec, name="occluded", events=(Event("occlusion", frame=8, phi=0.5, side="right"), Event("dropout", frames=(8,))))
