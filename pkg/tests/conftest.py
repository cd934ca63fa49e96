import numpy as np
import pytest

from turngrab.dataio import N_CHANNELS, FaceTrack


def make_track(times=None, *, n=None, frame_rate=25.0, face_id="a", video_id="v", asd=None,
               features=None, start=0.0):
    """Small helper track; defaults to silent, feature value 1 everywhere."""
    if times is None:
        times = start + np.arange(n) / frame_rate
    times = np.asarray(times, dtype=np.float64)
    n = len(times)
    if asd is None:
        asd = np.full(n, -1.0)
    if features is None:
        features = np.ones((n, N_CHANNELS))
    bbox = np.tile([10.0, 10.0, 20.0, 20.0], (n, 1))
    return FaceTrack(face_id=face_id, frame_rate=frame_rate, times=times, bbox=bbox,
                     features=np.asarray(features, dtype=np.float64), asd=np.asarray(asd, float),
                     interpolated=np.zeros(n, dtype=bool), video_id=video_id)


def speech_track(segments, duration, frame_rate=25.0, face_id="a", video_id="v", **kw):
    """Track whose ASD score is +1 inside ``segments`` (frame-time half-open) and -1 elsewhere."""
    n = int(round(duration * frame_rate))
    times = np.arange(n) / frame_rate
    asd = np.full(n, -1.0)
    for s, e in segments:
        asd[(times >= s - 1e-9) & (times < e - 1e-9)] = 1.0
    return make_track(times, frame_rate=frame_rate, face_id=face_id, video_id=video_id, asd=asd, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
