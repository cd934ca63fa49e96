"""Pseudo leaning-forward: a recorded zoom-and-shift replayed on video frames.

A trajectory is a per-frame list of ``(scale, shift_x, shift_y)``; shifts
are fractions of the frame width/height. It is built from how face boxes
grew and moved before real turn onsets, then played back with inverse
mapping bilinear warps when an intention is predicted.
"""

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InvalidBuffer, NoUsableEvents

SCALE_RANGE = (1.0, 1.5)
IDENTITY = (1.0, 0.0, 0.0)


@dataclass
class LeanTrajectory:
    samples: np.ndarray  # (N, 3): scale, shift_x, shift_y
    frame_rate: float

    @property
    def duration(self):
        return len(self.samples) / self.frame_rate

    def __len__(self):
        return len(self.samples)

    def to_json(self):
        return {
            "frame_rate": self.frame_rate,
            "samples": [{"scale": float(s), "shift_x": float(x), "shift_y": float(y)}
                        for s, x, y in self.samples],
        }

    @classmethod
    def from_json(cls, data):
        rows = [(d["scale"], d["shift_x"], d["shift_y"]) for d in data["samples"]]
        return cls(np.array(rows, dtype=np.float64).reshape(-1, 3), float(data["frame_rate"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def identity_trajectory(n, frame_rate=25.0):
    return LeanTrajectory(np.tile(np.array(IDENTITY), (n, 1)), frame_rate)


def _event_profile(track, onset, lead, frame_size, n):
    """Scale and normalised shift of one face over ``[onset - lead, onset]``."""
    t0 = onset - lead
    if track.start > t0 + 1e-9 or track.times[-1] < onset - 1e-9:
        return None
    box = track.bbox
    if np.isnan(box).any():
        return None
    grid = t0 + np.linspace(0.0, lead, n)
    area = np.interp(grid, track.times, box[:, 2] * box[:, 3])
    cx = np.interp(grid, track.times, box[:, 0] + box[:, 2] / 2.0)
    cy = np.interp(grid, track.times, box[:, 1] + box[:, 3] / 2.0)
    if not area[0] > 0:
        return None
    W, H = frame_size
    return np.column_stack([np.sqrt(area / area[0]), (cx - cx[0]) / W, (cy - cy[0]) / H])


def trajectory_from_tracks(tracks, events, lead=2.0, frame_size=(1280, 720), frame_rate=None):
    """Average lean-in profile before turn onsets, mirrored into a return.

    For each event the new speaker's box is resampled on ``lead`` seconds
    before the onset; scale is the square root of the area ratio to the
    first frame and shift the centre displacement as a fraction of
    ``frame_size``. Profiles are averaged pointwise, scale is clamped to
    [1, 1.5], and the lean-in is followed by its time reverse so the
    trajectory starts and ends at the identity.
    """
    by_face = {}
    for tr in tracks:
        by_face.setdefault(tr.face_id, []).append(tr)
    if frame_rate is None:
        if not tracks:
            raise NoUsableEvents("no tracks")
        frame_rate = tracks[0].frame_rate
    n = int(round(lead * frame_rate)) + 1
    profiles = []
    for ev in events:
        for tr in by_face.get(ev.new_speaker, []):
            prof = _event_profile(tr, ev.onset, lead, frame_size, n)
            if prof is not None:
                profiles.append(prof)
                break
    if not profiles:
        raise NoUsableEvents("no event has a full lead window of face boxes")
    mean = np.mean(profiles, axis=0)
    mean[:, 0] = np.clip(mean[:, 0], *SCALE_RANGE)
    mean[0] = IDENTITY
    samples = np.vstack([mean, mean[-2::-1]])
    samples[-1] = IDENTITY
    return LeanTrajectory(samples, float(frame_rate))


def make_affine(scale, shift_x, shift_y, center, frame_size=(1.0, 1.0)):
    """2x3 matrix mapping an output pixel to its source coordinate.

    ``source = center + (p - center) / scale - (shift_x * W, shift_y * H)``.
    With zero shift the centre maps onto itself exactly for scales in [0.5, 2].
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    cx, cy = center
    W, H = frame_size
    inv = 1.0 / scale
    return np.array([
        [inv, 0.0, (cx - inv * cx) - shift_x * W],
        [0.0, inv, (cy - inv * cy) - shift_y * H],
    ])


def invert_affine(A):
    M = np.vstack([A, [0.0, 0.0, 1.0]])
    return np.linalg.inv(M)[:2]


def _check_image(image):
    if not isinstance(image, np.ndarray) or image.dtype != np.uint8 or image.ndim != 3 \
            or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidBuffer("expected an (H, W, 3) uint8 image")


def warp(image, matrix):
    """Inverse-mapping bilinear warp with clamped edges; output size = input size."""
    _check_image(image)
    A = np.asarray(matrix, dtype=np.float64)
    if A.shape != (2, 3):
        raise ValueError("affine matrix must be 2x3")
    if np.array_equal(A, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]):
        return image.copy()
    return kernels.warp_bilinear(np.ascontiguousarray(image), A)


def schedule_playbacks(frame_times, trigger_times, duration):
    """Start times of the playbacks that actually run.

    A trigger starts a playback unless one is already running; triggers
    arriving during playback are dropped.
    """
    starts = []
    busy_until = -math.inf
    for t in sorted(trigger_times):
        if t >= busy_until:
            starts.append(float(t))
            busy_until = t + duration
    return starts


def apply_effect(frames, trajectory, trigger_times, face_centers=None, frame_times=None, jobs=1):
    """Warp the frames that fall inside a playback; pass the rest through.

    ``frame_times`` defaults to ``index / trajectory.frame_rate``;
    ``face_centers`` (pixel ``(cx, cy)`` per frame) default to the image
    centre. Returns ``(frames_out, playback_starts)``.
    """
    frames = list(frames)
    if frame_times is None:
        frame_times = [i / trajectory.frame_rate for i in range(len(frames))]
    if any(b < a for a, b in zip(frame_times, frame_times[1:])):
        raise ValueError("frame timestamps must be non-decreasing")
    starts = schedule_playbacks(frame_times, trigger_times, trajectory.duration)

    jobs_list = []
    for i, (img, t) in enumerate(zip(frames, frame_times)):
        k = None
        for s in starts:
            if s - 1e-9 <= t < s + trajectory.duration - 1e-9:
                k = int(round((t - s) * trajectory.frame_rate))
                break
        if k is None or k >= len(trajectory):
            continue
        scale, sx, sy = trajectory.samples[k]
        h, w = img.shape[:2]
        center = face_centers[i] if face_centers is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
        jobs_list.append((i, make_affine(scale, sx, sy, center, (w, h))))

    out = list(frames)

    def run(job):
        i, A = job
        return i, warp(frames[i], A)

    if jobs > 1 and len(jobs_list) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, jobs_list))
    else:
        results = [run(j) for j in jobs_list]
    for i, img in results:
        out[i] = img
    return out, starts


# ---------------------------------------------------------------------------
# binary PPM (P6)
# ---------------------------------------------------------------------------

_PPM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_ppm(path):
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise InvalidBuffer(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise InvalidBuffer(f"{path}: not a binary PPM (P6)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise InvalidBuffer(f"{path}: only 8-bit PPM is supported")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise InvalidBuffer(f"{path}: pixel data is truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image):
    _check_image(image)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(image).tobytes())


def list_frames(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".ppm")
