"""Speaking segments, turn-taking events and positive/unlabeled windows.

A window of facial features that ends shortly before a participant takes
the floor is a positive example of turn-grabbing intention. Every other
non-speaking window is unlabeled: it may or may not contain intention.
"""

import enum
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidConfig, UnknownLabel

log = logging.getLogger(__name__)

_EPS = 1e-9


class Truth(str, enum.Enum):
    NEGATIVE = "negative"
    POSSIBLY_POSITIVE = "possibly_positive"
    POSITIVE = "positive"
    OUTLIER = "outlier"


class PURole(str, enum.Enum):
    POSITIVE = "positive"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class SamplerConfig:
    window_len: float = 4.0
    l_max: float = 10.0
    l_excl: float = 0.5
    min_duration: float = 1.0
    asd_threshold: float = 0.0
    unlabeled_per_minute: float = 4.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("window_len", "l_max", "l_excl", "min_duration"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.window_len + self.l_excl > self.l_max + _EPS:
            raise InvalidConfig("window_len + l_excl must not exceed l_max")
        if self.unlabeled_per_minute < 0:
            raise InvalidConfig("unlabeled_per_minute must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TurnEvent:
    new_speaker: str
    onset: float
    previous_speaker: Optional[str] = None
    # None when the previous speaker was still talking at the onset
    previous_end: Optional[float] = None


@dataclass
class Sample:
    video_id: str
    face_id: str
    t_start: float
    t_end: float
    data: np.ndarray
    pu_role: PURole
    truth: Optional[Truth] = None

    @property
    def source(self):
        return (self.video_id, self.face_id)

    def overlaps(self, other):
        return (self.source == other.source
                and self.t_start < other.t_end - _EPS and other.t_start < self.t_end - _EPS)


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------


def _runs(mask):
    """(start, stop, value) for maximal constant runs of a boolean array."""
    n = len(mask)
    if n == 0:
        return []
    cuts = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [n]])
    return [(int(a), int(b), bool(mask[a])) for a, b in zip(starts, stops)]


def smooth_mask(mask, frame_rate, min_duration):
    """Two fixed passes: drop short speech, then fill short interior silences."""
    mask = np.asarray(mask, dtype=bool).copy()
    min_frames = min_duration * frame_rate - _EPS
    for a, b, v in _runs(mask):
        if v and b - a < min_frames:
            mask[a:b] = False
    runs = _runs(mask)
    for j, (a, b, v) in enumerate(runs):
        interior = 0 < j < len(runs) - 1
        if not v and interior and b - a < min_frames:
            mask[a:b] = True
    return mask


def mask_to_segments(mask, times, frame_rate):
    return [(float(times[a]), float(times[b - 1]) + 1.0 / frame_rate)
            for a, b, v in _runs(np.asarray(mask, dtype=bool)) if v]


def segments_to_mask(segments, times):
    mask = np.zeros(len(times), dtype=bool)
    for s, e in segments:
        mask |= (times >= s - _EPS) & (times < e - _EPS)
    return mask


def smooth_asd(track, cfg):
    """Threshold ASD scores and clean up short glitches.

    Returns a copy of ``track`` whose ``speaking_segments`` are disjoint,
    sorted, and at least ``cfg.min_duration`` long, with interior silences
    of at least the same length.
    """
    if len(track) == 0:
        return replace(track, speaking_segments=[])
    raw = np.nan_to_num(track.asd, nan=-np.inf) > cfg.asd_threshold
    mask = smooth_mask(raw, track.frame_rate, cfg.min_duration)
    return replace(track, speaking_segments=mask_to_segments(mask, track.times, track.frame_rate))


def speaking_mask(track):
    return segments_to_mask(track.speaking_segments, track.times)


# ---------------------------------------------------------------------------
# turn events
# ---------------------------------------------------------------------------


def detect_turn_events(tracks):
    """Speaker changes on a shared time axis (one video).

    Segments are scanned in onset order; an onset by someone other than the
    most recent speaker is a turn event. A speaker resuming after their own
    pause is not.
    """
    segs = sorted(((s, e, tr.face_id) for tr in tracks for s, e in tr.speaking_segments),
                  key=lambda x: (x[0], x[2]))
    events = []
    last_speaker = None
    last_end = None
    for start, end, face in segs:
        if last_speaker is not None and face != last_speaker:
            prev_end = last_end if start > last_end else None
            events.append(TurnEvent(face, start, last_speaker, prev_end))
        last_speaker, last_end = face, end
    return events


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def window_frames(cfg, frame_rate):
    return int(round(cfg.window_len * frame_rate))


def _by_face(tracks):
    groups = defaultdict(list)
    for tr in tracks:
        groups[(tr.video_id, tr.face_id)].append(tr)
    for trs in groups.values():
        trs.sort(key=lambda tr: tr.start)
    return groups


def _rng(cfg, rng):
    return np.random.default_rng(cfg.rng_seed) if rng is None else rng


def extract_positive_samples(tracks, events, cfg, rng=None, skipped=None):
    """Draw one window per turn event from the new speaker's track.

    The window start is uniform on ``[onset - l_max, onset - l_excl -
    window_len]``, snapped to the track's frame grid without leaving that
    interval. Events whose window is not fully covered by valid frames are
    skipped; ``(event, reason)`` pairs are appended to ``skipped`` if given.
    """
    rng = _rng(cfg, rng)
    groups = _by_face(tracks)
    video_ids = {tr.video_id for tr in tracks}
    out = []

    def skip(ev, reason):
        log.info("skipping turn event %s at %.3fs: %s", ev.new_speaker, ev.onset, reason)
        if skipped is not None:
            skipped.append((ev, reason))

    for ev in sorted(events, key=lambda e: (e.onset, e.new_speaker)):
        lo_bound = ev.onset - cfg.l_max
        hi_bound = ev.onset - cfg.l_excl - cfg.window_len
        u = rng.uniform(lo_bound, hi_bound)
        candidates = [tr for v in sorted(video_ids) for tr in groups.get((v, ev.new_speaker), [])]
        track = next((tr for tr in candidates if tr.start - _EPS <= u < tr.end), None)
        if track is None:
            skip(ev, "no track of the new speaker covers the drawn window start")
            continue
        fr = track.frame_rate
        T = window_frames(cfg, fr)
        k = int(round((u - track.start) * fr))
        if track.start + k / fr < lo_bound - _EPS:
            k += 1
        if track.start + (k + T) / fr > ev.onset - cfg.l_excl + _EPS:
            k -= 1
        t0 = track.start + k / fr
        if t0 < lo_bound - _EPS or t0 + T / fr > ev.onset - cfg.l_excl + _EPS:
            skip(ev, "no frame-aligned window fits the sampling interval")
            continue
        if k < 0 or k + T > len(track):
            skip(ev, "insufficient history in the track")
            continue
        data = track.features[k:k + T]
        if np.isnan(data).any():
            skip(ev, "window contains missing features")
            continue
        t_start = float(track.times[k])
        out.append(Sample(track.video_id, track.face_id, t_start, t_start + T / fr,
                          data.astype(np.float32), PURole.POSITIVE))
    return out


def eligible_unlabeled_starts(track, cfg, positives=()):
    """Frame indices where an unlabeled window may start.

    Eligible windows are fully non-speaking, free of missing values, and do
    not overlap any positive window of the same face.
    """
    T = window_frames(cfg, track.frame_rate)
    n = len(track)
    if n < T:
        return np.zeros(0, dtype=np.int64)
    bad = np.concatenate([[0], np.cumsum(speaking_mask(track) | track.missing)])
    starts = np.arange(n - T + 1)
    clean = bad[starts + T] - bad[starts] == 0
    t = track.times[starts]
    width = T / track.frame_rate
    for p in positives:
        if p.source == (track.video_id, track.face_id):
            clean &= ~((t < p.t_end - _EPS) & (p.t_start < t + width - _EPS))
    return starts[clean]


def extract_unlabeled_samples(tracks, events, cfg, positives=(), rng=None):
    """Uniformly sample non-speaking windows at ``unlabeled_per_minute`` per track.

    ``events`` is accepted for interface symmetry; exclusion of pre-onset
    material happens through ``positives``.
    """
    rng = _rng(cfg, rng)
    out = []
    for tr in sorted(tracks, key=lambda t: (t.video_id, t.face_id, t.start)):
        if len(tr) == 0:
            continue
        T = window_frames(cfg, tr.frame_rate)
        minutes = len(tr) / tr.frame_rate / 60.0
        want = int(round(cfg.unlabeled_per_minute * minutes))
        starts = eligible_unlabeled_starts(tr, cfg, positives)
        if want == 0 or starts.size == 0:
            continue
        chosen = np.sort(rng.choice(starts, size=min(want, starts.size), replace=False))
        for k in chosen:
            t_start = float(tr.times[k])
            out.append(Sample(tr.video_id, tr.face_id, t_start, t_start + T / tr.frame_rate,
                              tr.features[k:k + T].astype(np.float32), PURole.UNLABELED))
    return out


def extract_samples(tracks, cfg, rng=None, skipped=None):
    """Smooth, detect turns per video and draw P then U windows.

    Returns ``(positives, unlabeled, events)``; ``events`` maps video id to
    that video's turn events.
    """
    rng = _rng(cfg, rng)
    by_video = defaultdict(list)
    for tr in tracks:
        by_video[tr.video_id].append(smooth_asd(tr, cfg))
    positives, unlabeled, events = [], [], {}
    for vid in sorted(by_video):
        trs = by_video[vid]
        ev = detect_turn_events(trs)
        events[vid] = ev
        pos = extract_positive_samples(trs, ev, cfg, rng=rng, skipped=skipped)
        unl = extract_unlabeled_samples(trs, ev, cfg, positives=pos, rng=rng)
        positives.extend(pos)
        unlabeled.extend(unl)
    return positives, unlabeled, events


# ---------------------------------------------------------------------------
# annotation labels
# ---------------------------------------------------------------------------


def merge_annotation_labels(label, mode="val_merge"):
    """Collapse a four-class annotation to a binary label.

    ``val_merge`` counts "possibly positive" as positive; ``train_binary``
    only accepts the two unambiguous classes. ``None`` means the sample is
    dropped (outliers, and in ``train_binary`` also possibly-positive).
    """
    try:
        label = Truth(label)
    except ValueError:
        raise UnknownLabel(f"unknown annotation label {label!r}") from None
    if label is Truth.OUTLIER:
        return None
    if label is Truth.POSSIBLY_POSITIVE:
        if mode == "val_merge":
            return True
        if mode == "train_binary":
            return None
        raise ValueError(f"unknown merge mode {mode!r}")
    if mode not in ("val_merge", "train_binary"):
        raise ValueError(f"unknown merge mode {mode!r}")
    return label is Truth.POSITIVE


def merge_label_counts(counts, mode="val_merge"):
    """Apply :func:`merge_annotation_labels` to a ``{label: count}`` table.

    Returns ``{"negative": n, "positive": n, "total": n}``.
    """
    neg = pos = 0
    for label, n in counts.items():
        merged = merge_annotation_labels(label, mode)
        if merged is True:
            pos += n
        elif merged is False:
            neg += n
    return {"negative": neg, "positive": pos, "total": neg + pos}
