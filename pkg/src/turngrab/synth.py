"""Synthetic conversations with known turn-grabbing intention.

One participant holds the floor at a time. Before each hand-over the next
speaker spends a few seconds in an "intention" state during which a subset
of feature channels ramps up; listeners also have occasional intentions
they never act on. Every frame carries its ground-truth intention label, so
windows drawn by the real sampling code can be scored against the truth.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .dataio import N_AUS, N_CHANNELS, FaceTrack
from .errors import InvalidConfig
from .segmentation import (
    SamplerConfig,
    Truth,
    eligible_unlabeled_starts,
    extract_samples,
    smooth_asd,
    window_frames,
)

DEFAULT_SIGNAL_CHANNELS = (0, 1, 2, 3, N_AUS, N_AUS + 1)  # AU01-AU04, gaze x/y
FRAME_SIZE = (1280, 720)


@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 4
    session_len: float = 600.0
    frame_rate: float = 25.0
    intention_lead: float = 3.0
    signal_channels: Tuple[int, ...] = DEFAULT_SIGNAL_CHANNELS
    signal_strength: float = 1.0
    noise_sigma: float = 0.5
    rng_seed: int = 0
    utterance_min: float = 1.5
    utterance_mean: float = 6.0
    gap_range: Tuple[float, float] = (0.2, 1.0)
    ramp_time: float = 1.0
    unrealized_per_minute: float = 0.5
    asd_noise: float = 0.5
    asd_glitch_per_minute: float = 1.0
    lean_scale: float = 1.2
    baseline_au: float = 1.0
    video_id: str = ""

    def __post_init__(self):
        if self.n_participants < 2:
            raise InvalidConfig("a conversation needs at least two participants")
        if not self.signal_channels:
            raise InvalidConfig("signal_channels must not be empty")
        if any(not 0 <= c < N_CHANNELS for c in self.signal_channels):
            raise InvalidConfig("signal channel index out of range")
        if self.noise_sigma < 0 or self.asd_noise < 0:
            raise InvalidConfig("noise levels must be non-negative")
        for name in ("session_len", "frame_rate", "intention_lead", "utterance_min", "ramp_time"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        lo, hi = self.gap_range
        if not 0 < lo <= hi:
            raise InvalidConfig("gap_range must satisfy 0 < low <= high")

    def to_dict(self):
        d = asdict(self)
        d["signal_channels"] = list(self.signal_channels)
        d["gap_range"] = list(self.gap_range)
        return d

    @property
    def vid(self):
        return self.video_id or f"synth{self.rng_seed}"


@dataclass
class Session:
    config: SynthConfig
    tracks: List[FaceTrack]
    truth: List[Tuple[str, Tuple[float, float], str]]
    utterances: List[Tuple[str, float, float]]
    takeovers: List[Tuple[str, float]]
    frame_labels: Dict[str, np.ndarray] = field(default_factory=dict)


def face_name(i):
    return f"p{i}"


def _schedule(cfg, rng):
    utterances, takeovers = [], []
    n = cfg.n_participants
    speaker = int(rng.integers(n))
    t = float(rng.uniform(0.0, 1.0))
    while t < cfg.session_len:
        end = t + cfg.utterance_min + rng.exponential(cfg.utterance_mean)
        utterances.append((speaker, t, min(end, cfg.session_len)))
        t = end + rng.uniform(*cfg.gap_range)
        others = [p for p in range(n) if p != speaker]
        speaker = int(others[rng.integers(len(others))])
        if t < cfg.session_len:
            takeovers.append((speaker, t))
    return utterances, takeovers


def generate_session(cfg):
    """Simulate one conversation; see the module docstring."""
    rng = np.random.default_rng(cfg.rng_seed)
    fr = cfg.frame_rate
    n_frames = int(round(cfg.session_len * fr))
    times = np.arange(n_frames) / fr
    utterances, takeovers = _schedule(cfg, rng)

    speaking = np.zeros((cfg.n_participants, n_frames), dtype=bool)
    for p, s, e in utterances:
        speaking[p, int(math.ceil(s * fr - 1e-9)):int(math.ceil(e * fr - 1e-9))] = True

    intentions = [[] for _ in range(cfg.n_participants)]
    for p, onset in takeovers:
        lead = cfg.intention_lead * rng.uniform(0.75, 1.25)
        own_end = max([e for q, s, e in utterances if q == p and e <= onset], default=0.0)
        intentions[p].append((max(onset - lead, own_end, 0.0), onset))

    minutes = cfg.session_len / 60.0
    for p in range(cfg.n_participants):
        for _ in range(rng.poisson(cfg.unrealized_per_minute * minutes)):
            lead = cfg.intention_lead * rng.uniform(0.75, 1.25)
            s = rng.uniform(0.0, max(cfg.session_len - lead, 0.0))
            lo, hi = int(s * fr), min(int((s + lead) * fr) + 1, n_frames)
            if speaking[p, lo:hi].any():
                continue
            if any(s < b and a < s + lead for a, b in intentions[p]):
                continue
            intentions[p].append((s, s + lead))

    cols = int(math.ceil(math.sqrt(cfg.n_participants)))
    rows = int(math.ceil(cfg.n_participants / cols))
    tile_w, tile_h = FRAME_SIZE[0] / cols, FRAME_SIZE[1] / rows

    tracks, truth, labels = [], [], {}
    ch = np.array(cfg.signal_channels)
    for p in range(cfg.n_participants):
        feats = np.zeros((n_frames, N_CHANNELS))
        feats[:, :N_AUS] = cfg.baseline_au
        ramp = np.zeros(n_frames)
        label = np.zeros(n_frames, dtype=bool)
        for s, e in sorted(intentions[p]):
            lo, hi = int(math.ceil(s * fr - 1e-9)), int(math.ceil(e * fr - 1e-9))
            if hi <= lo:
                continue
            label[lo:hi] = True
            ramp[lo:hi] = np.maximum(ramp[lo:hi], np.minimum(1.0, (times[lo:hi] - s) / cfg.ramp_time))
            truth.append((face_name(p), (float(s), float(e)), "intention"))
        feats[:, ch] += cfg.signal_strength * ramp[:, None]
        if cfg.noise_sigma > 0:
            feats += rng.normal(0.0, cfg.noise_sigma, size=feats.shape)
        feats[:, :N_AUS] = np.clip(feats[:, :N_AUS], 0.0, 5.0)

        score = np.where(speaking[p], 1.5, -1.5)
        if cfg.asd_noise > 0:
            score = score + rng.normal(0.0, cfg.asd_noise, size=n_frames)
        for _ in range(rng.poisson(cfg.asd_glitch_per_minute * minutes)):
            g0 = int(rng.integers(n_frames))
            g1 = min(n_frames, g0 + int(rng.uniform(0.2, 0.6) * fr))
            score[g0:g1] = -score[g0:g1]

        col, row = p % cols, p // cols
        side = 0.45 * min(tile_w, tile_h)
        grow = 1.0 + (cfg.lean_scale - 1.0) * ramp
        w = side * grow
        cx = (col + 0.5) * tile_w + np.zeros(n_frames)
        cy = (row + 0.5) * tile_h + 0.1 * side * ramp  # leaning in drops the face slightly
        bbox = np.column_stack([cx - w / 2, cy - w / 2, w, w])

        labels[face_name(p)] = label
        tracks.append(FaceTrack(
            face_id=face_name(p), frame_rate=fr, times=times.copy(), bbox=bbox,
            features=feats, asd=score, interpolated=np.zeros(n_frames, dtype=bool),
            video_id=cfg.vid,
        ))

    return Session(
        config=cfg,
        tracks=tracks,
        truth=sorted(truth, key=lambda r: (r[1][0], r[0])),
        utterances=[(face_name(p), s, e) for p, s, e in utterances],
        takeovers=[(face_name(p), t) for p, t in takeovers],
        frame_labels=labels,
    )


def window_truth(sample, session):
    """Ground truth of a window: intention at its last frame."""
    track = next(t for t in session.tracks if t.face_id == sample.face_id)
    k = int(round((sample.t_end - track.start) * track.frame_rate)) - 1
    return Truth.POSITIVE if session.frame_labels[sample.face_id][k] else Truth.NEGATIVE


@dataclass
class PUDataset:
    positive: list
    unlabeled: list
    test: list


def _session_rng(cfg, index):
    return np.random.default_rng([cfg.rng_seed, index])


def sample_session(session, cfg, index=0):
    """Run the real sampling pipeline on one session and attach truth."""
    pos, unl, _ = extract_samples(session.tracks, cfg, rng=_session_rng(cfg, index))
    for s in pos + unl:
        s.truth = window_truth(s, session)
    return pos, unl


def make_pu_dataset(sessions, cfg, n_holdout=1):
    """P and U from the leading sessions; a labeled test set from the last
    ``n_holdout`` sessions (both P and U windows, with truth)."""
    sessions = list(sessions)
    n_train = max(len(sessions) - n_holdout, 0)
    positive, unlabeled, test = [], [], []
    for i, sess in enumerate(sessions):
        pos, unl = sample_session(sess, cfg, i)
        if i < n_train:
            positive.extend(pos)
            unlabeled.extend(unl)
        else:
            test.extend(pos + unl)
    return PUDataset(positive, unlabeled, test)


def unlabeled_positive_rate(session, cfg, positives):
    """Expected positive fraction of the session's unlabeled windows.

    Each track contributes the positive share of its eligible window starts,
    weighted by how many windows the sampler draws from it.
    """
    expected = drawn = 0.0
    for tr in session.tracks:
        sm = smooth_asd(tr, cfg)
        starts = eligible_unlabeled_starts(sm, cfg, positives)
        want = int(round(cfg.unlabeled_per_minute * len(tr) / tr.frame_rate / 60.0))
        n = min(want, starts.size)
        if n == 0:
            continue
        T = window_frames(cfg, tr.frame_rate)
        rate = session.frame_labels[tr.face_id][starts + T - 1].mean()
        expected += n * rate
        drawn += n
    return expected / drawn if drawn else math.nan
