"""Feature and active-speaker streams: parsing, box matching, gap filling.

Two per-frame streams arrive as CSV files, one with facial features
(17 action units and 2 gaze angles per face) and one with active speaker
detection scores. They are joined per timestamp by bounding-box overlap and
the resulting per-face tracks have their feature gaps filled by linear
interpolation.
"""

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AmbiguousMatch,
    EmptyInput,
    MissingColumn,
    NonMonotonicTime,
    NonNumericField,
    TooFewFrames,
    VariableFrameRate,
)

N_AUS = 17
N_GAZE = 2
N_CHANNELS = N_AUS + N_GAZE
AU_COLUMNS = [f"au{i:02d}" for i in range(1, N_AUS + 1)]
GAZE_COLUMNS = ["gaze_x", "gaze_y"]
BOX_COLUMNS = ["x", "y", "w", "h"]
FEATURE_COLUMNS = ["time", "face_id", *BOX_COLUMNS, *AU_COLUMNS, *GAZE_COLUMNS]
ASD_COLUMNS = ["time", "face_id", *BOX_COLUMNS, "asd_score"]
AU_RANGE = (0.0, 5.0)

# timestamps from the two streams are compared at microsecond resolution
_TIME_KEY_SCALE = 1e6
FRAME_RATE_TOLERANCE = 0.01


@dataclass(frozen=True)
class FeatureFrame:
    """One observation of one face.

    Frames coming from the ASD stream alone have NaN ``aus``/``gaze``; those
    are the frames later filled by :func:`interpolate_gaps`.
    """

    time: float
    face_id: str
    bbox: Tuple[float, float, float, float]
    aus: np.ndarray
    gaze: np.ndarray
    asd_score: float = math.nan
    interpolated: bool = False

    def __post_init__(self):
        if np.shape(self.aus) != (N_AUS,) or np.shape(self.gaze) != (N_GAZE,):
            raise ValueError("a frame carries exactly 17 action units and 2 gaze values")

    @property
    def features(self):
        return np.concatenate([self.aus, self.gaze])

    @property
    def missing(self):
        return bool(np.isnan(self.aus).any() or np.isnan(self.gaze).any())


@dataclass
class FaceTrack:
    """Column-oriented time series for one face.

    ``features`` is ``(N, 19)``: the 17 AUs followed by the 2 gaze angles.
    """

    face_id: str
    frame_rate: float
    times: np.ndarray
    bbox: np.ndarray
    features: np.ndarray
    asd: np.ndarray
    interpolated: np.ndarray
    video_id: str = ""
    speaking_segments: List[Tuple[float, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    @property
    def missing(self):
        return np.isnan(self.features).any(axis=1)

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        """Exclusive end time (one frame period after the last frame)."""
        return float(self.times[-1]) + 1.0 / self.frame_rate

    @property
    def frames(self):
        return [
            FeatureFrame(
                time=float(self.times[i]),
                face_id=self.face_id,
                bbox=tuple(float(v) for v in self.bbox[i]),
                aus=self.features[i, :N_AUS].copy(),
                gaze=self.features[i, N_AUS:].copy(),
                asd_score=float(self.asd[i]),
                interpolated=bool(self.interpolated[i]),
            )
            for i in range(len(self.times))
        ]

    def slice(self, lo, hi):
        return replace(
            self,
            times=self.times[lo:hi].copy(),
            bbox=self.bbox[lo:hi].copy(),
            features=self.features[lo:hi].copy(),
            asd=self.asd[lo:hi].copy(),
            interpolated=self.interpolated[lo:hi].copy(),
            speaking_segments=[],
        )

    @classmethod
    def from_frames(cls, frames, frame_rate, video_id=""):
        if not frames:
            raise EmptyInput("cannot build a track from zero frames")
        return cls(
            face_id=frames[0].face_id,
            frame_rate=float(frame_rate),
            times=np.array([f.time for f in frames], dtype=np.float64),
            bbox=np.array([f.bbox for f in frames], dtype=np.float64).reshape(-1, 4),
            features=np.array([f.features for f in frames], dtype=np.float64).reshape(-1, N_CHANNELS),
            asd=np.array([f.asd_score for f in frames], dtype=np.float64),
            interpolated=np.array([f.interpolated for f in frames], dtype=bool),
            video_id=video_id,
        )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _parse_float(text, row, col):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise NonNumericField(row, col) from None
    if not math.isfinite(value):
        raise NonNumericField(row, col)
    return value


def parse_feature_stream(path, format="feature_csv"):
    """Read a ``feature_csv`` or ``asd_csv`` file into frames.

    Rows are validated strictly: a malformed value raises instead of being
    dropped. Row numbers in errors are file line numbers (header is line 1).
    The result is sorted by ``(face_id, time)``.
    """
    if format == "feature_csv":
        columns = FEATURE_COLUMNS
    elif format == "asd_csv":
        columns = ASD_COLUMNS
    else:
        raise ValueError(f"unknown stream format {format!r}")

    frames = []
    last_time = {}
    nan_aus = np.full(N_AUS, np.nan)
    nan_gaze = np.full(N_GAZE, np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            t = _parse_float(rec["time"], lineno, "time")
            if t < 0:
                raise NonNumericField(lineno, "time", "must be non-negative")
            face_id = (rec["face_id"] or "").strip()
            if not face_id:
                raise NonNumericField(lineno, "face_id", "empty face id")
            box = tuple(_parse_float(rec[c], lineno, c) for c in BOX_COLUMNS)
            for c, v in zip(("w", "h"), box[2:]):
                if v <= 0:
                    raise NonNumericField(lineno, c, "box extent must be positive")
            prev = last_time.get(face_id)
            if prev is not None and t <= prev:
                raise NonMonotonicTime(face_id, lineno)
            last_time[face_id] = t

            if format == "feature_csv":
                aus = np.array([_parse_float(rec[c], lineno, c) for c in AU_COLUMNS])
                bad = np.flatnonzero((aus < AU_RANGE[0]) | (aus > AU_RANGE[1]))
                if bad.size:
                    raise NonNumericField(lineno, AU_COLUMNS[bad[0]], "action unit outside [0, 5]")
                gaze = np.array([_parse_float(rec[c], lineno, c) for c in GAZE_COLUMNS])
                frames.append(FeatureFrame(t, face_id, box, aus, gaze))
            else:
                score = _parse_float(rec["asd_score"], lineno, "asd_score")
                frames.append(FeatureFrame(t, face_id, box, nan_aus, nan_gaze, asd_score=score))

    frames.sort(key=lambda f: (f.face_id, f.time))
    return frames


def write_feature_csv(path, tracks):
    """Write the feature columns of ``tracks`` as a ``feature_csv`` file."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_COLUMNS)
        for tr in tracks:
            for i in np.flatnonzero(~tr.missing):
                w.writerow([repr(float(tr.times[i])), tr.face_id,
                            *(repr(float(v)) for v in tr.bbox[i]),
                            *(repr(float(v)) for v in tr.features[i])])


def write_asd_csv(path, tracks):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ASD_COLUMNS)
        for tr in tracks:
            for i in range(len(tr)):
                w.writerow([repr(float(tr.times[i])), tr.face_id,
                            *(repr(float(v)) for v in tr.bbox[i]), repr(float(tr.asd[i]))])


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


def intersection_area(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = min(ax + aw, bx + bw) - max(ax, bx)
    iy = min(ay + ah, by + bh) - max(ay, by)
    if ix <= 0 or iy <= 0:
        return 0.0
    return ix * iy


def _time_key(t):
    return int(round(t * _TIME_KEY_SCALE))


def infer_frame_rate(times):
    dt = np.diff(np.asarray(times, dtype=np.float64))
    if dt.size == 0:
        raise TooFewFrames("need at least two frames to infer a frame rate")
    return 1.0 / float(np.median(dt))


def match_tracks(features, asd, video_id=""):
    """Join feature frames onto ASD frames by bounding-box overlap.

    For every ASD record the feature record at the same timestamp whose box
    overlaps it with positive area supplies the features. ASD records with
    no overlapping feature box keep NaN features (to be interpolated). A box
    overlapping more than one box of the other stream raises
    :class:`AmbiguousMatch`.

    Returns one :class:`FaceTrack` per ASD face id, split wherever the ASD
    stream itself skips frames.
    """
    if not asd:
        raise EmptyInput("ASD stream is empty")
    if not features:
        raise EmptyInput("feature stream is empty")

    feat_by_time = defaultdict(list)
    for fr in features:
        feat_by_time[_time_key(fr.time)].append(fr)
    asd_by_time = defaultdict(list)
    for fr in asd:
        asd_by_time[_time_key(fr.time)].append(fr)

    merged = defaultdict(list)
    for key in sorted(asd_by_time):
        records = asd_by_time[key]
        candidates = feat_by_time.get(key, [])
        used = set()
        for rec in records:
            hits = [j for j, f in enumerate(candidates) if intersection_area(rec.bbox, f.bbox) > 0]
            if len(hits) > 1:
                raise AmbiguousMatch(rec.time)
            if hits:
                j = hits[0]
                if j in used:
                    raise AmbiguousMatch(rec.time)
                used.add(j)
                f = candidates[j]
                merged[rec.face_id].append(
                    FeatureFrame(rec.time, rec.face_id, f.bbox, f.aus, f.gaze, rec.asd_score)
                )
            else:
                merged[rec.face_id].append(rec)

    all_dt = []
    for frames in merged.values():
        frames.sort(key=lambda f: f.time)
        all_dt.extend(np.diff([f.time for f in frames]))
    if not all_dt:
        raise TooFewFrames("need at least two ASD frames of one face to infer a frame rate")
    period = float(np.median(all_dt))

    tracks = []
    for face_id in sorted(merged):
        frames = merged[face_id]
        start = 0
        for i in range(1, len(frames) + 1):
            if i < len(frames):
                ratio = (frames[i].time - frames[i - 1].time) / period
                k = round(ratio)
                if k < 1 or abs(ratio - k) > FRAME_RATE_TOLERANCE * k:
                    raise VariableFrameRate(
                        f"face {face_id!r}: interval {frames[i].time - frames[i - 1].time:.6f}s "
                        f"is not a multiple of the {period:.6f}s frame period"
                    )
                if k == 1:
                    continue
            tracks.append(FaceTrack.from_frames(frames[start:i], 1.0 / period, video_id))
            start = i
    return tracks


# ---------------------------------------------------------------------------
# gap filling
# ---------------------------------------------------------------------------


def _missing_runs(missing):
    """(start, stop) index pairs of maximal True runs."""
    padded = np.concatenate([[False], missing, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def interpolate_gaps(track, max_gap=1.0):
    """Fill missing frames that sit between two valid frames at most
    ``max_gap`` seconds apart.

    Features and boxes are interpolated linearly per channel and the filled
    frames get ``interpolated=True``. Longer gaps and missing frames at the
    track edges are left untouched; :func:`split_track` removes them.
    """
    missing = track.missing
    if int((~missing).sum()) < 2:
        raise TooFewFrames(f"track {track.face_id!r} has fewer than two valid frames")
    features = track.features.copy()
    bbox = track.bbox.copy()
    interpolated = track.interpolated.copy()
    t = track.times
    for lo, hi in _missing_runs(missing):
        if lo == 0 or hi == len(t):
            continue
        t0, t1 = t[lo - 1], t[hi]
        if t1 - t0 > max_gap + 1e-9:
            continue
        w = ((t[lo:hi] - t0) / (t1 - t0))[:, None]
        features[lo:hi] = features[lo - 1] + w * (features[hi] - features[lo - 1])
        bbox[lo:hi] = bbox[lo - 1] + w * (bbox[hi] - bbox[lo - 1])
        interpolated[lo:hi] = True
    return replace(track, features=features, bbox=bbox, interpolated=interpolated,
                   speaking_segments=list(track.speaking_segments))


def split_track(track):
    """Drop still-missing frames and cut the track wherever frames are absent."""
    keep = np.flatnonzero(~track.missing)
    if keep.size == 0:
        return []
    pieces = []
    breaks = np.flatnonzero(np.diff(keep) > 1) + 1
    for idx in np.split(keep, breaks):
        pieces.append(track.slice(idx[0], idx[-1] + 1))
    return pieces


def ingest(feature_path, asd_path, video_id="", max_gap=1.0):
    """Parse both streams, match them and return gap-free tracks."""
    features = parse_feature_stream(feature_path, "feature_csv")
    asd = parse_feature_stream(asd_path, "asd_csv")
    features.sort(key=lambda f: f.time)
    asd.sort(key=lambda f: f.time)
    out = []
    for tr in match_tracks(features, asd, video_id=video_id):
        if int((~tr.missing).sum()) < 2:
            continue
        out.extend(split_track(interpolate_gaps(tr, max_gap)))
    return out


# ---------------------------------------------------------------------------
# track files
# ---------------------------------------------------------------------------

_TRACK_FIELDS = ["time", "face_id", *BOX_COLUMNS, *AU_COLUMNS, *GAZE_COLUMNS, "asd_score", "interpolated"]


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def write_track_jsonl(track, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(track)):
            row = {"time": float(track.times[i]), "face_id": track.face_id}
            row.update(zip(BOX_COLUMNS, map(_num, track.bbox[i])))
            row.update(zip(AU_COLUMNS + GAZE_COLUMNS, map(_num, track.features[i])))
            row["asd_score"] = _num(track.asd[i])
            row["interpolated"] = bool(track.interpolated[i])
            fh.write(json.dumps(row) + "\n")


def read_track_jsonl(path, frame_rate=None, video_id=""):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    if not rows:
        raise EmptyInput(f"{path}: empty track file")

    def col(names):
        return np.array([[np.nan if r[n] is None else r[n] for n in names] for r in rows], dtype=np.float64)

    times = col(["time"])[:, 0]
    if frame_rate is None:
        frame_rate = infer_frame_rate(times)
    return FaceTrack(
        face_id=str(rows[0]["face_id"]),
        frame_rate=float(frame_rate),
        times=times,
        bbox=col(BOX_COLUMNS),
        features=col(AU_COLUMNS + GAZE_COLUMNS),
        asd=col(["asd_score"])[:, 0],
        interpolated=np.array([bool(r["interpolated"]) for r in rows]),
        video_id=video_id,
    )


def save_tracks(tracks, directory, video_id=None):
    """Write one JSON-lines file per track plus a ``tracks.json`` index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for n, tr in enumerate(tracks):
        name = f"track_{n:04d}.jsonl"
        write_track_jsonl(tr, directory / name)
        entries.append({"file": name, "face_id": tr.face_id, "video_id": tr.video_id,
                        "frame_rate": tr.frame_rate})
    index = {"video_id": video_id if video_id is not None else (tracks[0].video_id if tracks else ""),
             "tracks": entries}
    (directory / "tracks.json").write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")
    return directory / "tracks.json"


def load_tracks(directory):
    directory = Path(directory)
    index = json.loads((directory / "tracks.json").read_text(encoding="utf-8"))
    return [
        read_track_jsonl(directory / e["file"], frame_rate=e.get("frame_rate"),
                         video_id=e.get("video_id", index.get("video_id", "")))
        for e in index["tracks"]
    ]
