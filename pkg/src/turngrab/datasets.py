"""On-disk sample datasets.

A dataset directory holds three files:

``manifest.json``
    config echo, seed, counts and tensor shape
``samples.f32``
    little-endian float32 tensor, row-major ``[N, T, C]``
``index.jsonl``
    one record per sample (source, times, PU role, truth)
"""

import json
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeMismatch
from .segmentation import PURole, Sample, Truth

MANIFEST = "manifest.json"
TENSOR = "samples.f32"
INDEX = "index.jsonl"
FORMAT = "turngrab-samples/1"


def save_dataset(directory, samples, config=None, seed=None, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {np.shape(s.data) for s in samples}
    if len(shapes) > 1:
        raise ShapeMismatch(f"samples differ in shape: {sorted(shapes)}")
    T, C = shapes.pop() if shapes else (0, 0)
    tensor = np.zeros((len(samples), T, C), dtype="<f4")
    for i, s in enumerate(samples):
        tensor[i] = s.data
    (directory / TENSOR).write_bytes(tensor.tobytes())
    with open(directory / INDEX, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps({
                "video_id": s.video_id,
                "face_id": s.face_id,
                "t_start": s.t_start,
                "t_end": s.t_end,
                "pu_role": PURole(s.pu_role).value,
                "truth": None if s.truth is None else Truth(s.truth).value,
            }) + "\n")
    counts = {
        "positive": sum(1 for s in samples if s.pu_role == PURole.POSITIVE),
        "unlabeled": sum(1 for s in samples if s.pu_role == PURole.UNLABELED),
        "total": len(samples),
        "with_truth": sum(1 for s in samples if s.truth is not None),
    }
    manifest = {
        "format": FORMAT,
        "dtype": "float32-le",
        "shape": [len(samples), T, C],
        "tensor": TENSOR,
        "index": INDEX,
        "counts": counts,
        "seed": seed,
        "config": config or {},
    }
    if extra:
        manifest.update(extra)
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _manifest_path(path):
    path = Path(path)
    return path / MANIFEST if path.is_dir() else path


def load_dataset(path):
    """Samples from a manifest path (or its directory)."""
    mpath = _manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset manifest {mpath}: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise DataError(f"{mpath}: unknown dataset format {manifest.get('format')!r}")
    N, T, C = manifest["shape"]
    raw = (mpath.parent / manifest["tensor"]).read_bytes()
    if len(raw) != 4 * N * T * C:
        raise ShapeMismatch(f"{mpath}: tensor file holds {len(raw)} bytes, expected {4 * N * T * C}")
    tensor = np.frombuffer(raw, dtype="<f4").reshape(N, T, C).astype(np.float32)
    with open(mpath.parent / manifest["index"], encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if len(records) != N:
        raise ShapeMismatch(f"{mpath}: index has {len(records)} records for {N} samples")
    return [
        Sample(r["video_id"], r["face_id"], r["t_start"], r["t_end"], tensor[i],
               PURole(r["pu_role"]), None if r["truth"] is None else Truth(r["truth"]))
        for i, r in enumerate(records)
    ]


def load_manifest(path):
    return json.loads(_manifest_path(path).read_text(encoding="utf-8"))
