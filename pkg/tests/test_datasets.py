import json

import numpy as np
import pytest

from turngrab.datasets import load_dataset, load_manifest, save_dataset
from turngrab.errors import DataError, ShapeMismatch
from turngrab.segmentation import PURole, Sample, Truth


def samples(n=5, T=10, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        role = PURole.POSITIVE if i % 2 == 0 else PURole.UNLABELED
        truth = [Truth.POSITIVE, Truth.NEGATIVE, None][i % 3]
        out.append(Sample("v", f"f{i}", 0.04 * i, 0.04 * i + 0.4,
                          rng.normal(size=(T, 19)).astype(np.float32), role, truth))
    return out


def test_roundtrip(tmp_path):
    src = samples()
    path = save_dataset(tmp_path / "d", src, config={"l_max": 10.0}, seed=4, extra={"events": 3})
    assert path.name == "manifest.json"
    m = load_manifest(tmp_path / "d")
    assert m["shape"] == [5, 10, 19] and m["seed"] == 4 and m["events"] == 3
    assert m["counts"] == {"positive": 3, "unlabeled": 2, "total": 5, "with_truth": 4}
    for back in (load_dataset(tmp_path / "d"), load_dataset(path)):
        for a, b in zip(src, back):
            assert (a.video_id, a.face_id, a.t_start, a.t_end, a.pu_role, a.truth) == \
                   (b.video_id, b.face_id, b.t_start, b.t_end, b.pu_role, b.truth)
            np.testing.assert_array_equal(a.data, b.data)


def test_tensor_is_little_endian_float32(tmp_path):
    src = samples(2, 3)
    save_dataset(tmp_path, src)
    raw = (tmp_path / "samples.f32").read_bytes()
    assert len(raw) == 2 * 3 * 19 * 4
    np.testing.assert_array_equal(np.frombuffer(raw, "<f4").reshape(2, 3, 19)[1], src[1].data)


def test_empty_dataset(tmp_path):
    save_dataset(tmp_path, [])
    assert load_dataset(tmp_path) == []


def test_errors(tmp_path):
    src = samples()
    src[1].data = src[1].data[:5]
    with pytest.raises(ShapeMismatch):
        save_dataset(tmp_path / "a", src)
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing")
    save_dataset(tmp_path / "b", samples())
    (tmp_path / "b" / "samples.f32").write_bytes(b"\0" * 12)
    with pytest.raises(ShapeMismatch):
        load_dataset(tmp_path / "b")
    save_dataset(tmp_path / "c", samples())
    m = json.loads((tmp_path / "c" / "manifest.json").read_text())
    m["format"] = "other"
    (tmp_path / "c" / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DataError):
        load_dataset(tmp_path / "c")
