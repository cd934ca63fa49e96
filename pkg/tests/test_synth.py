import math
from dataclasses import replace

import numpy as np
import pytest

from turngrab.dataio import N_AUS
from turngrab.errors import InvalidConfig
from turngrab.segmentation import SamplerConfig, Truth, detect_turn_events, smooth_asd
from turngrab.synth import (
    SynthConfig,
    generate_session,
    make_pu_dataset,
    sample_session,
    unlabeled_positive_rate,
)

SHORT = SynthConfig(session_len=240.0, intention_lead=8.0)


def test_flat_session_without_noise_or_signal():
    s = generate_session(replace(SHORT, noise_sigma=0.0, signal_strength=0.0))
    for tr in s.tracks:
        np.testing.assert_array_equal(tr.features[:, :N_AUS], 1.0)
        np.testing.assert_array_equal(tr.features[:, N_AUS:], 0.0)


def test_bit_identical_for_same_seed():
    a, b = generate_session(SHORT), generate_session(SHORT)
    assert a.truth == b.truth and a.utterances == b.utterances
    for ta, tb in zip(a.tracks, b.tracks):
        for name in ("times", "bbox", "features", "asd"):
            np.testing.assert_array_equal(getattr(ta, name), getattr(tb, name))
    c = generate_session(replace(SHORT, rng_seed=1))
    assert not np.array_equal(a.tracks[0].features, c.tracks[0].features)


def test_one_speaker_at_a_time():
    s = generate_session(SHORT)
    utt = sorted(s.utterances, key=lambda u: u[1])
    assert all(b[1] > a[2] for a, b in zip(utt, utt[1:]))
    assert all(a[0] != b[0] for a, b in zip(utt, utt[1:]))


def test_turn_detection_recovers_takeovers():
    cfg = SamplerConfig()
    hits = total = 0
    for seed in range(3):
        s = generate_session(replace(SHORT, rng_seed=seed, asd_noise=0.1, asd_glitch_per_minute=0.0))
        events = detect_turn_events([smooth_asd(t, cfg) for t in s.tracks])
        found = {(e.new_speaker, round(e.onset, 1)) for e in events}
        for face, t in s.takeovers:
            total += 1
            hits += any((face, round(t + d, 1)) in found for d in (-0.1, -0.05, 0.0, 0.05, 0.1))
    assert total > 50
    assert hits / total >= 0.95


def test_positive_windows_are_mostly_true_intentions():
    sessions = [generate_session(replace(SHORT, rng_seed=i)) for i in range(5)]
    data = make_pu_dataset(sessions, SamplerConfig(), n_holdout=1)
    truth = [s.truth for s in data.positive]
    assert len(truth) > 50
    assert truth.count(Truth.POSITIVE) / len(truth) >= 0.9
    u = {s.truth for s in data.unlabeled}
    assert u == {Truth.POSITIVE, Truth.NEGATIVE}
    assert data.test and all(s.truth is not None for s in data.test)
    empty = make_pu_dataset([], SamplerConfig())
    assert (empty.positive, empty.unlabeled, empty.test) == ([], [], [])


def test_unlabeled_positive_fraction_matches_expectation():
    # pooled z-score of observed vs expected positives in U over many sessions
    cfg = SamplerConfig(unlabeled_per_minute=10.0)
    diff = var = 0.0
    for seed in range(60):
        sess = generate_session(replace(SHORT, session_len=120.0, rng_seed=seed))
        pos, unl = sample_session(sess, cfg, seed)
        rate = unlabeled_positive_rate(sess, cfg, pos)
        n = len(unl)
        k = sum(s.truth is Truth.POSITIVE for s in unl)
        diff += k - n * rate
        var += n * rate * (1 - rate)
    z = diff / math.sqrt(var)
    assert abs(z) <= 3.0, z


@pytest.mark.parametrize("kw", [dict(n_participants=1), dict(signal_channels=()),
                                dict(signal_channels=(19,)), dict(noise_sigma=-0.1),
                                dict(session_len=0.0), dict(gap_range=(0.5, 0.2))])
def test_invalid_synth_config(kw):
    with pytest.raises(InvalidConfig):
        SynthConfig(**kw)
