import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from turngrab.errors import EmptyBatch, InvalidConfig, SingleClass
from turngrab.pu import (
    RiskConfig,
    estimate_prior,
    loss,
    risk_nnpu,
    risk_pn,
    risk_terms,
    risk_upu,
)

TINY = 1e-300  # stands in for a zero prior, which the config rejects


def sig_scalar(t, y):
    """Scalar sigmoid loss written directly from its definition."""
    z = y * t
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def mean_loss(scores, y):
    return math.fsum(sig_scalar(float(t), y) for t in scores) / len(scores)


def oracle(kind, p, q, pi):
    rpp = mean_loss(p, 1)
    if kind == "pn":
        return pi * rpp + (1 - pi) * mean_loss(q, -1)
    neg = mean_loss(q, -1) - pi * mean_loss(p, -1)
    return pi * rpp + (max(0.0, neg) if kind == "nnpu" else neg)


scores = arrays(np.float64, st.integers(1, 30), elements=st.floats(-30, 30))
priors = st.floats(0.01, 0.99)


# -- loss ------------------------------------------------------------------


def test_sigmoid_loss_values():
    assert loss(0.0, 1.0)[0] == 0.5
    v = float(loss(20.0, 1.0)[0])
    assert v == pytest.approx(math.exp(-20) / (1 + math.exp(-20)), rel=1e-14)
    assert v == pytest.approx(2.061153618190204e-09, rel=1e-12)


def test_losses_do_not_overflow():
    t = np.array([-1e6, -800.0, 0.0, 800.0, 1e6])
    for kind in ("sigmoid", "logistic"):
        for y in (1.0, -1.0):
            v, d = loss(t, y, kind)
            assert np.all(np.isfinite(v)) and np.all(np.isfinite(d)) and np.all(v >= 0)
    assert float(loss(-1e6, 1.0, "logistic")[0]) == 1e6


@pytest.mark.parametrize("kind", ["sigmoid", "logistic"])
def test_loss_derivative_matches_finite_differences(kind):
    rng = np.random.default_rng(0)
    t = rng.uniform(-8, 8, 1000)
    y = rng.choice([-1.0, 1.0], 1000)
    h = 1e-5
    _, d = loss(t, y, kind)
    num = (loss(t + h, y, kind)[0] - loss(t - h, y, kind)[0]) / (2 * h)
    rel = np.abs(d - num) / np.maximum(np.abs(num), 1e-8)
    assert rel.max() <= 1e-6


def test_logistic_matches_definition():
    t = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(loss(t, 1.0, "logistic")[0], np.log1p(np.exp(-t)), rtol=1e-14)


def test_unknown_loss():
    with pytest.raises(InvalidConfig):
        loss(0.0, 1.0, "hinge")


# -- config ----------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(prior=0.0), dict(prior=1.0), dict(estimator="pu"),
                                dict(loss_kind="square")])
def test_invalid_risk_config(kw):
    with pytest.raises(InvalidConfig):
        RiskConfig(**kw)


# -- estimators: frozen examples ------------------------------------------


def test_pn_zero_scores():
    assert risk_pn([0.0], [0.0], RiskConfig(0.5)) == 0.5


def test_pn_validation_prior_example():
    pi = 0.369
    expect = pi * sig_scalar(2.0, 1) + (1 - pi) * sig_scalar(-2.0, -1)
    assert risk_pn([2.0], [-2.0], RiskConfig(pi)) == pytest.approx(expect, rel=1e-15)
    assert expect == pytest.approx(0.11920292202211755, rel=1e-12)


def test_pn_prior_to_one():
    p, n = [0.3, -1.2], [2.0]
    assert risk_pn(p, n, RiskConfig(1 - 1e-16)) == pytest.approx(mean_loss(p, 1), rel=1e-14)


def test_upu_and_nnpu_zero_prior():
    rng = np.random.default_rng(1)
    p, u = rng.normal(size=7), rng.normal(size=11)
    ru = mean_loss(u, -1)
    assert risk_upu(p, u, RiskConfig(TINY)) == ru
    value, clip = risk_nnpu(p, u, RiskConfig(TINY))
    assert value == ru and not clip


def test_nnpu_saturated_example():
    cfg = RiskConfig(0.9)
    ru = mean_loss([5, 5, 5], -1)
    assert ru == pytest.approx(0.9933071490757153, rel=1e-12)
    assert 0.9 * mean_loss([5, 5, 5], -1) == pytest.approx(0.8939764341681438, rel=1e-12)
    value, clip = risk_nnpu([5.0, 5.0, 5.0], [5.0, 5.0, 5.0], cfg)
    assert not clip
    expect = 0.9 * sig_scalar(5.0, 1) + (ru - 0.9 * ru)
    assert value == pytest.approx(expect, rel=1e-14)
    assert value == pytest.approx(0.1053542807394279, rel=1e-12)


def test_clip_fires():
    # U scored as negative, P as positive: the implied negative risk goes below zero
    value, clip = risk_nnpu([4.0, 3.0], [-6.0, -5.0], RiskConfig(0.7))
    assert clip
    assert value == pytest.approx(0.7 * mean_loss([4.0, 3.0], 1), rel=1e-15)
    assert value > risk_upu([4.0, 3.0], [-6.0, -5.0], RiskConfig(0.7))


def test_empty_batches():
    for f in (risk_pn, risk_upu, risk_nnpu):
        with pytest.raises(EmptyBatch):
            f([], [1.0], RiskConfig())
        with pytest.raises(EmptyBatch):
            f([1.0], [], RiskConfig())


# -- estimators: oracle and properties ------------------------------------


def test_random_batches_against_scalar_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        p = rng.normal(0, 3, rng.integers(1, 20))
        q = rng.normal(0, 3, rng.integers(1, 20))
        pi = rng.uniform(0.05, 0.95)
        cfg = RiskConfig(pi)
        assert risk_pn(p, q, cfg) == pytest.approx(oracle("pn", p, q, pi), rel=1e-13, abs=1e-15)
        assert risk_upu(p, q, cfg) == pytest.approx(oracle("upu", p, q, pi), rel=1e-13, abs=1e-15)
        assert risk_nnpu(p, q, cfg)[0] == pytest.approx(oracle("nnpu", p, q, pi), rel=1e-13, abs=1e-15)


def test_upu_equal_inputs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = rng.normal(0, 2, 8)
        pi = rng.uniform(0.05, 0.95)
        expect = pi * mean_loss(p, 1) + (1 - pi) * mean_loss(p, -1)
        assert risk_upu(p, p.copy(), RiskConfig(pi)) == pytest.approx(expect, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(p=scores, u=scores, pi=priors)
def test_upu_sigmoid_identity(p, u, pi):
    expect = 2 * pi * mean_loss(p, 1) + mean_loss(u, -1) - pi
    assert risk_upu(p, u, RiskConfig(pi)) == pytest.approx(expect, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(p=scores, u=scores, pi=priors, kind=st.sampled_from(["sigmoid", "logistic"]))
def test_nnpu_bounds_and_agreement(p, u, pi, kind):
    cfg = RiskConfig(pi, kind)
    value, clip = risk_nnpu(p, u, cfg)
    upu = risk_upu(p, u, cfg)
    floor = pi * float(np.mean(loss(p, 1.0, kind)[0]))
    assert value >= 0.0
    assert value >= floor - 1e-15
    if clip:
        assert value > upu
    else:
        assert value == upu


@settings(max_examples=100, deadline=None)
@given(p=scores, u=scores, pi=priors, seed=st.integers(0, 1000))
def test_permutation_invariance(p, u, pi, seed):
    rng = np.random.default_rng(seed)
    cfg = RiskConfig(pi)
    pp, uu = rng.permutation(p), rng.permutation(u)
    assert risk_pn(p, u, cfg) == risk_pn(pp, uu, cfg)
    assert risk_upu(p, u, cfg) == risk_upu(pp, uu, cfg)
    assert risk_nnpu(p, u, cfg) == risk_nnpu(pp, uu, cfg)


@pytest.mark.parametrize("estimator", ["pn", "upu", "nnpu"])
@pytest.mark.parametrize("kind", ["sigmoid", "logistic"])
def test_score_gradients_match_finite_differences(estimator, kind):
    rng = np.random.default_rng(4)
    h = 1e-6
    checked = 0
    for _ in range(40):
        p = rng.normal(0, 2, rng.integers(1, 8))
        q = rng.normal(0, 2, rng.integers(1, 8))
        cfg = RiskConfig(rng.uniform(0.1, 0.9), kind, estimator)
        terms = risk_terms(p, q, cfg)
        for arr, grad in ((p, terms.grad_first), (q, terms.grad_second)):
            for i in range(arr.size):
                old = arr[i]
                arr[i] = old + h
                up = risk_terms(p, q, cfg)
                arr[i] = old - h
                dn = risk_terms(p, q, cfg)
                arr[i] = old
                if up.clip_active != dn.clip_active:
                    continue  # straddles the clip boundary
                num = (up.value - dn.value) / (2 * h)
                assert abs(grad[i] - num) <= 1e-5 * max(abs(num), abs(grad[i]), 1e-4)
                checked += 1
    assert checked > 100


def test_clip_zeroes_unlabeled_gradient():
    terms = risk_terms([4.0, 3.0], [-6.0, -5.0], RiskConfig(0.7))
    assert terms.clip_active
    np.testing.assert_array_equal(terms.grad_second, 0.0)
    _, d = loss(np.array([4.0, 3.0]), 1.0)
    np.testing.assert_allclose(terms.grad_first, 0.7 * d / 2, rtol=1e-15)


# -- prior -----------------------------------------------------------------


def test_prior_examples():
    assert estimate_prior([True] * 72 + [False] * 123) == pytest.approx(72 / 195)
    assert 72 / 195 == pytest.approx(0.36923076923, abs=1e-10)
    assert estimate_prior([1, -1]) == 0.5


def test_prior_counting_oracle():
    labels = np.random.default_rng(5).integers(0, 2, 1000).astype(bool)
    assert estimate_prior(labels) == labels.sum() / 1000


def test_prior_single_class():
    with pytest.raises(SingleClass):
        estimate_prior([1, 1, 1])
    with pytest.raises(SingleClass):
        estimate_prior([])
