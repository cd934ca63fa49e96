"""Surrogate losses and PN / unbiased PU / non-negative PU empirical risks.

Scores are real-valued classifier outputs (logits). With class prior
``pi = P(y = +1)`` and loss ``l(t, y)``::

    R_p+ = mean l(t, +1) over P        R_p- = mean l(t, -1) over P
    R_u- = mean l(t, -1) over U

    pn   = pi * R_p+ + (1 - pi) * mean l(t, -1) over N
    upu  = pi * R_p+ + (R_u- - pi * R_p-)
    nnpu = pi * R_p+ + max(0, R_u- - pi * R_p-)

Means are taken with :func:`math.fsum`, which is exactly rounded and hence
independent of input order.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyBatch, InvalidConfig, SingleClass

LOSS_KINDS = ("sigmoid", "logistic")
ESTIMATORS = ("pn", "upu", "nnpu")


@dataclass(frozen=True)
class RiskConfig:
    prior: float = 0.5
    loss_kind: str = "sigmoid"
    estimator: str = "nnpu"

    def __post_init__(self):
        if not 0.0 < self.prior < 1.0:
            raise InvalidConfig(f"class prior must lie in (0, 1), got {self.prior}")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidConfig(f"unknown loss {self.loss_kind!r}")
        if self.estimator not in ESTIMATORS:
            raise InvalidConfig(f"unknown estimator {self.estimator!r}")


def _expit(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss(t, y, kind="sigmoid"):
    """Loss value and its derivative with respect to ``t``.

    sigmoid: ``1 / (1 + exp(y t))``; logistic: ``log(1 + exp(-y t))``.
    Works elementwise on arrays; never overflows.
    """
    t = np.asarray(t, dtype=np.float64)
    m = -np.asarray(y, dtype=np.float64) * t
    s = _expit(m)
    if kind == "sigmoid":
        return s, -y * s * (1.0 - s)
    if kind == "logistic":
        return np.logaddexp(0.0, m), -y * s
    raise InvalidConfig(f"unknown loss {kind!r}")


def _mean(values):
    return math.fsum(np.ravel(values)) / values.size


def _check(*batches):
    out = []
    for b in batches:
        b = np.asarray(b, dtype=np.float64).ravel()
        if b.size == 0:
            raise EmptyBatch("risk estimators need non-empty score batches")
        out.append(b)
    return out


class RiskTerms(NamedTuple):
    value: float
    grad_first: np.ndarray
    grad_second: np.ndarray
    clip_active: bool


def risk_terms(scores_first, scores_second, cfg):
    """Risk and its gradient for the estimator named in ``cfg``.

    ``scores_first`` are the positive-set scores. ``scores_second`` are the
    negative-set scores for ``pn`` and the unlabeled-set scores for ``upu``
    and ``nnpu``. When the non-negativity clip fires, the gradient of the
    clipped term is zero.
    """
    p, q = _check(scores_first, scores_second)
    pi = cfg.prior
    lp_pos, dp_pos = loss(p, 1.0, cfg.loss_kind)
    lq_neg, dq_neg = loss(q, -1.0, cfg.loss_kind)
    r_p_pos = _mean(lp_pos)
    r_q_neg = _mean(lq_neg)
    positive = pi * r_p_pos

    if cfg.estimator == "pn":
        value = positive + (1.0 - pi) * r_q_neg
        return RiskTerms(value, pi * dp_pos / p.size, (1.0 - pi) * dq_neg / q.size, False)

    lp_neg, dp_neg = loss(p, -1.0, cfg.loss_kind)
    negative = r_q_neg - pi * _mean(lp_neg)
    clip = cfg.estimator == "nnpu" and negative < 0.0
    if clip:
        return RiskTerms(positive, pi * dp_pos / p.size, np.zeros_like(q), True)
    value = positive + negative
    grad_p = pi * (dp_pos - dp_neg) / p.size
    return RiskTerms(value, grad_p, dq_neg / q.size, False)


def _with(cfg, estimator):
    if cfg.estimator == estimator:
        return cfg
    return RiskConfig(cfg.prior, cfg.loss_kind, estimator)


def risk_pn(scores_p, scores_n, cfg):
    return risk_terms(scores_p, scores_n, _with(cfg, "pn")).value


def risk_upu(scores_p, scores_u, cfg):
    return risk_terms(scores_p, scores_u, _with(cfg, "upu")).value


def risk_nnpu(scores_p, scores_u, cfg):
    """Returns ``(value, clip_active)``."""
    r = risk_terms(scores_p, scores_u, _with(cfg, "nnpu"))
    return r.value, r.clip_active


def estimate_prior(labels):
    """Fraction of positive labels (truthy / +1)."""
    arr = np.asarray(labels).ravel()
    if arr.size == 0:
        raise SingleClass("no labels")
    pos = int(np.count_nonzero(arr > 0))
    if pos == 0 or pos == arr.size:
        raise SingleClass("prior estimation needs both classes")
    return pos / arr.size
