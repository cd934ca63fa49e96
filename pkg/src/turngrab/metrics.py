"""Binary classification metrics and speaking-balance ratios.

Degenerate ratios (a zero denominator) are reported as 0 rather than NaN.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import Empty, LengthMismatch, NoQualifyingTurns, SingleClass, ZeroTotalTime

ZERO_CONVENTION = "ratios with a zero denominator are reported as 0"


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds, labels):
    preds = np.asarray(preds, dtype=bool).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.size} predictions for {labels.size} labels")
    if preds.size == 0:
        raise Empty("confusion of zero samples")
    tp = int(np.count_nonzero(preds & labels))
    fp = int(np.count_nonzero(preds & ~labels))
    fn = int(np.count_nonzero(~preds & labels))
    return Confusion(tp, fp, preds.size - tp - fp - fn, fn)


def mcc(c):
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def _ratio(num, den):
    return num / den if den else 0.0


def prf_accuracy(c):
    """``(precision, recall, f_score, accuracy)``."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f_score = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    accuracy = _ratio(c.tp + c.tn, c.total)
    return precision, recall, f_score, accuracy


def auc(scores, labels):
    """Rank-based (Mann-Whitney) ROC AUC; tied pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.size} scores for {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluation_report(scores, labels, threshold=0.0):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    c = confusion(scores > threshold, labels)
    precision, recall, f_score, accuracy = prf_accuracy(c)
    return {
        "mcc": mcc(c),
        "auc": auc(scores, labels),
        "f_score": f_score,
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "n": int(labels.size),
        "threshold": float(threshold),
        "confusion": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
        "conventions": ZERO_CONVENTION,
    }


def _durations(segments):
    return [float(e) - float(s) for s, e in segments]


def rs_turn(per_participant_segments, backchannel_max=1.0):
    """Share of speaking turns per participant.

    Segments no longer than ``backchannel_max`` seconds are backchannels and
    are not counted as turns.
    """
    counts = [sum(1 for d in _durations(segs) if d > backchannel_max)
              for segs in per_participant_segments]
    total = sum(counts)
    if total == 0:
        raise NoQualifyingTurns("no segment is longer than the backchannel limit")
    return [n / total for n in counts]


def rs_time(per_participant_segments):
    """Share of total speaking time per participant (backchannels included)."""
    times = [math.fsum(_durations(segs)) for segs in per_participant_segments]
    total = math.fsum(times)
    if not total > 0:
        raise ZeroTotalTime("nobody spoke")
    return [t / total for t in times]
