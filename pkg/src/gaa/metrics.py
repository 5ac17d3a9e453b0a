"""Accuracy, F1 and area under the precision-recall curve (average precision)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from gaa.errors import InputError

THRESHOLD = 0.5


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise InputError("metrics need at least one sample")
    if scores.size != labels.size:
        raise InputError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise InputError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def confusion(scores, labels, threshold: float = THRESHOLD) -> tuple[int, int, int, int]:
    """``(tp, fp, tn, fn)``; a score exactly at the threshold counts as positive."""
    scores, labels = _as_arrays(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return (int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
            int(np.sum(~pred & ~pos)), int(np.sum(~pred & pos)))


def accuracy(scores, labels, threshold: float = THRESHOLD) -> float:
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    return (tp + tn) / (tp + fp + tn + fn)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        # nothing to find and nothing claimed counts as perfect
        return 1.0 if fp == 0 and fn == 0 else 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def f1(scores, labels, threshold: float = THRESHOLD) -> float:
    tp, fp, _, fn = confusion(scores, labels, threshold)
    return f1_from_counts(tp, fp, fn)


def aupr(scores, labels) -> float:
    """Average precision: ``sum_k (R_k - R_{k-1}) P_k`` over distinct descending thresholds.

    Tied scores form a single threshold step, so the result does not depend on
    the order of tied samples.
    """
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise InputError("AUPR is undefined unless both classes are present")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last position of each group of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    precision = tp / seen
    recall = tp / n_pos
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


@dataclass(frozen=True)
class EvalReport:
    acc: float
    f1: float
    aupr: float | None
    confusion: tuple[int, int, int, int]
    n: int
    threshold: float = THRESHOLD

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = dict(zip(("tp", "fp", "tn", "fn"), self.confusion))
        return d

    def table_row(self, method: str) -> str:
        """``Method  ACC  F1  AUPR`` in percent."""
        au = "n/a" if self.aupr is None else f"{100 * self.aupr:.2f}"
        return f"{method:<10} {100 * self.acc:6.2f} {100 * self.f1:6.2f} {au:>6}"


TABLE_HEADER = f"{'Method':<10} {'ACC':>6} {'F1':>6} {'AUPR':>6}"


def evaluate(scores, labels, threshold: float = THRESHOLD) -> EvalReport:
    scores, labels = _as_arrays(scores, labels)
    cm = confusion(scores, labels, threshold)
    tp, fp, tn, fn = cm
    both = 0 < labels.sum() < labels.size
    return EvalReport(
        acc=(tp + tn) / labels.size,
        f1=f1_from_counts(tp, fp, fn),
        aupr=aupr(scores, labels) if both else None,
        confusion=cm,
        n=int(labels.size),
        threshold=threshold,
    )
