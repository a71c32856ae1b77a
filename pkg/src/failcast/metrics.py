"""Evaluation metrics: confusion matrix, precision/recall, F-beta, ROC/AUC, latency.

Headline numbers are binary failure-vs-normal (classes 1..3 pooled as
positive), with F-beta at beta=3 so recall weighs roughly three times
more than precision. Per-class and macro figures are diagnostics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FailcastError

N_CLASSES = 4
DEFAULT_BETA = 3.0


class UndefinedAucError(FailcastError):
    """AUC needs at least one positive and one negative label."""


def confusion(predictions: Sequence[int], actuals: Sequence[int]) -> np.ndarray:
    """4x4 count matrix with rows = predicted class, columns = actual class."""
    p = np.asarray(predictions, dtype=np.int64)
    a = np.asarray(actuals, dtype=np.int64)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (p, a), 1)
    return cm


def precision_recall(
    cm: np.ndarray, cls: int
) -> tuple[Optional[float], Optional[float]]:
    """Per-class precision and recall; None when the denominator is zero."""
    predicted = cm[cls, :].sum()
    actual = cm[:, cls].sum()
    tp = cm[cls, cls]
    precision = float(tp / predicted) if predicted > 0 else None
    recall = float(tp / actual) if actual > 0 else None
    return precision, recall


def f_beta(precision: float, recall: float, beta: float = DEFAULT_BETA) -> float:
    """(1 + b^2) * P * R / (b^2 * P + R); zero when both inputs are zero."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if precision == 0.0 and recall == 0.0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (b2 * precision + recall)


def binary_counts(cm: np.ndarray) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) after pooling classes 1..3 as positive."""
    tp = int(cm[1:, 1:].sum())
    fp = int(cm[1:, 0].sum())
    fn = int(cm[0, 1:].sum())
    tn = int(cm[0, 0])
    return tp, fp, fn, tn


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a positive outranks a negative, ties counting half.

    Computed from rank sums: numerator and denominator match brute-force
    pair counting exactly because half-integer rank sums are exact in
    floating point.
    """
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=np.int64)
    if s.shape != lab.shape:
        raise ValueError("scores and labels must have equal length")
    pos = lab != 0
    n_pos = int(pos.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError(
            f"need both classes, got {n_pos} positives / {n_neg} negatives"
        )
    order = np.argsort(s, kind="stable")
    sorted_scores = s[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[i : j + 1] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = ranks[pos[order]].sum()
    favorable = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return favorable / (n_pos * n_neg)


def roc_curve(
    scores: Sequence[float], labels: Sequence[int]
) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) sweep at every distinct score, highest first."""
    s = np.asarray(scores, dtype=float)
    lab = (np.asarray(labels, dtype=np.int64) != 0).astype(np.int64)
    n_pos = int(lab.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("need both classes for a ROC curve")
    order = np.argsort(-s, kind="stable")
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    while i < len(s):
        thr = s[order[i]]
        while i < len(s) and s[order[i]] == thr:
            if lab[order[i]]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos, float(thr)))
    return points


@dataclass
class LatencyStats:
    mean_ms: float
    p99_ms: float
    n_calls: int


def measure_latency(
    predict: Callable, instances: Sequence, repetitions: int
) -> LatencyStats:
    """Wall-clock per prediction, cycling the instances; one warm-up pass excluded."""
    if not len(instances):
        raise ValueError("need at least one instance")
    for x in instances[: min(len(instances), 50)]:
        predict(x)
    times = np.empty(repetitions)
    k = len(instances)
    for i in range(repetitions):
        x = instances[i % k]
        t0 = time.perf_counter()
        predict(x)
        times[i] = time.perf_counter() - t0
    return LatencyStats(
        mean_ms=float(times.mean() * 1e3),
        p99_ms=float(np.percentile(times, 99) * 1e3),
        n_calls=repetitions,
    )


@dataclass
class MetricsReport:
    confusion_matrix: np.ndarray
    precision: list[Optional[float]]
    recall: list[Optional[float]]
    binary_precision: Optional[float]
    binary_recall: Optional[float]
    binary_f3: float
    macro_f3_failures: Optional[float]
    auc: Optional[float]
    latency: Optional[LatencyStats] = None


def build_report(
    predictions: Sequence[int],
    actuals: Sequence[int],
    scores: Optional[Sequence[float]] = None,
    latency: Optional[LatencyStats] = None,
    beta: float = DEFAULT_BETA,
) -> MetricsReport:
    cm = confusion(predictions, actuals)
    precision = []
    recall = []
    for cls in range(N_CLASSES):
        p, r = precision_recall(cm, cls)
        precision.append(p)
        recall.append(r)

    tp, fp, fn, _ = binary_counts(cm)
    bp = tp / (tp + fp) if tp + fp > 0 else None
    br = tp / (tp + fn) if tp + fn > 0 else None
    bf3 = f_beta(bp or 0.0, br or 0.0, beta) if (bp, br) != (None, None) else 0.0

    per_class_f3 = []
    for cls in range(1, N_CLASSES):
        if cm[:, cls].sum() == 0:
            continue  # class absent from the data
        p = precision[cls] if precision[cls] is not None else 0.0
        r = recall[cls] if recall[cls] is not None else 0.0
        per_class_f3.append(f_beta(p, r, beta))
    macro = float(np.mean(per_class_f3)) if per_class_f3 else None

    auc = None
    if scores is not None:
        try:
            auc = roc_auc(scores, actuals)
        except UndefinedAucError:
            auc = None

    return MetricsReport(
        confusion_matrix=cm,
        precision=precision,
        recall=recall,
        binary_precision=bp,
        binary_recall=br,
        binary_f3=bf3,
        macro_f3_failures=macro,
        auc=auc,
        latency=latency,
    )


_CLASS_NAMES = ["Normal", "IR", "SR", "FD"]


def _fmt(v: Optional[float]) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def render_text(report: MetricsReport) -> str:
    """Human-readable report. Binary figures pool all failure classes."""
    lines = []
    lines.append("confusion matrix (rows=predicted, cols=actual)")
    lines.append("            " + "".join(f"{n:>10}" for n in _CLASS_NAMES))
    for i, name in enumerate(_CLASS_NAMES):
        row = "".join(f"{int(c):>10}" for c in report.confusion_matrix[i])
        lines.append(f"{name:>12}{row}")
    lines.append("")
    lines.append("per-class precision / recall")
    for i, name in enumerate(_CLASS_NAMES):
        lines.append(
            f"  {name:<8} precision={_fmt(report.precision[i])} recall={_fmt(report.recall[i])}"
        )
    lines.append("")
    lines.append("binary failure-vs-normal (classes 1..3 pooled as positive)")
    lines.append(f"  precision={_fmt(report.binary_precision)}")
    lines.append(f"  recall={_fmt(report.binary_recall)}")
    lines.append(f"  f3={report.binary_f3:.4f}")
    lines.append(f"  macro_f3_failure_classes={_fmt(report.macro_f3_failures)}")
    lines.append(
        f"  auc={_fmt(report.auc)} (composite two-stage score; local definition)"
    )
    if report.latency is not None:
        lines.append("")
        lines.append(
            f"latency: mean={report.latency.mean_ms:.3f} ms "
            f"p99={report.latency.p99_ms:.3f} ms over {report.latency.n_calls} calls"
        )
    return "\n".join(lines) + "\n"


def render_kv(report: MetricsReport) -> str:
    """Flat key=value form for machines."""
    kv: dict[str, str] = {}
    for i, name in enumerate(_CLASS_NAMES):
        kv[f"precision.{name.lower()}"] = _fmt(report.precision[i])
        kv[f"recall.{name.lower()}"] = _fmt(report.recall[i])
    for p in range(N_CLASSES):
        for a in range(N_CLASSES):
            kv[f"confusion.{p}.{a}"] = str(int(report.confusion_matrix[p, a]))
    kv["binary.precision"] = _fmt(report.binary_precision)
    kv["binary.recall"] = _fmt(report.binary_recall)
    kv["binary.f3"] = f"{report.binary_f3:.6f}"
    kv["binary.macro_f3_failures"] = _fmt(report.macro_f3_failures)
    kv["binary.auc"] = _fmt(report.auc)
    if report.latency is not None:
        kv["latency.mean_ms"] = f"{report.latency.mean_ms:.4f}"
        kv["latency.p99_ms"] = f"{report.latency.p99_ms:.4f}"
        kv["latency.calls"] = str(report.latency.n_calls)
    return "".join(f"{k}={kv[k]}\n" for k in sorted(kv))


def write_roc_csv(points: Sequence[tuple[float, float, float]], out) -> None:
    out.write("fpr,tpr,threshold\n")
    for fpr, tpr, thr in points:
        out.write(f"{fpr!r},{tpr!r},{thr!r}\n")
