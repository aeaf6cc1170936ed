"""Accuracy, Pearson correlation and the virtual-vs-real hint loss study."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    preds = np.asarray(predictions)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise MetricError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return int(np.count_nonzero(preds == labels)) / preds.size


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation; raises for constant series rather than returning 0."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"series shapes differ: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise MetricError("pearson needs at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise MetricError("correlation is undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationStudyRow:
    sampler: str
    fid_analog: float
    pearson_r: float


def correlation_study(run_records, quality_reports) -> list[CorrelationStudyRow]:
    """One row per sampler correlating the virtual and real hint-loss series.

    ``run_records[i]`` must come from the hint-only run that used the sampler
    described by ``quality_reports[i]``. Rows are sorted by fid_analog, ties
    broken by sampler name.
    """
    if len(run_records) != len(quality_reports):
        raise MetricError("need exactly one run record per quality report")
    rows = []
    for record, report in zip(run_records, quality_reports):
        r = pearson(record.column("hint_loss_virtual"), record.column("hint_loss_real"))
        rows.append(CorrelationStudyRow(report.sampler, report.fid_analog, r))
    return sorted(rows, key=lambda row: (row.fid_analog, row.sampler))
