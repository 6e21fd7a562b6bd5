"""Rank/linear correlations, accuracy and multi-split aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats


def _pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < 2:
        raise ValueError("correlation needs at least two samples")
    if np.all(p == p[0]) or np.all(t == t[0]):
        raise ValueError("correlation is undefined for constant input")
    return p, t


def plcc(pred, truth) -> float:
    p, t = _pair(pred, truth)
    p, t = p - p.mean(), t - t.mean()
    r = float(np.dot(p, t) / np.sqrt(np.dot(p, p) * np.dot(t, t)))
    return max(-1.0, min(1.0, r))


def srocc(pred, truth) -> float:
    """Pearson correlation of mid-ranks."""
    p, t = _pair(pred, truth)
    return plcc(stats.rankdata(p, method="average"), stats.rankdata(t, method="average"))


def kendall(pred, truth) -> float:
    """Kendall tau-b."""
    p, t = _pair(pred, truth)
    return float(stats.kendalltau(p, t, variant="b").statistic)


def accuracy(pred_labels, truth_labels) -> float:
    p = np.asarray(pred_labels).reshape(-1)
    t = np.asarray(truth_labels).reshape(-1)
    if p.size == 0:
        raise ValueError("accuracy of an empty set")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if not (np.isin(p, (0, 1)).all() and np.isin(t, (0, 1)).all()):
        raise ValueError("labels must be 0 or 1")
    return float(np.mean(p == t))


@dataclass
class MetricReport:
    n: int
    split: int = 0
    srocc: float | None = None
    plcc: float | None = None
    kendall: float | None = None
    accuracy: float | None = None

    def values(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k in METRICS and v is not None}


METRICS = ("srocc", "plcc", "kendall", "accuracy")


def regression_report(pred, truth, split: int = 0) -> MetricReport:
    return MetricReport(len(np.asarray(truth).reshape(-1)), split, srocc(pred, truth), plcc(pred, truth),
                        kendall(pred, truth))


def classification_report(prob, truth, split: int = 0, threshold: float = 0.5) -> MetricReport:
    labels = (np.asarray(prob).reshape(-1) >= threshold).astype(int)
    return MetricReport(labels.size, split, accuracy=accuracy(labels, truth))


def aggregate_splits(reports, statistic: str = "mean") -> dict:
    """Per metric: the chosen statistic with std/min/max across splits."""
    if statistic not in ("mean", "median"):
        raise ValueError(f"unknown statistic {statistic!r}")
    reduce = np.mean if statistic == "mean" else np.median
    out = {}
    for m in METRICS:
        vals = np.array([r.values()[m] for r in reports if m in r.values()], dtype=np.float64)
        if vals.size == 0:
            continue
        out[m] = {
            "statistic": statistic,
            "value": float(reduce(vals)),
            "std": float(vals.std()),
            "min": float(vals.min()),
            "max": float(vals.max()),
            "n_splits": int(vals.size),
        }
    return out


SUMMARY_FIELDS = ("metric", "statistic", "value", "std", "min", "max", "n_splits")


def summary_rows(reports) -> list[dict]:
    rows = []
    for stat in ("mean", "median"):
        for metric, s in aggregate_splits(reports, stat).items():
            rows.append({"metric": metric, **s})
    return rows


def summary_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in summary_rows(reports):
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def summary_json(reports) -> str:
    return json.dumps({stat: aggregate_splits(reports, stat) for stat in ("mean", "median")},
                      sort_keys=True, indent=2)
