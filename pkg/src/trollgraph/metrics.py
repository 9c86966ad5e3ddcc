"""Ranking/classification metrics, metric reports and canonical JSON output."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def ranking_metrics(scores, labels) -> dict[str, float]:
    """ROC AUC (Mann-Whitney, ties count 1/2) and step-wise average precision.

    AP sums ``(R_k - R_{k-1}) * P_k`` over distinct score thresholds taken
    in decreasing order, so tied scores enter the curve together.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ranking_metrics needs at least one positive and one negative")
    ranks = rankdata(s)
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)

    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(ss))[0], ss.size - 1]
    tps = np.cumsum(yy)[last]
    precision = tps / (last + 1)
    recall = tps / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return {"auc": float(auc), "ap": ap}


def _prf(pred: np.ndarray, true: np.ndarray, cls) -> tuple[float, float, float]:
    tp = int(((pred == cls) & (true == cls)).sum())
    fp = int(((pred == cls) & (true != cls)).sum())
    fn = int(((pred != cls) & (true == cls)).sum())
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def classification_report(pred_labels, true_labels, scores=None) -> dict[str, float]:
    """Support-weighted precision/recall/F1 over the classes present in
    ``true_labels``; AUC from ``scores`` (probability of class 1) when both
    classes occur."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.size == 0:
        raise ValueError("classification_report: empty input")
    if pred.shape != true.shape:
        raise ValueError("pred_labels and true_labels must be aligned")
    out = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    classes, support = np.unique(true, return_counts=True)
    for cls, n in zip(classes, support):
        p, r, f = _prf(pred, true, cls)
        w = n / true.size
        out["precision"] += w * p
        out["recall"] += w * r
        out["f1"] += w * f
    if scores is not None and classes.size == 2:
        out["auc"] = ranking_metrics(scores, true == classes[1])["auc"]
    return out


@dataclass
class EvalReport:
    """Metric name -> (mean, std) plus free-form run metadata."""
    metrics: dict[str, tuple[float, float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    folds: list[dict] = field(default_factory=list)

    @classmethod
    def from_folds(cls, folds: list[dict], metadata: dict | None = None) -> "EvalReport":
        """Mean and sample standard deviation (ddof=1) of every metric across folds."""
        names = sorted({k for f in folds for k in f})
        metrics = {}
        for name in names:
            vals = np.array([f[name] for f in folds if f.get(name) is not None], dtype=np.float64)
            if vals.size == 0:
                continue
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            metrics[name] = (float(vals.mean()), std)
        return cls(metrics, dict(metadata or {}), folds)

    def mean(self, name: str) -> float:
        return self.metrics[name][0]

    def to_dict(self) -> dict:
        return {
            "metrics": {k: {"mean": m, "std": s} for k, (m, s) in self.metrics.items()},
            "metadata": self.metadata,
            "folds": self.folds,
        }


# ---------------------------------------------------------------- canonical JSON

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite float {x}")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, out: list[str]) -> None:
    import json

    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj, key=str)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif hasattr(obj, "to_dict"):
        _encode(obj.to_dict(), out)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, floats at 17 significant digits, trailing newline."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out) + "\n"


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
