"""Ranking metrics for anomaly scores and run aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class EvalResult:
    auc_roc: float
    auc_pr: float
    n_pos: int
    n_neg: int


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y.astype(bool)


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 * P(tie)."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both classes present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Average precision over the descending-score sweep; tied scores form one step."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("auc_pr needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of each block of equal scores
    block_end = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tp = np.cumsum(y_sorted)[block_end]
    predicted = block_end + 1
    precision = tp / predicted
    recall = tp / n_pos
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


def evaluate(scores, labels) -> EvalResult:
    _, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    return EvalResult(auc_roc(scores, labels), auc_pr(scores, labels), n_pos, int(y.size - n_pos))


@dataclass(frozen=True)
class Aggregate:
    auc_roc_mean: float
    auc_roc_std: float
    auc_pr_mean: float
    auc_pr_std: float
    n_runs: int

    def format(self, digits: int = 3) -> str:
        return (f"AUC-ROC {self.auc_roc_mean:.{digits}f}±{self.auc_roc_std:.{digits}f}  "
                f"AUC-PR {self.auc_pr_mean:.{digits}f}±{self.auc_pr_std:.{digits}f}")


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, 0.0
    return mean, float(math.sqrt(np.sum((arr - mean) ** 2) / (arr.size - 1)))


def aggregate_runs(results: Sequence[EvalResult]) -> Aggregate:
    """Mean and sample (n - 1) standard deviation of both metrics."""
    if not results:
        raise ValueError("aggregate_runs needs at least one result")
    roc = _mean_std([r.auc_roc for r in results])
    pr = _mean_std([r.auc_pr for r in results])
    return Aggregate(roc[0], roc[1], pr[0], pr[1], len(results))
