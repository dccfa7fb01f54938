"""Evaluation protocol: ROC/AUC, thresholded confusion metrics, stratified
k-fold cross-validation, and CSV/JSON result writers.

AUC is computed from an integer pair-count numerator, so it agrees exactly
(bitwise) with a brute-force pairwise concordance count where tied
positive/negative score pairs contribute 1/2.
"""

from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_for, subseed
from .volume import save_json


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.ndim != 1:
        raise ValueError("scores and labels must be one-dimensional")
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores length {scores.shape[0]} != labels length {labels.shape[0]}")
    if scores.size == 0:
        raise ValueError("scores and labels must be non-empty")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got values {sorted(uniq)}")
    return scores, labels.astype(np.int64)


@dataclass(frozen=True)
class RocCurve:
    """Operating points (fpr, tpr) from (0,0) to (1,1) plus the area."""

    points: tuple
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve and exact trapezoidal AUC with tied scores grouped.

    The area equals the fraction of (positive, negative) pairs ranked
    correctly, ties counted half.  Raises ValueError when only one class
    is present (the area is undefined).
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes present")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # group ties: one ROC step per distinct score
    boundaries = np.flatnonzero(np.diff(s)) + 1
    groups = np.split(np.arange(s.size), boundaries)

    points = [(0.0, 0.0)]
    tp = fp = 0
    numerator = 0  # 2*concordant + tied, in exact integer arithmetic
    for g in groups:
        p_g = int(y[g].sum())
        n_g = g.size - p_g
        numerator += n_g * (2 * tp + p_g)
        tp += p_g
        fp += n_g
        points.append((fp / n_neg, tp / n_pos))
    auc = numerator / (2 * n_pos * n_neg)
    return RocCurve(points=tuple(points), auc=auc)


@dataclass(frozen=True)
class Metrics:
    """Confusion counts at a threshold; ratios follow the usual conventions.

    precision is None when nothing was predicted positive; recall is None
    when no positives exist in the data.
    """

    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def precision(self):
        if self.tp + self.fp == 0:
            return None
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        if self.tp + self.fn == 0:
            return None
        return self.tp / (self.tp + self.fn)


def confusion_metrics(scores, labels, threshold: float) -> Metrics:
    """Counts with the inclusive prediction rule: bad iff score >= threshold."""
    scores, labels = _check_scores_labels(scores, labels)
    pred = scores >= threshold
    actual = labels == 1
    return Metrics(
        tp=int(np.sum(pred & actual)),
        fp=int(np.sum(pred & ~actual)),
        tn=int(np.sum(~pred & ~actual)),
        fn=int(np.sum(~pred & actual)),
        threshold=float(threshold),
    )


def threshold_sweep(scores, labels, grid):
    """confusion_metrics at every grid point, returned as (threshold, Metrics)."""
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("threshold grid must be non-empty")
    return [(t, confusion_metrics(scores, labels, t)) for t in grid]


@dataclass(frozen=True)
class FoldSplit:
    """k disjoint index lists covering the dataset, stratified by label."""

    folds: tuple
    stratification: dict = field(compare=False)

    def validate(self, n: int):
        seen = sorted(i for fold in self.folds for i in fold)
        if seen != list(range(n)):
            raise ValueError("folds must partition range(n)")


def stratified_kfold(labels, k: int, seed: int) -> FoldSplit:
    """Deterministic stratified partition: per-class shuffle, round-robin deal.

    Per-fold class counts differ from the ideal by at most one.  Requires
    every class to appear at least k times.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-d sequence")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    for cls, cnt in zip(classes, counts):
        if cnt < k:
            raise ValueError(
                f"class {cls} has {cnt} samples, fewer than k={k}")

    rng = rng_for(seed)
    folds = [[] for _ in range(k)]
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        perm = rng.permutation(idx)
        for i in range(k):
            folds[i].extend(int(j) for j in perm[i::k])
    folds = tuple(tuple(sorted(f)) for f in folds)
    strat = {
        "k": k,
        "seed": seed,
        "class_counts": {str(int(c)): int(n) for c, n in zip(classes, counts)},
        "per_fold": [
            {str(int(c)): int(np.sum(labels[list(f)] == c)) for c in classes}
            for f in folds
        ],
    }
    return FoldSplit(folds=folds, stratification=strat)


def _mean_std(values):
    """Mean/std over non-None entries; (None, None) when all are absent."""
    kept = [v for v in values if v is not None]
    if not kept:
        return None, None
    arr = np.asarray(kept, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class CVResult:
    split: FoldSplit
    fold_aucs: list
    fold_metrics: list
    pooled_scores: np.ndarray
    pooled_auc: float
    pooled_metrics: Metrics
    threshold: float


def cross_validate(labels, k: int, fit_predict, seed: int,
                   threshold: float = 0.4) -> CVResult:
    """Stratified k-fold protocol around a caller-supplied model.

    ``fit_predict(train_idx, test_idx, fold_seed)`` must return one score per
    test index.  Each fold trains from its own sub-seed, so fold results are
    reproducible independently of evaluation order.  Reports per-fold AUC and
    confusion metrics plus pooled ones over all held-out scores.
    """
    labels = np.asarray(labels)
    split = stratified_kfold(labels, k, seed)
    pooled = np.full(labels.size, np.nan, dtype=np.float64)
    fold_aucs, fold_metrics = [], []
    for f, test_idx in enumerate(split.folds):
        test_idx = np.asarray(test_idx, dtype=np.int64)
        train_idx = np.setdiff1d(np.arange(labels.size), test_idx)
        scores = np.asarray(
            fit_predict(train_idx, test_idx, subseed(seed, 100 + f)),
            dtype=np.float64)
        if scores.shape != (test_idx.size,):
            raise ValueError(
                f"fold {f}: fit_predict returned {scores.shape}, "
                f"expected ({test_idx.size},)")
        pooled[test_idx] = scores
        fold_aucs.append(roc_auc(scores, labels[test_idx]).auc)
        fold_metrics.append(confusion_metrics(scores, labels[test_idx], threshold))
    if np.isnan(pooled).any():
        raise RuntimeError("cross_validate left some samples unscored")
    return CVResult(
        split=split,
        fold_aucs=fold_aucs,
        fold_metrics=fold_metrics,
        pooled_scores=pooled,
        pooled_auc=roc_auc(pooled, labels).auc,
        pooled_metrics=confusion_metrics(pooled, labels, threshold),
        threshold=float(threshold),
    )


def _metrics_dict(m: Metrics) -> dict:
    return {
        "tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn,
        "threshold": m.threshold,
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
    }


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_fold_csv(result: CVResult, path) -> None:
    """One row per fold: fold, auc, accuracy, precision, recall.

    Absent values (undefined precision/recall) become empty cells.  Floats
    are written with repr so reruns are byte-identical.
    """
    lines = ["fold,auc,accuracy,precision,recall"]
    for f, (auc, m) in enumerate(zip(result.fold_aucs, result.fold_metrics)):
        lines.append(
            f"{f},{_fmt(auc)},{_fmt(m.accuracy)},{_fmt(m.precision)},{_fmt(m.recall)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def summarize(result: CVResult) -> dict:
    """Fold-wise and pooled results plus mean/std across folds."""
    acc = [m.accuracy for m in result.fold_metrics]
    prec = [m.precision for m in result.fold_metrics]
    rec = [m.recall for m in result.fold_metrics]
    mean_auc, std_auc = _mean_std(result.fold_aucs)
    mean_acc, std_acc = _mean_std(acc)
    mean_prec, std_prec = _mean_std(prec)
    mean_rec, std_rec = _mean_std(rec)
    return {
        "k": len(result.split.folds),
        "threshold": result.threshold,
        "stratification": result.split.stratification,
        "folds": [
            {"fold": f, "auc": auc, **_metrics_dict(m)}
            for f, (auc, m) in enumerate(zip(result.fold_aucs, result.fold_metrics))
        ],
        "mean": {"auc": mean_auc, "accuracy": mean_acc,
                 "precision": mean_prec, "recall": mean_rec},
        "std": {"auc": std_auc, "accuracy": std_acc,
                "precision": std_prec, "recall": std_rec},
        "pooled": {"auc": result.pooled_auc, **_metrics_dict(result.pooled_metrics)},
    }


def write_summary_json(result: CVResult, path) -> None:
    save_json(summarize(result), path)
