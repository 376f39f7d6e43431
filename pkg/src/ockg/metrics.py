"""Evaluation of score series against ground truth: delay, ROC/AUC, success
rate, and aggregation over Monte-Carlo instances."""

from __future__ import annotations

import numpy as np

from .divergence import ScoreSeries

FPR_GRID = np.linspace(0.0, 1.0, 101)


def detection_delay(series: ScoreSeries, tau: int, n: int) -> int:
    """Peak of the global score inside ``[tau, tau + 2n]``, minus ``tau``."""
    times = series.times
    mask = (times >= tau) & (times <= tau + 2 * n)
    if not mask.any() or times.min() > tau or times.max() < tau + 2 * n - _step(times):
        raise ValueError(f"score series does not cover [{tau}, {tau + 2 * n}]")
    gs = series.global_scores[mask]
    return int(times[mask][int(np.argmax(gs))] - tau)


def _step(times: np.ndarray) -> int:
    return int(np.min(np.diff(times))) if len(times) > 1 else 1


def run_success(series: ScoreSeries, tau: int, n: int) -> bool:
    """Whether the global peak over the whole series falls in ``[tau, tau + 2n]``."""
    if len(series) == 0:
        return False
    t_peak = series.times[int(np.argmax(series.global_scores))]
    return bool(tau <= t_peak <= tau + 2 * n)


def roc_curve(scores, positives) -> tuple[np.ndarray, np.ndarray, float]:
    """ROC of node scores against membership in ``positives``.

    Tied scores form a single threshold step, so the trapezoid area equals
    the Mann-Whitney statistic with half credit for ties.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.zeros(scores.size, dtype=bool)
    labels[list(positives)] = True
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both affected and unaffected nodes")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(lab)[last_of_group]
    fp = np.cumsum(~lab)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return fpr, tpr, float(np.trapezoid(tpr, fpr))


def roc_auc(scores, positives) -> tuple[list[tuple[float, float]], float]:
    fpr, tpr, auc = roc_curve(scores, positives)
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def scores_at(series: ScoreSeries, t: int) -> np.ndarray:
    return series.node_scores[series.at(t)]


def interpolate_roc(fpr: np.ndarray, tpr: np.ndarray, grid=FPR_GRID) -> np.ndarray:
    # vertical segments: keep the highest tpr reached at each fpr
    ufpr, inv = np.unique(fpr, return_inverse=True)
    top = np.zeros(ufpr.size)
    np.maximum.at(top, inv, tpr)
    return np.interp(grid, ufpr, top)


def evaluate_instance(series: ScoreSeries, tau: int, n: int, affected) -> dict:
    fpr, tpr, auc = roc_curve(scores_at(series, tau + n), affected)
    return {
        "delay": detection_delay(series, tau, n),
        "auc": auc,
        "success": run_success(series, tau, n),
        "peak_score": float(series.global_scores.max()) if len(series) else 0.0,
        "roc_fpr": fpr.tolist(),
        "roc_tpr": tpr.tolist(),
    }


def _std(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def aggregate(instances: list[dict]) -> dict:
    """Means, sample standard deviations and success fraction over instances."""
    if not instances:
        raise ValueError("nothing to aggregate")
    delays = [r["delay"] for r in instances]
    aucs = [r["auc"] for r in instances]
    curves = np.array([interpolate_roc(np.asarray(r["roc_fpr"]), np.asarray(r["roc_tpr"]))
                       for r in instances])
    return {
        "n_instances": len(instances),
        "delay_mean": float(np.mean(delays)),
        "delay_std": _std(delays),
        "auc_mean": float(np.mean(aucs)),
        "auc_std": _std(aucs),
        "precision": float(np.mean([bool(r["success"]) for r in instances])),
        "mean_roc": {
            "fpr": FPR_GRID.tolist(),
            "tpr_mean": curves.mean(axis=0).tolist(),
            "tpr_std": (curves.std(axis=0, ddof=1) if len(instances) > 1
                        else np.zeros(FPR_GRID.size)).tolist(),
        },
    }
