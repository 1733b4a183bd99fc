"""Calibration metrics: equal-width ECE, equal-mass ECE, KDE-based ECE, accuracy, NLL."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, PredictionsLike, as_predictions

PROB_FLOOR = 1e-12
KDE_GRID_POINTS = 1024
KDE_BANDWIDTH_RANGE = (1e-3, 0.1)


@dataclass(frozen=True)
class BinStats:
    """Count, mean confidence and accuracy of one confidence bin."""

    bin_index: int
    count: int
    mean_confidence: float
    accuracy: float
    lower: float
    upper: float


@dataclass(frozen=True)
class EceReport:
    metric_kind: str  # equal_width | equal_mass | kde
    value: float
    num_bins: Optional[int] = None
    bandwidth: Optional[float] = None
    bins: tuple[BinStats, ...] = ()


def bin_equal_width(preds: PredictionsLike, num_bins: int) -> list[BinStats]:
    """Partition predictions into num_bins equal-width bins ((m-1)/M, m/M].

    A confidence of exactly 0 is assigned to the first bin. Empty bins are
    returned with count 0 and zero confidence/accuracy.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    p = as_predictions(preds)
    conf = p.confidence
    corr = p.correct.astype(float)
    # ceil maps (m-1)/M < c <= m/M to bin m; clip sends c == 0 into bin 1
    idx = np.clip(np.ceil(conf * num_bins).astype(int), 1, num_bins) - 1
    counts = np.bincount(idx, minlength=num_bins) if len(p) else np.zeros(num_bins, dtype=int)
    sum_conf = np.bincount(idx, weights=conf, minlength=num_bins) if len(p) else np.zeros(num_bins)
    sum_corr = np.bincount(idx, weights=corr, minlength=num_bins) if len(p) else np.zeros(num_bins)
    stats = []
    for m in range(num_bins):
        c = int(counts[m])
        stats.append(
            BinStats(
                bin_index=m + 1,
                count=c,
                mean_confidence=float(sum_conf[m] / c) if c else 0.0,
                accuracy=float(sum_corr[m] / c) if c else 0.0,
                lower=m / num_bins,
                upper=(m + 1) / num_bins,
            )
        )
    return stats


def ece(preds: PredictionsLike, num_bins: int, d: int = 1) -> EceReport:
    """Binned expected calibration error with equal-width bins.

    d=1 uses the absolute gap |acc - conf| per bin, d=2 the squared gap.
    """
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    p = as_predictions(preds)
    if len(p) == 0:
        raise ValueError("need at least one prediction")
    stats = bin_equal_width(p, num_bins)
    n = len(p)
    value = 0.0
    for s in stats:
        if s.count == 0:
            continue
        gap = s.accuracy - s.mean_confidence
        value += (s.count / n) * (abs(gap) if d == 1 else gap * gap)
    return EceReport(metric_kind="equal_width", value=value, num_bins=num_bins, bins=tuple(stats))


def _equal_mass_groups(conf: np.ndarray, num_bins: int) -> list[np.ndarray]:
    """Stable-sorted index groups of near-equal size; adjacent groups that
    share a boundary confidence value are merged so ties never straddle bins."""
    n = conf.shape[0]
    order = np.argsort(conf, kind="stable")
    groups = [g for g in np.array_split(order, num_bins) if g.size]
    merged = [groups[0]]
    for g in groups[1:]:
        if conf[merged[-1][-1]] == conf[g[0]]:
            merged[-1] = np.concatenate([merged[-1], g])
        else:
            merged.append(g)
    return merged


def ece_equal_mass(preds: PredictionsLike, num_bins: int) -> EceReport:
    """ECE with bin edges at empirical confidence quantiles (equal-mass bins)."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    p = as_predictions(preds)
    n = len(p)
    if n < num_bins:
        raise ValueError("need at least as many predictions as bins")
    conf = p.confidence
    corr = p.correct.astype(float)
    groups = _equal_mass_groups(conf, num_bins)
    stats = []
    value = 0.0
    lower = 0.0
    for m, g in enumerate(groups):
        mc = float(conf[g].mean())
        acc = float(corr[g].mean())
        upper = float(conf[g].max()) if m < len(groups) - 1 else 1.0
        stats.append(
            BinStats(
                bin_index=m + 1,
                count=int(g.size),
                mean_confidence=mc,
                accuracy=acc,
                lower=lower,
                upper=upper,
            )
        )
        value += (g.size / n) * abs(acc - mc)
        lower = upper
    return EceReport(metric_kind="equal_mass", value=value, num_bins=num_bins, bins=tuple(stats))


def ece_kde(preds: PredictionsLike) -> EceReport:
    """KDE-based ECE: Nadaraya-Watson accuracy estimate against a Gaussian
    kernel density over confidences, integrated on a 1024-point grid."""
    p = as_predictions(preds)
    n = len(p)
    if n < 10:
        raise ValueError("need at least 10 predictions for the KDE estimate")
    conf = p.confidence
    corr = p.correct.astype(float)
    sigma = float(conf.std())
    if sigma == 0.0:
        # degenerate spectrum: single confidence level
        value = abs(float(corr.mean()) - float(conf[0]))
        return EceReport(metric_kind="kde", value=value, bandwidth=0.0)
    lo, hi = float(conf.min()), float(conf.max())
    h = float(np.clip(1.06 * sigma * n ** (-0.2), *KDE_BANDWIDTH_RANGE))
    grid = np.linspace(lo, hi, KDE_GRID_POINTS)
    dp = (hi - lo) / (KDE_GRID_POINTS - 1)
    value = 0.0
    block = 64
    for start in range(0, KDE_GRID_POINTS, block):
        g = grid[start : start + block]
        w = np.exp(-0.5 * ((g[:, None] - conf[None, :]) / h) ** 2)
        wsum = w.sum(axis=1)
        density = wsum / (n * h * np.sqrt(2 * np.pi))
        acc_hat = (w @ corr) / np.maximum(wsum, PROB_FLOOR)
        value += float(np.sum(np.abs(acc_hat - g) * density) * dp)
    return EceReport(metric_kind="kde", value=value, bandwidth=h)


def accuracy(preds: PredictionsLike) -> float:
    p = as_predictions(preds)
    if len(p) == 0:
        raise ValueError("need at least one prediction")
    return float(p.correct.mean())


def nll(dataset: Dataset, probs: np.ndarray) -> float:
    """Mean negative log-likelihood of the true labels; probabilities clamped at 1e-12."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != dataset.logits.shape:
        raise ValueError("probability matrix must match the dataset shape")
    p_label = probs[np.arange(len(dataset)), dataset.labels]
    return float(-np.log(np.maximum(p_label, PROB_FLOOR)).mean())


def reliability_data(preds: PredictionsLike, num_bins: int) -> list[BinStats]:
    """Equal-width bin stats serialized for external reliability-diagram plotting."""
    return bin_equal_width(preds, num_bins)
