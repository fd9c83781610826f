"""Detection metrics and evaluation protocols.

ROC curves come from a threshold sweep over the unique scores (a sample is
predicted positive when its score is strictly above the threshold). AUC is
the trapezoid area; EER interpolates linearly to the point where the false
positive rate equals the miss rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError, ValidationError

PIXEL_COVERAGE = (2, 5)  # detections must cover at least 2/5 of the true abnormal pixels
DEFAULT_PERCENTILE = 97.0


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # decreasing, +inf first and -inf last

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _score_set(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValidationError(f"{len(s)} scores but {len(y)} labels")
    if s.size == 0:
        raise UndefinedMetricError("empty score set")
    if not np.all(np.isfinite(s)):
        raise ValidationError("non-finite scores")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("ROC needs both positive and negative samples")
    return s, y


def thresholds_for(scores) -> np.ndarray:
    """+inf, midpoints between consecutive unique scores (descending), -inf."""
    u = np.unique(np.asarray(scores, dtype=np.float64))[::-1]
    mids = 0.5 * (u[:-1] + u[1:])
    return np.concatenate([[np.inf], mids, [-np.inf]])


def roc(scores, labels) -> RocCurve:
    s, y = _score_set(scores, labels)
    thr = thresholds_for(s)
    # counts of positives/negatives strictly above each threshold, via sorting
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_cum = np.concatenate([[0], np.cumsum(y[order])])
    neg_cum = np.concatenate([[0], np.cumsum(~y[order])])
    below = np.searchsorted(s_sorted, thr, side="right")
    tp = pos_cum[-1] - pos_cum[below]
    fp = neg_cum[-1] - neg_cum[below]
    return RocCurve(fp / neg_cum[-1], tp / pos_cum[-1], thr)


def auc(curve: RocCurve) -> float:
    x, y = curve.fpr, curve.tpr
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def eer(curve: RocCurve) -> float:
    """Rate where fpr = 1 - tpr, interpolated between the bracketing ROC points."""
    g = curve.fpr - (1.0 - curve.tpr)  # non-decreasing from -1 to 1
    i = int(np.argmax(g >= 0))
    if g[i] == 0 or i == 0:
        return float(curve.fpr[i])
    t = -g[i - 1] / (g[i] - g[i - 1])
    return float(curve.fpr[i - 1] + t * (curve.fpr[i] - curve.fpr[i - 1]))


# ---------------------------------------------------------------------------
# frame-level protocol


def frame_scores(maps) -> np.ndarray:
    """Per-frame maximum over cells of a (T, ...) stack of maps."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim < 2:
        raise ValidationError(f"maps must be (T, ...) with cells, got {maps.shape}")
    return maps.reshape(len(maps), -1).max(axis=1)


def frame_predictions(maps, threshold: float) -> np.ndarray:
    """A frame is abnormal when any cell is strictly above the threshold."""
    return frame_scores(maps) > threshold


def frame_level(maps, labels) -> tuple[np.ndarray, np.ndarray]:
    """Frame-granularity score set: (max-cell scores, labels)."""
    s = frame_scores(maps)
    labels = np.asarray(labels)
    if len(labels) != len(s):
        raise ValidationError(f"{len(s)} maps but {len(labels)} labels")
    return s, labels.astype(np.int8)


# ---------------------------------------------------------------------------
# pixel-level protocol

TRUE_POSITIVE, FALSE_POSITIVE, NOT_POSITIVE = 1, 0, -1


def covers(detection, truth) -> bool:
    """Whether a detection covers at least 40% of the true abnormal pixels (exact integers)."""
    inter = int(np.count_nonzero(detection & truth))
    total = int(np.count_nonzero(truth))
    num, den = PIXEL_COVERAGE
    return total > 0 and den * inter >= num * total


def pixel_level(detections, truths) -> np.ndarray:
    """Per-frame outcome of positive frames.

    Returns TRUE_POSITIVE when the detection covers enough of the ground
    truth, FALSE_POSITIVE for any other frame with a detection, and
    NOT_POSITIVE for frames without detection (these do not enter the
    positive accounting).
    """
    det = np.asarray(detections, dtype=bool)
    gt = np.asarray(truths, dtype=bool)
    if det.shape != gt.shape:
        raise ValidationError(f"mask size mismatch: {det.shape} vs {gt.shape}")
    if det.ndim == 2:
        det, gt = det[None], gt[None]
    out = np.full(len(det), NOT_POSITIVE, dtype=np.int8)
    for t in range(len(det)):
        if det[t].any():
            out[t] = TRUE_POSITIVE if covers(det[t], gt[t]) else FALSE_POSITIVE
    return out


def pixel_roc(score_maps, truths, thresholds=None) -> RocCurve:
    """Pixel-level ROC over a threshold sweep.

    TPR counts abnormal frames whose detection covers enough ground truth;
    FPR counts normal frames with any detection.
    """
    maps = np.asarray(score_maps, dtype=np.float64)
    gt = np.asarray(truths, dtype=bool)
    if maps.shape != gt.shape:
        raise ValidationError(f"size mismatch: {maps.shape} vs {gt.shape}")
    abnormal = gt.reshape(len(gt), -1).any(axis=1)
    if abnormal.all() or not abnormal.any():
        raise UndefinedMetricError("pixel ROC needs both normal and abnormal frames")
    thr = thresholds_for(maps) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    fpr, tpr = [], []
    for th in thr:
        res = pixel_level(maps > th, gt)
        tpr.append(np.mean(res[abnormal] == TRUE_POSITIVE))
        fpr.append(np.mean(res[~abnormal] != NOT_POSITIVE))
    return RocCurve(np.array(fpr), np.array(tpr), thr)


# ---------------------------------------------------------------------------
# signal post-processing


def normalize_signal(values) -> np.ndarray:
    """Divide by the per-video maximum; an all-zero signal is returned unchanged."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("empty signal")
    peak = v.max()
    if peak <= 0:
        warnings.warn("signal maximum is not positive; left unnormalized", RuntimeWarning,
                      stacklevel=2)
        return v.copy()
    return v / peak


def calibrate_threshold(signal, percentile: float = DEFAULT_PERCENTILE) -> float:
    """Threshold at a percentile of a normal-run signal (an observed value, no interpolation)."""
    v = np.asarray(signal, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("empty calibration signal")
    if not 0 <= percentile <= 100:
        raise ValidationError(f"percentile must lie in [0, 100], got {percentile}")
    return float(np.percentile(v, percentile, method="inverted_cdf"))
