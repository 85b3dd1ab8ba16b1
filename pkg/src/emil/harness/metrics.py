"""Classification metrics and top-k localization scoring.

ROC AUC integrates the exact step curve with trapezoids, which handles score
ties as diagonal segments and therefore agrees with concordant-pair counting
(ties worth 1/2).  PR AUC uses precision-weighted recall steps.  Heatmap
localization binarizes by taking exactly as many top pixels as the ground
truth has, ties broken in row-major order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    balanced_accuracy: float
    f_score: float
    sensitivity: float
    specificity: float
    roc_auc: float | None
    pr_auc: float | None
    threshold: float
    n_pos: int
    n_neg: int
    iou_at_0: float | None = None
    iou_at_conf: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Area under the exact ROC step curve (trapezoidal, tie-aware)."""
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # one curve vertex per distinct score
    boundary = np.flatnonzero(np.diff(s)) if s.size > 1 else np.array([], dtype=int)
    cut = np.concatenate([boundary, [s.size - 1]])
    tp = np.cumsum(y)[cut]
    fp = (cut + 1) - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return float(np.trapezoid(tpr, fpr))


def pr_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Precision-weighted step integration of the PR curve."""
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        return None
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    boundary = np.flatnonzero(np.diff(s)) if s.size > 1 else np.array([], dtype=int)
    cut = np.concatenate([boundary, [s.size - 1]])
    tp = np.cumsum(y)[cut]
    predicted = cut + 1
    precision = tp / predicted
    recall = tp / n_pos
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev) * precision).sum())


def classification_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Threshold-based metrics plus AUCs; scores >= threshold predict positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise ValueError("scores must lie in [0, 1]")
    pred = scores >= threshold
    pos = labels == 1
    tp = int((pred & pos).sum())
    fn = int((~pred & pos).sum())
    tn = int((~pred & ~pos).sum())
    fp = int((pred & ~pos).sum())
    sensitivity = _rate(tp, tp + fn)
    specificity = _rate(tn, tn + fp)
    precision = _rate(tp, tp + fp)
    f_score = (2 * precision * sensitivity / (precision + sensitivity)
               if precision + sensitivity > 0 else 0.0)
    return MetricsReport(
        balanced_accuracy=(sensitivity + specificity) / 2.0,
        f_score=f_score,
        sensitivity=sensitivity,
        specificity=specificity,
        roc_auc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        threshold=threshold,
        n_pos=int(pos.sum()),
        n_neg=int((~pos).sum()),
    )


SKIPPED = None  # sentinel value for confidence-gated localization


def binarize_top_k(render: np.ndarray, k: int) -> np.ndarray:
    """Mark the k highest-valued pixels, ties resolved in row-major order."""
    flat = np.asarray(render, dtype=np.float64).ravel()
    if not 0 < k <= flat.size:
        raise ValueError(f"top-k count {k} out of range for {flat.size} pixels")
    order = np.argsort(-flat, kind="stable")
    out = np.zeros(flat.size, dtype=np.uint8)
    out[order[:k]] = 1
    return out.reshape(np.asarray(render).shape)


def iou_localization(render: np.ndarray, mask: np.ndarray, mode: str = "at0",
                     y_hat: float | None = None, conf: float = 0.95) -> float | None:
    """IoU of the area-matched binarized heatmap against the ground truth.

    The heatmap's top |mask| pixels become the predicted region.  Mode
    "at_conf" scores only confident predictions: below ``conf`` the image
    is skipped (returns None).
    """
    render = np.asarray(render, dtype=np.float64)
    mask = np.asarray(mask)
    if render.shape != mask.shape:
        raise ValueError(f"render shape {render.shape} != mask shape {mask.shape}")
    area = int(mask.sum())
    if area == 0:
        raise ValueError("localization is scored on positive images only (empty mask)")
    if mode not in ("at0", "at_conf"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "at_conf":
        if y_hat is None:
            raise ValueError("at_conf mode needs the image score")
        if y_hat < conf:
            return SKIPPED
    bin_map = binarize_top_k(render, area)
    inter = int(((bin_map == 1) & (mask == 1)).sum())
    union = int(((bin_map == 1) | (mask == 1)).sum())
    return inter / union


def mean_pixel_baseline(train_means, train_labels, eval_means, eval_labels) -> float:
    """Balanced accuracy of the best single threshold on global mean intensity.

    Sweeps every train mean as a cut (both polarities) and applies the best
    to the evaluation data; the low-SNR check that whole-image intensity
    carries almost no label information.
    """
    train_means = np.asarray(train_means)
    train_labels = np.asarray(train_labels)
    best = (0.5, 1.0, np.inf)  # (bal_acc, polarity, threshold)
    for thr in np.unique(train_means):
        for polarity in (1.0, -1.0):
            pred = (polarity * train_means) >= (polarity * thr)
            sens = _rate(int((pred & (train_labels == 1)).sum()), int((train_labels == 1).sum()))
            spec = _rate(int((~pred & (train_labels == 0)).sum()), int((train_labels == 0).sum()))
            bal = (sens + spec) / 2
            if bal > best[0]:
                best = (bal, polarity, thr)
    _, polarity, thr = best
    eval_means = np.asarray(eval_means)
    eval_labels = np.asarray(eval_labels)
    pred = (polarity * eval_means) >= (polarity * thr)
    sens = _rate(int((pred & (eval_labels == 1)).sum()), int((eval_labels == 1).sum()))
    spec = _rate(int((~pred & (eval_labels == 0)).sum()), int((eval_labels == 0).sum()))
    return (sens + spec) / 2
