"""Image-, group- and pixel-level evaluation of a trained model."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..head import Prediction, build_heatmaps, group_probability
from ..ndtensor import Tensor, pool_output_dims
from .config import RunConfig
from .metrics import MetricsReport, classification_metrics, iou_localization
from .train import params_to_tensors, predict_scores


@dataclass
class EvalResult:
    image: MetricsReport
    group: MetricsReport | None
    records: list


def patch_indices_for_rect(rect, grid, kernel, stride, feature_dims, input_dims) -> list:
    """Patches whose image-space center falls inside the (x0,y0,x1,y1) rect."""
    x0, y0, x1, y1 = rect[:4]
    rows, cols = grid
    sh, sw = stride
    kh, kw = kernel
    scale_y = input_dims[0] / feature_dims[0]
    scale_x = input_dims[1] / feature_dims[1]
    out = []
    for a in range(rows):
        cy = (a * sh + kh / 2.0) * scale_y
        if not y0 <= cy < y1:
            continue
        for b in range(cols):
            cx = (b * sw + kw / 2.0) * scale_x
            if x0 <= cx < x1:
                out.append(a * cols + b)
    return out


def evaluate(flat_params, cfg: RunConfig, samples, indices, conf: float = 0.95,
             threshold: float = 0.5) -> EvalResult:
    """Score a split: classification from y_hat, group scores from restricted
    aggregation, localization IoU from the patch-probability renders."""
    enc_params, head_params = params_to_tensors(flat_params)
    indices = list(indices)
    scores, patch_records = predict_scores(
        samples, indices, enc_params, head_params, cfg, collect_patches=True)
    labels = np.asarray([samples[i].label for i in indices])
    image_report = classification_metrics(scores, labels, threshold)

    h, w = samples[indices[0]].image.shape if indices else (cfg.synth.height, cfg.synth.width)
    feature_dims = cfg.encoder.feature_dims(h, w)
    grid = pool_output_dims(*feature_dims, cfg.head.kernel, cfg.head.stride)

    group_scores, group_labels = [], []
    iou0_vals, iouc_vals = [], []
    records = []
    rect_cache: dict = {}
    for pos, i in enumerate(indices):
        s = samples[i]
        y_tilde, w_vec, _ = patch_records[pos]
        record = {"index": int(i), "label": int(s.label), "y_hat": float(scores[pos])}

        groups_out = []
        for rect in s.groups:
            key = tuple(rect[:4])
            if key not in rect_cache:
                rect_cache[key] = patch_indices_for_rect(
                    rect, grid, cfg.head.kernel, cfg.head.stride, feature_dims, (h, w))
            idx = rect_cache[key]
            g_label = int(rect[4])
            if idx and w_vec is not None:
                g_prob = group_probability(y_tilde, w_vec, idx, cfg.head.k_min)
            else:
                g_prob = 0.0
            group_scores.append(g_prob)
            group_labels.append(g_label)
            groups_out.append({"rect": [int(v) for v in rect[:4]], "label": g_label,
                               "probability": g_prob})
        record["groups"] = groups_out

        if s.mask.any():
            pred = Prediction(
                y_hat=Tensor(np.asarray(scores[pos], dtype=np.float64)),
                y_tilde=Tensor(np.asarray(y_tilde, dtype=np.float64)),
                w=None if w_vec is None else Tensor(np.asarray(w_vec, dtype=np.float64)),
                grid=grid, k_min=cfg.head.k_min, aggregator=cfg.head.aggregator)
            prob_map, _ = build_heatmaps(pred, cfg.head.kernel, cfg.head.stride, (h, w))
            iou0 = iou_localization(prob_map.render, s.mask, "at0")
            iouc = iou_localization(prob_map.render, s.mask, "at_conf", y_hat=float(scores[pos]), conf=conf)
            iou0_vals.append(iou0)
            if iouc is not None:
                iouc_vals.append(iouc)
            record["iou_at_0"] = iou0
            record["iou_at_conf"] = iouc
        records.append(record)

    image_report = replace(
        image_report,
        iou_at_0=float(np.mean(iou0_vals)) if iou0_vals else None,
        iou_at_conf=float(np.mean(iouc_vals)) if iouc_vals else None,
    )
    group_report = None
    if group_scores:
        group_report = classification_metrics(
            np.asarray(group_scores), np.asarray(group_labels), threshold)
    return EvalResult(image=image_report, group=group_report, records=records)
