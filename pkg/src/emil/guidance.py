"""Loss stack and segmentation-mask handling for guided training.

Masks never replace the image label: a mask contradicting its label is
discarded, negative labels force an all-zero mask (or none at all), and the
patch-level loss only exists when a usable mask survived filtering.  The
compound loss rescales each partial loss to the magnitude of the largest
one, with the scale coefficients treated as constants by the tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ndtensor import ShapeError, Tensor, max_pool2d

EPS = 1e-7
ALPHA_CAP = 1e4


@dataclass(frozen=True)
class GuidanceConfig:
    use_masks: bool = False
    use_negative_masks: bool = True
    corrupt_dilate: int = 0
    corrupt_erode: int = 0
    corrupt_drop: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.corrupt_drop <= 1.0:
            raise ValueError("corrupt_drop must be a probability")
        if self.corrupt_dilate < 0 or self.corrupt_erode < 0:
            raise ValueError("corruption iterations must be non-negative")


@dataclass(frozen=True)
class MaskLabel:
    """A usable training mask (or its absence) for one image."""

    mask: np.ndarray | None
    source: str  # "ground_truth" | "teacher_sim"
    image_label: int


def patch_labels(mask: np.ndarray, feature_dims: tuple, kernel: tuple, stride: tuple) -> np.ndarray:
    """Convert a pixel mask into per-patch {0,1} labels.

    The mask is first reduced to the feature-map resolution by max over
    aligned blocks (any positive pixel marks its block), then max-pooled
    with the head's kernel/stride and vectorized in patch order.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary")
    hu, wu = feature_dims
    h, w = m.shape
    if hu < 1 or wu < 1 or h % hu or w % wu:
        raise ShapeError(
            f"mask {h}x{w} does not align with encoder output {hu}x{wu}")
    bh, bw = h // hu, w // wu
    down = m.reshape(hu, bh, wu, bw).max(axis=(1, 3))
    return max_pool2d(down, kernel, stride)


def filter_mask(mask: np.ndarray | None, image_label: int, use_negative_masks: bool = True) -> np.ndarray | None:
    """Apply the contradiction-discard and negative-zeroing rules.

    Positive label with an empty mask: discarded (None).  Negative label:
    an all-zero mask when negative masks are enabled, otherwise None.
    Positive label with a positive mask passes through unchanged.
    """
    if mask is None:
        return None
    m = np.asarray(mask)
    if image_label == 1:
        return m if m.any() else None
    if use_negative_masks:
        return np.zeros_like(m)
    return None


def corrupt_mask(mask: np.ndarray | None, rng: np.random.Generator,
                 dilate: int = 0, erode: int = 0, drop: float = 0.0) -> np.ndarray | None:
    """Simulate an imperfect teacher segmentation.

    Dilation/erosion distort lesion extents; with probability ``drop`` the
    mask is unavailable altogether.  Erosion may empty a mask, in which case
    downstream filtering discards it.
    """
    if mask is None:
        return None
    if drop > 0 and rng.random() < drop:
        return None
    m = np.asarray(mask).astype(bool)
    if dilate > 0 and m.any():
        m = ndimage.binary_dilation(m, iterations=dilate)
    if erode > 0 and m.any():
        m = ndimage.binary_erosion(m, iterations=erode)
    return m.astype(np.uint8)


def prepare_mask(sample_mask: np.ndarray | None, image_label: int, config: GuidanceConfig,
                 rng: np.random.Generator) -> MaskLabel:
    """Corrupt (teacher simulation) then filter one raw mask for training."""
    if not config.use_masks:
        return MaskLabel(None, "ground_truth", image_label)
    corrupted = config.corrupt_dilate or config.corrupt_erode or config.corrupt_drop
    m = corrupt_mask(sample_mask, rng, config.corrupt_dilate, config.corrupt_erode, config.corrupt_drop)
    m = filter_mask(m, image_label, config.use_negative_masks)
    return MaskLabel(m, "teacher_sim" if corrupted else "ground_truth", image_label)


def _bce(p: Tensor, target, w_pos: float = 1.0, w_neg: float = 1.0) -> Tensor:
    t = np.asarray(target, dtype=p.data.dtype)
    pc = p.clip(EPS, 1.0 - EPS)
    return -(w_pos * Tensor(t) * pc.log() + w_neg * Tensor(1.0 - t) * (1.0 - pc).log())


def image_loss(y_hat: Tensor, y, class_weights: tuple = (1.0, 1.0)) -> Tensor:
    """Class-weighted binary cross-entropy on the image score.

    Elementwise: a scalar score gives a scalar loss, a batch of scores a
    batch of losses.  Unit weights reproduce plain cross-entropy.
    """
    w_pos, w_neg = class_weights
    return _bce(y_hat, y, w_pos, w_neg)


def patch_loss(y_tilde: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-patch binary cross-entropy over the last axis."""
    lab = np.asarray(labels)
    if lab.shape != y_tilde.data.shape:
        raise ShapeError(f"patch_loss: labels shape {lab.shape} != predictions {y_tilde.data.shape}")
    return _bce(y_tilde, lab).mean(axis=-1)


@dataclass
class LossReport:
    """Partial losses, their scale coefficients and the compound total."""

    l_image: float
    l_patch: float | None
    alpha: tuple
    total: float
    class_weights: tuple
    tensor: Tensor = field(repr=False, default=None)


def compute_alphas(values, cap: float = ALPHA_CAP) -> tuple:
    """Scale coefficients max_j l_j / l_i, capped when a loss underflows."""
    vals = [float(v) for v in values]
    mx = max(vals)
    if mx <= 0.0:
        return tuple(1.0 for _ in vals)
    return tuple(1.0 if v == mx else (min(mx / v, cap) if v > 0 else cap) for v in vals)


def compound_loss(losses, class_weights: tuple = (1.0, 1.0), alpha_override=None) -> LossReport:
    """Combine named scalar losses with dynamic magnitude scaling.

    ``losses`` is a list of (name, scalar Tensor) with names from
    {"image", "patch"}.  Coefficients are computed from the forward values
    and applied as plain constants, so gradients are those of
    sum_i alpha_i * l_i with alpha frozen.  ``alpha_override`` substitutes
    externally supplied constants (used to verify the detachment).
    """
    if not losses:
        raise ValueError("compound_loss needs at least one partial loss")
    names = [n for n, _ in losses]
    tensors = [t for _, t in losses]
    values = [float(t.data) for t in tensors]
    if any(v < 0 for v in values):
        raise ValueError("partial losses must be non-negative")
    alphas = tuple(float(a) for a in alpha_override) if alpha_override is not None else compute_alphas(values)
    total = tensors[0] * alphas[0]
    for t, a in zip(tensors[1:], alphas[1:]):
        total = total + t * a
    by_name = dict(zip(names, values))
    if "image" not in by_name:
        raise ValueError("compound_loss expects an 'image' partial loss")
    return LossReport(
        l_image=by_name["image"],
        l_patch=by_name.get("patch"),
        alpha=alphas,
        total=float(total.data),
        class_weights=tuple(class_weights),
        tensor=total,
    )


def feature_dims_of(grid: tuple, kernel: tuple, stride: tuple) -> tuple:
    """Feature-map extents implied by a patch grid and its window geometry."""
    rows, cols = grid
    return (rows - 1) * stride[0] + kernel[0], (cols - 1) * stride[1] + kernel[1]


def training_loss(prediction, label: int, mask: np.ndarray | None, head_config,
                  class_weights: tuple = (1.0, 1.0)) -> LossReport:
    """Per-sample loss: image BCE always, patch BCE when a usable mask exists.

    ``mask`` must already be filtered (see :func:`filter_mask`);
    ``head_config`` supplies the kernel/stride that align patch labels with
    the prediction's patch grid.
    """
    l_img = image_loss(prediction.y_hat, label, class_weights)
    if mask is None:
        return compound_loss([("image", l_img)], class_weights)
    dims = feature_dims_of(prediction.grid, head_config.kernel, head_config.stride)
    labels = patch_labels(mask, dims, head_config.kernel, head_config.stride)
    l_patch = patch_loss(prediction.y_tilde, labels)
    return compound_loss([("image", l_img), ("patch", l_patch)], class_weights)
