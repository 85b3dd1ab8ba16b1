"""Patch classification, gated attention and constrained aggregation.

The image-level score is

    y_hat = sum_k w_k * ytilde_k / max(sum_k w_k, k_min)

where each patch probability ytilde_k and each attention weight w_k depends
only on that patch's pooled embedding.  Because the weights are independent
sigmoids rather than a softmax, the model can ignore every patch (all w -> 0
drives y_hat -> 0), and the contribution of any patch to y_hat is exactly
auditable after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ndtensor import (
    ShapeError,
    Tensor,
    avg_pool_patches,
    bilinear_upsample_array,
    pool_output_dims,
)
from .encoder import EncoderConfig, encode

AGGREGATORS = ("gated", "softmax", "max")


@dataclass(frozen=True)
class HeadConfig:
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    k_min: float = 1.0
    hidden: int = 64
    aggregator: str = "gated"

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "stride", tuple(self.stride))
        if self.k_min < 0:
            raise ValueError("k_min must be non-negative")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")


def init_head(c_u: int, config: HeadConfig, seed: int, dtype=np.float32) -> dict:
    """Bias-free head parameters: classifier vector o, attention A, B, c."""
    rng = np.random.default_rng(seed)
    d = config.hidden

    def draw(shape, fan_in):
        return Tensor((rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype),
                      requires_grad=True)

    return {
        "o": draw((c_u,), c_u),
        "A": draw((c_u, d), c_u),
        "B": draw((c_u, d), c_u),
        "c": draw((d,), d),
    }


@dataclass(frozen=True)
class Prediction:
    """One forward pass of the head; tensors keep the tape alive for training.

    ``y_hat`` is scalar (or (N,) when a leading batch axis was used),
    ``y_tilde`` and ``w`` are (K,) (or (N,K)); ``w`` is None for the
    max-operator baseline, which has no attention.
    """

    y_hat: Tensor
    y_tilde: Tensor
    w: Tensor | None
    grid: tuple
    k_min: float
    aggregator: str = "gated"

    @property
    def k(self) -> int:
        return self.grid[0] * self.grid[1]

    def scores(self) -> np.ndarray:
        return np.asarray(self.y_hat.data)


def classify_patches(p: Tensor, o: Tensor) -> Tensor:
    """Shared linear classifier over patch rows: sigmoid(P @ o)."""
    if p.data.shape[-1] != o.data.shape[0]:
        raise ShapeError(f"classify_patches: P columns {p.data.shape[-1]} != o length {o.data.shape[0]}")
    return (p @ o).sigmoid()


def _gate_logits(p: Tensor, a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    if p.data.shape[-1] != a.data.shape[0]:
        raise ShapeError(f"attend: P columns {p.data.shape[-1]} != A rows {a.data.shape[0]}")
    if a.data.shape != b.data.shape:
        raise ShapeError(f"attend: A shape {a.data.shape} != B shape {b.data.shape}")
    if c.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"attend: c length {c.data.shape[0]} != hidden width {a.data.shape[1]}")
    return ((p @ a).tanh() * (p @ b).sigmoid()) @ c


def attend(p: Tensor, a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Gated attention with a sigmoid outer function.

    Each weight depends only on its own row of P, lands in (0,1), and is not
    normalized across patches.
    """
    return _gate_logits(p, a, b, c).sigmoid()


def attend_softmax(p: Tensor, a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Softmax-normalized variant of the gate; weights sum to 1 per bag."""
    return _gate_logits(p, a, b, c).softmax(axis=-1)


def aggregate(y_tilde: Tensor, w: Tensor, k_min: float) -> Tensor:
    """Attention-weighted mean with the denominator clamped below by k_min.

    The clamp means at least k_min units of collective weight are assumed,
    so a confident positive needs that much attention mass; all-zero weights
    yield exactly 0 (the 0/0 case is defined as 0).  Gradient flows into
    sum(w) only while it strictly exceeds k_min.
    """
    if k_min < 0:
        raise ValueError("k_min must be non-negative")
    if y_tilde.data.shape != w.data.shape:
        raise ShapeError(f"aggregate: y_tilde shape {y_tilde.data.shape} != w shape {w.data.shape}")
    num = (w * y_tilde).sum(axis=-1)
    denom = w.sum(axis=-1).maximum(Tensor(np.asarray(k_min, dtype=w.data.dtype)))
    return num.guarded_div(denom)


def aggregate_max(y_tilde: Tensor) -> Tensor:
    """Max-operator baseline: the bag score is the best patch score."""
    if y_tilde.data.size == 0:
        raise ShapeError("aggregate_max of an empty patch vector")
    return y_tilde.max_reduce(axis=-1)


def _restricted_eq4(y_tilde: np.ndarray, w: np.ndarray, k_min: float) -> float:
    s = float(w.sum())
    denom = max(s, k_min)
    if denom == 0.0:
        return 0.0
    return float((w * y_tilde).sum()) / denom


def group_probability(y_tilde, w, indices, k_min: float) -> float:
    """Bag score restricted to a patch subset (numerator and denominator)."""
    yt = np.asarray(y_tilde.data if isinstance(y_tilde, Tensor) else y_tilde, dtype=np.float64)
    wv = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("group_probability needs a non-empty index set")
    if len(set(idx.tolist())) != idx.size:
        raise ValueError("group_probability indices must be unique")
    if idx.min() < 0 or idx.max() >= yt.shape[-1]:
        raise IndexError(f"patch index out of range 0..{yt.shape[-1] - 1}")
    return _restricted_eq4(yt[idx], wv[idx], k_min)


def removal_delta(y_tilde, w, i: int, k_min: float) -> float:
    """Exact change of y_hat caused by removing patch ``i`` (re-evaluated)."""
    yt = np.asarray(y_tilde.data if isinstance(y_tilde, Tensor) else y_tilde, dtype=np.float64)
    wv = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    if not 0 <= i < yt.shape[-1]:
        raise IndexError(f"patch index {i} out of range 0..{yt.shape[-1] - 1}")
    keep = np.arange(yt.shape[-1]) != i
    return _restricted_eq4(yt[keep], wv[keep], k_min) - _restricted_eq4(yt, wv, k_min)


def removal_delta_closed_form(y_tilde, w, i: int, k_min: float) -> float:
    """-w_i*ytilde_i/k_min; exact whenever both denominators clamp at k_min,
    i.e. when sum(w) <= k_min (and in particular whenever the post-removal
    sum stays below k_min with matching values).  Prefer :func:`removal_delta`
    outside that regime."""
    yt = np.asarray(y_tilde.data if isinstance(y_tilde, Tensor) else y_tilde, dtype=np.float64)
    wv = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    if not 0 <= i < yt.shape[-1]:
        raise IndexError(f"patch index {i} out of range 0..{yt.shape[-1] - 1}")
    if k_min <= 0:
        raise ValueError("closed form requires k_min > 0")
    return float(-wv[i] * yt[i] / k_min)


@dataclass(frozen=True)
class Heatmap:
    """Per-location grid of probabilities or attention plus its full render."""

    kind: str  # "patch_prob" | "attention"
    grid: np.ndarray
    render: np.ndarray


def _overlap_grids(values: np.ndarray, grid: tuple, kernel: tuple, stride: tuple, mode: str) -> np.ndarray:
    """Spread patch values onto the feature-map lattice they cover.

    Attention values sum and clip at 1; probabilities average over the
    patches covering each location.
    """
    rows, cols = grid
    kh, kw = kernel
    sh, sw = stride
    h = (rows - 1) * sh + kh
    w = (cols - 1) * sw + kw
    acc = np.zeros((h, w), dtype=np.float64)
    cover = np.zeros((h, w), dtype=np.float64)
    vals = values.reshape(rows, cols)
    for i in range(kh):
        for j in range(kw):
            acc[i:i + sh * (rows - 1) + 1:sh, j:j + sw * (cols - 1) + 1:sw] += vals
            cover[i:i + sh * (rows - 1) + 1:sh, j:j + sw * (cols - 1) + 1:sw] += 1.0
    if mode == "sum_clip":
        return np.clip(acc, 0.0, 1.0)
    return acc / cover


def build_heatmaps(prediction: Prediction, kernel: tuple, stride: tuple, input_dims: tuple) -> tuple:
    """Build the patch-probability and attention heatmaps for one image.

    With stride == kernel the grid holds one cell per patch; with
    overlapping patches the grid lives on the feature lattice, attention
    summed and clipped at 1, probabilities averaged.  Renders are bilinear
    upsamplings to the input size.
    """
    if prediction.y_tilde.data.ndim != 1:
        raise ShapeError("build_heatmaps expects a single-image prediction")
    rows, cols = prediction.grid
    if rows * cols != prediction.y_tilde.data.shape[0]:
        raise ShapeError(f"grid {prediction.grid} inconsistent with K={prediction.y_tilde.data.shape[0]}")
    yt = np.asarray(prediction.y_tilde.data, dtype=np.float64)
    wv = None if prediction.w is None else np.asarray(prediction.w.data, dtype=np.float64)

    if tuple(kernel) == tuple(stride):
        prob_grid = yt.reshape(rows, cols)
        attn_grid = None if wv is None else wv.reshape(rows, cols)
    else:
        prob_grid = _overlap_grids(yt, prediction.grid, kernel, stride, "mean")
        attn_grid = None if wv is None else _overlap_grids(wv, prediction.grid, kernel, stride, "sum_clip")

    h_in, w_in = input_dims
    gh, gw = prob_grid.shape
    if h_in % gh or w_in % gw or h_in // gh != w_in // gw:
        raise ShapeError(
            f"input dims {input_dims} are not an integer multiple of heatmap grid {prob_grid.shape}")
    factor = h_in // gh

    prob = Heatmap("patch_prob", prob_grid, bilinear_upsample_array(prob_grid, factor))
    if attn_grid is None:
        attn = Heatmap("attention", np.zeros_like(prob_grid), np.zeros((h_in, w_in)))
    else:
        attn = Heatmap("attention", attn_grid, bilinear_upsample_array(attn_grid, factor))
    return prob, attn


def forward_features(u: Tensor, head_params: dict, config: HeadConfig) -> Prediction:
    """Run the head on a feature map (H,W,C) or batch (N,H,W,C)."""
    h, w = u.data.shape[-3], u.data.shape[-2]
    grid = pool_output_dims(h, w, config.kernel, config.stride)
    p = avg_pool_patches(u, config.kernel, config.stride)
    y_tilde = classify_patches(p, head_params["o"])
    if config.aggregator == "max":
        return Prediction(aggregate_max(y_tilde), y_tilde, None, grid, config.k_min, "max")
    if config.aggregator == "softmax":
        w_vec = attend_softmax(p, head_params["A"], head_params["B"], head_params["c"])
        return Prediction((w_vec * y_tilde).sum(axis=-1), y_tilde, w_vec, grid, config.k_min, "softmax")
    w_vec = attend(p, head_params["A"], head_params["B"], head_params["c"])
    return Prediction(aggregate(y_tilde, w_vec, config.k_min), y_tilde, w_vec, grid, config.k_min, "gated")


def forward(x: Tensor, encoder_params: dict, encoder_config: EncoderConfig,
            head_params: dict, head_config: HeadConfig) -> Prediction:
    """Full pipeline: encode the image, pool patches, classify and aggregate."""
    u = encode(x, encoder_params, encoder_config)
    if u.data.ndim == 3:
        u = u.transpose(1, 2, 0)  # (C,H,W) -> (H,W,C)
    else:
        u = u.transpose(0, 2, 3, 1)
    return forward_features(u, head_params, head_config)
