"""Small residual convolutional backbone producing the spatial embedding.

Each stage downsamples by its stride with a 3x3 conv, applies a second 3x3
conv, and adds a skip connection (1x1 projection when shape changes).  An
optional bilinear upsampling of the final feature map by a fixed factor
trades compute for finer patch resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ndtensor import ShapeError, Tensor, bilinear_upsample, conv2d


@dataclass(frozen=True)
class EncoderConfig:
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: int = 1
    stage_strides: tuple = (2, 2, 2)
    input_channels: int = 1
    feature_upsample_factor: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "stage_strides", tuple(self.stage_strides))
        if len(self.stage_channels) != len(self.stage_strides):
            raise ValueError(
                f"stage_channels ({len(self.stage_channels)}) and stage_strides "
                f"({len(self.stage_strides)}) must have equal length")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if any(c < 1 for c in self.stage_channels) or any(s < 1 for s in self.stage_strides):
            raise ValueError("stage channels and strides must be positive")
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")
        if self.feature_upsample_factor not in (1, 4):
            raise ValueError("feature_upsample_factor must be 1 or 4")

    @property
    def total_stride(self) -> int:
        return math.prod(self.stage_strides)

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    def feature_dims(self, h: int, w: int) -> tuple:
        """Spatial size of the embedding for an HxW input."""
        s = self.total_stride
        if h % s or w % s:
            raise ShapeError(
                f"input {h}x{w} not divisible by total stride {s}; pad the image at ingestion")
        f = self.feature_upsample_factor
        return h // s * f, w // s * f


def _he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def init_encoder(config: EncoderConfig, seed: int, dtype=np.float32) -> dict:
    """Create encoder parameters: fan-in scaled normal weights, zero biases.

    Returns an ordered name -> Tensor dict; the draw order is fixed so the
    same seed always yields bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    cin = config.input_channels
    for s, (cout, stride) in enumerate(zip(config.stage_channels, config.stage_strides)):
        for b in range(config.blocks_per_stage):
            block_stride = stride if b == 0 else 1
            block_cin = cin if b == 0 else cout
            prefix = f"stage{s}.block{b}"
            params[f"{prefix}.conv1.weight"] = Tensor(
                _he_normal(rng, (cout, block_cin, 3, 3), block_cin * 9, dtype), requires_grad=True)
            params[f"{prefix}.conv1.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
            params[f"{prefix}.conv2.weight"] = Tensor(
                _he_normal(rng, (cout, cout, 3, 3), cout * 9, dtype), requires_grad=True)
            params[f"{prefix}.conv2.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
            if block_stride != 1 or block_cin != cout:
                params[f"{prefix}.proj.weight"] = Tensor(
                    _he_normal(rng, (cout, block_cin, 1, 1), block_cin, dtype), requires_grad=True)
                params[f"{prefix}.proj.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        cin = cout
    return params


def encode(x: Tensor, params: dict, config: EncoderConfig) -> Tensor:
    """Map an image (C,H,W) or batch (N,C,H,W) to its feature map.

    Output spatial extents are input extents divided by the total stride and
    multiplied by the upsample factor; channel count is the last stage width.
    """
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"encode expects (C,H,W) or (N,C,H,W), got {x.data.shape}")
    h, w = x.data.shape[-2], x.data.shape[-1]
    config.feature_dims(h, w)  # validates divisibility

    out = x
    for s in range(len(config.stage_channels)):
        stride = config.stage_strides[s]
        for b in range(config.blocks_per_stage):
            block_stride = stride if b == 0 else 1
            prefix = f"stage{s}.block{b}"
            y = conv2d(out, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"],
                       stride=(block_stride, block_stride), padding=(1, 1)).relu()
            y = conv2d(y, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"],
                       stride=(1, 1), padding=(1, 1))
            if f"{prefix}.proj.weight" in params:
                skip = conv2d(out, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"],
                              stride=(block_stride, block_stride), padding=(0, 0))
            else:
                skip = out
            out = (y + skip).relu()
    if config.feature_upsample_factor > 1:
        out = bilinear_upsample(out, config.feature_upsample_factor)
    return out
