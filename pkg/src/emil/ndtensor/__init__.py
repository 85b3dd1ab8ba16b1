"""Minimal dense-tensor math with reverse-mode differentiation."""

from .emt import FormatError, decode_tensor, encode_tensor, encoded_size, read_tensor, write_tensor
from .gradcheck import grad_check
from .spatial import (
    avg_pool_patches,
    bilinear_upsample,
    bilinear_upsample_array,
    conv2d,
    max_pool2d,
    pool_output_dims,
    window_origins,
)
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, no_grad, zero_grads

__all__ = [
    "DEFAULT_DTYPE",
    "FormatError",
    "ShapeError",
    "Tensor",
    "avg_pool_patches",
    "bilinear_upsample",
    "bilinear_upsample_array",
    "conv2d",
    "decode_tensor",
    "encode_tensor",
    "encoded_size",
    "grad_check",
    "max_pool2d",
    "no_grad",
    "pool_output_dims",
    "read_tensor",
    "write_tensor",
    "window_origins",
    "zero_grads",
]
