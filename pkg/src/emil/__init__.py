"""EMIL: embedding-space multiple instance learning with gated attention.

Patches pooled from a convolutional embedding are classified individually;
sigmoid-gated attention weights them into an image score whose denominator
is clamped below by a minimum collective weight.  The per-patch
probabilities and weights double as faithful heatmaps, and segmentation
masks can optionally guide training through a dynamically scaled compound
loss.
"""

from . import guidance, harness, head, ndtensor, pgm, synthgen
from .encoder import EncoderConfig, encode, init_encoder
from .guidance import (
    GuidanceConfig,
    LossReport,
    MaskLabel,
    compound_loss,
    corrupt_mask,
    filter_mask,
    image_loss,
    patch_labels,
    patch_loss,
    training_loss,
)
from .head import (
    HeadConfig,
    Heatmap,
    Prediction,
    aggregate,
    aggregate_max,
    attend,
    attend_softmax,
    build_heatmaps,
    classify_patches,
    forward,
    forward_features,
    group_probability,
    init_head,
    removal_delta,
    removal_delta_closed_form,
)
from .ndtensor import Tensor, grad_check, no_grad
from .synthgen import Sample, SynthConfig, generate, read_dataset, stratified_split, write_dataset

__version__ = "0.1.0"
