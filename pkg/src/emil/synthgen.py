"""Synthetic low-SNR bag images with pixel masks and group regions.

Each image is smoothed noise plus vertical intensity bands, with a grid of
"tooth" rectangles arranged in two rows.  Positive images carry a few small
bright disks (the lesions) placed fully inside some rectangle; the mask
marks exactly the lesion pixels.  Lesions cover well under 2% of a positive
image, so a whole-image intensity summary is nearly uninformative while a
local classifier has clean signal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ndtensor.emt import FormatError, decode_tensor, encode_tensor

DATASET_MAGIC = b"EMD1"


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 96
    channels: int = 1
    positive_fraction: float = 0.7
    lesions_min: int = 1
    lesions_max: int = 3
    radius_min: int = 2
    radius_max: int = 4
    contrast_mean: float = 0.25
    contrast_sd: float = 0.05
    group_rows: int = 2
    group_cols: int = 3
    group_margin: int = 2
    band_strength: float = 0.15
    noise_sigma: float = 0.10
    noise_smooth: float = 1.5
    brightness_jitter: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.channels != 1:
            raise ValueError("only single-channel images are supported")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must be in [0, 1]")
        if not 1 <= self.lesions_min <= self.lesions_max:
            raise ValueError("lesion count range must satisfy 1 <= min <= max")
        if not 1 <= self.radius_min <= self.radius_max:
            raise ValueError("radius range must satisfy 1 <= min <= max")
        cell_h = self.height // self.group_rows
        cell_w = self.width // self.group_cols
        interior_h = cell_h - 2 * self.group_margin - 2 * self.radius_max
        interior_w = cell_w - 2 * self.group_margin - 2 * self.radius_max
        if interior_h <= 0 or interior_w <= 0:
            raise ValueError(
                f"lesion radius {self.radius_max} does not fit inside a "
                f"{cell_h}x{cell_w} group rectangle with margin {self.group_margin}")


@dataclass(frozen=True)
class Sample:
    """Image in [-1,1], its binary label and mask, and group rectangles.

    Groups are (x0, y0, x1, y1, label) with half-open pixel bounds; a group
    is positive iff the mask intersects its rectangle.
    """

    image: np.ndarray
    label: int
    mask: np.ndarray
    groups: tuple = field(default_factory=tuple)


def group_rects(config: SynthConfig) -> list:
    """Axis-aligned (x0, y0, x1, y1) rectangles in two tooth-like rows."""
    rects = []
    cell_h = config.height // config.group_rows
    cell_w = config.width // config.group_cols
    m = config.group_margin
    for r in range(config.group_rows):
        for c in range(config.group_cols):
            y0, x0 = r * cell_h + m, c * cell_w + m
            y1, x1 = (r + 1) * cell_h - m, (c + 1) * cell_w - m
            rects.append((x0, y0, x1, y1))
    return rects


def _background(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    h, w = config.height, config.width
    noise = ndimage.gaussian_filter(rng.standard_normal((h, w)), config.noise_smooth)
    sd = noise.std()
    if sd > 0:
        noise *= config.noise_sigma / sd
    n_bands = config.group_rows * config.group_cols
    offsets = rng.uniform(-config.band_strength, config.band_strength, n_bands)
    edges = np.linspace(0, w, n_bands + 1).astype(int)
    bands = np.zeros(w)
    for b in range(n_bands):
        bands[edges[b]:edges[b + 1]] = offsets[b]
    bands = ndimage.gaussian_filter1d(bands, 3.0)
    shift = rng.uniform(-config.brightness_jitter, config.brightness_jitter)
    return noise + bands[None, :] + shift


def _generate_one(config: SynthConfig, rng: np.random.Generator, rects: list) -> Sample:
    image = _background(rng, config)
    mask = np.zeros((config.height, config.width), dtype=np.uint8)
    label = int(rng.random() < config.positive_fraction)
    if label:
        n_lesions = int(rng.integers(config.lesions_min, config.lesions_max + 1))
        yy, xx = np.mgrid[0:config.height, 0:config.width]
        for _ in range(n_lesions):
            x0, y0, x1, y1 = rects[int(rng.integers(len(rects)))]
            r = int(rng.integers(config.radius_min, config.radius_max + 1))
            cy = int(rng.integers(y0 + r, y1 - r))
            cx = int(rng.integers(x0 + r, x1 - r))
            delta = max(0.05, rng.normal(config.contrast_mean, config.contrast_sd))
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            image[disk] += delta
            mask[disk] = 1
    image = np.clip(image, -1.0, 1.0).astype(np.float32)
    groups = tuple(
        (x0, y0, x1, y1, int(mask[y0:y1, x0:x1].any())) for (x0, y0, x1, y1) in rects)
    return Sample(image=image, label=label, mask=mask, groups=groups)


def generate(config: SynthConfig, n: int, seed: int | None = None) -> list:
    """Deterministically generate ``n`` samples for (config, seed).

    Each sample draws from its own generator keyed by (seed, index), so a
    parallel producer splitting on index would reproduce this stream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    base = config.seed if seed is None else seed
    rects = group_rects(config)
    return [_generate_one(config, np.random.default_rng([base, i]), rects) for i in range(n)]


# -- dataset file format ------------------------------------------------------
#
#   magic  b"EMD1"
#   count  u32
#   per sample:
#     label        u32
#     image        EMT1 tensor (f32, HxW)
#     mask         EMT1 tensor (u8,  HxW)
#     group count  u32
#     groups       (x0, y0, x1, y1, label) u32 each
#
# Everything little-endian.


def write_dataset(samples: list, path) -> None:
    parts = [DATASET_MAGIC, struct.pack("<I", len(samples))]
    for s in samples:
        parts.append(struct.pack("<I", int(s.label)))
        parts.append(encode_tensor(np.asarray(s.image, dtype=np.float32)))
        parts.append(encode_tensor(np.asarray(s.mask, dtype=np.uint8)))
        parts.append(struct.pack("<I", len(s.groups)))
        for (x0, y0, x1, y1, glabel) in s.groups:
            parts.append(struct.pack("<5I", x0, y0, x1, y1, glabel))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_dataset(path) -> list:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic at byte 0 in {path}")
    if len(buf) < 8:
        raise FormatError("truncated dataset header at byte 4")
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    samples = []
    for _ in range(count):
        if off + 4 > len(buf):
            raise FormatError(f"truncated sample label at byte {off}")
        (label,) = struct.unpack_from("<I", buf, off)
        off += 4
        image, off = decode_tensor(buf, off)
        mask, off = decode_tensor(buf, off)
        if off + 4 > len(buf):
            raise FormatError(f"truncated group count at byte {off}")
        (n_groups,) = struct.unpack_from("<I", buf, off)
        off += 4
        groups = []
        for _ in range(n_groups):
            if off + 20 > len(buf):
                raise FormatError(f"truncated group record at byte {off}")
            groups.append(struct.unpack_from("<5I", buf, off))
            off += 20
        samples.append(Sample(image=image, label=int(label), mask=mask, groups=tuple(groups)))
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after byte {off}")
    return samples


def stratified_split(labels, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> tuple:
    """Disjoint index sets covering every sample once, stratified by label.

    Within each class the indices are shuffled by the seeded generator and
    sliced by cumulative fractions; rounding remainders land in the last
    split.
    """
    labels = np.asarray(labels)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    splits = [[] for _ in fractions]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        bounds = np.floor(np.cumsum(fractions[:-1]) * len(idx)).astype(int)
        for part, chunk in zip(splits, np.split(idx, bounds)):
            part.extend(chunk.tolist())
    return tuple(np.asarray(sorted(part), dtype=np.int64) for part in splits)
