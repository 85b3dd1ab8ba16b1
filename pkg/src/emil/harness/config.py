"""Run configuration and the ``key = value`` config-file dialect.

Files hold one dotted key per line (``head.k_min = 1``), ``#`` comments and
blank lines.  Every key must be known; unknown keys are reported by name so
typos fail loudly instead of silently training with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..encoder import EncoderConfig
from ..guidance import GuidanceConfig
from ..head import HeadConfig
from ..synthgen import SynthConfig


class ConfigError(ValueError):
    """User-facing configuration problem (bad key, bad value, missing file)."""


def _to_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _to_int_tuple(s: str) -> tuple:
    return tuple(int(x) for x in s.split(","))


def _to_float_tuple(s: str) -> tuple:
    return tuple(float(x) for x in s.split(","))


_SCHEMA = {
    "dataset": str,
    "out": str,
    "seed": int,
    "encoder.stage_channels": _to_int_tuple,
    "encoder.blocks_per_stage": int,
    "encoder.stage_strides": _to_int_tuple,
    "encoder.input_channels": int,
    "encoder.upsample": int,
    "head.kernel": _to_int_tuple,
    "head.stride": _to_int_tuple,
    "head.k_min": float,
    "head.hidden": int,
    "head.aggregator": str,
    "guidance.use_masks": _to_bool,
    "guidance.use_negative_masks": _to_bool,
    "guidance.corrupt_dilate": int,
    "guidance.corrupt_erode": int,
    "guidance.corrupt_drop": float,
    "optim.lr": float,
    "optim.beta1": float,
    "optim.beta2": float,
    "train.batch_size": int,
    "train.max_epochs": int,
    "train.class_weighting": _to_bool,
    "train.split": _to_float_tuple,
    "train.folds": int,
    "synth.n": int,
    "synth.height": int,
    "synth.width": int,
    "synth.positive_fraction": float,
    "synth.lesions_min": int,
    "synth.lesions_max": int,
    "synth.radius_min": int,
    "synth.radius_max": int,
    "synth.contrast_mean": float,
    "synth.contrast_sd": float,
    "synth.group_rows": int,
    "synth.group_cols": int,
    "synth.group_margin": int,
    "synth.band_strength": float,
    "synth.noise_sigma": float,
    "synth.noise_smooth": float,
    "synth.brightness_jitter": float,
}


def parse_config_text(text: str) -> dict:
    """Parse config lines into {key: typed value}; unknown keys raise."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _SCHEMA[key](val)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return values


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config_text(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    out: str | None = None
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    batch_size: int = 32
    max_epochs: int = 25
    class_weighting: bool = False
    split: tuple = (0.7, 0.15, 0.15)
    folds: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    synth_n: int = 1000

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("train.split needs three fractions summing to 1")


def _build(section: str, cls, values: dict, rename: dict | None = None, **extra):
    rename = rename or {}
    kwargs = dict(extra)
    prefix = section + "."
    for key, val in values.items():
        if key.startswith(prefix):
            name = key[len(prefix):]
            kwargs[rename.get(name, name)] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {section} configuration: {exc}") from exc


def run_config_from_values(values: dict) -> RunConfig:
    """Assemble a RunConfig from parsed key/value pairs."""
    return RunConfig(
        dataset=values.get("dataset"),
        out=values.get("out"),
        seed=values.get("seed", 0),
        encoder=_build("encoder", EncoderConfig, values,
                       rename={"upsample": "feature_upsample_factor"}),
        head=_build("head", HeadConfig, values),
        guidance=_build("guidance", GuidanceConfig, values),
        optim=_build("optim", OptimConfig, values),
        batch_size=values.get("train.batch_size", 32),
        max_epochs=values.get("train.max_epochs", 25),
        class_weighting=values.get("train.class_weighting", False),
        split=values.get("train.split", (0.7, 0.15, 0.15)),
        folds=values.get("train.folds", 1),
        synth=_build_synth(values),
        synth_n=values.get("synth.n", 1000),
    )


def _build_synth(values: dict) -> SynthConfig:
    kwargs = {}
    for key, val in values.items():
        if key.startswith("synth.") and key != "synth.n":
            kwargs[key[len("synth."):]] = val
    try:
        return SynthConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synth configuration: {exc}") from exc


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    values = load_config_file(path)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return run_config_from_values(values)
