"""Model, training and data configuration plus the flat ``key = value`` file format.

A config file has up to three sections::

    [model]
    preset = defian_s        # optional starting point
    scale = 2
    use_dac = false

    [train]
    total_updates = 2000

    [data]
    hr_dir = data/DIV2K_train_HR

Unknown keys and unparsable values raise :class:`ConfigError` naming the field.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

DIV2K_RGB_MEAN = (0.4488, 0.4371, 0.4040)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_modules: int = 10
    n_blocks: int = 20
    channels: int = 64
    scale: int = 2
    mshf_scales: tuple[int, ...] = (3, 5, 7)
    use_mshf: bool = True
    use_diendec: bool = True
    use_dac: bool = True
    rgb_mean: tuple[float, ...] = DIV2K_RGB_MEAN
    ca_reduction: int = 16
    dac_reduction: int = 4
    diendec_width: int = 16

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"model.scale: must be 2, 3 or 4, got {self.scale}")
        for name in ("n_modules", "channels", "ca_reduction", "dac_reduction", "diendec_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}: must be >= 1, got {getattr(self, name)}")
        if self.n_blocks < 0:
            raise ConfigError(f"model.n_blocks: must be >= 0, got {self.n_blocks}")
        if len(self.rgb_mean) != 3:
            raise ConfigError(f"model.rgb_mean: needs 3 values, got {self.rgb_mean}")
        bad = [k for k in self.mshf_scales if k not in (3, 5, 7)]
        if bad or not self.mshf_scales:
            raise ConfigError(f"model.mshf_scales: supported scales are 3, 5, 7; got {self.mshf_scales}")

    @property
    def has_attention(self) -> bool:
        return self.use_mshf or self.use_diendec or self.use_dac


def defian_s(scale: int = 2, **overrides) -> ModelConfig:
    return ModelConfig(n_modules=5, n_blocks=10, channels=32, scale=scale, **overrides)


def defian_l(scale: int = 2, **overrides) -> ModelConfig:
    return ModelConfig(n_modules=10, n_blocks=20, channels=64, scale=scale, **overrides)


PRESETS = {"defian_s": defian_s, "defian_l": defian_l}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 48
    lr0: float = 1e-4
    halve_every: int = 200_000
    total_updates: int = 2_000
    seed: int = 0
    grad_clip: float | None = None
    checkpoint_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        for name in ("batch_size", "patch_size", "halve_every", "total_updates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name}: must be positive, got {getattr(self, name)}")
        if self.lr0 <= 0:
            raise ConfigError(f"train.lr0: must be positive, got {self.lr0}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"train.grad_clip: must be positive, got {self.grad_clip}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"train.checkpoint_every: must be >= 0, got {self.checkpoint_every}")

    def lr_at(self, update: int) -> float:
        """Learning rate for 0-based update index ``update``."""
        return self.lr0 * 0.5 ** (update // self.halve_every)


@dataclass(frozen=True)
class DataConfig:
    hr_dir: str | None = None
    lr_dir: str | None = None
    prefetch: int = 1


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


# text round trip ----------------------------------------------------------------


def _parse_value(section: str, f: dataclasses.Field, raw: str) -> Any:
    key = f"{section}.{f.name}"
    kind = str(f.type)
    raw = raw.strip()
    try:
        if "None" in kind and raw.lower() in ("", "none"):
            return None
        if kind.startswith("tuple[int"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


def _build(cls, section: str, items: dict[str, str], base=None):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key (expected one of {', '.join(known)})")
        kwargs[key] = _parse_value(section, known[key], raw)
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {s: dict(parser.items(s)) if parser.has_section(s) else {} for s in ("model", "train", "data")}
    model_items = sections["model"]
    base = None
    if "preset" in model_items:
        name = model_items.pop("preset").strip()
        if name not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {name!r} (expected one of {', '.join(PRESETS)})")
        scale = int(model_items.pop("scale", "2"))
        base = PRESETS[name](scale)
    return RunConfig(
        model=_build(ModelConfig, "model", model_items, base),
        train=_build(TrainConfig, "train", sections["train"]),
        data=_build(DataConfig, "data", sections["data"]),
    )


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_section(obj) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(obj, f.name))}\n" for f in fields(obj))


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"[{name}]\n{dump_section(getattr(cfg, name))}\n" for name in ("model", "train", "data"))


def model_config_from_text(text: str) -> ModelConfig:
    return parse_config(f"[model]\n{text}").model
