"""
Run configuration and the flat ``key = value`` file format.

Dataset-generation keys carry a ``data.`` prefix (``data.n_records = 5000``).
Blank lines and ``#`` comments are ignored.  Every value is converted to the
field's type and the whole config is validated before any run starts.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Dict

from .data import METRIC_MODES, DatasetConfig
from .fusion import STRATEGIES
from .models import ARCHS, COMBINERS, NOISE_MODES
from .nn import INIT_TAGS

METHODS = ("g_classifier", "gan", "autoencoder", "attention")
SEED_ENV = "VFL_SEED"


class ConfigError(ValueError):
    """A config value failed validation; ``field`` names the offender."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    method: str = "gan"
    arch: str = "full"
    fusion: str = "auto"
    noise: str = "N0"
    init: str = "I1"
    combiner: str = "addition"
    # pretraining
    pretrain_g: bool = False
    pretrain_d: bool = False
    pretrain_steps: int = 1000
    g_noise_std: float = 0.1
    d_noise_std: float = 0.1
    # dimensions (d_i and K come from the dataset)
    d_embed: int = 16
    d_q: int = 32
    d_f: int = 64
    z_dim: int = 16
    d_s: int = 128
    code_dim: int = 16
    attn_hidden: int = 32
    g_hidden: tuple = (256, 256, 256)
    disc_hidden: tuple = (256, 128)
    head_hidden: tuple = (64,)
    # training
    alpha: float = 0.01
    batch: int = 32
    steps: int = 2000
    seed: int = 0
    dropout: float = 0.1
    layernorm: bool = False
    condition_source: str = "fused"
    softmax_scores: bool = True
    real_smoothing: float = 0.0
    literal_sign: bool = False
    ae_lambda: float = 1.0
    # data / evaluation
    dataset: str = ""
    metric: str = "strict"
    valid_fraction: float = 0.2
    data: DatasetConfig = field(default_factory=DatasetConfig)

    @property
    def fusion_strategy(self) -> str:
        if self.fusion != "auto":
            return self.fusion
        return "simple" if self.arch == "simp" else "full"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "RunConfig":
        choices = {
            "method": METHODS, "arch": ARCHS, "noise": NOISE_MODES, "init": INIT_TAGS,
            "combiner": COMBINERS, "metric": METRIC_MODES,
            "fusion": ("auto",) + STRATEGIES, "condition_source": ("fused", "raw-concat"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"{getattr(self, name)!r} not in {allowed}")
        positive = ("d_embed", "d_q", "d_f", "z_dim", "d_s", "code_dim", "attn_hidden", "batch")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(name, "must be positive")
        for name in ("steps", "pretrain_steps", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        if self.d_s & (self.d_s - 1):
            raise ConfigError("d_s", "must be a power of two")
        for name in ("g_noise_std", "d_noise_std", "ae_lambda", "alpha"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        if not 0.0 <= self.real_smoothing < 1.0:
            raise ConfigError("real_smoothing", "must be in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout", "must be in [0, 1)")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction", "must be in (0, 1)")
        if any(h <= 0 for h in self.g_hidden + self.disc_hidden + self.head_hidden):
            raise ConfigError("hidden", "layer widths must be positive")
        if self.batch < 2 and self.method == "gan":
            raise ConfigError("batch", "GAN training needs batches of at least 2")
        validate_dataset_config(self.data)
        if not self.dataset and self.code_dim >= self.data.d_i + self.d_q:
            raise ConfigError("code_dim", "must be smaller than the autoencoder input dim")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "data":
                for df in fields(value):
                    lines.append(f"data.{df.name} = {_format(getattr(value, df.name))}")
            else:
                lines.append(f"{f.name} = {_format(value)}")
        return "\n".join(lines) + "\n"


def validate_dataset_config(cfg: DatasetConfig) -> DatasetConfig:
    try:
        cfg.validate()
    except ValueError as exc:
        msg = str(exc)
        name = "type mix" if "type mix" in msg else "data"
        raise ConfigError(name, msg) from None
    return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s for s in (p.strip() for p in raw.split(",")) if s]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r} as {type(default).__name__}") from None


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply(obj, items: Dict[str, str], prefix: str = ""):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(prefix + key, "unknown key")
        changes[key] = _convert(prefix + key, raw, getattr(obj, key))
    return dataclasses.replace(obj, **changes)


def _type_mix_alias(items: Dict[str, str]) -> Dict[str, str]:
    # "type_mix" and "mix" are accepted spellings for the proportions
    if "mix" in items:
        items["type_mix"] = items.pop("mix")
    return items


def config_from_items(items: Dict[str, str], base: RunConfig | None = None,
                      apply_env: bool = True) -> RunConfig:
    base = base or RunConfig()
    top = {k: v for k, v in items.items() if not k.startswith("data.")}
    data_items = _type_mix_alias({k[5:]: v for k, v in items.items() if k.startswith("data.")})
    data = _apply(base.data, data_items, "data.")
    cfg = _apply(base, top)
    cfg = dataclasses.replace(cfg, data=data)
    if apply_env and os.environ.get(SEED_ENV):
        cfg = dataclasses.replace(cfg, seed=_convert(SEED_ENV, os.environ[SEED_ENV], 0))
    return cfg.validate()


def load_run_config(path, apply_env: bool = True) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_items(parse_kv(fh.read()), apply_env=apply_env)


def dataset_config_from_items(items: Dict[str, str], apply_env: bool = True) -> DatasetConfig:
    """Dataset-only config files accept keys with or without the ``data.`` prefix."""
    plain = _type_mix_alias({(k[5:] if k.startswith("data.") else k): v for k, v in items.items()})
    cfg = _apply(DatasetConfig(), plain)
    if apply_env and os.environ.get(SEED_ENV):
        cfg = dataclasses.replace(cfg, seed=_convert(SEED_ENV, os.environ[SEED_ENV], 0))
    return validate_dataset_config(cfg)
