"""Run configuration: flat ``key = value`` files with dotted module namespaces.

Example::

    seed = 7
    out_dir = runs/demo
    dataset.train_count = 200
    umci.c_h = 32          # hidden width
    loss.stage_weights = 0.1,0.1,0.1,0.7

``seed`` and ``out_dir`` are required in config files; everything else has
the desk-scale default. The environment variable ``CLIPSAM_SEED`` overrides
the configured seed. Unknown keys are configuration errors.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .encoders import EncoderConfig
from .losses import LossConfig
from .umci import UmciConfig

ENV_SEED = "CLIPSAM_SEED"


class ConfigError(ValueError):
    """Invalid, missing or inconsistent configuration; exits with code 2."""


@dataclass(frozen=True)
class MmrConfig:
    threshold: float = 0.47
    points: int = 16

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("binarization threshold must lie in [0, 1]")
        if self.points < 0:
            raise ValueError("point count must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    image_extent: int = 64
    train_count: int = 200
    test_count: int = 50
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    umci: UmciConfig = field(default_factory=UmciConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    mmr: MmrConfig = field(default_factory=MmrConfig)

    def validate(self) -> "RunConfig":
        if self.image_extent < 32:
            raise ConfigError("image_extent must be >= 32")
        if self.train_count < 1 or self.test_count < 1:
            raise ConfigError("dataset.train_count and dataset.test_count must be >= 1")
        if self.image_extent < self.encoder.grid_h or self.image_extent < self.encoder.grid_w:
            raise ConfigError("encoder.grid must not exceed image_extent")
        if len(self.loss.stage_weights) != self.encoder.n_stages:
            raise ConfigError(
                f"loss.stage_weights has {len(self.loss.stage_weights)} entries "
                f"for encoder.n_stages = {self.encoder.n_stages}")
        return self


# key -> (section attr on RunConfig or None, field name, parser)
def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_weights(s: str) -> tuple:
    return tuple(float(v) for v in s.split(","))


_SCHEMA = {
    "seed": (None, "seed", int),
    "out_dir": (None, "out_dir", str),
    "image_extent": (None, "image_extent", int),
    "dataset.train_count": (None, "train_count", int),
    "dataset.test_count": (None, "test_count", int),
    "encoder.c_t": ("encoder", "c_t", int),
    "encoder.c_img": ("encoder", "c_img", int),
    "encoder.grid_h": ("encoder", "grid_h", int),
    "encoder.grid_w": ("encoder", "grid_w", int),
    "encoder.n_stages": ("encoder", "n_stages", int),
    "encoder.token_scale": ("encoder", "token_scale", float),
    "umci.c_h": ("umci", "c_h", int),
    "umci.s1": ("umci", "s1", int),
    "umci.s2": ("umci", "s2", int),
    "umci.include_strip": ("umci", "include_strip", _parse_bool),
    "umci.include_scale": ("umci", "include_scale", _parse_bool),
    "loss.gamma": ("loss", "gamma", float),
    "loss.stage_weights": ("loss", "stage_weights", _parse_weights),
    "loss.lr": ("loss", "lr", float),
    "loss.batch": ("loss", "batch", int),
    "loss.epochs": ("loss", "epochs", int),
    "loss.weight_decay": ("loss", "weight_decay", float),
    "mmr.threshold": ("mmr", "threshold", float),
    "mmr.points": ("mmr", "points", int),
}

REQUIRED_KEYS = ("seed", "out_dir")


def parse_config_text(text: str, require: tuple = REQUIRED_KEYS) -> RunConfig:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config field {key!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate config field {key!r}")
        pairs[key] = value
    for key in require:
        if key not in pairs:
            raise ConfigError(f"missing config field {key!r}")
    sections: dict = {"encoder": {}, "umci": {}, "loss": {}, "mmr": {}, None: {}}
    for key, raw_value in pairs.items():
        section, attr, parser = _SCHEMA[key]
        try:
            sections[section][attr] = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config field {key!r}: {exc}") from exc
    top = sections[None]
    try:
        cfg = RunConfig(
            encoder=EncoderConfig(**sections["encoder"],
                                  seed=top.get("seed", RunConfig.seed)),
            umci=UmciConfig(**sections["umci"]),
            loss=LossConfig(**sections["loss"],
                            seed=top.get("seed", RunConfig.seed)),
            mmr=MmrConfig(**sections["mmr"]),
            **top,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            cfg = with_seed(cfg, int(env_seed))
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED}: {exc}") from exc
    return cfg.validate()


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg,
                   seed=seed,
                   encoder=replace(cfg.encoder, seed=seed),
                   loss=replace(cfg.loss, seed=seed))


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text)


def dump_config(cfg: RunConfig) -> str:
    """Canonical flat dump; parsing it back reproduces the config exactly."""
    values = {
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "image_extent": cfg.image_extent,
        "dataset.train_count": cfg.train_count,
        "dataset.test_count": cfg.test_count,
        "encoder.c_t": cfg.encoder.c_t,
        "encoder.c_img": cfg.encoder.c_img,
        "encoder.grid_h": cfg.encoder.grid_h,
        "encoder.grid_w": cfg.encoder.grid_w,
        "encoder.n_stages": cfg.encoder.n_stages,
        "encoder.token_scale": repr(cfg.encoder.token_scale),
        "umci.c_h": cfg.umci.c_h,
        "umci.s1": cfg.umci.s1,
        "umci.s2": cfg.umci.s2,
        "umci.include_strip": str(cfg.umci.include_strip).lower(),
        "umci.include_scale": str(cfg.umci.include_scale).lower(),
        "loss.gamma": repr(cfg.loss.gamma),
        "loss.stage_weights": ",".join(repr(w) for w in cfg.loss.stage_weights),
        "loss.lr": repr(cfg.loss.lr),
        "loss.batch": cfg.loss.batch,
        "loss.epochs": cfg.loss.epochs,
        "loss.weight_decay": repr(cfg.loss.weight_decay),
        "mmr.threshold": repr(cfg.mmr.threshold),
        "mmr.points": cfg.mmr.points,
    }
    return "".join(f"{k} = {v}\n" for k, v in values.items())
