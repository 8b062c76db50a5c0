"""Experiment configuration: one JSON document, validated on load."""
import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

from pydantic import TypeAdapter, ValidationError

from ..errors import ConfigError
from ..losses import LossConfig
from ..model import ModelConfig
from ..scenegen import SceneParams
from ..vecfield import BinTable

SEED_ENV = "MTGCD_SEED"


@dataclass
class SplitConfig:
    count: int
    seed: int
    scene: SceneParams = field(default_factory=SceneParams)


def _out_domain_scene():
    # steeper views and denser blocks than the training distribution
    return SceneParams(tilt=(0.3, 0.8), n_buildings=(4, 8))


@dataclass
class DataConfig:
    root: Optional[str] = None  # datagen output; pairs are generated from seeds when unset
    train: SplitConfig = field(default_factory=lambda: SplitConfig(256, 1000))
    val: SplitConfig = field(default_factory=lambda: SplitConfig(32, 2000))
    test_in: SplitConfig = field(default_factory=lambda: SplitConfig(32, 3000))
    test_out: SplitConfig = field(default_factory=lambda: SplitConfig(32, 4000, _out_domain_scene()))
    facade_mode: Literal["separate", "background", "roof"] = "separate"
    workers: int = 1

    def split(self, name):
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)


SPLITS = ("train", "val", "test_in", "test_out")


@dataclass
class OptimConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4


@dataclass
class ScheduleConfig:
    max_iters: int = 40000
    poly_power: float = 0.9


@dataclass
class AugmentConfig:
    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    color_jitter: bool = True
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2

    @classmethod
    def none(cls):
        return cls(hflip=False, vflip=False, rotate=False, color_jitter=False)


@dataclass
class ExperimentConfig:
    name: str = "mtgcd"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    bins: BinTable = field(default_factory=BinTable)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 16
    crop_size: int = 128
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_interval: int = 500
    log_interval: int = 50
    output_dir: str = "runs/mtgcd"

    def validate(self):
        if self.optim.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.schedule.max_iters <= 0 or self.batch_size <= 0:
            raise ConfigError("max_iters and batch_size must be positive")
        if self.crop_size <= 0 or self.crop_size % self.model.stride:
            raise ConfigError(f"crop_size {self.crop_size} must be a positive multiple of stride {self.model.stride}")
        if self.model.offset_bins != self.bins.num_bins:
            raise ConfigError(f"model predicts {self.model.offset_bins} bins but the bin table has {self.bins.num_bins}")
        want = 3 if self.data.facade_mode == "separate" else 2
        if self.model.seg_classes != want:
            raise ConfigError(f"facade_mode {self.data.facade_mode!r} needs seg_classes={want}")
        for name in SPLITS:
            h, w = self.data.split(name).scene.image_size
            if h % self.model.stride or w % self.model.stride:
                raise ConfigError(f"{name} images {h}x{w} not divisible by stride {self.model.stride}")
        self.model.validate()
        self.loss.validate()
        return self


_ADAPTER = TypeAdapter(ExperimentConfig)


def config_from_dict(d):
    try:
        cfg = _ADAPTER.validate_python(d)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    except Exception as e:  # __post_init__ checks (e.g. BinTable) raise their own types
        raise ConfigError(str(e)) from e
    return cfg.validate()


def config_to_dict(cfg):
    return _ADAPTER.dump_python(cfg, mode="json")


def load_config(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(d)


def save_config(cfg, path):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2))


def apply_seed_env(cfg):
    """Honour MTGCD_SEED, which overrides the config seed."""
    value = os.environ.get(SEED_ENV)
    if value is None:
        return cfg
    try:
        seed = int(value)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV}={value!r} is not an integer") from e
    return with_overrides(cfg, {"seed": seed})


def with_overrides(cfg, overrides):
    """Copy of cfg with dotted-path overrides, e.g. {"loss.lambda1": 0}."""
    d = copy.deepcopy(config_to_dict(cfg))
    for key, value in overrides.items():
        node = d
        *parents, leaf = key.split(".")
        for p in parents:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = value
    return config_from_dict(d)


def full_recipe():
    """Training recipe at the full-size setting (batch 16, 40k iterations, 512 crops, 512-channel TSTLs)."""
    return with_overrides(ExperimentConfig(), {"batch_size": 16, "schedule.max_iters": 40000, "optim.lr0": 0.01,
                                               "crop_size": 512, "model.tstl_channels": 512,
                                               "loss.lambda1": 1.0, "loss.lambda2": 1.0, "loss.lambda3": 1.0})
