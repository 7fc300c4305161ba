"""Run configuration: one versioned YAML document holding every hyperparameter."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from aurk.errors import FormatError, VersionError
from aurk.partition import PROFILES

CONFIG_VERSION = 1
DYNAMIC_MODES = ("none", "convlstm", "two_stream")


@dataclass
class OptimizerConfig:
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay: float = 0.1
    lr_step: int = 10


@dataclass
class SplitConfig:
    """Subject-exclusive folds: sorted subject ids are dealt round-robin into ``folds``."""

    folds: int = 3
    held_out_fold: int = 0
    held_out_subjects: list | None = None   # explicit ids override the folds


@dataclass
class SynthSection:
    n_frames: int = 600
    n_subjects: int = 6
    base_rate: float = 0.35
    base_rates: dict = field(default_factory=dict)
    mean_duration: float = 8.0
    duration_spread: float = 0.5
    amplitude: float = 60.0
    noise: float = 6.0
    frame_jitter: float = 1.5
    max_shift: float = 3.0


@dataclass
class DynamicSection:
    skip: int = 4
    T: int = 10
    window_stride: int | None = 5
    kernel: int = 3
    residual: bool = True
    cell_init_scale: float = 0.1
    epochs: int = 10
    batch_size: int = 1
    flow_length: int = 10


@dataclass
class PathsConfig:
    data_dir: str = "data"
    landmarks: str | None = None     # default: <data_dir>/landmarks.csv
    cache_dir: str = "cache"
    out_dir: str = "out"
    partition_table: str | None = None   # a table file instead of the bundled profile


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    dataset: str = "synthetic"
    resolution: int = 512
    backbone: str = "tiny16"
    roi_size: list = field(default_factory=lambda: [7, 7])
    fc_hidden: int = 64
    mean_box: bool = False
    dynamic: str = "none"
    epochs: int = 25
    batch_size: int = 5
    mirror: bool = True
    input_scale: str | float = "auto"   # "auto": unit pixel std on the training split
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    dynamic_opts: DynamicSection = field(default_factory=DynamicSection)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> RunConfig:
        from aurk.nn.model import BACKBONES

        if self.version != CONFIG_VERSION:
            raise VersionError(f"config version {self.version}, this build reads {CONFIG_VERSION}")
        if self.dataset not in PROFILES:
            raise FormatError(f"dataset must be one of {PROFILES}, got {self.dataset!r}")
        if self.backbone not in BACKBONES:
            raise FormatError(f"backbone must be one of {sorted(BACKBONES)}")
        if self.dynamic not in DYNAMIC_MODES:
            raise FormatError(f"dynamic must be one of {DYNAMIC_MODES}")
        if len(self.roi_size) != 2 or min(self.roi_size) < 1:
            raise FormatError("roi_size must be two positive integers")
        if self.resolution < 32:
            raise FormatError("resolution must be at least 32")
        if self.epochs < 0 or self.batch_size < 1:
            raise FormatError("epochs must be >= 0 and batch_size >= 1")
        if not (isinstance(self.input_scale, (int, float)) or self.input_scale == "auto"):
            raise FormatError("input_scale must be 'auto' or a number")
        if self.split.folds < 1 or not 0 <= self.split.held_out_fold < self.split.folds:
            raise FormatError("split: need folds >= 1 and 0 <= held_out_fold < folds")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def data_path(self, name: str) -> Path:
        return Path(self.paths.data_dir) / name


_SECTIONS = {"optimizer": OptimizerConfig, "split": SplitConfig, "synth": SynthSection,
             "dynamic_opts": DynamicSection, "paths": PathsConfig}


def _build(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict | None) -> RunConfig:
    data = copy.deepcopy(data or {})
    if not isinstance(data, dict):
        raise FormatError("config must be a mapping")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise FormatError(f"config section {key!r} must be a mapping")
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return _build(RunConfig, kwargs, "config").validate()


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML config; ``None`` gives the defaults. Relative paths resolve
    against the config file's directory."""
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise FormatError(f"{p}: {e}") from None
    cfg = config_from_dict(data)
    base = p.parent
    for name in ("data_dir", "landmarks", "cache_dir", "out_dir", "partition_table"):
        v = getattr(cfg.paths, name)
        if v is not None and not Path(v).is_absolute():
            setattr(cfg.paths, name, str(base / v))
    return cfg
