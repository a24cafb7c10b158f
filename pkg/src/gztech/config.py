"""Run configuration: one file (JSON or TOML) covering data generation,
both model architectures, training, and fusion, plus the ablation flags.

Every artifact the pipeline writes embeds `config_hash(cfg)` and the seed
so results can be traced back to the exact settings that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .models import IPTDetectorConfig, OnsetDetectorConfig
from .training import TrainHyper

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    try:
        import tomli as tomllib
    except ModuleNotFoundError:
        tomllib = None


@dataclass
class DataGenConfig:
    train_clips_per_class: int = 6
    test_clips_per_class: int = 3
    clip_duration: tuple[float, float] = (0.5, 1.2)
    f0_range: tuple[float, float] = (110.0, 660.0)
    train_sequences: int = 20
    test_sequences: int = 8

    def __post_init__(self):
        self.clip_duration = tuple(float(x) for x in self.clip_duration)
        self.f0_range = tuple(float(x) for x in self.f0_range)
        lo, hi = self.clip_duration
        if not 0.5 <= lo <= hi <= 3.0:
            raise ValidationError("clip durations must lie within [0.5, 3.0]")
        lo, hi = self.f0_range
        if not 60.0 <= lo <= hi <= 1200.0:
            raise ValidationError("f0 range must lie within [60, 1200] Hz")


@dataclass
class RunConfig:
    seed: int = 0
    corpus_dir: str = "corpus"
    checkpoint_dir: str = "checkpoints"
    report_path: str = "report.json"
    data: DataGenConfig = field(default_factory=DataGenConfig)
    ipt: IPTDetectorConfig = field(default_factory=IPTDetectorConfig)
    onset: OnsetDetectorConfig = field(default_factory=OnsetDetectorConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    fusion_threshold: float = 0.5
    cnn_ipt: bool = False

    def __post_init__(self):
        if not 0.0 <= self.fusion_threshold <= 1.0:
            raise ValidationError("fusion threshold must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "data": DataGenConfig,
    "ipt": IPTDetectorConfig,
    "onset": OnsetDetectorConfig,
    "train": TrainHyper,
}


def config_from_dict(raw: dict) -> RunConfig:
    kwargs = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ValidationError(f"unknown config key {key!r}")
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValidationError(f"config section {key!r} must be a table/object")
            section_cls = _SECTIONS[key]
            names = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(value) - names
            if bad:
                raise ValidationError(f"unknown keys in config section {key!r}: {sorted(bad)}")
            value = section_cls(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in value.items()
            })
        kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    if path.suffix == ".toml":
        if tomllib is None:
            raise ValidationError("TOML support needs Python >= 3.11 or the tomli package")
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    elif path.suffix == ".json":
        with open(path) as fh:
            raw = json.load(fh)
    else:
        raise ValidationError(f"config must be .json or .toml, got {path.suffix!r}")
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a table/object")
    return config_from_dict(raw)
