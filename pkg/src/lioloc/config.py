"""Run configuration: one structured document covering the simulator,
filter, association and map parameters plus run-level paths and the
initial-pose handling. Unknown keys are rejected; CLI flags override
individual dotted keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataio import config_hash
from .filter import FilterConfig
from .lidar import AssocConfig
from .mapping import MapConfig


class ConfigError(ValueError):
    pass


@dataclass
class SimGenConfig:
    """Dataset generation parameters (world, path, sensors)."""

    world_kind: str = "box_room"
    seed: int = 0
    duration: float = 30.0
    speed: float = 1.5
    profile: str = "piecewise_arc"
    ramp_time: float = 0.0
    waypoints: list = field(default_factory=list)  # [[x, y, z, yaw], ...]
    map_pitch: float = 0.2
    map_format: str = "pmb1"  # or "pm1"
    lidar_rate: float = 10.0
    imu_rate: float = 100.0
    gt_rate: float = 200.0
    lidar_channels: int = 16
    lidar_azimuth_steps: int = 180
    vertical_fov_deg: float = 30.0
    max_range: float = 120.0
    lidar_noise_std: float = 0.0
    gyro_noise_std: float = 0.0
    acc_noise_std: float = 0.0
    gyro_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    acc_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    dropout_windows: list = field(default_factory=list)
    ext_pos: list = field(default_factory=lambda: [0.2, 0.0, 0.1])
    ext_yaw_deg: float = 2.0
    world_params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.duration <= 0:
            raise ConfigError("simgen.duration must be > 0")
        if self.speed <= 0:
            raise ConfigError("simgen.speed must be > 0")
        if self.map_pitch <= 0:
            raise ConfigError("simgen.map_pitch must be > 0")
        if self.map_format not in ("pm1", "pmb1"):
            raise ConfigError("simgen.map_format must be pm1 or pmb1")
        if self.world_kind not in ("box_room", "port_like"):
            raise ConfigError(f"unknown world kind {self.world_kind!r}")
        for w in self.dropout_windows:
            if len(w) != 2 or not w[1] > w[0]:
                raise ConfigError("dropout windows must be [t0, t1] with t1 > t0")
            if w[0] < 0 or w[1] > self.duration:
                raise ConfigError("dropout window outside duration")


@dataclass
class RunSection:
    """Localization-run level settings."""

    prior_stride: int = 1
    local_insert_stride: int = 4
    init_pos_offset: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    init_yaw_offset_deg: float = 0.0

    def validate(self) -> None:
        if self.prior_stride < 1 or self.local_insert_stride < 1:
            raise ConfigError("strides must be >= 1")
        if len(self.init_pos_offset) != 3:
            raise ConfigError("init_pos_offset must have 3 entries")


@dataclass
class RunConfig:
    simgen: SimGenConfig = field(default_factory=SimGenConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    map: MapConfig = field(default_factory=MapConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> None:
        self.simgen.validate()
        try:
            self.filter.validate()
            self.assoc.validate()
            self.map.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        self.run.validate()

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self.as_dict())


def _build_section(cls, data: dict, prefix: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s) under {prefix}: {sorted(unknown)}")
    return cls(**data)


def from_dict(data: dict) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    sections = {
        "simgen": SimGenConfig,
        "filter": FilterConfig,
        "assoc": AssocConfig,
        "map": MapConfig,
        "run": RunSection,
    }
    unknown = set(data) - set(sections)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    for key, cls in sections.items():
        sub = data.get(key, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {key!r} must be a mapping")
        kwargs[key] = _build_section(cls, sub, key)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from None
    return from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply `section.key=value` overrides (values parsed as YAML)."""
    data = cfg.as_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, _, raw = item.partition("=")
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section, key = parts
        if section not in data:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in data[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        try:
            data[section][key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse override value {raw!r}") from None
    return from_dict(data)


def save(cfg: RunConfig, path) -> None:
    with open(path, "w", newline="\n") as f:
        yaml.safe_dump(cfg.as_dict(), f, sort_keys=True)
