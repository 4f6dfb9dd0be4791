"""Run configuration: one YAML file holding every knob of a simulation run."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .agents import GazeAgentParams, HandAgentParams
from .calib import DisplayCalibration, calibrate_from_card
from .gaze import GazeSimParams
from .policy import PolicyConfig
from .task import TaskConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationConfig:
    card_w_px: float = 342.40
    card_h_px: float = 215.92
    viewing_distance_mm: float = 600.0
    dpr: float = 1.0
    viewport: tuple[int, int] = (2560, 1440)

    def build(self) -> DisplayCalibration:
        return calibrate_from_card(
            self.card_w_px, self.card_h_px, self.viewing_distance_mm, self.dpr, tuple(self.viewport)
        )


@dataclass(frozen=True)
class RunConfig:
    design: TaskConfig = field(default_factory=TaskConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    gaze_sim: GazeSimParams = field(default_factory=GazeSimParams)
    hand_agent: HandAgentParams = field(default_factory=HandAgentParams)
    gaze_agent: GazeAgentParams = field(default_factory=GazeAgentParams)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    master_seed: int = 2025
    participants: int = 16
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        """SHA-256 of every knob that can change results (the output directory cannot)."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_overrides(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = hints[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(ftype):
            kwargs[name] = _build(ftype, value, sub)
        else:
            kwargs[name] = _tupleize(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
