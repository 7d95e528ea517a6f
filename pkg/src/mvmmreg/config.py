"""Experiment configuration: strict JSON parsing into the dataclass configs."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .appearance import AppearanceVariant
from .mvmm import MvmmConfig
from .optim import OptimConfig
from .phantom import PhantomSpec

SECTIONS = ("mvmm", "optim", "phantom", "io")
IO_KEYS = {"case", "subjects", "inputs", "image", "labels", "atlases", "target"}


class ConfigError(ValueError):
    """Malformed configuration or a referenced path that does not exist."""


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_mvmm(data: dict) -> MvmmConfig:
    data = dict(data)
    if "appearance" in data:
        data["appearance"] = _strict(AppearanceVariant, data["appearance"], "mvmm.appearance")
    if data.get("class_weights") is not None:
        data["class_weights"] = tuple(data["class_weights"])
    return _strict(MvmmConfig, data, "mvmm")


def _paths_in(value):
    if isinstance(value, str):
        yield value
    elif isinstance(value, list):
        for v in value:
            yield from _paths_in(v)
    elif isinstance(value, dict):
        for v in value.values():
            yield from _paths_in(v)


@dataclass
class ExperimentConfig:
    mvmm: MvmmConfig = field(default_factory=MvmmConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    phantom: list = field(default_factory=list)
    io: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        mvmm = parse_mvmm(data.get("mvmm", {}))
        optim = _strict(OptimConfig, data.get("optim", {}), "optim")
        specs = data.get("phantom", [])
        if not isinstance(specs, list):
            raise ConfigError("phantom: expected a list of phantom specs")
        phantom = [_strict(PhantomSpec, s, f"phantom[{i}]") for i, s in enumerate(specs)]
        io = data.get("io", {})
        if not isinstance(io, dict):
            raise ConfigError("io: expected an object")
        unknown = set(io) - IO_KEYS
        if unknown:
            raise ConfigError(f"io: unknown keys {sorted(unknown)}")
        if base_dir is not None:
            io = _resolve(io, Path(base_dir))
        return cls(mvmm, optim, phantom, io)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, base_dir=path.parent)

    def check_paths(self):
        """Raise ``ConfigError`` naming the first referenced path that is missing."""
        for p in _paths_in(self.io):
            if not (Path(p).exists() or Path(p + ".json").exists()):
                raise ConfigError(f"referenced path does not exist: {p}")

    def to_dict(self) -> dict:
        return {
            "mvmm": dataclasses.asdict(self.mvmm),
            "optim": dataclasses.asdict(self.optim),
            "phantom": [dataclasses.asdict(s) for s in self.phantom],
            "io": self.io,
        }


def _resolve(value, base: Path):
    if isinstance(value, str):
        p = Path(value)
        return str(p if p.is_absolute() else base / p)
    if isinstance(value, list):
        return [_resolve(v, base) for v in value]
    if isinstance(value, dict):
        return {k: _resolve(v, base) for k, v in value.items()}
    return value
