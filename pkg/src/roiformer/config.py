"""Run configuration: one JSON file wiring model, training, and data paths.

Top-level keys are ``model``, ``train``, and ``data``; the first two mirror
the ModelConfig and TrainConfig field names exactly.  Unknown keys anywhere
are rejected rather than ignored, so typos fail loudly.  Every command
writes the fully resolved configuration (defaults expanded) next to its
outputs, which makes a run directory self-reproducing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(Exception):
    """Configuration file missing, unparsable, or semantically invalid."""


@dataclass(frozen=True)
class DataSection:
    series_dir: str
    pheno_table: str
    out_dir: str
    val_frac: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.val_frac < 1.0:
            raise ConfigError(f"val_frac must be in (0, 1), got {self.val_frac}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DataSection":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
        missing = [k for k in ("series_dir", "pheno_table", "out_dir")
                   if k not in d]
        if missing:
            raise ConfigError(f"data section missing required keys: {missing}")
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataSection | None = None

    def to_dict(self) -> dict:
        d = {"model": self.model.to_dict(), "train": self.train.to_dict()}
        if self.data is not None:
            d["data"] = self.data.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        unknown = set(d) - {"model", "train", "data"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(d.get("model", {}))
            train = TrainConfig.from_dict(d.get("train", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        data = None
        if d.get("data") is not None:
            data = DataSection.from_dict(d["data"])
        return cls(model=model, train=train, data=data)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return RunConfig.from_dict(raw)


def write_resolved_config(path, config: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
