"""Experiment configuration: flat key = value text with bracketed sections.

Unknown keys are rejected by name so typos fail loudly instead of silently
running with defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .arena import TaskSpec
from .taskrepr import ReprConfig
from .training import TrainConfig


@dataclass
class ExperimentConfig:
    name: str
    sources: list[TaskSpec]
    unseen: list[TaskSpec]
    repr_cfg: ReprConfig
    train_cfg: TrainConfig
    seeds: list[int]
    output: Path
    episode_limit: int = 40
    half_width: float = 8.0

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        names = [s.name for s in self.sources + self.unseen]
        if len(set(names)) != len(names):
            raise ValueError("task names must be unique across sources and unseen")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sources": [s.name for s in self.sources],
            "unseen": [s.name for s in self.unseen],
            "repr": dataclasses.asdict(self.repr_cfg),
            "train": dataclasses.asdict(self.train_cfg),
            "seeds": list(self.seeds),
            "output": str(self.output),
            "episode_limit": self.episode_limit,
            "half_width": self.half_width,
        }


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def _fill_dataclass(cls, section: configparser.SectionProxy, section_name: str):
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    kinds = {"float": float, "int": int, "bool": bool, "str": str}
    kwargs = {}
    for key, raw in section.items():
        if key not in fields:
            raise KeyError(f"unknown config key {key!r} in section [{section_name}]")
        kind = kinds.get(fields[key], None)
        if kind is None:
            kind = fields[key] if isinstance(fields[key], type) else float
        kwargs[key] = _parse_value(raw, kind)
    return cls(**kwargs)


_EXPERIMENT_KEYS = {"name", "seeds", "output"}
_TASK_KEYS = {"sources", "unseen", "episode_limit", "half_width"}


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep key case so error messages match the file
    cp.read(path)

    for section in cp.sections():
        if section not in ("experiment", "tasks", "repr", "train"):
            raise KeyError(f"unknown config section [{section}]")

    exp = cp["experiment"] if "experiment" in cp else {}
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise KeyError(f"unknown config key {key!r} in section [experiment]")
    tasks = cp["tasks"] if "tasks" in cp else {}
    for key in tasks:
        if key not in _TASK_KEYS:
            raise KeyError(f"unknown config key {key!r} in section [tasks]")

    # validate every key before interpreting anything, so typos surface first
    repr_cfg = _fill_dataclass(ReprConfig, cp["repr"], "repr") if "repr" in cp else ReprConfig()
    train_cfg = _fill_dataclass(TrainConfig, cp["train"], "train") if "train" in cp else TrainConfig()

    episode_limit = int(tasks.get("episode_limit", 40))
    half_width = float(tasks.get("half_width", 8.0))

    def specs(raw: str) -> list[TaskSpec]:
        names = [t.strip() for t in raw.split(",") if t.strip()]
        return [TaskSpec.from_string(n, half_width=half_width, episode_limit=episode_limit) for n in names]

    sources = specs(tasks.get("sources", ""))
    unseen = specs(tasks.get("unseen", ""))
    if not sources:
        raise ValueError("config must list at least one source task")

    seeds = [int(s) for s in exp.get("seeds", "0").split(",") if s.strip()]

    return ExperimentConfig(
        name=exp.get("name", path.stem),
        sources=sources,
        unseen=unseen,
        repr_cfg=repr_cfg,
        train_cfg=train_cfg,
        seeds=seeds,
        output=Path(exp.get("output", "runs") if "experiment" in cp else "runs"),
        episode_limit=episode_limit,
        half_width=half_width,
    )
