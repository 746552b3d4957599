"""Experiment configuration: a flat JSON object.

Model hyperparameters (the fields of :class:`~meshfield.model.ModelConfig`)
sit at the top level next to the experiment keys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from meshfield.errors import ConfigError
from meshfield.model import ModelConfig

TASKS = ("rgb_synthetic", "uv_supervised", "normals_generalization")
BASELINES = ("n_level", "one_level", "plain_diffusionnet")
SOURCES = ("eigenfunction", "perlin", "constant")

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}


@dataclass
class ExperimentConfig:
    task: str = "rgb_synthetic"
    mesh: str = ""
    iterations: int = 2000
    seed: int = 0
    baseline: str = "n_level"
    capacity_match: bool = True
    lr: float = 1e-4
    lr_decay: float = 0.7
    lr_decay_every: int = 700
    # rgb_synthetic
    group_thresholds: list = field(default_factory=lambda: [-0.33, 0.33])
    groups: list = field(
        default_factory=lambda: [
            {"source": "eigenfunction", "index": 1},
            {"source": "eigenfunction", "index": 50},
            {"source": "perlin", "frequency": 4.0, "seed": 0},
        ]
    )
    # normals_generalization
    subdivision_threshold: float | None = None
    train_levels: list = field(default_factory=lambda: [0, 1, 2])
    test_level: int = 3
    # export
    error_clip: float = 5e-4
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.lr < 0 or not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise ConfigError("invalid learning-rate schedule")
        if not self.mesh:
            raise ConfigError("config needs a 'mesh' path")
        if check_files and not Path(self.mesh).is_file():
            raise ConfigError(f"mesh file not found: {self.mesh}")
        if self.task == "rgb_synthetic":
            validate_groups(self.group_thresholds, self.groups, self.model.k_eig)
        if self.task == "normals_generalization":
            if not self.train_levels or min(self.train_levels) < 0 or self.test_level < 0:
                raise ConfigError("subdivision levels must be non-negative and train_levels non-empty")
            if self.subdivision_threshold is not None and not self.subdivision_threshold > 0:
                raise ConfigError("subdivision_threshold must be positive")
        self.model.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("model"))
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        exp_keys = {f.name for f in fields(cls)} - {"model"}
        unknown = set(data) - exp_keys - _MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        model = ModelConfig.from_dict({k: v for k, v in data.items() if k in _MODEL_KEYS})
        try:
            return cls(model=model, **{k: v for k, v in data.items() if k in exp_keys})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def validate_groups(thresholds, groups, k_eig):
    if not isinstance(groups, list) or not groups:
        raise ConfigError("'groups' must be a non-empty list")
    if len(groups) != len(thresholds) + 1:
        raise ConfigError(f"{len(thresholds)} thresholds need {len(thresholds) + 1} groups, got {len(groups)}")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError("group thresholds must be strictly increasing")
    for g in groups:
        src = g.get("source") if isinstance(g, dict) else None
        if src not in SOURCES:
            raise ConfigError(f"group source must be one of {SOURCES}, got {src!r}")
        if src == "eigenfunction":
            idx = g.get("index")
            if not isinstance(idx, int) or not 1 <= idx <= k_eig:
                raise ConfigError(f"eigenfunction index must be an integer in [1, {k_eig}], got {idx!r}")
        if src == "perlin" and not float(g.get("frequency", 1.0)) > 0:
            raise ConfigError("perlin frequency must be positive")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)
