"""Experiment configuration: one JSON document per experiment."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .models.harness import METHODS, MODES, REPRESENTATIONS, AlgorithmSpec, OutputMode

OUTPUT_ROOT_ENV = "SOCKETFIT_OUTPUT_ROOT"


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    method: str = "Forest"
    mode: str = "Adaptations"
    representation: str = "Raw"
    params: dict = field(default_factory=dict)
    folds: int = 5
    seed: int = 0
    out: str = ""
    augment: int = 0
    budget: str = "full"
    pca_threshold: float = 0.95
    # > 0 replaces k-fold CV by one seeded train/test split of this test fraction
    holdout: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {REPRESENTATIONS}")
        if self.method == "PointSet" and self.representation != "Raw":
            raise ConfigError("the point-set network supports the Raw representation only")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.augment < 0:
            raise ConfigError("augment must be non-negative")
        if self.budget not in ("full", "reduced"):
            raise ConfigError("budget must be 'full' or 'reduced'")
        if not 0 < self.pca_threshold <= 1:
            raise ConfigError("pca_threshold must lie in (0, 1]")
        if not 0 <= self.holdout < 1:
            raise ConfigError("holdout must lie in [0, 1)")
        if not isinstance(self.params, dict):
            raise ConfigError("params must be a mapping")

    @property
    def name(self) -> str:
        return f"{self.method}_{self.mode}_{self.representation}".lower()

    def output_dir(self) -> Path:
        return Path(self.out) if self.out else default_output_root() / self.name

    def algorithm(self) -> AlgorithmSpec:
        return AlgorithmSpec(self.method, OutputMode(self.mode, self.representation),
                             dict(self.params), self.augment, self.budget, self.pca_threshold)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def resolved(self) -> "ExperimentConfig":
        """Check that the dataset path exists."""
        if not self.dataset:
            raise ConfigError("no dataset given")
        if not Path(self.dataset).exists():
            raise ConfigError(f"dataset not found: {self.dataset}")
        return self


def parse_value(text):
    """``--set`` values: JSON when it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
