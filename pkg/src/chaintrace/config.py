"""Run configuration. An empty JSON object yields the original experiment settings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dataset import PAPER_PATCH_BUDGETS
from .forest import ForestParams
from .labels import PAPER_TAXONOMY, Taxonomy
from .nn import STAGE1_SCHEDULE, STAGE2_SCHEDULE, SgdSchedule


class ConfigInvalid(ValueError):
    pass


DEFAULT_SEEDS = {"split": 0, "patches": 0, "cnn": 0, "forest": 0, "classify": 0}
PATH_KEYS = ("manifest", "train_cache", "test_cache", "bundle", "out_dir")


@dataclass
class RunConfig:
    taxonomy: Taxonomy = PAPER_TAXONOMY
    patch_size: int = 64
    stage1: SgdSchedule = STAGE1_SCHEDULE
    stage2: SgdSchedule = STAGE2_SCHEDULE
    forest: ForestParams = field(default_factory=ForestParams)
    seeds: dict = field(default_factory=lambda: dict(DEFAULT_SEEDS))
    paths: dict = field(default_factory=dict)
    train_patches: int | None = None
    test_patches: int | None = None
    test_fraction: float = 0.1
    bn_recalibration_samples: int = 2048
    patches_per_image: int = 16
    eval_balance: str = "chain"
    forest_jobs: int = 1

    def __post_init__(self):
        if self.train_patches is None:
            self.train_patches = PAPER_PATCH_BUDGETS.get(self.patch_size, (None, None))[0]
        if self.test_patches is None:
            self.test_patches = PAPER_PATCH_BUDGETS.get(self.patch_size, (None, None))[1]
        if self.eval_balance not in ("chain", "primary"):
            raise ConfigInvalid("eval_balance must be 'chain' or 'primary'")
        if self.patches_per_image < 1:
            raise ConfigInvalid("patches_per_image must be >= 1")
        unknown = set(self.seeds) - set(DEFAULT_SEEDS)
        if unknown:
            raise ConfigInvalid(f"unknown seed names {sorted(unknown)}")
        self.seeds = {**DEFAULT_SEEDS, **self.seeds}

    def path(self, key: str) -> Path:
        if key not in self.paths:
            raise ConfigInvalid(f"config has no paths.{key}")
        return Path(self.paths[key])

    def to_json(self) -> dict:
        return {
            "taxonomy": self.taxonomy.to_json(),
            "patch_size": self.patch_size,
            "stage1": dict(self.stage1.__dict__),
            "stage2": dict(self.stage2.__dict__),
            "forest": self.forest.to_json(),
            "seeds": dict(self.seeds),
            "paths": {k: str(v) for k, v in self.paths.items()},
            "train_patches": self.train_patches,
            "test_patches": self.test_patches,
            "test_fraction": self.test_fraction,
            "bn_recalibration_samples": self.bn_recalibration_samples,
            "patches_per_image": self.patches_per_image,
            "eval_balance": self.eval_balance,
            "forest_jobs": self.forest_jobs,
        }

    @classmethod
    def from_json(cls, d: dict, base_dir=None) -> RunConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
        try:
            if "taxonomy" in d:
                d["taxonomy"] = Taxonomy.from_json(d["taxonomy"])
            if "stage1" in d:
                d["stage1"] = STAGE1_SCHEDULE.replace(**d["stage1"])
            if "stage2" in d:
                d["stage2"] = STAGE2_SCHEDULE.replace(**d["stage2"])
            if "forest" in d:
                d["forest"] = ForestParams(**d["forest"])
            if "paths" in d and base_dir is not None:
                d["paths"] = {k: str(Path(base_dir) / v) for k, v in d["paths"].items()}
            if "paths" in d and set(d["paths"]) - set(PATH_KEYS):
                raise ConfigInvalid(f"unknown path keys {sorted(set(d['paths']) - set(PATH_KEYS))}")
            return cls(**d)
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigInvalid):
                raise
            raise ConfigInvalid(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    return RunConfig.from_json(data, base_dir=path.parent)
