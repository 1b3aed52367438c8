"""Experiment configuration file: one JSON document drives every command.

Parsing is fail-closed: any key that no section recognizes aborts before
any computation runs. All randomness flows from the named seeds here;
nothing reads entropy from the environment.

Layout (all sections optional, defaults apply):

    {
      "seed": 42,
      "sim": {"preset": "default", "cause_probs": [...], ...},
      "nuisance": {"kind": "gbm", "rounds": 200, ...},
      "folds": 5,
      "final_stage": "forest",
      "forest": {"bags": 25, "trees_per_bag": 8, ...},
      "decision": {"fallback_tau": 1.0, ...}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .decisions import DecisionConfig
from .dml import TrainConfig
from .errors import ConfigError, InvalidArgument
from .forest import ForestParams
from .learners import LearnerConfig
from .simulate import PRESETS, SimConfig, config_from_dict, config_to_dict

_TOP_KEYS = {"seed", "sim", "nuisance", "folds", "final_stage", "forest", "decision"}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    sim: SimConfig
    train: TrainConfig
    decision: DecisionConfig

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "sim": config_to_dict(self.sim),
            "nuisance": {k: getattr(self.train.learner, k) for k in self.train.learner.__dataclass_fields__},
            "folds": self.train.folds,
            "final_stage": self.train.final_stage,
            "forest": self.train.forest.to_dict(),
            "decision": self.decision.to_dict(),
        }


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        seed = int(raw.get("seed", 0))
        sim = _parse_sim(raw.get("sim", {}), seed)
        learner = _parse_section(raw.get("nuisance", {}), LearnerConfig, "nuisance")
        forest = _parse_section(raw.get("forest", {}), ForestParams, "forest")
        decision = _parse_section(raw.get("decision", {}), DecisionConfig, "decision")
        train = TrainConfig(
            learner=learner,
            folds=int(raw.get("folds", 5)),
            final_stage=str(raw.get("final_stage", "forest")),
            forest=forest,
            seed=seed,
        )
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(seed=seed, sim=sim, train=train, decision=decision)


def _parse_sim(section: dict, seed: int) -> SimConfig:
    if not isinstance(section, dict):
        raise ConfigError("'sim' must be an object")
    section = dict(section)
    preset_name = section.pop("preset", "default")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown sim preset {preset_name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset_name](seed=int(section.pop("seed", seed)))
    if not section:
        return base
    merged = config_to_dict(base)
    unknown = set(section) - set(merged)
    if unknown:
        raise ConfigError(f"unknown sim keys: {sorted(unknown)}")
    merged.update(section)
    try:
        return config_from_dict(merged)
    except InvalidArgument as exc:
        raise ConfigError(f"bad sim config: {exc}") from exc


def _parse_section(section: dict, cls, name: str):
    if not isinstance(section, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, InvalidArgument) as exc:
        raise ConfigError(f"bad {name} config: {exc}") from exc


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_experiment_config(raw)
