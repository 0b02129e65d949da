"""Run configuration files (YAML or JSON; JSON is valid YAML).

Layout, every section optional, unknown keys rejected at every level::

    train:            # TrainConfig; defaults lr 5e-4, dropout_p 0.15, l2_coeff 0.01,
      learning_rate: 5e-4   # epochs 50, batch_size 32, seed 0, task regression,
      epochs: 50            # variant full
    arch:             # ArchConfig overrides except p/q/word_dim, which come from the data;
      trunk_width: 128      # defaults lstm_embed/lstm_hidden/language_dim/trunk_width 128,
                            # visual_dim/acoustic_dim 32, t_max 20
    synth:            # SynthSpec for `tfn synth`; see tfn.synth for defaults
      n_utterances: 200
    cv:               # folds 5, n_val_videos 4, workers 1
      folds: 5
    grid:             # optional list of train-section overrides searched per fold
      - {learning_rate: 1e-3}
    paths:            # data, out, report; command-line flags take precedence
      data: data.jsonl

A file with none of these section names is read as a bare ``synth`` section.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import ArchConfig
from .synth import SynthSpec
from .training import TrainConfig

SECTIONS = ("train", "arch", "synth", "cv", "grid", "paths")
ARCH_KEYS = {f.name for f in dataclasses.fields(ArchConfig)} - {"p", "q", "word_dim"}
CV_DEFAULTS = {"folds": 5, "n_val_videos": 4, "workers": 1}
PATH_KEYS = {"data", "out", "report"}

PRESETS = {
    "default": {},
    # memorise a handful of utterances: no regularisation, validation on the train set
    "overfit": {"dropout_p": 0.0, "l2_coeff": 0.0, "learning_rate": 1e-3, "epochs": 60,
                "batch_size": 16},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: dict = field(default_factory=dict)
    synth: SynthSpec | None = None
    cv: dict = field(default_factory=lambda: dict(CV_DEFAULTS))
    grid: list[TrainConfig] = field(default_factory=list)
    paths: dict = field(default_factory=dict)

    def arch_for(self, p: int, q: int, word_dim: int) -> ArchConfig:
        return ArchConfig(p=p, q=q, word_dim=word_dim, **self.arch)


def _section(raw, name) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return raw


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def parse_run_config(raw) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    if raw and not set(raw) & set(SECTIONS):
        raw = {"synth": raw}
    _check_keys(raw, SECTIONS, "config")
    try:
        train = TrainConfig.from_dict(_section(raw.get("train"), "train"))
        arch = _section(raw.get("arch"), "arch")
        _check_keys(arch, ARCH_KEYS, "arch")
        ArchConfig(p=1, q=1, **arch)
        synth = SynthSpec.from_dict(raw["synth"]) if raw.get("synth") is not None else None
        cv = _section(raw.get("cv"), "cv")
        _check_keys(cv, CV_DEFAULTS, "cv")
        cv = {**CV_DEFAULTS, **cv}
        grid_raw = raw.get("grid") or []
        if not isinstance(grid_raw, list):
            raise ConfigError("grid must be a list of train overrides")
        grid = [train.replace(**_section(g, "grid entry")) for g in grid_raw]
        paths = _section(raw.get("paths"), "paths")
        _check_keys(paths, PATH_KEYS, "paths")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(train=train, arch=arch, synth=synth, cv=cv, grid=grid, paths=paths)


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    return parse_run_config(raw)
