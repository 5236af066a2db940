"""Structured run configuration (YAML or JSON).

Top-level sections, all optional::

    sim:         SimConfig fields (+ nested ofdm / lfm sections)
    model:       ModelConfig overrides (hidden_dim, activation, use_se, ...)
    train:       TrainConfig fields
    experiment:  seeds, lambda_grid, gamma_grid, n_runs, swaps, split_seed, val_fraction

Any unknown key raises :class:`ConfigError` naming the valid keys.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..model import ModelConfig
from ..signal_sim import LfmConfig, OfdmConfig, SimConfig
from ..trainer import TrainConfig

# ModelConfig fields fixed by the data or the fold, not user-settable
_DERIVED_MODEL_KEYS = {"in_channels", "seq_len", "n_classes", "n_adapters", "dtype", "seed"}
MODEL_KEYS = tuple(f.name for f in fields(ModelConfig) if f.name not in _DERIVED_MODEL_KEYS)


@dataclass
class ExperimentConfig:
    seeds: list = field(default_factory=lambda: [0])
    lambda_grid: list = field(default_factory=lambda: [0.0, 0.01, 0.1, 1.0, 10.0])
    gamma_grid: list = field(default_factory=lambda: [0.0, 0.01, 0.1, 1.0, 10.0])
    n_runs: int = 5
    swaps: bool = True
    split_seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment.seeds must be non-empty")
        if self.n_runs < 1:
            raise ConfigError("experiment.n_runs must be >= 1")


@dataclass
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def as_dict(self):
        return {"sim": asdict(self.sim), "model": dict(self.model), "train": asdict(self.train),
                "experiment": asdict(self.experiment)}


def _check_keys(section, data, valid):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(data) - set(valid))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {section!r}; valid keys: {sorted(valid)}")


def _names(cls):
    return [f.name for f in fields(cls)]


def build_config(data: dict | None) -> RunConfig:
    data = dict(data or {})
    _check_keys("<top level>", data, ("sim", "model", "train", "experiment"))
    sim = dict(data.get("sim") or {})
    _check_keys("sim", sim, _names(SimConfig))
    for sub, cls in (("ofdm", OfdmConfig), ("lfm", LfmConfig)):
        if sub in sim:
            _check_keys(f"sim.{sub}", sim[sub], _names(cls))
            sim[sub] = cls(**sim[sub])
    model = dict(data.get("model") or {})
    _check_keys("model", model, MODEL_KEYS)
    train = dict(data.get("train") or {})
    _check_keys("train", train, _names(TrainConfig))
    exp = dict(data.get("experiment") or {})
    _check_keys("experiment", exp, _names(ExperimentConfig))
    try:
        cfg = RunConfig(SimConfig(**sim), model, TrainConfig(**train), ExperimentConfig(**exp))
        ModelConfig(in_channels=1, seq_len=4, n_classes=2, **model)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path) -> RunConfig:
    """Read a ``.yaml`` / ``.yml`` / ``.json`` file into a :class:`RunConfig`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from None
    return build_config(data)
