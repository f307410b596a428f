"""Run configuration files (JSON or TOML)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetSpec
from .model import ConfigError
from .optim import METHODS, CggdConfig, ExponentialDecay, FixedStep, FuzzyConfig

OUTPUT_ENV = "CGGD_OUTPUT_DIR"
DEFAULT_OUTPUT = "cggd-out"


def output_dir(cli_value: str | None = None) -> Path:
    """CLI flag beats the environment variable, which beats the default."""
    return Path(cli_value or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


@dataclass
class RunConfig:
    dataset: DatasetSpec | None = None
    synthetic: dict | None = None
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    eta: float = 1e-3
    decay: float | None = None
    max_epochs: int = 2000
    batch_size: int | None = None
    selection: str = "best-val"
    rescale: float = 1.5
    epsilon: float = 0.01
    fuzzy_weight: float = 1.0

    def cggd_config(self) -> CggdConfig:
        sched = ExponentialDecay(self.eta, self.decay) if self.decay else FixedStep(self.eta)
        return CggdConfig(self.rescale, self.epsilon, sched, self.max_epochs,
                          self.batch_size, self.selection)

    def fuzzy_config(self) -> FuzzyConfig:
        return FuzzyConfig(self.fuzzy_weight)


def parse_config(doc: dict, base: Path | None = None) -> RunConfig:
    doc = dict(doc)
    cfg = RunConfig()
    if "dataset" in doc:
        ds = dict(doc.pop("dataset"))
        # relative paths resolve against the config file
        for key in ("csv_path", "constraint_file"):
            if ds.get(key) and base is not None and not Path(ds[key]).is_absolute():
                ds[key] = str(base / ds[key])
        cfg.dataset = DatasetSpec.from_dict(ds)
    if "synthetic" in doc:
        cfg.synthetic = dict(doc.pop("synthetic"))
    if cfg.dataset is None and cfg.synthetic is None:
        cfg.synthetic = {}
    model = doc.pop("model", {})
    if "hidden" in model:
        cfg.hidden = [int(h) for h in model["hidden"]]
    for section in ("training", "cggd", "fuzzy"):
        for key, value in doc.pop(section, {}).items():
            key = {"weight": "fuzzy_weight"}.get(key, key) if section == "fuzzy" else key
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown {section} option {key!r}")
            setattr(cfg, key, value)
    for key in ("methods", "seeds"):
        if key in doc:
            setattr(cfg, key, list(doc.pop(key)))
    if doc:
        raise ConfigError(f"unknown config sections {sorted(doc)}")
    for m in cfg.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    cfg.cggd_config()  # validates
    cfg.fuzzy_config()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)
    return parse_config(doc, path.parent)
