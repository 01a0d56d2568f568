#!/usr/bin/env python
"""
config.py: Run configuration shared by every pipeline stage.

A `RunConfig` is built from defaults, then an optional TOML file with one
section per stage::

    seed = 7

    [train]
    mode = "no_raum"
    layers = 3

    [eval]
    ks = [5, 10]

and finally command-line overrides, given as dotted keys
(``{"train.layers": 3}``). The configuration is validated before any stage
runs.
"""

import os
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback
    import tomli as tomllib

from reviewgraph.data.synthetic import WorldParams
from reviewgraph.models.epim import DEFAULT_LAYERS, MAX_LAYERS, InitMode, RegTarget
from reviewgraph.provenance import fingerprint_dict

OUTPUT_ENV = "REVIEWGRAPH_OUTPUT"
DEFAULT_OUTPUT = "runs"


@dataclass
class PathsConfig:
    data_dir: Optional[str] = None
    output_dir: str = field(
        default_factory=lambda: os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)
    )

    @property
    def output(self) -> Path:
        return Path(self.output_dir)

    @property
    def data(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.output / "data"


@dataclass
class CompressConfig:
    code_dim: int = 64
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-2
    l2_image: float = 1e-4
    l2_text: float = 1e-4
    l2_review: float = 1e-4
    normalize_codes: bool = False


@dataclass
class AlignConfig:
    first: bool = False
    projection_dim: int = 256
    temperature: float = 0.07
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-2


@dataclass
class TrainConfig:
    mode: str = InitMode.FULL.value
    layers: int = DEFAULT_LAYERS
    epochs: int = 200
    batch_size: int = 4096
    lr: float = 1e-3
    weight_decay: float = 1e-2
    lambda_bpr: float = 1e-4
    dim: int = 128
    patience: int = 20
    eval_every: int = 1
    reg_target: str = RegTarget.FINAL.value
    freeze_items: bool = False
    match_init_scale: bool = True
    ratios: Tuple[float, float, float] = (0.75, 0.05, 0.20)


@dataclass
class EvalConfig:
    ks: Tuple[int, ...] = (5, 10)
    modes: Tuple[str, ...] = tuple(mode.value for mode in InitMode)
    sweep_layers: Tuple[int, ...] = (1, 3, 5, 7, 9)
    cluster_k: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    compress: CompressConfig = field(default_factory=CompressConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: WorldParams = field(default_factory=WorldParams)

    def validate(self) -> None:
        """Validation of every section.

        Raises:
            ValueError: If a value is out of range or a mode is unknown.
        """
        train = self.train
        train.mode = InitMode(train.mode).value
        train.reg_target = RegTarget(train.reg_target).value
        if not 0 <= train.layers <= MAX_LAYERS:
            raise ValueError(f"train.layers must be in [0, {MAX_LAYERS}]")
        if abs(sum(train.ratios) - 1.0) > 1e-9 or min(train.ratios) < 0:
            raise ValueError("train.ratios must be non-negative and sum to 1")
        for name, value in (
            ("compress.code_dim", self.compress.code_dim),
            ("compress.batch_size", self.compress.batch_size),
            ("align.projection_dim", self.align.projection_dim),
            ("align.batch_size", self.align.batch_size),
            ("train.batch_size", train.batch_size),
            ("train.eval_every", train.eval_every),
            ("eval.cluster_k", self.eval.cluster_k),
        ):
            if value < 1:
                raise ValueError(f"{name} must be positive")
        for name, value in (
            ("compress.epochs", self.compress.epochs),
            ("align.epochs", self.align.epochs),
            ("train.epochs", train.epochs),
            ("train.patience", train.patience),
        ):
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.align.temperature <= 0:
            raise ValueError("align.temperature must be positive")
        if not self.eval.ks or min(self.eval.ks) < 1:
            raise ValueError("eval.ks must be positive cut-offs")
        self.eval.modes = tuple(InitMode(mode).value for mode in self.eval.modes)
        if any(not 0 <= depth <= MAX_LAYERS for depth in self.eval.sweep_layers):
            raise ValueError(f"eval.sweep_layers must lie in [0, {MAX_LAYERS}]")
        self.synth.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def fingerprint(self) -> str:
        return fingerprint_dict(self.to_dict())

    @classmethod
    def from_dict(cls, settings: Mapping[str, Any]) -> "RunConfig":
        config = cls()
        config.update(settings)
        return config

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "RunConfig":
        """Defaults overlaid with a TOML file.

        Raises:
            FileNotFoundError: If the file does not exist.
            tomllib.TOMLDecodeError: If the file is not valid TOML.
        """
        with open(path, "rb") as handle:
            return cls.from_dict(tomllib.load(handle))

    def update(self, settings: Mapping[str, Any]) -> "RunConfig":
        """Applies nested (``{"train": {"layers": 3}}``) or dotted
        (``{"train.layers": 3}``) settings in place.

        Raises:
            KeyError: If a section or key does not exist.
        """
        for key, value in settings.items():
            section, _, name = key.partition(".")
            if name:
                self._set(section, name, value)
            elif isinstance(value, Mapping):
                for inner, inner_value in value.items():
                    self._set(section, inner, inner_value)
            else:
                self._set(None, section, value)
        return self

    def _set(self, section: Optional[str], name: str, value: Any) -> None:
        target = self if section is None else getattr(self, section, None)
        if target is None or not is_dataclass(target):
            raise KeyError(f"unknown configuration section {section!r}")
        known = {f.name: f for f in fields(target)}
        if name not in known:
            raise KeyError(f"unknown configuration key {section}.{name}")
        current = getattr(target, name)
        if isinstance(current, tuple) and isinstance(value, (list, tuple)):
            value = tuple(value)
        elif isinstance(current, float) and isinstance(value, int):
            value = float(value)
        setattr(target, name, value)


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Defaults, then the TOML file, then overrides; validated."""
    config = RunConfig.from_toml(path) if path else RunConfig()
    config.update({k: v for k, v in (overrides or {}).items() if v is not None})
    config.validate()
    return config


def parse_int_list(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]
