"""Experiment configuration: one INI file fully determines a run.

Sections mirror the owning types: [net] builds the network shape,
[hyper] the training hyperparameters, [buffer] the replay store, [data]
the synthetic task generator, [run] everything else (seed, stream path,
output directory, kernel backend, evaluation masking). Unknown sections
or keys are errors, not warnings: a typo that silently falls back to a
default would poison reproducibility.

The only environment influence allowed is LETHE_OUT, which relocates the
output directory; it never changes what is computed.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from .backend import BACKENDS
from .engine import HyperParams
from .errors import ConfigError
from .losses import LossWeights
from .model import NetConfig
from .streams import (
    DEFAULT_CLASSES_PER_TASK,
    DEFAULT_SPREAD,
    DEFAULT_TEST_PER_CLASS,
    DEFAULT_TRAIN_PER_CLASS,
)

OUTPUT_DIR_ENV = "LETHE_OUT"


@dataclass(frozen=True)
class DataParams:
    classes_per_task: int = DEFAULT_CLASSES_PER_TASK
    train_per_class: int = DEFAULT_TRAIN_PER_CLASS
    test_per_class: int = DEFAULT_TEST_PER_CLASS
    spread: float = DEFAULT_SPREAD


@dataclass(frozen=True)
class ExperimentConfig:
    net: NetConfig = field(default_factory=lambda: NetConfig(input_dim=2))
    hyper: HyperParams = field(default_factory=HyperParams)
    data: DataParams = field(default_factory=DataParams)
    buffer_capacity: int = 200
    decrement_seen_on_purge: bool = False
    seed: int = 0
    stream: str | None = None
    output_dir: str = "out"
    kernels: str = "auto"
    mask_forgotten_eval: bool = False

    def __post_init__(self):
        if self.buffer_capacity < 1:
            raise ConfigError("buffer capacity must be positive")
        if self.net.num_classes % self.data.classes_per_task != 0:
            raise ConfigError(
                f"classes_per_task {self.data.classes_per_task} does not divide "
                f"num_classes {self.net.num_classes}"
            )
        if self.kernels not in BACKENDS:
            raise ConfigError(f"kernels must be one of {BACKENDS}")


_SCHEMA = {
    "net": {"input_dim", "hidden_dims", "num_classes", "embed_dim"},
    "hyper": {
        "alpha1", "alpha2", "alpha3", "rho", "tau",
        "m", "p", "eta", "er_weight",
        "batch_size", "buffer_batch_size", "epochs_per_task",
        "objective_mode", "momentum_every",
    },
    "buffer": {"capacity", "decrement_seen_on_purge"},
    "data": {"classes_per_task", "train_per_class", "test_per_class", "spread"},
    "run": {"seed", "stream", "output_dir", "kernels", "mask_forgotten_eval"},
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(section: str, key: str, raw: str) -> bool:
    if raw.lower() not in _BOOL:
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    return _BOOL[raw.lower()]


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ConfigError(f"config file {path} not found")

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section: str, key: str, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key).strip()
        return default

    net_kwargs = {}
    if get("net", "input_dim") is not None:
        net_kwargs["input_dim"] = _parse_int("net", "input_dim", get("net", "input_dim"))
    if get("net", "hidden_dims") is not None:
        raw = get("net", "hidden_dims")
        try:
            net_kwargs["hidden_dims"] = tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"[net] hidden_dims: expected comma-separated integers, got {raw!r}") from None
    if get("net", "num_classes") is not None:
        net_kwargs["num_classes"] = _parse_int("net", "num_classes", get("net", "num_classes"))
    if get("net", "embed_dim") is not None:
        net_kwargs["embed_dim"] = _parse_int("net", "embed_dim", get("net", "embed_dim"))
    net = NetConfig(input_dim=net_kwargs.pop("input_dim", 2), **net_kwargs)

    weight_kwargs = {}
    for key in ("alpha1", "alpha2", "alpha3", "rho", "tau"):
        if get("hyper", key) is not None:
            weight_kwargs[key] = _parse_float("hyper", key, get("hyper", key))
    hyper_kwargs = {"weights": LossWeights(**weight_kwargs)}
    for key in ("m", "p", "eta", "er_weight"):
        if get("hyper", key) is not None:
            hyper_kwargs[key] = _parse_float("hyper", key, get("hyper", key))
    for key in ("batch_size", "buffer_batch_size", "epochs_per_task"):
        if get("hyper", key) is not None:
            hyper_kwargs[key] = _parse_int("hyper", key, get("hyper", key))
    for key in ("objective_mode", "momentum_every"):
        if get("hyper", key) is not None:
            hyper_kwargs[key] = get("hyper", key)
    hyper = HyperParams(**hyper_kwargs)

    data_kwargs = {}
    for key in ("classes_per_task", "train_per_class", "test_per_class"):
        if get("data", key) is not None:
            data_kwargs[key] = _parse_int("data", key, get("data", key))
    if get("data", "spread") is not None:
        data_kwargs["spread"] = _parse_float("data", "spread", get("data", "spread"))

    cfg = ExperimentConfig(
        net=net,
        hyper=hyper,
        data=DataParams(**data_kwargs),
        buffer_capacity=_parse_int("buffer", "capacity", get("buffer", "capacity", "200")),
        decrement_seen_on_purge=_parse_bool(
            "buffer", "decrement_seen_on_purge", get("buffer", "decrement_seen_on_purge", "false")
        ),
        seed=_parse_int("run", "seed", get("run", "seed", "0")),
        stream=get("run", "stream"),
        output_dir=get("run", "output_dir", "out"),
        kernels=get("run", "kernels", "auto"),
        mask_forgotten_eval=_parse_bool(
            "run", "mask_forgotten_eval", get("run", "mask_forgotten_eval", "false")
        ),
    )
    if cfg.stream is not None and not os.path.exists(cfg.stream):
        raise ConfigError(f"stream script {cfg.stream} does not exist")
    return cfg


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> ExperimentConfig:
    """--out beats LETHE_OUT beats the config value."""
    out = override or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
    return replace(cfg, output_dir=out)
