"""Experiment configuration: scale profiles, named seed sets and JSON loading."""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List

from .compress import PruneSchedule
from .errors import ConfigurationError
from .neuralnet import DEFAULT_DIMS, TrainConfig
from .txsim import AmplifierParams, FiberParams, TxConfig

OUTPUT_ENV = "NNEQ_OUTPUT_DIR"

SEED_SETS = {
    "default": {"train_data": 101, "test_data": 202, "ase_train": 106, "ase_test": 207,
                "init": 3, "shuffle": 42, "finetune": 43, "bench": 0},
    "alt": {"train_data": 1101, "test_data": 1202, "ase_train": 1106, "ase_test": 1207,
            "init": 13, "shuffle": 52, "finetune": 53, "bench": 1},
}


def seed_set(name):
    """A named seed set, or ``default`` shifted by an integer given as ``name``."""
    if name in SEED_SETS:
        return dict(SEED_SETS[name])
    try:
        base = int(name)
    except (TypeError, ValueError):
        raise ConfigurationError(f"unknown seed set {name!r}") from None
    return {k: v + 1000 * base for k, v in SEED_SETS["default"].items()}


@dataclass(frozen=True)
class NetConfig:
    dims: tuple = DEFAULT_DIMS
    n_neighbors: int = 10
    polarizations: tuple = ("h",)

    def __post_init__(self):
        if self.dims[0] != 4 * (2 * self.n_neighbors + 1):
            raise ConfigurationError("input width must equal 4 * (2N + 1)")
        if self.dims[-1] != 2:
            raise ConfigurationError("output width must be 2")
        if not set(self.polarizations) <= {"h", "v"} or not self.polarizations:
            raise ConfigurationError("polarizations must be a non-empty subset of {h, v}")


@dataclass(frozen=True)
class BenchConfig:
    enabled: bool = True
    n_symbols: int = 30000
    n_inferences: int = 100
    n_repeats: int = 25


@dataclass
class ExperimentConfig:
    tx: TxConfig = field(default_factory=TxConfig)
    fiber: FiberParams = field(default_factory=FiberParams)
    amp: AmplifierParams = field(default_factory=AmplifierParams)
    manakov_factor: bool = True
    launch_powers_dbm: List[float] = field(default_factory=lambda: [0.0, 1.0, 2.0])
    n_symbols_train: int = 2**18
    n_symbols_test: int = 2**18
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneSchedule = field(default_factory=PruneSchedule)
    sparsities: List[float] = field(default_factory=lambda: [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    quantize: bool = True
    calibration_samples: int = 100
    bench: BenchConfig = field(default_factory=BenchConfig)
    scale_profile: str = "paper"
    output_dir: str = "results"
    seeds: Dict[str, int] = field(default_factory=lambda: seed_set("default"))

    def __post_init__(self):
        if any(not 0 <= s <= 0.95 for s in self.sparsities):
            raise ConfigurationError("sparsities must lie in [0, 0.95]")
        if self.scale_profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.scale_profile!r}")
        if self.n_symbols_train < 2 * self.net.n_neighbors + 1 or self.n_symbols_test < 2 * self.net.n_neighbors + 1:
            raise ConfigurationError("datasets are shorter than one window")
        missing = set(SEED_SETS["default"]) - set(self.seeds)
        if missing:
            raise ConfigurationError(f"seed set lacks {sorted(missing)}")

    def to_dict(self):
        return asdict(self)


PROFILES = {
    "paper": {},
    "desk": {
        "launch_powers_dbm": [1.0, 2.0],
        "n_symbols_train": 2**14,
        "n_symbols_test": 2**14,
        "train": {"max_epochs": 200, "patience_epochs": 30},
        "prune": {"total_epochs": 60},
        "sparsities": [0.6, 0.9],
        "bench": {"n_inferences": 10, "n_repeats": 5},
    },
}

_SUB = {"tx": TxConfig, "fiber": FiberParams, "amp": AmplifierParams, "net": NetConfig,
        "train": TrainConfig, "prune": PruneSchedule, "bench": BenchConfig}


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    data = dict(data)
    for k in ("dims", "polarizations"):
        if k in data and isinstance(data[k], list):
            data[k] = tuple(data[k])
    return cls(**data)


def make_config(profile="paper", overrides=None, seed_set_name=None, output_dir=None):
    """Profile defaults, then ``overrides`` (a nested dict), then CLI-level options."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    data = _merge(asdict(ExperimentConfig()), PROFILES[profile])
    data["scale_profile"] = profile
    if overrides:
        data = _merge(data, overrides)
        if "scale_profile" in overrides and overrides["scale_profile"] != profile:
            raise ConfigurationError("scale_profile in the config file conflicts with --profile")
    if seed_set_name is not None:
        data["seeds"] = seed_set(seed_set_name)
    env_out = os.environ.get(OUTPUT_ENV)
    if output_dir is not None:
        data["output_dir"] = output_dir
    elif env_out:
        data["output_dir"] = env_out
    kwargs = {}
    for k, v in data.items():
        if k in _SUB:
            kwargs[k] = _build(_SUB[k], v)
        else:
            kwargs[k] = v
    unknown = set(kwargs) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**kwargs)


def load_config(path, profile=None, seed_set_name=None, output_dir=None):
    with open(path) as f:
        over = json.load(f)
    profile = profile or over.get("scale_profile", "paper")
    return make_config(profile, over, seed_set_name, output_dir)


def dump_config(cfg, path):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
