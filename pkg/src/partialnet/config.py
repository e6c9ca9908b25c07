"""Run configuration: flat JSON with dotted keys.

Nested objects are accepted and flattened (``{"optim": {"lr": 0.1}}`` is
``{"optim.lr": 0.1}``). Unknown keys are errors. Every default is listed in
``DEFAULTS``; ``RunConfig.resolved`` holds the fully resolved flat mapping that
is echoed next to a run's outputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .ensemble import EnsembleConfig
from .nn import ArchitectureSpec
from .optim import OptimConfig
from .partition import PartitionSpec

REQUIRED = object()

DEFAULTS = {
    "arch.family": REQUIRED,
    "arch.depth": REQUIRED,
    "arch.width_param": 1,
    "arch.num_classes": 10,
    "arch.input_shape": [3, 32, 32],
    "partition.kind": "full",
    "partition.p": None,
    "partition.dim_slice": 1,
    "partition.k": None,
    "partition.blocks": [],
    "partition.fixed_mode": "random",
    "optim.lr": 0.1,
    "optim.momentum": 0.9,
    "optim.weight_decay": 5e-4,
    "optim.schedule": None,
    "optim.epochs": 10,
    "optim.batch_size": 64,
    "data.source": "synthetic",
    "data.path": None,
    "data.n_train_per_class": 100,
    "data.n_test_per_class": 50,
    "data.noise_sigma": 0.1,
    "data.seed": 0,
    "data.augment": None,
    "seed": 0,
    "out": "out",
    "ensemble.size": 5,
    "ensemble.member_kind": "fc_only",
    "ensemble.R": None,
    "ensemble.base_epochs": 1,
    "ensemble.member_epochs": 1,
    "ensemble.seeds": None,
    "sweep.axis": None,
    "sweep.values": [],
    "sweep.fixed_mode": "random",
    "sweep.seeds": [0],
    "sweep.fractions": [0.1, 0.25, 0.5],
    "sweep.workers": 1,
}

SWEEP_AXES = ("fractions", "integer_ks", "dim_slices", "blocks")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def flatten(d, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass
class DataConfig:
    source: str
    path: str | None
    n_train_per_class: int
    n_test_per_class: int
    noise_sigma: float
    seed: int
    augment: bool


@dataclass
class SweepConfig:
    axis: str
    values: list
    fixed_mode: str
    seeds: list
    fractions: list
    workers: int

    @property
    def modes(self):
        return ("random", "zero") if self.fixed_mode == "both" else (self.fixed_mode,)


@dataclass
class RunConfig:
    arch: ArchitectureSpec
    partition: PartitionSpec
    optim: OptimConfig
    data: DataConfig
    out: str
    seed: int
    resolved: dict
    ensemble: EnsembleConfig | None = None
    sweep: SweepConfig | None = None

    def dumps(self) -> str:
        return json.dumps(self.resolved, indent=2, sort_keys=True) + "\n"


def _typed(key, value, kind):
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind.__name__}, got {value!r}") from None


def resolve(raw: dict, overrides: dict | None = None) -> dict:
    flat = flatten(raw)
    for k in flat:
        if k not in DEFAULTS:
            raise ConfigError(k, "unknown config key")
    flat.update(overrides or {})
    out = {}
    for k, default in DEFAULTS.items():
        if k in flat:
            out[k] = flat[k]
        elif default is REQUIRED:
            raise ConfigError(k, "missing required key")
        else:
            out[k] = default
    return out


def _build(key, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(key, str(e)) from None


def parse(raw: dict, overrides: dict | None = None) -> RunConfig:
    c = resolve(raw, overrides)
    seed = _typed("seed", c["seed"], int)
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")

    arch = _build("arch", ArchitectureSpec, str(c["arch.family"]), _typed("arch.depth", c["arch.depth"], int),
                  _typed("arch.width_param", c["arch.width_param"], int),
                  _typed("arch.num_classes", c["arch.num_classes"], int),
                  tuple(_typed("arch.input_shape", s, int) for s in c["arch.input_shape"]))

    kind = c["partition.kind"]
    p = None if c["partition.p"] is None else _typed("partition.p", c["partition.p"], float)
    k = None if c["partition.k"] is None else _typed("partition.k", c["partition.k"], int)
    partition = _build(f"partition ({kind})", PartitionSpec, kind, p,
                       _typed("partition.dim_slice", c["partition.dim_slice"], int), k,
                       frozenset(c["partition.blocks"] or ()), c["partition.fixed_mode"])

    schedule = c["optim.schedule"]
    optim = _build("optim", OptimConfig, _typed("optim.lr", c["optim.lr"], float),
                   _typed("optim.momentum", c["optim.momentum"], float),
                   _typed("optim.weight_decay", c["optim.weight_decay"], float),
                   None if schedule is None else [tuple(s) for s in schedule],
                   _typed("optim.epochs", c["optim.epochs"], int),
                   _typed("optim.batch_size", c["optim.batch_size"], int), seed)
    c["optim.schedule"] = [list(s) for s in optim.schedule]

    source = c["data.source"]
    if source not in ("synthetic", "cifar10"):
        raise ConfigError("data.source", "must be 'synthetic' or 'cifar10'")
    if source == "cifar10":
        if not c["data.path"]:
            raise ConfigError("data.path", "required for cifar10")
        if arch.input_shape != (3, 32, 32) or arch.num_classes != 10:
            raise ConfigError("arch.input_shape", "cifar10 needs input_shape [3, 32, 32] and 10 classes")
    if c["data.augment"] is None:
        c["data.augment"] = source == "cifar10"
    data = DataConfig(source, c["data.path"], _typed("data.n_train_per_class", c["data.n_train_per_class"], int),
                      _typed("data.n_test_per_class", c["data.n_test_per_class"], int),
                      _typed("data.noise_sigma", c["data.noise_sigma"], float),
                      _typed("data.seed", c["data.seed"], int), _typed("data.augment", c["data.augment"], bool))
    if data.n_train_per_class < 1 or data.n_test_per_class < 1:
        raise ConfigError("data.n_train_per_class", "sample counts must be positive")
    if data.noise_sigma < 0:
        raise ConfigError("data.noise_sigma", "must be non-negative")

    size = _typed("ensemble.size", c["ensemble.size"], int)
    c["ensemble.seeds"] = list(c["ensemble.seeds"] or [seed * 1000 + i + 1 for i in range(size)])
    ensemble = _build("ensemble", EnsembleConfig, size, c["ensemble.member_kind"],
                      None if c["ensemble.R"] is None else _typed("ensemble.R", c["ensemble.R"], float),
                      _typed("ensemble.base_epochs", c["ensemble.base_epochs"], int),
                      _typed("ensemble.member_epochs", c["ensemble.member_epochs"], int), c["ensemble.seeds"])

    sweep = None
    if c["sweep.axis"] is not None:
        axis = c["sweep.axis"]
        if axis not in SWEEP_AXES:
            raise ConfigError("sweep.axis", f"must be one of {SWEEP_AXES}")
        values = list(c["sweep.values"] or [])
        if not values:
            raise ConfigError("sweep.values", "empty sweep axis")
        if c["sweep.fixed_mode"] not in ("random", "zero", "both"):
            raise ConfigError("sweep.fixed_mode", "must be random, zero or both")
        seeds = [_typed("sweep.seeds", s, int) for s in c["sweep.seeds"]]
        if not seeds:
            raise ConfigError("sweep.seeds", "need at least one seed")
        sweep = SweepConfig(axis, values, c["sweep.fixed_mode"], seeds,
                            [_typed("sweep.fractions", f, float) for f in c["sweep.fractions"]],
                            _typed("sweep.workers", c["sweep.workers"], int))
        for v in values:
            _build("sweep.values", sweep_partition, sweep, v, "random")

    return RunConfig(arch, partition, optim, data, str(c["out"]), seed, c, ensemble, sweep)


def sweep_partition(sweep: SweepConfig, value, mode: str, p: float | None = None) -> PartitionSpec:
    """Partition for one sweep point; ``p`` overrides the fraction on the dim_slices axis."""
    if sweep.axis == "fractions":
        return PartitionSpec.fractional(float(value), 1, mode)
    if sweep.axis == "integer_ks":
        return PartitionSpec.integer_k(int(value), mode)
    if sweep.axis == "dim_slices":
        return PartitionSpec.fractional(sweep.fractions[0] if p is None else p, int(value), mode)
    names = value if isinstance(value, list) else [value]
    return PartitionSpec.of_blocks(*names, fixed_mode=mode)


def load(path, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be an object")
    return parse(raw, overrides)
