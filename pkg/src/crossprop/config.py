"""Experiment configuration and its flat ``key = value`` file format.

One setting per line, ``#`` starts a comment, lists are comma separated.
Task schedules are written ``A:5000, B:5000``; an optimizer may carry its
own mixing factor as ``crossprop:0.5``. Example::

    problem = geoff
    optimizers = crossprop, crossprop:0.5, backprop, adam
    alpha = 0.0005
    tasks = A:5000, B:5000, C:5000
    seeds = 0, 1, 2
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .net import INIT_SCHEMES, ActivationKind
from .optim import OPTIMIZERS

PROBLEMS = ("geoff", "mnist")
CROSSPROP_FAMILY = ("crossprop", "crossprop_approx")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerSpec:
    name: str
    eta: float
    label: str


@dataclass
class ExperimentConfig:
    problem: str = "geoff"
    optimizers: tuple = ("crossprop", "backprop")
    eta: float = 0.0
    alpha: float = 0.0005
    activation: str = "tanh"
    init: str = "fan_in"
    m: int = 20
    n: int = 500
    k: int = 1
    tasks: tuple = (("A", 5000), ("B", 5000), ("C", 5000))
    seeds: tuple = (0,)
    target_n: int = 1000
    beta: float = 0.6
    mutation: float = 0.5
    noise_std: float = 1.0
    shifts: tuple = (0, 1, 2)
    images: str = ""
    labels: str = ""
    shuffle: bool = True
    bin_width: int = 100
    stride: int = 1
    momentum: float = 0.9
    rho: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.optimizers = tuple(self.optimizers)
        self.tasks = tuple((str(t), int(c)) for t, c in self.tasks)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.shifts = tuple(int(s) for s in self.shifts)
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if not self.tasks:
            raise ConfigError("task schedule is empty")
        if any(c < 0 for _, c in self.tasks):
            raise ConfigError("task example counts must be non-negative")
        if not self.alpha >= 0:
            raise ConfigError("alpha must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        try:
            ActivationKind.parse(self.activation)
            if self.init not in INIT_SCHEMES:
                raise ValueError(f"init must be one of {INIT_SCHEMES}")
            for v, name in ((self.m, "m"), (self.n, "n"), (self.k, "k"),
                            (self.bin_width, "bin_width"), (self.stride, "stride")):
                if v < 1:
                    raise ValueError(f"{name} must be at least 1")
            specs = self.optimizer_specs()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.problem == "geoff":
            if self.k != 1:
                raise ConfigError("geoff has a single scalar output; k must be 1")
            if not 0.0 < self.beta < 1.0:
                raise ConfigError("beta must lie in (0, 1)")
            if not 0.0 < self.mutation <= 1.0:
                raise ConfigError("mutation must lie in (0, 1]")
            if self.target_n < 1:
                raise ConfigError("target_n must be at least 1")
        else:
            if len(self.shifts) != len(self.tasks):
                raise ConfigError(f"{len(self.shifts)} label shifts for {len(self.tasks)} tasks")
            if self.m != 784 or self.k != 10:
                raise ConfigError("mnist needs m = 784 inputs and k = 10 outputs")
            if any(s.name == "crossprop" for s in specs):
                raise ConfigError("crossprop is single-output; use crossprop_approx for mnist")

    @property
    def kind(self) -> ActivationKind:
        return ActivationKind.parse(self.activation)

    @property
    def total_examples(self) -> int:
        return sum(c for _, c in self.tasks)

    @property
    def hyper(self) -> dict:
        return {"momentum": self.momentum, "rho": self.rho, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}

    def optimizer_specs(self) -> list[OptimizerSpec]:
        specs = []
        for token in self.optimizers:
            name, _, eta = str(token).partition(":")
            name = name.strip()
            if name not in OPTIMIZERS:
                raise ValueError(f"unknown optimizer {name!r}; expected one of {OPTIMIZERS}")
            if eta:
                if name not in CROSSPROP_FAMILY:
                    raise ValueError(f"{name} takes no mixing factor")
                value = float(eta)
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"eta for {name} must lie in [0, 1]")
                specs.append(OptimizerSpec(name, value, f"{name}_eta{value:g}"))
            else:
                specs.append(OptimizerSpec(name, self.eta, name))
        labels = [s.label for s in specs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate optimizer entries in {labels}")
        if not specs:
            raise ValueError("no optimizers listed")
        return specs

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(f.name, getattr(self, f.name))}\n" for f in fields(self))


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tasks(text: str):
    out = []
    for i, part in enumerate(_split(text)):
        tid, sep, count = part.rpartition(":")
        if not sep:
            tid, count = chr(ord("A") + i) if i < 26 else f"T{i}", part
        out.append((tid.strip(), int(count)))
    return tuple(out)


_PARSERS = {
    "optimizers": lambda t: tuple(_split(t)),
    "tasks": _tasks,
    "seeds": lambda t: tuple(int(s) for s in _split(t)),
    "shifts": lambda t: tuple(int(s) for s in _split(t)),
    "shuffle": _bool,
}


def parse_value(key: str, text: str):
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    if key not in defaults:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key in _PARSERS:
            return _PARSERS[key](text)
        kind = type(defaults[key])
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def format_value(key: str, value) -> str:
    if key == "tasks":
        return ", ".join(f"{t}:{c}" for t, c in value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse the flat format into a dict of typed values (only keys present)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: {key} set twice")
        try:
            values[key] = parse_value(key, value.strip())
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return values


def config_from_values(values: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def bundled_configs() -> list[str]:
    root = resources.files("crossprop") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def read_config_values(path_or_name: str) -> dict:
    """Values from a config file, or from a bundled config given by name (e.g. ``paper-geoff``)."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text()
    elif path_or_name in bundled_configs():
        text = (resources.files("crossprop") / "configs" / f"{path_or_name}.cfg").read_text()
    else:
        raise ConfigError(f"no config file or bundled config named {path_or_name!r}")
    return parse_config_text(text, str(path_or_name))


def load_config(path_or_name: str, **overrides) -> ExperimentConfig:
    values = read_config_values(path_or_name)
    values.update(overrides)
    return config_from_values(values)
