"""Run configuration: nested dataclasses, strict JSON loading and scale presets.

Precedence is command-line flags over the config file over the scale preset over the
dataclass defaults. The defaults are the full published hyperparameters; the ``desk``
preset shrinks budgets so a run fits on a laptop CPU.
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .adaptive import BaselineConfig, LoopConfig
from .errors import ConfigError
from .surrogate import FnoConfig
from .vfmodel import VfConfig

PROBLEMS = ("darcy1d", "darcy2d", "ns2d")
METHODS = ("ours", "pcn", "uki-fdm", "uki-fno", "svgd-fno")
ROSENBROCK_METHODS = ("vf", "vae", "mcmc", "svgd", "uki")


@dataclass(frozen=True)
class PretrainConfig:
    dataset_size: int = 2000
    epochs: int = 1000
    batch: int = 25
    lr: float = 1e-3
    halve_every: int = 50


@dataclass(frozen=True)
class PcnConfig:
    iters: int = 5000
    beta: float = 0.1
    burn: float = 0.2
    thin: int = 10


@dataclass(frozen=True)
class UkiConfig:
    iters: int = 50
    alpha: float = 0.5
    sigma_nu_factor: float = 2.0


@dataclass(frozen=True)
class RosenbrockConfig:
    method: str = "vf"
    samples: int = 20000
    train_samples: int = 100000
    batch: int = 10000
    epochs: int = 20000
    lr: float = 1e-3
    mcmc_walkers: int = 1000
    mcmc_burn: int = 50000
    mcmc_steps: int = 10000
    svgd_particles: int = 20000
    svgd_iters: int = 10000
    uki_iters: int = 500
    coverage_radius: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    problem: str = "darcy1d"
    method: str = "ours"
    d: int = 32
    delta: float = 0.01
    seed: int = 0
    scale: str = "desk"
    grid: int | None = None
    surrogate_grid: int | None = None
    output_dir: str = "runs/default"
    pretrained: str | None = None
    threads: int = 0
    fno: FnoConfig | None = None
    vf: VfConfig = field(default_factory=VfConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    pcn: PcnConfig = field(default_factory=PcnConfig)
    uki: UkiConfig = field(default_factory=UkiConfig)
    rosenbrock: RosenbrockConfig = field(default_factory=RosenbrockConfig)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.scale not in ("desk", "paper"):
            raise ConfigError("scale must be 'desk' or 'paper'")
        if self.rosenbrock.method not in ROSENBROCK_METHODS:
            raise ConfigError(f"unknown rosenbrock method {self.rosenbrock.method!r}")


DESK_SURROGATE_GRID = {"darcy1d": 128, "darcy2d": 36, "ns2d": 64}
DESK_FNO = {"darcy1d": {"width": 32, "modes": 16, "proj_hidden": 64},
            "darcy2d": {"width": 16, "modes": 8, "proj_hidden": 32},
            "ns2d": {"width": 16, "modes": 8, "proj_hidden": 32}}
DESK_PRESET = {
    "pretrain": {"dataset_size": 1000, "epochs": 20, "halve_every": 7},
    "loop": {"k_max": 12, "fno_epochs": 10, "fno_halve_every": 3},
    "baseline": {"stages": 12},
    "rosenbrock": {"train_samples": 2000, "batch": 500, "epochs": 2000, "mcmc_walkers": 400,
                   "mcmc_burn": 20000, "mcmc_steps": 500, "svgd_particles": 2000,
                   "svgd_iters": 2000},
}


def scale_preset(scale: str, problem: str) -> dict:
    if scale == "paper":
        return {}
    preset = json.loads(json.dumps(DESK_PRESET))
    preset["surrogate_grid"] = DESK_SURROGATE_GRID[problem]
    preset["fno"] = dict(DESK_FNO[problem])
    return preset


def merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def _unwrap_optional(tp):
    """``X | None`` -> ``X``; anything else unchanged."""
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting keys it does not define."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(path + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = _unwrap_optional(hints[name])
        if dataclasses.is_dataclass(tp) and value is not None:
            kwargs[name] = from_dict(tp, value, f"{path}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config for {path or cls.__name__}: {exc}") from exc


def to_dict(config) -> dict:
    return dataclasses.asdict(config)


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Apply preset, file and flag layers; the result round-trips through to_dict."""
    layered = merge(file_values or {}, overrides or {})
    probe = from_dict(RunConfig, {k: v for k, v in layered.items()
                                  if k in ("problem", "scale", "method")})
    merged = merge(scale_preset(probe.scale, probe.problem), layered)
    cfg = from_dict(RunConfig, merged)
    if cfg.fno is None:
        ndim = 1 if cfg.problem == "darcy1d" else 2
        cfg = dataclasses.replace(cfg, fno=FnoConfig.for_dim(ndim))
    return cfg


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def parse_assignment(text: str) -> dict:
    """``loop.k_max=5`` -> {"loop": {"k_max": 5}}; values are parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out
