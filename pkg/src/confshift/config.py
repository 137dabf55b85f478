"""Versioned YAML run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .analysis import DEFAULT_ETA_GRID, DEFAULT_UPSILON_GRID
from .optimizer import OptimizerOptions
from .scm import ParameterError, ScmParams, canonical_params, random_params, toy_params

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    instance: str = "toy"  # toy | canonical | random | custom
    gamma: float | None = None
    d: int = 5
    k: int = 2
    r: int = 2
    params: dict | None = None

    def build(self, seed: int) -> ScmParams:
        if self.instance == "toy":
            return toy_params(1.0 if self.gamma is None else self.gamma)
        if self.instance == "canonical":
            p = canonical_params()
        elif self.instance == "random":
            p = random_params(self.d, self.k, self.r, seed)
        elif self.instance == "custom":
            if self.params is None:
                raise ConfigError("model.params is required for a custom instance")
            allowed = {f.name for f in dataclasses.fields(ScmParams)} - {"tol"}
            unknown = set(self.params) - allowed
            if unknown:
                raise ConfigError(f"unknown key(s) in model.params: {sorted(unknown)}")
            try:
                p = ScmParams(**self.params)
            except (ParameterError, TypeError) as exc:
                raise ConfigError(f"model.params: {exc}") from exc
        else:
            raise ConfigError(f"model.instance must be toy, canonical, random or custom, got {self.instance!r}")
        if self.gamma is not None:
            p = p.replace(gamma=np.full(p.r, float(self.gamma)))
        return p


@dataclass(frozen=True)
class SimulateSection:
    mode: str = "population"  # population | sampled
    n: int = 100_000


@dataclass(frozen=True)
class DataSection:
    recipe: str | None = None
    data_dir: str = "."
    standardize: str = "none"  # none | source_stats
    standardize_response: bool = False
    append_constant: bool = False
    features: list | None = None
    response_transform: str | None = None


@dataclass(frozen=True)
class MomentsSection:
    source: str | None = None
    target: str | None = None
    eval_target: str | None = None


@dataclass(frozen=True)
class FitSection:
    ell: int | None = None
    upsilon: float = 0.1
    eta: float = 0.0
    init: str = "random"


@dataclass(frozen=True)
class SweepSection:
    ell: int | None = None
    upsilon_grid: list = field(default_factory=lambda: [float(u) for u in DEFAULT_UPSILON_GRID])
    eta_grid: list = field(default_factory=lambda: [float(e) for e in DEFAULT_ETA_GRID])
    workers: int | None = None


@dataclass(frozen=True)
class VerifySection:
    n_instances: int = 20
    n_betas: int = 10
    upsilon: float = 0.1
    eta_grid: list = field(default_factory=lambda: [1e1, 1e2, 1e3, 1e4])
    epsilons: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    delta_floor: float = 0.05
    n_starts: int = 4
    perturb_scale: float = 0.0


@dataclass(frozen=True)
class ReportSection:
    inputs: list = field(default_factory=list)


_SECTIONS = {
    "model": ModelSection,
    "simulate": SimulateSection,
    "data": DataSection,
    "moments": MomentsSection,
    "fit": FitSection,
    "sweep": SweepSection,
    "verify": VerifySection,
    "report": ReportSection,
    "optimizer": OptimizerOptions,
}


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    model: ModelSection = ModelSection()
    simulate: SimulateSection = SimulateSection()
    data: DataSection = DataSection()
    moments: MomentsSection = MomentsSection()
    fit: FitSection = FitSection()
    sweep: SweepSection = SweepSection()
    verify: VerifySection = VerifySection()
    report: ReportSection = ReportSection()
    optimizer: OptimizerOptions = OptimizerOptions()

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _build_section(name: str, cls, data) -> object:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _validate(cfg: RunConfig) -> None:
    if cfg.simulate.mode not in ("population", "sampled"):
        raise ConfigError(f"simulate.mode must be population or sampled, got {cfg.simulate.mode!r}")
    if cfg.simulate.n < 1:
        raise ConfigError("simulate.n must be >= 1")
    if cfg.data.standardize not in ("none", "source_stats"):
        raise ConfigError(f"data.standardize must be none or source_stats, got {cfg.data.standardize!r}")
    if cfg.fit.upsilon <= 0:
        raise ConfigError("fit.upsilon must be positive")
    if cfg.fit.eta < 0:
        raise ConfigError("fit.eta must be nonnegative")
    if cfg.fit.init not in ("random", "identity"):
        raise ConfigError(f"fit.init must be random or identity, got {cfg.fit.init!r}")
    for ell_name, ell in (("fit.ell", cfg.fit.ell), ("sweep.ell", cfg.sweep.ell)):
        if ell is not None and ell < 1:
            raise ConfigError(f"{ell_name} must be >= 1")
    if not cfg.sweep.upsilon_grid or any(float(u) <= 0 for u in cfg.sweep.upsilon_grid):
        raise ConfigError("sweep.upsilon_grid must be a non-empty list of positive numbers")
    if not cfg.sweep.eta_grid or any(float(e) < 0 for e in cfg.sweep.eta_grid):
        raise ConfigError("sweep.eta_grid must be a non-empty list of nonnegative numbers")
    v = cfg.verify
    if v.n_instances < 1 or v.n_betas < 1 or v.n_starts < 1:
        raise ConfigError("verify counts must be >= 1")
    if v.upsilon <= 0 or any(float(e) <= 0 for e in v.eta_grid) or any(float(e) <= 0 for e in v.epsilons):
        raise ConfigError("verify.upsilon, eta_grid and epsilons must be positive")
    if not 0 < v.delta_floor < 1:
        raise ConfigError("verify.delta_floor must lie in (0, 1)")


def config_from_dict(data: dict | None, seed: int | None = None) -> RunConfig:
    data = dict(data or {})
    version = data.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}; expected {CONFIG_VERSION}")
    allowed = set(_SECTIONS) | {"seed"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    sections = {name: _build_section(name, cls, data.get(name)) for name, cls in _SECTIONS.items()}
    cfg_seed = int(data.get("seed", 0)) if seed is None else int(seed)
    cfg = RunConfig(version=CONFIG_VERSION, seed=cfg_seed, **sections)
    _validate(cfg)
    return cfg


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, seed)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data, seed)
