"""Experiment configuration: a versioned JSON document.

Schema (every section is optional; defaults shown in the dataclasses below)::

    {
      "version": 1,
      "domain": "qap" | "grover" | "toy",
      "language": "high",                      # QAP token set: low, manual, high, schedule
      "instances": {"generator": "cqap", "sizes": [12], "seeds": [0, 1]}
                   | {"qaplib": ["path/to/file.dat", ...]},
      "search": {...SearchConfig fields...},
      "training": {"steps": 200, "batch_size": 32, "lr": 0.01, "momentum": 0.9,
                   "model": {...ModelConfig fields...}},
      "discover": {"iterations": 1, "episodes": 40, "abpe_every": 10, "abpe_threshold": 10},
      "benchmark": {...}, "schedule": {...}, "grover": {...}, "report": {...},
      "seed": 0
    }
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from ..model import ModelConfig
from ..search import SearchConfig

CONFIG_VERSION = 1
DOMAINS = ("qap", "grover", "toy")
BENCHMARK_METHODS = ("clp", "sa", "bb", "fw", "2opt", "brute")


class ConfigError(ValueError):
    """The configuration is malformed or refers to something that does not exist."""


class DataError(ValueError):
    """An input file could not be parsed."""


class OutputError(RuntimeError):
    """The output directory cannot be created, resumed or trusted."""


def _build(cls, doc: dict | None, where: str):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls) if f.init}
    extra = sorted(set(doc) - known)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class InstanceSource:
    generator: str = "cqap"
    sizes: list[int] = field(default_factory=lambda: [12])
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    qaplib: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.generator not in ("cqap", "pqap"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if not self.qaplib and (not self.sizes or not self.seeds):
            raise ValueError("need sizes and seeds, or QAPLIB paths")
        if any(n < 4 for n in self.sizes):
            raise ValueError("generated instances need n >= 4")


@dataclass
class TrainingConfig:
    steps: int = 200
    batch_size: int = 32
    lr: float = 1e-2
    momentum: float = 0.9
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("steps >= 0, batch_size >= 1, lr >= 0 and momentum in [0, 1) required")

    def model_config(self) -> ModelConfig:
        return _build(ModelConfig, self.model, "training.model")


@dataclass
class DiscoverConfig:
    iterations: int = 1
    episodes: int = 40
    abpe_every: int = 10
    abpe_threshold: int = 10

    def __post_init__(self):
        if self.iterations < 1 or self.episodes < 1 or self.abpe_every < 1 or self.abpe_threshold < 1:
            raise ValueError("iterations, episodes, abpe_every and abpe_threshold must be positive")


@dataclass
class BenchmarkConfig:
    methods: list[str] = field(default_factory=lambda: ["sa", "2opt", "fw"])
    seeds: list[int] = field(default_factory=lambda: [0])
    evaluations: int | None = None
    bb_time_limit: float = 60.0
    program: str | None = None
    checkpoint: str | None = None
    vocab: str | None = None
    record_time: bool = True
    requests: list[list] = field(default_factory=list)

    def __post_init__(self):
        bad = sorted(set(self.methods) - set(BENCHMARK_METHODS))
        if bad:
            raise ValueError(f"unknown method(s) {', '.join(bad)}; expected a subset of {BENCHMARK_METHODS}")
        if self.evaluations is not None and self.evaluations < 1:
            raise ValueError("evaluations must be positive")
        if not self.bb_time_limit > 0:
            raise ValueError("bb_time_limit must be positive")


@dataclass
class ScheduleConfig:
    horizon: int = 20
    simulations: int = 200
    c_puct: float = 1.5

    def __post_init__(self):
        if self.horizon < 1 or self.simulations < 1:
            raise ValueError("horizon and simulations must be positive")


@dataclass
class GroverConfig:
    mode: str = "verify"
    sizes: list[int] = field(default_factory=lambda: [2, 3, 4, 5, 6])
    runs: int = 25
    tol: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("verify", "discover", "both"):
            raise ValueError(f"mode must be verify, discover or both, not {self.mode!r}")
        limit = 8 if self.mode != "verify" else 12
        if any(not 2 <= n <= limit for n in self.sizes):
            raise ValueError(f"grover sizes must lie in [2, {limit}] for mode {self.mode!r}")


@dataclass
class ReportConfig:
    rows: str | None = None


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    domain: str = "qap"
    language: str = "high"
    seed: int = 0
    instances: InstanceSource = field(default_factory=InstanceSource)
    search: SearchConfig = field(default_factory=SearchConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    discover: DiscoverConfig = field(default_factory=DiscoverConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    grover: GroverConfig = field(default_factory=GroverConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    base_dir: str = field(default=".", repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))


SECTIONS = {"instances": InstanceSource, "search": SearchConfig, "training": TrainingConfig,
            "discover": DiscoverConfig, "benchmark": BenchmarkConfig, "schedule": ScheduleConfig,
            "grover": GroverConfig, "report": ReportConfig}


def config_from_dict(doc: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    if "version" not in doc:
        raise ConfigError("configuration lacks a version field")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported configuration version {doc['version']!r}; expected {CONFIG_VERSION}")
    extra = sorted(set(doc) - set(SECTIONS) - {"version", "domain", "language", "seed"})
    if extra:
        raise ConfigError(f"unknown top-level field(s) {', '.join(extra)}")
    kw: dict[str, Any] = {name: _build(cls, doc.get(name), name) for name, cls in SECTIONS.items()}
    cfg = ExperimentConfig(version=CONFIG_VERSION, domain=doc.get("domain", "qap"),
                           language=doc.get("language", "high"), seed=doc.get("seed", 0),
                           base_dir=base_dir, **kw)
    if cfg.domain not in DOMAINS:
        raise ConfigError(f"unknown domain {cfg.domain!r}; expected one of {DOMAINS}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed must be an integer")
    from ..qap.domain import LANGUAGES
    if cfg.domain == "qap" and cfg.language not in LANGUAGES:
        raise ConfigError(f"unknown QAP language {cfg.language!r}; expected one of {sorted(LANGUAGES)}")
    cfg.training.model_config()
    for p in cfg.instances.qaplib:
        if not os.path.exists(cfg.path(p)):
            raise ConfigError(f"instances.qaplib: {p} does not exist")
    for name in ("checkpoint", "vocab"):
        p = getattr(cfg.benchmark, name)
        if p is not None and not os.path.exists(cfg.path(p)):
            raise ConfigError(f"benchmark.{name}: {p} does not exist")
    if cfg.report.rows is not None and not os.path.exists(cfg.path(cfg.report.rows)):
        raise ConfigError(f"report.rows: {cfg.report.rows} does not exist")
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def default_config(**overrides) -> ExperimentConfig:
    doc = {"version": CONFIG_VERSION, **overrides}
    return config_from_dict(doc)
