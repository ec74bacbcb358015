"""Run configuration: a YAML document mirroring the library's config dataclasses.

Every section is optional and every key has the default of the matching
dataclass.  Unknown keys anywhere are rejected.  Example::

    seed: 0
    synth:      {family: er-feature-shift, n_graphs: 100, feature_mean: [0, 0, 0, 0, 0, 0, 0, 0]}
    pretrain:   {epochs: 200, lr: 0.01}
    detector:   {beta: 80, iterations: 500, lr: 0.001, mode: transductive}
    benchmark:
      datasets: [{name: er-feature-shift}, {name: synth-anomaly, protocol: anomaly}]
      methods: [sigood, raw-energy]
      seeds: [0, 1, 2, 3, 4]
    paths:      {output_dir: out}
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data import SynthSpec
from .detector import DetectorConfig
from .evaluation import BenchmarkConfig, DatasetEntry
from .gnn import PretrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    data_dir: str | None = None
    dataset: str | None = None
    checkpoint: str | None = None
    scores: str | None = None
    trace: str | None = None
    output_dir: str | None = None


@dataclass(frozen=True)
class BenchmarkSection:
    datasets: tuple[DatasetEntry, ...] = (DatasetEntry("er-feature-shift"),)
    methods: tuple[str, ...] = ("sigood", "raw-energy")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    paths: Paths = field(default_factory=Paths)

    def seeded(self) -> "RunConfig":
        """Push the top-level seed (when set) into every seeded section."""
        if self.seed is None:
            return self
        s = int(self.seed)
        return replace(self, synth=self.synth.replace(seed=s), pretrain=replace(self.pretrain, seed=s),
                       detector=self.detector.replace(seed=s))

    def benchmark_config(self) -> BenchmarkConfig:
        b = self.benchmark
        seeds = b.seeds if self.seed is None else (int(self.seed),)
        return BenchmarkConfig(b.datasets, b.methods, seeds, self.detector, self.pretrain, b.timing)


def _build(cls, doc, where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(doc).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in doc.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    bench = doc.get("benchmark") or {}
    if not isinstance(bench, dict):
        raise ConfigError("benchmark: expected a mapping")
    if "datasets" in bench:
        bench = dict(bench)
        bench["datasets"] = [_build(DatasetEntry, d, f"benchmark.datasets[{i}]")
                             for i, d in enumerate(bench["datasets"] or [])]
    seed = doc.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(
        seed=seed,
        synth=_build(SynthSpec, doc.get("synth"), "synth"),
        pretrain=_build(PretrainConfig, doc.get("pretrain"), "pretrain"),
        detector=_build(DetectorConfig, doc.get("detector"), "detector"),
        benchmark=_build(BenchmarkSection, bench, "benchmark"),
        paths=_build(Paths, doc.get("paths"), "paths"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(doc)


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Replace the given (non-None) keys of one section; flags win over file values."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section == "root":
        return replace(cfg, **values)
    try:
        return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc
