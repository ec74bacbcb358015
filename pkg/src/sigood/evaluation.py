"""AUC, benchmark orchestration, sensitivity sweeps and score-distribution export."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import SynthSpec, anomaly_split, concat_datasets, mix_test_set, parse_tu_dataset, synth_dataset, train_test_split
from .detector import DetectionResult, DetectorConfig, run_detector
from .gnn import PretrainConfig, pretrain
from .graph import Dataset

PROTOCOLS = ("ood", "anomaly")
METHODS = {
    "sigood": "full",
    "no-epo": "no-epo",
    "no-pg": "no-pg",
    "raw-energy": "no-pg",
}
SYNTH_BENCHMARKS = ("er-feature-shift", "motif-shift", "density-shift")

# published AUCs (%) for context only; the desk-scale benchmark does not reproduce them
REFERENCE_OOD = (
    ("BZR/COX2", 87.36), ("PTC-MR/MUTAG", 85.70), ("AIDS/DHFR", 97.38), ("ENZYMES/PROTEIN", 67.88),
    ("Tox21/SIDER", 69.97), ("FreeSolv/ToxCast", 68.89), ("ClinTox/LIPO", 71.33), ("Esol/MUV", 87.72),
)
REFERENCE_ANOMALY = (
    ("PROTEINS-full", 79.54), ("ENZYMES", 76.80), ("DHFR", 65.17), ("BZR", 75.42), ("COX2", 77.78),
    ("DD", 72.59), ("NCI1", 59.07), ("IMDB-B", 68.96), ("REDDIT-B", 86.64), ("HSE", 64.68),
    ("MMP", 70.17), ("p53", 60.51), ("PPAR-gamma", 72.59),
)
REFERENCE_NOTE = "published, not reproduced at desk scale"


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties; label 1 is the positive (OOD) class."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise ValueError(f"auc: {s.size} scores for {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("auc: labels must be 0/1")
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc: both classes must be present")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- benchmark pairs -----------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkData:
    name: str
    train: Dataset
    test: Dataset


def synth_pair(family: str, seed: int, feature_dim: int = 8, per_class: int = 125,
               n_ood: int = 50) -> BenchmarkData:
    """Two-class ID set and a shifted OOD set for one synthetic family.

    The ID classes differ in edge density so the classifier has something to
    learn.  ``er-feature-shift`` moves the OOD feature mean from 0 to 3,
    ``motif-shift`` swaps the planted triangle for a star, ``density-shift``
    draws OOD graphs much denser than either ID class.  The ID set is split
    80/20; the test half is mixed 1:1 with OOD graphs.
    """
    if family not in SYNTH_BENCHMARKS:
        raise ValueError(f"unknown synthetic benchmark {family!r}; choose from {SYNTH_BENCHMARKS}")
    zero = (0.0,) * feature_dim
    base = SynthSpec(family=family, n_graphs=per_class, feature_mean=zero)
    motif = "triangle" if family == "motif-shift" else "none"
    id_specs = [
        base.replace(edge_prob=0.2, motif=motif, seed=1000 + seed, class_label=0, name="id0"),
        base.replace(edge_prob=0.5, motif=motif, seed=2000 + seed, class_label=1, name="id1"),
    ]
    ood_spec = base.replace(n_graphs=n_ood, edge_prob=0.35, seed=3000 + seed, name="ood")
    if family == "er-feature-shift":
        ood_spec = ood_spec.replace(feature_mean=(3.0,) * feature_dim)
    elif family == "motif-shift":
        ood_spec = ood_spec.replace(motif="star")
    else:
        ood_spec = ood_spec.replace(edge_prob=0.8)
    id_ds = concat_datasets([synth_dataset(s) for s in id_specs], f"{family}-id")
    train, id_test = train_test_split(id_ds, seed)
    test = mix_test_set(id_test, synth_dataset(ood_spec), seed)
    return BenchmarkData(family, train, test)


def synth_anomaly(seed: int, feature_dim: int = 8, normal: int = 200, anomalous: int = 40) -> BenchmarkData:
    """Majority class of sparse graphs plus a minority class with planted stars."""
    zero = (0.0,) * feature_dim
    base = SynthSpec(family="motif-shift", feature_mean=zero, edge_prob=0.25)
    ds = concat_datasets([
        synth_dataset(base.replace(n_graphs=normal, seed=4000 + seed, class_label=0)),
        synth_dataset(base.replace(n_graphs=anomalous, motif="star", seed=5000 + seed, class_label=1)),
    ], "synth-anomaly")
    train, test = anomaly_split(ds, seed)
    return BenchmarkData("synth-anomaly", train, test)


def tu_pair(id_dir, id_name: str, ood_dir, ood_name: str, seed: int) -> BenchmarkData:
    try:
        id_ds = parse_tu_dataset(id_dir, id_name)
        ood_ds = parse_tu_dataset(ood_dir, ood_name)
    except (OSError, ValueError) as exc:
        raise type(exc)(f"loading {id_name}/{ood_name}: {exc}") from exc
    train, id_test = train_test_split(id_ds, seed)
    return BenchmarkData(f"{id_name}/{ood_name}", train, mix_test_set(id_test, ood_ds, seed))


def tu_anomaly(directory, name: str, seed: int) -> BenchmarkData:
    try:
        ds = parse_tu_dataset(directory, name)
    except (OSError, ValueError) as exc:
        raise type(exc)(f"loading {name}: {exc}") from exc
    train, test = anomaly_split(ds, seed)
    return BenchmarkData(name, train, test)


# -- benchmark runs --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetEntry:
    """One benchmark dataset: a synthetic family, or TU directories/names."""

    name: str
    protocol: str = "ood"
    id_dir: str | None = None
    ood_dir: str | None = None
    ood_name: str | None = None

    def load(self, seed: int) -> BenchmarkData:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.id_dir is None:
            if self.protocol == "anomaly":
                if self.name != "synth-anomaly":
                    raise ValueError(f"unknown synthetic anomaly benchmark {self.name!r}")
                return synth_anomaly(seed)
            return synth_pair(self.name, seed)
        if self.protocol == "anomaly":
            return tu_anomaly(self.id_dir, self.name, seed)
        if self.ood_name is None:
            raise ValueError(f"dataset {self.name!r}: OOD protocol needs ood_name")
        return tu_pair(self.id_dir, self.name, self.ood_dir or self.id_dir, self.ood_name, seed)


@dataclass(frozen=True)
class BenchmarkConfig:
    datasets: tuple[DatasetEntry, ...] = (DatasetEntry("er-feature-shift"),)
    methods: tuple[str, ...] = ("sigood", "raw-energy")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    timing: bool = False

    def __post_init__(self):
        if not self.methods:
            raise ValueError("benchmark needs at least one method")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        if not self.seeds:
            raise ValueError("benchmark needs at least one seed")
        if not self.datasets:
            raise ValueError("benchmark needs at least one dataset")


@dataclass(frozen=True)
class BenchmarkRow:
    dataset: str
    method: str
    seed: int
    auc: float
    runtime_s: float | None = None


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    method: str
    n_seeds: int
    mean_auc: float
    std_auc: float

    @property
    def mean_auc_flipped(self) -> float:
        return 1.0 - self.mean_auc


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def aggregate(self) -> list[AggregateRow]:
        """Mean and population std of AUC over seeds, per (dataset, method), in first-seen order."""
        groups: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            groups.setdefault((r.dataset, r.method), []).append(r.auc)
        return [AggregateRow(d, m, len(v), float(np.mean(v)), float(np.std(v))) for (d, m), v in groups.items()]

    def mean_auc(self, dataset: str, method: str) -> float:
        for a in self.aggregate():
            if a.dataset == dataset and a.method == method:
                return a.mean_auc
        raise KeyError(f"no rows for {dataset}/{method}")

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "method", "seed", "auc", "runtime_s"])
            for r in self.rows:
                rt = "" if r.runtime_s is None else f"{r.runtime_s:.3f}"
                w.writerow([r.dataset, r.method, r.seed, repr(r.auc), rt])

    def write_aggregate_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "method", "n_seeds", "mean_auc", "std_auc", "mean_auc_flipped"])
            for a in self.aggregate():
                w.writerow([a.dataset, a.method, a.n_seeds, repr(a.mean_auc), repr(a.std_auc),
                            repr(a.mean_auc_flipped)])


def write_reference_csv(path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["protocol", "dataset", "auc_percent", "note"])
        for name, v in REFERENCE_OOD:
            w.writerow(["ood", name, f"{v:.2f}", REFERENCE_NOTE])
        for name, v in REFERENCE_ANOMALY:
            w.writerow(["anomaly", name, f"{v:.2f}", REFERENCE_NOTE])


def score_method(data: BenchmarkData, model, method: str, detector: DetectorConfig) -> list[DetectionResult]:
    cfg = detector.replace(ablation=METHODS[method])
    return run_detector(data.test, model, cfg)[0]


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Pretrain on each ID train split, score every method on the test split, collect AUCs.

    Runtimes are only recorded when ``config.timing`` is set, so that
    reports are byte-reproducible by default.
    """
    report = BenchmarkReport()
    for entry in config.datasets:
        for seed in config.seeds:
            data = entry.load(seed)
            model = pretrain(data.train, replace(config.pretrain, seed=seed))
            labels = data.test.dist_labels
            for method in config.methods:
                t0 = time.perf_counter()
                results = score_method(data, model, method, config.detector.replace(seed=seed))
                elapsed = time.perf_counter() - t0 if config.timing else None
                a = auc([r.score for r in results], labels)
                report.rows.append(BenchmarkRow(data.name, method, seed, a, elapsed))
    return report


# -- sensitivity -------------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    index: int
    knob: str
    value: float
    dataset: str
    seed: int
    auc: float


def sensitivity_sweep(data: BenchmarkData, model, base: DetectorConfig = DetectorConfig(),
                      betas: Sequence[float] = (1, 10, 80, 200),
                      iterations: Sequence[int] = (50, 200, 500),
                      depths: Sequence[int] = ()) -> list[SweepRow]:
    """Full-method AUC while varying one knob at a time; rows are indexed 0, 1, 2, ..."""
    plan = [("beta", float(b), {"beta": float(b)}) for b in betas]
    plan += [("iterations", float(n), {"iterations": int(n)}) for n in iterations]
    plan += [("pg_depth", float(k), {"pg_depth": int(k)}) for k in depths]
    labels = data.test.dist_labels
    rows = []
    for i, (knob, value, change) in enumerate(plan):
        results = run_detector(data.test, model, base.replace(ablation="full", **change))[0]
        rows.append(SweepRow(i, knob, value, data.name, base.seed, auc([r.score for r in results], labels)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "knob", "value", "dataset", "seed", "auc"])
        for r in rows:
            w.writerow([r.index, r.knob, repr(r.value), r.dataset, r.seed, repr(r.auc)])


# -- score distributions -------------------------------------------------------------------------


def export_score_distribution(results: Sequence[DetectionResult], normalize: bool = True) -> list[tuple]:
    """``(graph_id, score, label)`` rows; min-max scaled to [0, 1] when ``normalize``.

    A constant score vector maps to 0.5 everywhere.
    """
    if not results:
        raise ValueError("export_score_distribution: no results")
    s = np.array([r.score for r in results], dtype=np.float64)
    if normalize:
        lo, hi = s.min(), s.max()
        s = np.full_like(s, 0.5) if hi == lo else (s - lo) / (hi - lo)
    return [(r.graph_id, float(v), r.label) for r, v in zip(results, s)]


def write_score_distribution(rows: Sequence[tuple], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["graph_id", "score", "label"])
        for gid, v, label in rows:
            w.writerow([gid, repr(v), "" if label is None else label])
