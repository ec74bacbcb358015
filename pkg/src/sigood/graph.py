"""Graph, labeled graph and dataset value types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ID, OOD = 0, 1


class GraphError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with dense node features.

    Use :func:`build_graph` to construct a validated instance; the raw
    constructor does no checking so that broken graphs can be represented
    and reported by :func:`validate_dataset`.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    features: np.ndarray
    adjacency: np.ndarray

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def same_as(self, other: "Graph", atol: float = 0.0) -> bool:
        if self.node_count != other.node_count or self.edges != other.edges:
            return False
        if self.features.shape != other.features.shape:
            return False
        if atol == 0.0:
            return bool(np.array_equal(self.features, other.features))
        return bool(np.allclose(self.features, other.features, rtol=0.0, atol=atol))


def build_graph(node_count: int, edges: Iterable[Sequence[int]], features) -> Graph:
    """Validated :class:`Graph` from an edge list; duplicate pairs collapse."""
    node_count = int(node_count)
    if node_count < 0:
        raise GraphError(f"node_count must be >= 0, got {node_count}")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1 and X.size == 0 and node_count == 0:
        X = X.reshape(0, 0)
    if X.ndim != 2 or X.shape[0] != node_count:
        raise GraphError(f"feature rows {X.shape[0] if X.ndim else '?'} != node_count {node_count}")
    A = np.zeros((node_count, node_count), dtype=np.uint8)
    canon = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise GraphError(f"edge ({i}, {j}) endpoint out of range for {node_count} nodes")
        if i == j:
            raise GraphError(f"self-loop ({i}, {j}) not allowed")
        canon.add((min(i, j), max(i, j)))
    ordered = tuple(sorted(canon))
    for i, j in ordered:
        A[i, j] = A[j, i] = 1
    return Graph(node_count, ordered, _frozen(X), _frozen(A))


def validate_graph(g: Graph) -> list[str]:
    problems = []
    A = np.asarray(g.adjacency)
    if A.shape != (g.node_count, g.node_count):
        problems.append(f"adjacency shape {A.shape} != ({g.node_count}, {g.node_count})")
        return problems
    if np.any(np.diag(A) != 0):
        problems.append("adjacency has self-loops")
    if g.features.ndim != 2 or g.features.shape[0] != g.node_count:
        problems.append(f"feature rows {g.features.shape[0]} != node_count {g.node_count}")
    if not np.array_equal(A, A.T):
        # edge-list consistency is meaningless for an asymmetric matrix
        problems.append("adjacency not symmetric")
        return problems
    for i, j in g.edges:
        if not (0 <= i < g.node_count and 0 <= j < g.node_count):
            problems.append(f"edge ({i}, {j}) out of range")
        elif A[i, j] != 1 or A[j, i] != 1:
            problems.append(f"edge ({i}, {j}) missing from adjacency")
    if int(np.count_nonzero(np.triu(A, 1))) != len(set(map(tuple, g.edges))):
        problems.append("adjacency edge count disagrees with edge list")
    return problems


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    graph: Graph
    class_label: int = 0
    dist_label: int | None = None  # 0 = ID, 1 = OOD

    def with_dist_label(self, dist_label: int | None) -> "LabeledGraph":
        return LabeledGraph(self.graph, self.class_label, dist_label)


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[LabeledGraph, ...]
    feature_dim: int
    name: str = "dataset"

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def class_labels(self) -> np.ndarray:
        return np.array([g.class_label for g in self.graphs], dtype=np.int64)

    @property
    def dist_labels(self) -> np.ndarray | None:
        labels = [g.dist_label for g in self.graphs]
        if any(lab is None for lab in labels):
            return None
        return np.array(labels, dtype=np.int64)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        return Dataset(tuple(self.graphs[i] for i in indices), self.feature_dim, name or self.name)

    def same_as(self, other: "Dataset", atol: float = 0.0) -> bool:
        if len(self) != len(other) or self.feature_dim != other.feature_dim:
            return False
        for a, b in zip(self.graphs, other.graphs):
            if a.class_label != b.class_label or a.dist_label != b.dist_label:
                return False
            if not a.graph.same_as(b.graph, atol):
                return False
        return True


def make_dataset(graphs: Sequence[LabeledGraph], name: str = "dataset", feature_dim: int | None = None) -> Dataset:
    graphs = tuple(graphs)
    if feature_dim is None:
        feature_dim = graphs[0].graph.feature_dim if graphs else 0
    return Dataset(graphs, int(feature_dim), name)


@dataclass
class ValidationReport:
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(f"graph {i}: {msg}" for i, msg in self.violations)


def validate_dataset(ds: Dataset) -> ValidationReport:
    """Collect every invariant violation; never raises."""
    report = ValidationReport()
    for i, lg in enumerate(ds.graphs):
        for msg in validate_graph(lg.graph):
            report.violations.append((i, msg))
        if lg.graph.features.ndim == 2 and lg.graph.feature_dim != ds.feature_dim:
            report.violations.append((i, f"feature_dim {lg.graph.feature_dim} != dataset feature_dim {ds.feature_dim}"))
        if lg.class_label < 0:
            report.violations.append((i, f"negative class_label {lg.class_label}"))
        if lg.dist_label not in (None, ID, OOD):
            report.violations.append((i, f"dist_label {lg.dist_label!r} not in {{0, 1}}"))
    return report
