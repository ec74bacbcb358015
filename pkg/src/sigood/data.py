"""TU-format I/O, synthetic ID/OOD graph families and test-set construction.

TU flat files (``<NAME>_A.txt`` etc.) use 1-based node and graph ids on
disk; everything in memory is 0-based.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import ID, OOD, Dataset, GraphError, LabeledGraph, build_graph

log = logging.getLogger(__name__)

FAMILIES = ("er-feature-shift", "motif-shift", "density-shift")
MOTIFS = ("triangle", "star", "none")

# Not part of the public TU format: stores ID/OOD labels of mixed test sets.
DIST_LABEL_SUFFIX = "graph_dist_labels"


class TUFormatError(ValueError):
    pass


# -- TU parsing -----------------------------------------------------------------


def _read_int_lines(path: Path) -> list[list[int]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = []
            for tok in line.split(","):
                tok = tok.strip()
                try:
                    row.append(int(tok))
                except ValueError:
                    raise TUFormatError(f"{path.name}:{lineno}: non-integer token {tok!r}") from None
            rows.append(row)
    return rows


def _read_single_ints(path: Path) -> np.ndarray:
    rows = _read_int_lines(path)
    for lineno, row in enumerate(rows, 1):
        if len(row) != 1:
            raise TUFormatError(f"{path.name}: expected one integer per line, got {len(row)} on entry {lineno}")
    return np.array([r[0] for r in rows], dtype=np.int64)


def _read_real_rows(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(t) for t in line.split(",")])
            except ValueError:
                raise TUFormatError(f"{path.name}:{lineno}: non-numeric token in {line!r}") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise TUFormatError(f"{path.name}: ragged attribute rows (widths {sorted(widths)})")
    return np.array(rows, dtype=np.float64)


def parse_tu_dataset(directory, name: str) -> Dataset:
    """Load ``<name>_*.txt`` files from ``directory`` into a :class:`Dataset`.

    Node labels are one-hot encoded (width ``max - min + 1``); node
    attributes are appended after the one-hot block.  With neither file the
    features are a single constant column of ones.  Graph labels are kept
    as-is when non-negative, otherwise remapped to their rank.
    """
    d = Path(directory)

    def f(suffix):
        return d / f"{name}_{suffix}.txt"

    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not f(suffix).is_file():
            raise FileNotFoundError(f"missing mandatory TU file: {f(suffix)}")

    indicator = _read_single_ints(f("graph_indicator"))
    n_nodes = indicator.size
    if n_nodes == 0:
        raise TUFormatError(f"{name}: graph_indicator is empty")
    if indicator.min() < 1:
        raise TUFormatError(f"{name}: graph ids must be >= 1")

    # each graph must own one contiguous block of node ids
    starts: dict[int, int] = {}
    ends: dict[int, int] = {}
    prev = None
    for k, gid in enumerate(indicator.tolist()):
        if gid != prev:
            if gid in starts:
                raise TUFormatError(
                    f"{name}: node {k + 1} assigned to graph {gid}, whose nodes already ended at node "
                    f"{ends[gid] + 1}; a node block cannot belong to two separate graph segments"
                )
            starts[gid] = k
            prev = gid
        ends[gid] = k
    n_graphs = int(indicator.max())
    missing = sorted(set(range(1, n_graphs + 1)) - set(starts))
    if missing:
        raise TUFormatError(f"{name}: graphs without nodes: {missing[:5]}")

    graph_labels = _read_single_ints(f("graph_labels"))
    if graph_labels.size != n_graphs:
        raise TUFormatError(f"{name}: {graph_labels.size} graph labels for {n_graphs} graphs")
    if graph_labels.min() < 0:
        graph_labels = np.searchsorted(np.unique(graph_labels), graph_labels)

    blocks = []
    if f("node_labels").is_file():
        nl = _read_single_ints(f("node_labels"))
        if nl.size != n_nodes:
            raise TUFormatError(f"{name}: {nl.size} node labels for {n_nodes} nodes")
        lo = int(nl.min())
        onehot = np.zeros((n_nodes, int(nl.max()) - lo + 1))
        onehot[np.arange(n_nodes), nl - lo] = 1.0
        blocks.append(onehot)
    if f("node_attributes").is_file():
        attrs = _read_real_rows(f("node_attributes"))
        if attrs.shape[0] != n_nodes:
            raise TUFormatError(f"{name}: {attrs.shape[0]} attribute rows for {n_nodes} nodes")
        blocks.append(attrs)
    X = np.hstack(blocks) if blocks else np.ones((n_nodes, 1))

    edges_by_graph: dict[int, set[tuple[int, int]]] = {g: set() for g in starts}
    self_loops = 0
    for lineno, row in enumerate(_read_int_lines(f("A")), 1):
        if len(row) != 2:
            raise TUFormatError(f"{name}_A.txt entry {lineno}: expected 'i, j', got {row}")
        i, j = row
        if not (1 <= i <= n_nodes and 1 <= j <= n_nodes):
            raise TUFormatError(f"{name}_A.txt entry {lineno}: node id out of range in ({i}, {j})")
        gi, gj = indicator[i - 1], indicator[j - 1]
        if gi != gj:
            raise TUFormatError(f"{name}: edge crossing graph boundary: ({i}, {j}) joins graphs {gi} and {gj}")
        if i == j:
            self_loops += 1
            continue
        off = starts[int(gi)]
        a, b = i - 1 - off, j - 1 - off
        edges_by_graph[int(gi)].add((min(a, b), max(a, b)))
    if self_loops:
        log.warning("%s: dropped %d self-loop entries", name, self_loops)

    dist = None
    if f(DIST_LABEL_SUFFIX).is_file():
        dist = _read_single_ints(f(DIST_LABEL_SUFFIX))
        if dist.size != n_graphs:
            raise TUFormatError(f"{name}: {dist.size} dist labels for {n_graphs} graphs")
        if not np.all(np.isin(dist, (-1, ID, OOD))):
            raise TUFormatError(f"{name}: dist labels must be -1, 0 or 1")

    graphs = []
    for gid in range(1, n_graphs + 1):
        s, e = starts[gid], ends[gid] + 1
        g = build_graph(e - s, sorted(edges_by_graph[gid]), X[s:e])
        dl = None if dist is None or dist[gid - 1] < 0 else int(dist[gid - 1])
        graphs.append(LabeledGraph(g, int(graph_labels[gid - 1]), dl))
    return Dataset(tuple(graphs), X.shape[1], name)


def write_tu_dataset(ds: Dataset, directory, name: str | None = None) -> Path:
    """Write ``ds`` as TU files; reals use 9 significant digits."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    name = name or ds.name
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    a_lines, ind_lines, attr_lines = [], [], []
    offset = 0
    for gid, lg in enumerate(ds.graphs, 1):
        g = lg.graph
        if g.node_count == 0:
            raise ValueError(f"graph {gid - 1} has no nodes; TU format cannot represent it")
        pairs = sorted({(i, j) for i, j in g.edges} | {(j, i) for i, j in g.edges})
        a_lines.extend(f"{i + 1 + offset}, {j + 1 + offset}" for i, j in pairs)
        ind_lines.extend([str(gid)] * g.node_count)
        attr_lines.extend(", ".join(f"{v:.9g}" for v in row) for row in g.features)
        offset += g.node_count

    def put(suffix, lines):
        (d / f"{name}_{suffix}.txt").write_text("".join(line + "\n" for line in lines))

    put("A", a_lines)
    put("graph_indicator", ind_lines)
    put("graph_labels", [str(lg.class_label) for lg in ds.graphs])
    put("node_attributes", attr_lines)
    if any(lg.dist_label is not None for lg in ds.graphs):
        put(DIST_LABEL_SUFFIX, ["-1" if lg.dist_label is None else str(lg.dist_label) for lg in ds.graphs])
    return d


# -- synthetic families -----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    family: str = "er-feature-shift"
    n_graphs: int = 100
    nodes_min: int = 10
    nodes_max: int = 20
    edge_prob: float = 0.2
    feature_mean: tuple[float, ...] = field(default_factory=lambda: (0.0,) * 8)
    feature_std: float = 1.0
    motif: str = "none"
    seed: int = 0
    class_label: int = 0
    name: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "feature_mean", tuple(float(v) for v in self.feature_mean))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.motif not in MOTIFS:
            raise ValueError(f"unknown motif {self.motif!r}; expected one of {MOTIFS}")
        if not 1 <= self.nodes_min <= self.nodes_max:
            raise ValueError(f"need 1 <= nodes_min <= nodes_max, got {self.nodes_min}, {self.nodes_max}")
        if not 0.0 < self.edge_prob < 1.0:
            raise ValueError(f"edge_prob must be in (0, 1), got {self.edge_prob}")
        if self.feature_std < 0:
            raise ValueError("feature_std must be >= 0")
        if self.n_graphs < 0:
            raise ValueError("n_graphs must be >= 0")
        if not self.feature_mean:
            raise ValueError("feature_mean must have at least one entry")

    @property
    def feature_dim(self) -> int:
        return len(self.feature_mean)

    def replace(self, **changes) -> "SynthSpec":
        from dataclasses import replace

        return replace(self, **changes)


def _plant_motif(rng: np.random.Generator, n: int, motif: str, edges: set) -> None:
    if motif == "none" or n < 3:
        return
    k = min(int(rng.integers(3, 6)), n)
    nodes = rng.choice(n, size=k, replace=False)
    if motif == "triangle":
        for a in range(k):
            for b in range(a + 1, k):
                i, j = int(nodes[a]), int(nodes[b])
                edges.add((min(i, j), max(i, j)))
    else:
        c = int(nodes[0])
        for leaf in nodes[1:]:
            leaf = int(leaf)
            edges.add((min(c, leaf), max(c, leaf)))


def synth_dataset(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset drawn from ``spec``.

    All three families share the same generator: Erdos-Renyi topology with
    ``edge_prob``, Gaussian node features, and an optional planted motif
    (a clique for ``triangle``, a hub for ``star``) on 3-5 random nodes.
    The family name records which knob distinguishes an ID/OOD pair.
    """
    rng = np.random.default_rng(spec.seed)
    mean = np.asarray(spec.feature_mean)
    graphs = []
    for _ in range(spec.n_graphs):
        n = int(rng.integers(spec.nodes_min, spec.nodes_max + 1))
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < spec.edge_prob
        edges = set(zip(iu[keep].tolist(), ju[keep].tolist()))
        _plant_motif(rng, n, spec.motif, edges)
        X = mean + spec.feature_std * rng.standard_normal((n, mean.size))
        graphs.append(LabeledGraph(build_graph(n, sorted(edges), X), spec.class_label))
    return Dataset(tuple(graphs), mean.size, spec.name)


def concat_datasets(parts: Sequence[Dataset], name: str) -> Dataset:
    dims = {p.feature_dim for p in parts if len(p)}
    if len(dims) > 1:
        raise GraphError(f"cannot concatenate datasets with feature dims {sorted(dims)}")
    graphs = tuple(g for p in parts for g in p.graphs)
    return Dataset(graphs, dims.pop() if dims else 0, name)


# -- test-set construction ----------------------------------------------------------


def mix_test_set(id_ds: Dataset, ood_ds: Dataset, seed: int) -> Dataset:
    """1:1 ID/OOD mixture of size ``2 * min(|id|, |ood|)``, shuffled by ``seed``."""
    if len(id_ds) == 0 or len(ood_ds) == 0:
        raise ValueError("mix_test_set: both ID and OOD datasets must be nonempty")
    if id_ds.feature_dim != ood_ds.feature_dim:
        raise GraphError(f"feature_dim mismatch: ID {id_ds.feature_dim} vs OOD {ood_ds.feature_dim}")
    rng = np.random.default_rng(seed)
    k = min(len(id_ds), len(ood_ds))
    id_pick = np.sort(rng.permutation(len(id_ds))[:k])
    ood_pick = np.sort(rng.permutation(len(ood_ds))[:k])
    pool = [id_ds[i].with_dist_label(ID) for i in id_pick] + [ood_ds[i].with_dist_label(OOD) for i in ood_pick]
    order = rng.permutation(len(pool))
    return Dataset(tuple(pool[i] for i in order), id_ds.feature_dim, f"{id_ds.name}+{ood_ds.name}")


def train_test_split(ds: Dataset, seed: int, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Seeded split; ``floor(train_fraction * n)`` graphs go to train, order preserved."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_train = int(np.floor(train_fraction * len(ds) + 1e-9))
    return (ds.subset(sorted(perm[:n_train]), f"{ds.name}-train"),
            ds.subset(sorted(perm[n_train:]), f"{ds.name}-test"))


def anomaly_split(ds: Dataset, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Minority class becomes the anomaly (OOD) class.

    Normal graphs are split 80/20 into train (no dist label) and test
    (dist label 0); every anomaly goes to test with dist label 1.  Class
    count ties resolve to the lower class index as the anomaly.
    """
    labels = ds.class_labels
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ValueError("anomaly_split needs at least two classes")
    minority = int(classes[np.argmin(counts)])  # argmin returns the first, i.e. lowest, class on ties
    normal_idx = np.flatnonzero(labels != minority)
    anomaly_idx = np.flatnonzero(labels == minority)
    rng = np.random.default_rng(seed)
    perm = normal_idx[rng.permutation(normal_idx.size)]
    n_train = (4 * normal_idx.size) // 5
    train_idx = np.sort(perm[:n_train])
    test_normal = set(perm[n_train:].tolist())
    test_anom = set(anomaly_idx.tolist())
    train = Dataset(tuple(ds[i].with_dist_label(None) for i in train_idx), ds.feature_dim, f"{ds.name}-train")
    test_graphs = []
    for i in range(len(ds)):
        if i in test_normal:
            test_graphs.append(ds[i].with_dist_label(ID))
        elif i in test_anom:
            test_graphs.append(ds[i].with_dist_label(OOD))
    return train, Dataset(tuple(test_graphs), ds.feature_dim, f"{ds.name}-anomaly-test")
