from pathlib import Path

import numpy as np
import pytest

from sigood.data import SynthSpec, concat_datasets, synth_dataset


def write_fixture(directory: Path, name: str, files: dict[str, str]) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for suffix, text in files.items():
        (directory / f"{name}_{suffix}.txt").write_text(text)
    return directory


# triangle (nodes 1-3) and path (nodes 4-6), node labels in {0, 1}
TWO_GRAPH = {
    "A": "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n",
    "graph_indicator": "1\n1\n1\n2\n2\n2\n",
    "graph_labels": "0\n1\n",
    "node_labels": "0\n1\n0\n1\n1\n0\n",
}

# edges sit on the first/last node of every block; graph 2 is a single isolated node
BOUNDARY = {
    "A": "1, 3\n3, 1\n2, 3\n3, 2\n5, 8\n8, 5\n5, 6\n6, 5\n",
    "graph_indicator": "1\n1\n1\n2\n3\n3\n3\n3\n",
    "graph_labels": "1\n0\n1\n",
}

# same layout but edge (1, 7) joins graph 1 to graph 3
CROSSING = dict(BOUNDARY, A="1, 7\n7, 1\n2, 3\n3, 2\n")

# node labels and real attributes together
DUAL = {
    "A": "1, 2\n2, 1\n3, 4\n4, 3\n4, 5\n5, 4\n",
    "graph_indicator": "1\n1\n2\n2\n2\n",
    "graph_labels": "2\n0\n",
    "node_labels": "0\n2\n1\n0\n2\n",
    "node_attributes": "0.5, -1.25\n3.125, 2\n-0.001, 7.5\n1e-3, 0\n4.2, -3.3\n",
}


@pytest.fixture
def tu_dir(tmp_path):
    write_fixture(tmp_path, "TWO", TWO_GRAPH)
    write_fixture(tmp_path, "BOUND", BOUNDARY)
    write_fixture(tmp_path, "CROSS", CROSSING)
    write_fixture(tmp_path, "DUAL", DUAL)
    return tmp_path


def separable_dataset(n_per_class=40, dim=4, mu=1.0, seed=1):
    """Two classes with feature means -mu and +mu: linearly separable after mean pooling."""
    a = synth_dataset(SynthSpec(n_graphs=n_per_class, feature_mean=(-mu,) * dim, seed=seed, class_label=0))
    b = synth_dataset(SynthSpec(n_graphs=n_per_class, feature_mean=(mu,) * dim, seed=seed + 1, class_label=1))
    return concat_datasets([a, b], "separable")


@pytest.fixture(scope="session")
def small_model():
    from sigood.gnn import PretrainConfig, pretrain

    return pretrain(separable_dataset(20, 4), PretrainConfig(epochs=30, hidden_dim=8, seed=0))


@pytest.fixture(scope="session")
def small_test_set():
    from sigood.data import mix_test_set

    id_ds = synth_dataset(SynthSpec(n_graphs=6, nodes_min=4, nodes_max=8, feature_mean=(0.0,) * 4, seed=11))
    ood_ds = synth_dataset(SynthSpec(n_graphs=6, nodes_min=4, nodes_max=8, feature_mean=(2.0,) * 4, seed=12))
    return mix_test_set(id_ds, ood_ds, 0)


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
