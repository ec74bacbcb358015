"""GIN encoder, classifier and 2-logit scoring head; pretraining and checkpoints.

A GIN layer computes ``MLP((1 + eps) * h_i + sum_{j in N(i)} h_j)`` with a
two-layer ReLU MLP.  ReLU is applied between GIN layers but not after the
last one.  Everything runs on :mod:`sigood.diffmat`.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import diffmat as dm
from .energy import EPS_POS, node_energy, positive_energy, positive_energy_dv, node_energy_dv
from .graph import Dataset, Graph
from .prompt import EmbeddedGraph

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sigood-checkpoint"
CHECKPOINT_VERSION = 1
READOUTS = ("mean", "sum", "max")


@dataclass(frozen=True, eq=False)
class GinLayer:
    W_a: np.ndarray
    b_a: np.ndarray
    W_b: np.ndarray
    b_b: np.ndarray
    eps_gin: float = 0.0


@dataclass(frozen=True, eq=False)
class EncoderParams:
    layers: tuple[GinLayer, ...]

    def __post_init__(self):
        prev = None
        for k, layer in enumerate(self.layers):
            if prev is not None and layer.W_a.shape[0] != prev:
                raise dm.ShapeError(f"GIN layer {k} expects input dim {layer.W_a.shape[0]}, previous layer gives {prev}")
            prev = layer.W_b.shape[1]

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].W_a.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.layers[-1].W_b.shape[1])

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True, eq=False)
class ScoringHead:
    W_s: np.ndarray
    b_s: np.ndarray

    def __post_init__(self):
        if self.W_s.ndim != 2 or self.W_s.shape[1] != 2 or self.b_s.shape != (1, 2):
            raise dm.ShapeError(f"scoring head must map to exactly 2 logits, got W_s {self.W_s.shape}, b_s {self.b_s.shape}")


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 200
    lr: float = 1e-2
    hidden_dim: int = 32
    n_layers: int = 2
    seed: int = 0
    energy_margin: float = 1.0
    margin_weight: float = 0.1
    eps_gin: float = 0.0
    readout: str = "mean"
    head_mode: str = "trained"  # "trained" | "random"

    def __post_init__(self):
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        if self.head_mode not in ("trained", "random"):
            raise ValueError("head_mode must be 'trained' or 'random'")
        if self.epochs < 0 or self.n_layers < 1 or self.hidden_dim < 1:
            raise ValueError("epochs >= 0, n_layers >= 1 and hidden_dim >= 1 required")


@dataclass(frozen=True, eq=False)
class FrozenModel:
    """Pretrained encoder, graph classifier and scoring head; arrays are read-only."""

    encoder: EncoderParams
    classifier: np.ndarray
    scoring_head: ScoringHead
    config: dict = field(default_factory=dict)

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.encoder.layers):
            for name in ("W_a", "b_a", "W_b", "b_b"):
                out[f"encoder.{k}.{name}"] = getattr(layer, name)
            out[f"encoder.{k}.eps_gin"] = np.array([[layer.eps_gin]])
        out["classifier"] = self.classifier
        out["head.W_s"] = self.scoring_head.W_s
        out["head.b_s"] = self.scoring_head.b_s
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, a in sorted(self.arrays().items()):
            h.update(name.encode())
            h.update(repr(a.shape).encode())
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def same_as(self, other: "FrozenModel") -> bool:
        a, b = self.arrays(), other.arrays()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
        ) and self.config == other.config


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def model_from_arrays(arrays: dict[str, np.ndarray], config: dict | None = None) -> FrozenModel:
    n_layers = len({k.split(".")[1] for k in arrays if k.startswith("encoder.")})
    layers = tuple(
        GinLayer(*(_readonly(arrays[f"encoder.{k}.{n}"]) for n in ("W_a", "b_a", "W_b", "b_b")),
                 eps_gin=float(np.asarray(arrays[f"encoder.{k}.eps_gin"]).ravel()[0]))
        for k in range(n_layers)
    )
    return FrozenModel(EncoderParams(layers), _readonly(arrays["classifier"]),
                       ScoringHead(_readonly(arrays["head.W_s"]), _readonly(arrays["head.b_s"])),
                       dict(config or {}))


# -- forward passes -------------------------------------------------------------------


def adjacency_operator(graphs: Sequence[Graph]) -> sp.csr_matrix:
    """Block-diagonal sparse adjacency of the stacked graphs."""
    blocks = [sp.csr_matrix(g.adjacency.astype(np.float64)) for g in graphs]
    if len(blocks) == 1:
        return blocks[0]
    return sp.block_diag(blocks, format="csr")


def _encoder_forward(x, adj, layers: Sequence[dict]) -> dm.DiffValue:
    h = x
    for k, layer in enumerate(layers):
        agg = dm.add(dm.scale(h, 1.0 + layer["eps_gin"]), dm.matmul(adj, h))
        h = dm.linear(dm.relu(dm.linear(agg, layer["W_a"], layer["b_a"])), layer["W_b"], layer["b_b"])
        if k < len(layers) - 1:
            h = dm.relu(h)
    return h


def _layer_dicts(encoder: EncoderParams) -> list[dict]:
    return [dict(W_a=l.W_a, b_a=l.b_a, W_b=l.W_b, b_b=l.b_b, eps_gin=l.eps_gin) for l in encoder.layers]


def encode(graph: Graph, encoder: EncoderParams) -> EmbeddedGraph:
    """Node embeddings of one graph under the frozen encoder."""
    if graph.feature_dim != encoder.input_dim:
        raise dm.ShapeError(f"graph feature dim {graph.feature_dim} != encoder input dim {encoder.input_dim}")
    tape = dm.Tape()
    out = _encoder_forward(tape.constant(graph.features), adjacency_operator([graph]), _layer_dicts(encoder))
    return EmbeddedGraph(out.value, graph)


def encode_batch(graphs: Sequence[Graph], encoder: EncoderParams) -> list[EmbeddedGraph]:
    """Encode many graphs in one block-diagonal pass."""
    for g in graphs:
        if g.feature_dim != encoder.input_dim:
            raise dm.ShapeError(f"graph feature dim {g.feature_dim} != encoder input dim {encoder.input_dim}")
    tape = dm.Tape()
    X = np.vstack([g.features for g in graphs])
    H = _encoder_forward(tape.constant(X), adjacency_operator(graphs), _layer_dicts(encoder)).value
    out, off = [], 0
    for g in graphs:
        out.append(EmbeddedGraph(H[off:off + g.node_count], g))
        off += g.node_count
    return out


def readout(eg: EmbeddedGraph | np.ndarray, how: str = "mean") -> np.ndarray:
    emb = eg.embeddings if isinstance(eg, EmbeddedGraph) else np.asarray(eg)
    if emb.shape[0] == 0:
        raise ValueError("readout of an empty graph")
    if how == "mean":
        return emb.mean(axis=0, keepdims=True)
    if how == "sum":
        return emb.sum(axis=0, keepdims=True)
    if how == "max":
        return emb.max(axis=0, keepdims=True)
    raise ValueError(f"unknown readout {how!r}")


def score_logits(node_embedding, head: ScoringHead) -> np.ndarray:
    """``v @ W_s + b_s`` for one ``[1 x h]`` row or a stack of rows."""
    v = np.atleast_2d(np.asarray(node_embedding, dtype=np.float64))
    if v.shape[1] != head.W_s.shape[0]:
        raise dm.ShapeError(f"embedding dim {v.shape[1]} != head input dim {head.W_s.shape[0]}")
    return v @ head.W_s + head.b_s


def node_positive_energy(embeddings: np.ndarray, head: ScoringHead, eps_pos: float = EPS_POS) -> np.ndarray:
    return positive_energy(node_energy(score_logits(embeddings, head)), eps_pos)


# -- pretraining --------------------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_params(input_dim: int, n_classes: int, config: PretrainConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    arrays = {}
    d_in = input_dim
    for k in range(config.n_layers):
        arrays[f"encoder.{k}.W_a"] = _glorot(rng, d_in, h)
        arrays[f"encoder.{k}.b_a"] = np.zeros((1, h))
        arrays[f"encoder.{k}.W_b"] = _glorot(rng, h, h)
        arrays[f"encoder.{k}.b_b"] = np.zeros((1, h))
        arrays[f"encoder.{k}.eps_gin"] = np.array([[config.eps_gin]])
        d_in = h
    arrays["classifier"] = _glorot(rng, h, n_classes)
    arrays["head.W_s"] = _glorot(rng, h, 2)
    arrays["head.b_s"] = np.zeros((1, 2))
    return arrays


def _pooling_operator(sizes: Sequence[int], how: str) -> sp.csr_matrix:
    rows = np.repeat(np.arange(len(sizes)), sizes)
    cols = np.arange(int(np.sum(sizes)))
    w = 1.0 / np.repeat(np.asarray(sizes, dtype=np.float64), sizes) if how == "mean" else np.ones(cols.size)
    return sp.csr_matrix((w, (rows, cols)), shape=(len(sizes), cols.size))


def _segment_max(H: dm.DiffValue, sizes: Sequence[int]) -> dm.DiffValue:
    """Per-graph column max; gradient goes to the first maximizing row."""
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    pick = np.vstack([s + np.argmax(H.value[s:s + n], axis=0) for s, n in zip(starts, sizes)])
    cols = np.tile(np.arange(H.shape[1]), len(sizes))
    rows_out = np.repeat(np.arange(len(sizes)), H.shape[1])
    out = H.value[pick, np.arange(H.shape[1])]

    def bwd(g):
        gh = np.zeros_like(H.value)
        np.add.at(gh, (pick.ravel(), cols), g[rows_out, cols])
        return (gh,)

    return H.tape._record(out, "segment_max", (H,), bwd)


@dataclass
class PretrainHistory:
    cross_entropy: list[float] = field(default_factory=list)
    margin_penalty: list[float] = field(default_factory=list)
    mean_pos_energy: list[float] = field(default_factory=list)


def _forward_losses(arrays, leaves, X, adj, sizes, onehot, config: PretrainConfig, n_classes: int):
    layers = [dict(W_a=leaves[f"encoder.{k}.W_a"], b_a=leaves[f"encoder.{k}.b_a"],
                   W_b=leaves[f"encoder.{k}.W_b"], b_b=leaves[f"encoder.{k}.b_b"],
                   eps_gin=float(arrays[f"encoder.{k}.eps_gin"][0, 0]))
              for k in range(config.n_layers)]
    H = _encoder_forward(X, adj, layers)
    ce = None
    if n_classes > 1:
        if config.readout == "max":
            pooled = _segment_max(H, sizes)
        else:
            pooled = dm.matmul(_pooling_operator(sizes, config.readout), H)
        logits = dm.matmul(pooled, leaves["classifier"])
        picked = dm.matmul(dm.mul(logits, onehot), np.ones((n_classes, 1)))
        ce = dm.reduce_mean(dm.sub(dm.row_logsumexp(logits), picked))
    e_pos = positive_energy_dv(node_energy_dv(dm.linear(H, leaves["head.W_s"], leaves["head.b_s"])))
    penalty = dm.reduce_mean(dm.relu(dm.sub(e_pos, np.full((1, 1), config.energy_margin))))
    return ce, penalty, e_pos


def pretrain(train: Dataset, config: PretrainConfig = PretrainConfig(),
             history: PretrainHistory | None = None) -> FrozenModel:
    """Full-batch gradient descent on classifier cross-entropy plus the energy-margin hinge.

    The hinge ``margin_weight * mean(max(0, E+(v) - energy_margin))`` over all
    training nodes trains the scoring head (and encoder) to give ID nodes low
    positive energy.  With a single class only the hinge is optimized.  With
    ``head_mode="random"`` the scoring head keeps its seeded initialization.
    """
    if len(train) == 0:
        raise ValueError("pretrain: empty training set")
    labels = train.class_labels
    classes = np.unique(labels)
    n_classes = int(classes.size)
    class_index = np.searchsorted(classes, labels)
    graphs = [lg.graph for lg in train.graphs]
    sizes = [g.node_count for g in graphs]
    if min(sizes) == 0:
        raise ValueError("pretrain: graphs must have at least one node")
    X = np.vstack([g.features for g in graphs])
    adj = adjacency_operator(graphs)
    onehot = np.zeros((len(graphs), max(n_classes, 1)))
    onehot[np.arange(len(graphs)), class_index] = 1.0

    arrays = init_params(train.feature_dim, n_classes, config)
    trainable = [k for k in arrays if not k.endswith("eps_gin")]
    if n_classes == 1:
        trainable.remove("classifier")
    if config.head_mode == "random" or config.margin_weight == 0.0:
        trainable = [k for k in trainable if not k.startswith("head.")]

    for epoch in range(config.epochs):
        tape = dm.Tape()
        leaves = {k: (tape.leaf(v, k) if k in trainable else v) for k, v in arrays.items()}
        ce, penalty, e_pos = _forward_losses(arrays, leaves, tape.constant(X), adj, sizes, onehot, config, n_classes)
        terms = [t for t in (ce,) if t is not None]
        if config.margin_weight != 0.0:
            terms.append(dm.scale(penalty, config.margin_weight))
        if history is not None:
            history.cross_entropy.append(ce.item() if ce is not None else float("nan"))
            history.margin_penalty.append(penalty.item())
            history.mean_pos_energy.append(float(np.mean(e_pos.value)))
        if not terms:
            continue
        total = terms[0] if len(terms) == 1 else dm.add(terms[0], terms[1])
        if not np.isfinite(total.item()):
            raise FloatingPointError(f"pretrain: non-finite loss at epoch {epoch}")
        dm.backward(tape, total)
        for k in trainable:
            arrays[k] = arrays[k] - config.lr * leaves[k].grad

    if history is not None:
        tape = dm.Tape()
        ce, penalty, e_pos = _forward_losses(arrays, arrays, tape.constant(X), adj, sizes, onehot, config, n_classes)
        history.cross_entropy.append(ce.item() if ce is not None else float("nan"))
        history.margin_penalty.append(penalty.item())
        history.mean_pos_energy.append(float(np.mean(e_pos.value)))

    echo = asdict(config)
    echo.update(n_classes=n_classes, input_dim=int(train.feature_dim), classes=[int(c) for c in classes])
    return model_from_arrays(arrays, echo)


# -- checkpoints ------------------------------------------------------------------------------


def save_model(model: FrozenModel, path) -> Path:
    """JSON container: format tag, version, config echo, and every array as base64 little-endian float64."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config,
        "arrays": {
            name: {"shape": list(a.shape), "dtype": "<f8",
                   "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}
            for name, a in sorted(model.arrays().items())
        },
    }
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def load_model(path) -> FrozenModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a sigood checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = {
        name: np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8").reshape(spec["shape"]).astype(np.float64)
        for name, spec in doc["arrays"].items()
    }
    return model_from_arrays(arrays, doc.get("config", {}))
