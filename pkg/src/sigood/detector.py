"""Self-improving test-time OOD detection loop, scoring and thresholding.

One iteration:

1. prompt = PG(G_t); G_p = G_t + prompt
2. positive energies of every node in G_t and G_p from the frozen scoring head
3. energy variation dE = log(E+_p / E+_t) splits nodes into OOD (dE > 0) and ID sides
4. one gradient-descent step on the PG parameters against the EPO loss;
   the prompted graph under the updated PG becomes the next G_t.

The score of a graph is the negated EPO loss of the final iteration, so a
larger score means more OOD.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import diffmat as dm
from .energy import Partition, partition_nodes, positive_energy_dv, node_energy_dv
from .epo import EpoConfig, batched_epo_losses
from .gnn import FrozenModel, encode, encode_batch, node_positive_energy
from .graph import ID, OOD, Dataset
from .prompt import PromptGenParams, init_prompt_params, prompt_forward

log = logging.getLogger(__name__)

MODES = ("transductive", "per-graph")
ABLATIONS = ("full", "no-epo", "no-pg")
DECISIONS = {ID: "ID", OOD: "OOD"}


class DetectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    beta: float = 80.0
    iterations: int = 500
    lr: float = 1e-3
    mode: str = "transductive"
    pg_depth: int = 3
    tau: float = 0.0
    seed: int = 0
    ablation: str = "full"
    clamp_arg: float = 50.0
    epsilon_ln: float = 1e-5
    eps_pos: float = 1e-6
    pg_init_scale: float = 0.1
    score_sign: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.pg_depth not in (1, 2, 3):
            raise ValueError("pg_depth must be 1, 2 or 3")
        if self.score_sign not in (1, -1):
            raise ValueError("score_sign must be +1 or -1")
        EpoConfig(self.beta, self.clamp_arg)

    @property
    def epo(self) -> EpoConfig:
        return EpoConfig(self.beta, self.clamp_arg)

    def replace(self, **changes) -> "DetectorConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss: float
    n_ood: int
    n_id: int
    fallback: bool


@dataclass
class DetectionResult:
    graph_id: int
    score: float
    decision: str
    trace: list[IterationRecord] = field(default_factory=list)
    label: int | None = None


@dataclass
class LoopState:
    """Stacked node embeddings of the graphs being optimized, plus the prompt generator."""

    embeddings: np.ndarray
    sizes: tuple[int, ...]
    pg: PromptGenParams
    iteration: int = 0


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    losses: np.ndarray          # per-graph objective before the update
    post_losses: np.ndarray     # same reference and partition, after the update
    partitions: tuple[Partition, ...]

    @property
    def total(self) -> float:
        return float(np.sum(self.losses))

    @property
    def post_total(self) -> float:
        return float(np.sum(self.post_losses))


@dataclass
class RunTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def descent_fraction(self) -> float:
        if not self.steps:
            return float("nan")
        return float(np.mean([s.post_total <= s.total for s in self.steps]))


def threshold_decide(score: float, tau: float) -> str:
    """``OOD`` iff ``score >= tau``."""
    return DECISIONS[OOD] if score >= tau else DECISIONS[ID]


def calibrate_tau(id_scores: Sequence[float], target_fpr: float) -> float:
    """``(1 - target_fpr)`` quantile of held-out ID scores, linear interpolation."""
    s = np.asarray(id_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("calibrate_tau: no scores")
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must be in (0, 1)")
    return float(np.quantile(s, 1.0 - target_fpr, method="linear"))


# -- one loop iteration ---------------------------------------------------------------


def _mean_operator(sizes: Sequence[int]) -> sp.csr_matrix:
    rows = np.repeat(np.arange(len(sizes)), sizes)
    cols = np.arange(int(np.sum(sizes)))
    w = 1.0 / np.repeat(np.asarray(sizes, dtype=np.float64), sizes)
    return sp.csr_matrix((w, (rows, cols)), shape=(len(sizes), cols.size))


def _objective(x, pg_leaves, model: FrozenModel, sizes, e_t, config: DetectorConfig, partitions=None):
    """Per-graph objective ``[G x 1]``, the prompted embeddings, and the partitions used."""
    head = model.scoring_head
    prompt = prompt_forward(x, pg_leaves, config.pg_depth, config.epsilon_ln)
    g_p = dm.add(x, prompt)
    e_p = positive_energy_dv(node_energy_dv(dm.linear(g_p, head.W_s, head.b_s)), config.eps_pos)
    if not (np.all(np.isfinite(e_p.value)) and np.all(np.isfinite(e_t))):
        raise FloatingPointError("non-finite node energy")
    if partitions is None:
        delta = np.log(e_p.value[:, 0]) - np.log(e_t)
        bounds = np.cumsum((0,) + tuple(sizes))
        partitions = tuple(partition_nodes(delta[a:b]) for a, b in zip(bounds[:-1], bounds[1:]))
    if config.ablation == "no-epo":
        losses = dm.matmul(_mean_operator(sizes), e_p)
    else:
        losses = batched_epo_losses(e_p, e_t, sizes, partitions, config.epo)
    return losses, g_p.value, partitions


def sigood_step(state: LoopState, model: FrozenModel, config: DetectorConfig) -> tuple[LoopState, StepRecord]:
    """Run one prompt/energy/partition/update iteration and advance the reference graph."""
    it = state.iteration + 1
    emb = state.embeddings
    e_t = node_positive_energy(emb, model.scoring_head, config.eps_pos)

    tape = dm.Tape()
    leaves = {k: tape.leaf(v, k) for k, v in state.pg.arrays().items()}
    try:
        losses, _, partitions = _objective(tape.constant(emb), leaves, model, state.sizes, e_t, config)
    except FloatingPointError as exc:
        raise DetectorError(f"non-finite loss at iteration {it}: {exc}") from None
    if not np.all(np.isfinite(losses.value)):
        bad = np.flatnonzero(~np.isfinite(losses.value[:, 0]))
        raise DetectorError(f"non-finite loss at iteration {it} for graphs {bad[:10].tolist()}")
    dm.backward(tape, dm.reduce_sum(losses))
    new_arrays = {k: v - config.lr * leaves[k].grad for k, v in state.pg.arrays().items()}
    for k, v in new_arrays.items():
        if not np.all(np.isfinite(v)):
            raise DetectorError(f"non-finite prompt-generator parameter {k} at iteration {it}")
    new_pg = state.pg.with_arrays(new_arrays)

    # re-evaluate against the same reference and partition, then hand G_p on
    t2 = dm.Tape()
    post, g_p_new, _ = _objective(t2.constant(emb), new_pg.arrays(), model, state.sizes, e_t, config, partitions)
    record = StepRecord(it, losses.value[:, 0].copy(), post.value[:, 0].copy(), partitions)
    return LoopState(g_p_new, state.sizes, new_pg, it), record


# -- detection ---------------------------------------------------------------------------


def _run_loop(embeddings: list[np.ndarray], model: FrozenModel, config: DetectorConfig,
              run_trace: RunTrace | None) -> tuple[np.ndarray, list[list[IterationRecord]]]:
    sizes = tuple(e.shape[0] for e in embeddings)
    pg = init_prompt_params(model.hidden_dim, config.seed, config.pg_depth, config.epsilon_ln, config.pg_init_scale)
    state = LoopState(np.vstack(embeddings), sizes, pg)
    traces: list[list[IterationRecord]] = [[] for _ in sizes]
    record = None
    for _ in range(config.iterations):
        state, record = sigood_step(state, model, config)
        for g, part in enumerate(record.partitions):
            n_ood, n_id = part.sizes
            traces[g].append(IterationRecord(record.iteration, float(record.losses[g]), n_ood, n_id,
                                             bool(part.fallback_used)))
        if run_trace is not None:
            run_trace.steps.append(record)
    return record.losses, traces


def _scores(final_objective: np.ndarray, config: DetectorConfig) -> np.ndarray:
    if config.ablation == "no-epo":
        return config.score_sign * final_objective
    return -config.score_sign * final_objective


def run_detector(test: Dataset, model: FrozenModel, config: DetectorConfig = DetectorConfig()
                 ) -> tuple[list[DetectionResult], RunTrace]:
    """Score every graph of ``test``; also returns the step-level trace."""
    if len(test) == 0:
        raise ValueError("detect: empty test set")
    if test.feature_dim != model.input_dim:
        raise dm.ShapeError(f"test feature dim {test.feature_dim} != model input dim {model.input_dim}")
    graphs = [lg.graph for lg in test.graphs]
    if any(g.node_count == 0 for g in graphs):
        raise ValueError("detect: graphs must have at least one node")
    run_trace = RunTrace()
    n = len(graphs)
    traces: list[list[IterationRecord]] = [[] for _ in range(n)]

    if config.ablation == "no-pg":
        embedded = encode_batch(graphs, model.encoder)
        scores = np.array([
            config.score_sign * float(np.mean(node_positive_energy(eg.embeddings, model.scoring_head, config.eps_pos)))
            for eg in embedded
        ])
    elif config.mode == "transductive":
        embedded = encode_batch(graphs, model.encoder)
        final, traces = _run_loop([eg.embeddings for eg in embedded], model, config, run_trace)
        scores = _scores(final, config)
    else:
        scores = np.empty(n)
        for i, g in enumerate(graphs):
            final, tr = _run_loop([encode(g, model.encoder).embeddings], model, config, None)
            scores[i] = _scores(final, config)[0]
            traces[i] = tr[0]

    results = []
    for i, lg in enumerate(test.graphs):
        s = float(scores[i])
        results.append(DetectionResult(i, s, threshold_decide(s, config.tau), traces[i], lg.dist_label))
    return results, run_trace


def detect(test: Dataset, model: FrozenModel, config: DetectorConfig = DetectorConfig()) -> list[DetectionResult]:
    """Run the detector over a test set.

    Transductive mode optimizes one prompt generator on the summed loss of
    all graphs; per-graph mode gives each graph its own generator, seeded
    identically, so results do not depend on the rest of the test set.
    """
    return run_detector(test, model, config)[0]


# -- CSV output -------------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scores_csv(results: Sequence[DetectionResult], path) -> None:
    with_label = any(r.label is not None for r in results)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["graph_id", "score", "decision"] + (["label"] if with_label else []))
        for r in results:
            row = [r.graph_id, _fmt(r.score), r.decision]
            if with_label:
                row.append("" if r.label is None else r.label)
            w.writerow(row)


def write_trace_csv(results: Sequence[DetectionResult], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["graph_id", "iteration", "loss", "n_ood", "n_id", "fallback"])
        for r in results:
            for rec in r.trace:
                w.writerow([r.graph_id, rec.iteration, _fmt(rec.loss), rec.n_ood, rec.n_id, int(rec.fallback)])


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Scores and (when present and complete) labels from a scores CSV."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no score rows")
    if "score" not in rows[0]:
        raise ValueError(f"{path}: missing 'score' column")
    scores = np.array([float(r["score"]) for r in rows])
    labels = None
    if "label" in rows[0] and all(r["label"] not in ("", None) for r in rows):
        labels = np.array([int(r["label"]) for r in rows])
    return scores, labels
