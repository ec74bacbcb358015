"""Prompt generator and prompt injection on node embeddings."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import diffmat as dm
from .graph import Graph

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "gamma", "lam")


@dataclass(frozen=True, eq=False)
class EmbeddedGraph:
    """Per-node embeddings ``[n x h]`` of one graph, as produced by the frozen encoder."""

    embeddings: np.ndarray
    origin: Graph | None = None

    def __post_init__(self):
        if self.origin is not None and self.embeddings.shape[0] != self.origin.node_count:
            raise dm.ShapeError(f"{self.embeddings.shape[0]} embedding rows for {self.origin.node_count} nodes")

    @property
    def node_count(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.embeddings.shape[1])


@dataclass(frozen=True, eq=False)
class PromptGenParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    epsilon_ln: float = 1e-5
    depth: int = 3

    def __post_init__(self):
        if self.depth not in (1, 2, 3):
            raise ValueError(f"prompt generator depth must be 1, 2 or 3, got {self.depth}")
        if not self.epsilon_ln > 0:
            raise ValueError("epsilon_ln must be > 0")
        h = self.W1.shape[0]
        for name in PARAM_NAMES:
            a = getattr(self, name)
            want = (h, h) if name.startswith("W") else (1, h)
            if a.shape != want:
                raise dm.ShapeError(f"{name} has shape {a.shape}, expected {want}")

    @property
    def hidden_dim(self) -> int:
        return int(self.W1.shape[0])

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "PromptGenParams":
        return replace(self, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})

    def same_as(self, other: "PromptGenParams") -> bool:
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))


def init_prompt_params(hidden_dim: int, seed: int = 0, depth: int = 3, epsilon_ln: float = 1e-5,
                       init_scale: float = 0.1) -> PromptGenParams:
    """W1, W2 ~ U[-init_scale, init_scale]; W3 = b3 = 0 so the first prompt is zero."""
    rng = np.random.default_rng(seed)
    h = int(hidden_dim)
    return PromptGenParams(
        W1=rng.uniform(-init_scale, init_scale, (h, h)),
        b1=np.zeros((1, h)),
        W2=rng.uniform(-init_scale, init_scale, (h, h)),
        b2=np.zeros((1, h)),
        W3=np.zeros((h, h)),
        b3=np.zeros((1, h)),
        gamma=np.ones((1, h)),
        lam=np.zeros((1, h)),
        epsilon_ln=epsilon_ln,
        depth=depth,
    )


def prompt_forward(x, p: dict, depth: int = 3, epsilon_ln: float = 1e-5) -> dm.DiffValue:
    """Tape-level prompt generator; ``p`` maps parameter names to DiffValues or arrays.

    Rows are processed independently.  Depth 3 runs both ReLU layers, depth 2
    keeps only the first, depth 1 normalizes the embedding directly.
    """
    h = x
    if depth >= 2:
        h = dm.relu(dm.linear(h, p["W1"], p["b1"]))
    if depth >= 3:
        h = dm.relu(dm.linear(h, p["W2"], p["b2"]))
    h = dm.layer_norm(h, p["gamma"], p["lam"], epsilon_ln)
    return dm.linear(h, p["W3"], p["b3"])


def generate_prompt(g_t: EmbeddedGraph | np.ndarray, params: PromptGenParams) -> np.ndarray:
    """Prompt matrix ``[n x h]`` for the embedded graph (no gradient tracking)."""
    emb = g_t.embeddings if isinstance(g_t, EmbeddedGraph) else np.asarray(g_t, dtype=np.float64)
    if emb.shape[1] != params.hidden_dim:
        raise dm.ShapeError(f"embedding dim {emb.shape[1]} != prompt generator dim {params.hidden_dim}")
    tape = dm.Tape()
    return prompt_forward(tape.constant(emb), params.arrays(), params.depth, params.epsilon_ln).value


def inject_prompt(g_t: EmbeddedGraph, prompt: np.ndarray) -> EmbeddedGraph:
    """Row-aligned elementwise addition of the prompt to the node embeddings."""
    prompt = np.asarray(prompt, dtype=np.float64)
    if prompt.shape != g_t.embeddings.shape:
        raise dm.ShapeError(f"prompt shape {prompt.shape} != embedding shape {g_t.embeddings.shape}")
    return EmbeddedGraph(g_t.embeddings + prompt, g_t.origin)
