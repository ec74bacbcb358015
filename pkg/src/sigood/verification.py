"""Seeded gradient-check and reward-derivation suites (used by ``sigood verify`` and the tests)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmat as dm
from .energy import Partition, node_energy_dv, positive_energy_dv
from .epo import EpoConfig, epo_loss, verify_reward_derivation
from .prompt import PARAM_NAMES, prompt_forward

GRAD_CHECKS = ("pg_forward", "layer_norm", "energy_chain", "epo_pipeline")
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class SuiteResult:
    check: str
    instance: int
    passed: bool
    max_rel_error: float


def _pg_arrays(rng: np.random.Generator, h: int) -> dict[str, np.ndarray]:
    out = {}
    for name in PARAM_NAMES:
        shape = (h, h) if name.startswith("W") else (1, h)
        out[name] = rng.uniform(-1.0, 1.0, shape)
    out["gamma"] = 1.0 + 0.5 * out["gamma"]
    return out


def _pg_preactivations(x: np.ndarray, p: dict) -> np.ndarray:
    z1 = x @ p["W1"] + p["b1"]
    z2 = np.maximum(z1, 0.0) @ p["W2"] + p["b2"]
    return np.concatenate([z1.ravel(), z2.ravel()])


def _draw_pg(rng: np.random.Generator, n: int, h: int):
    """Embeddings and generator parameters with every ReLU input away from its kink."""
    while True:
        x = rng.uniform(-2.0, 2.0, (n, h))
        p = _pg_arrays(rng, h)
        if np.min(np.abs(_pg_preactivations(x, p))) > KINK_MARGIN:
            return x, p


def _pg_forward_case(rng):
    n, h = 3, 4
    x, p = _draw_pg(rng, n, h)
    C = rng.standard_normal((n, h))
    names = list(PARAM_NAMES)

    def fn(tape, xl, *pl):
        out = prompt_forward(xl, dict(zip(names, pl)), 3, 1e-5)
        return dm.reduce_sum(dm.mul(out, C))

    return fn, [x] + [p[k] for k in names]


def _layer_norm_case(rng):
    n, h = 4, 5
    x = rng.uniform(-2.0, 2.0, (n, h))
    gamma = rng.uniform(0.5, 1.5, (1, h))
    lam = rng.uniform(-1.0, 1.0, (1, h))
    C = rng.standard_normal((n, h))

    def fn(tape, xl, gl, ll):
        return dm.reduce_sum(dm.mul(dm.layer_norm(xl, gl, ll, 1e-5), C))

    return fn, [x, gamma, lam]


def _energy_chain_case(rng):
    n, h = 5, 4
    emb = rng.uniform(-2.0, 2.0, (n, h))
    W = rng.uniform(-1.0, 1.0, (h, 2))
    b = rng.uniform(-1.0, 1.0, (1, 2))
    c = rng.standard_normal((n, 1))

    def fn(tape, el, Wl, bl):
        e = positive_energy_dv(node_energy_dv(dm.linear(el, Wl, bl)))
        return dm.reduce_sum(dm.mul(dm.log(e), c))

    return fn, [emb, W, b]


def _epo_pipeline_case(rng):
    n, h = 6, 4
    x, p = _draw_pg(rng, n, h)
    p["W3"] = 0.3 * p["W3"]
    p["b3"] = 0.3 * p["b3"]
    W = rng.uniform(-1.0, 1.0, (h, 2))
    b = rng.uniform(-1.0, 1.0, (1, 2))
    e_t = np.exp(rng.uniform(-1.0, 1.0, n))
    perm = rng.permutation(n)
    k = int(rng.integers(1, n))
    part = Partition(np.sort(perm[:k]), np.sort(perm[k:]))
    config = EpoConfig(beta=float(rng.uniform(0.5, 5.0)))
    names = list(PARAM_NAMES)

    def fn(tape, *pl):
        xc = tape.constant(x)
        g_p = dm.add(xc, prompt_forward(xc, dict(zip(names, pl)), 3, 1e-5))
        e_p = positive_energy_dv(node_energy_dv(dm.linear(g_p, W, b)))
        return epo_loss(e_p, e_t, part, config)

    return fn, [p[k] for k in names]


_CASES = {
    "pg_forward": _pg_forward_case,
    "layer_norm": _layer_norm_case,
    "energy_chain": _energy_chain_case,
    "epo_pipeline": _epo_pipeline_case,
}


def gradient_suite(n_instances: int = 20, seed: int = 0, step: float = 1e-4, tol: float = 1e-4) -> list[SuiteResult]:
    """Central-difference checks of the four gradient paths the detector relies on."""
    out = []
    for check in GRAD_CHECKS:
        rng = np.random.default_rng([seed, GRAD_CHECKS.index(check)])
        for i in range(n_instances):
            fn, leaves = _CASES[check](rng)
            rep = dm.grad_check(fn, leaves, step=step, tol=tol)
            out.append(SuiteResult(check, i, rep.passed, rep.max_rel_error))
    return out


@dataclass(frozen=True)
class RewardCase:
    instance: int
    p: tuple
    r: tuple
    beta: float
    distance: float
    grid_step: float
    passed: bool


def closed_form_case(grid_resolution: int = 400):
    """p = (0.5, 0.5), r = (beta log 3, 0) has Gibbs maximizer (0.75, 0.25)."""
    beta = 2.0
    return verify_reward_derivation([0.5, 0.5], [beta * np.log(3.0), 0.0], beta, grid_resolution)


def reward_suite(n_instances: int = 10, seed: int = 0, grid_resolution: int = 400) -> list[RewardCase]:
    """Random (p, r, beta) instances with k alternating between 2 and 3."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_instances):
        k = 2 + i % 2
        p = rng.dirichlet(np.ones(k))
        p = p / p.sum()
        beta = float(rng.uniform(0.5, 5.0))
        r = rng.uniform(-3.0, 3.0, k)
        rep = verify_reward_derivation(p, r, beta, grid_resolution)
        out.append(RewardCase(i, tuple(p), tuple(r), beta, rep.distance, rep.grid_step, rep.within_grid))
    return out
