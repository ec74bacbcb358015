"""Energy preference optimization: reward, Bradley-Terry preference and the EPO loss.

Also ships :func:`verify_reward_derivation`, a grid-search witness that the
log-ratio reward is the maximizer form of a KL-regularized expected-reward
objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import xlogy

from . import diffmat as dm
from .energy import Partition


@dataclass(frozen=True)
class EpoConfig:
    beta: float = 80.0
    clamp_arg: float = 50.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.clamp_arg > 0:
            raise ValueError(f"clamp_arg must be > 0, got {self.clamp_arg}")


def reward(e_p, e_t, beta: float):
    """``beta * log(e_p / e_t)``."""
    e_p = np.asarray(e_p, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    if np.any(e_p <= 0) or np.any(e_t <= 0):
        raise ValueError("reward needs strictly positive energies")
    r = beta * (np.log(e_p) - np.log(e_t))
    return float(r) if r.ndim == 0 else r


def bt_probability(r_ood, r_id):
    """Probability that the OOD side is preferred, ``sigmoid(r_ood - r_id)``."""
    p = dm.sigmoid_array(np.atleast_1d(np.asarray(r_ood, dtype=np.float64) - np.asarray(r_id, dtype=np.float64)))
    return float(p[0]) if np.ndim(r_ood) == 0 and np.ndim(r_id) == 0 else p


def _as_column(x, tape=None) -> dm.DiffValue:
    if isinstance(x, dm.DiffValue):
        return x
    tape = tape or dm.Tape()
    return tape.constant(np.asarray(x, dtype=np.float64).reshape(-1, 1))


def _loss_from_log_means(log_ood: dm.DiffValue, log_id: dm.DiffValue, config: EpoConfig) -> dm.DiffValue:
    arg = dm.scale(dm.sub(log_ood, log_id), config.beta)
    arg = dm.clip(arg, -config.clamp_arg, config.clamp_arg)
    # -log(sigmoid(x)) == softplus(-x)
    return dm.softplus(dm.neg(arg))


def epo_loss(pos_energy_p, pos_energy_t, partition: Partition, config: EpoConfig = EpoConfig()) -> dm.DiffValue:
    """EPO loss of one graph.

    ``pos_energy_p`` is an ``[n x 1]`` :class:`~sigood.diffmat.DiffValue`
    (or array) of positive energies on the prompted graph; the reference
    ``pos_energy_t`` is treated as a constant.  Means are taken inside the
    log, over the ratio ``e_p / e_t`` of each side of the partition.
    """
    e_p = _as_column(pos_energy_p)
    e_t = np.asarray(pos_energy_t, dtype=np.float64).reshape(-1, 1)
    if e_t.shape != e_p.shape:
        raise dm.ShapeError(f"epo_loss: energy shapes {e_p.shape} vs {e_t.shape}")
    if np.any(e_t <= 0) or np.any(e_p.value <= 0):
        raise ValueError("epo_loss needs strictly positive energies")
    if partition.ood_idx.size == 0 or partition.id_idx.size == 0:
        raise ValueError("epo_loss: empty partition side; partition_nodes should have applied its fallback")
    ratio = dm.mul(e_p, 1.0 / e_t)
    log_ood = dm.log(dm.reduce_mean_subset(ratio, partition.ood_idx))
    log_id = dm.log(dm.reduce_mean_subset(ratio, partition.id_idx))
    return _loss_from_log_means(log_ood, log_id, config)


def side_mean_matrices(sizes: Sequence[int], partitions: Sequence[Partition]) -> tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
    """Sparse averaging operators for the OOD and ID sides of many graphs.

    Rows index graphs, columns index the stacked nodes.  A graph whose ID
    side is empty (only possible with a single node) gets a zero row and a
    ``1`` in the returned offset vector, i.e. a neutral reference ratio.
    """
    rows_o, cols_o, vals_o = [], [], []
    rows_i, cols_i, vals_i = [], [], []
    empty_id = np.zeros((len(sizes), 1))
    offset = 0
    for g, (n, part) in enumerate(zip(sizes, partitions)):
        if part.ood_idx.size == 0:
            raise ValueError(f"graph {g}: empty OOD side")
        rows_o += [g] * part.ood_idx.size
        cols_o += (part.ood_idx + offset).tolist()
        vals_o += [1.0 / part.ood_idx.size] * part.ood_idx.size
        if part.id_idx.size:
            rows_i += [g] * part.id_idx.size
            cols_i += (part.id_idx + offset).tolist()
            vals_i += [1.0 / part.id_idx.size] * part.id_idx.size
        else:
            empty_id[g, 0] = 1.0
        offset += n
    shape = (len(sizes), offset)
    M_ood = sp.csr_matrix((vals_o, (rows_o, cols_o)), shape=shape)
    M_id = sp.csr_matrix((vals_i, (rows_i, cols_i)), shape=shape)
    return M_ood, M_id, empty_id


def batched_epo_losses(pos_energy_p: dm.DiffValue, pos_energy_t: np.ndarray, sizes: Sequence[int],
                       partitions: Sequence[Partition], config: EpoConfig = EpoConfig()) -> dm.DiffValue:
    """Per-graph EPO losses ``[G x 1]`` for graphs stacked along the node axis."""
    e_t = np.asarray(pos_energy_t, dtype=np.float64).reshape(-1, 1)
    M_ood, M_id, empty_id = side_mean_matrices(sizes, partitions)
    ratio = dm.mul(pos_energy_p, 1.0 / e_t)
    log_ood = dm.log(dm.matmul(M_ood, ratio))
    log_id = dm.log(dm.add(dm.matmul(M_id, ratio), empty_id))
    return _loss_from_log_means(log_ood, log_id, config)


# -- reward derivation witness ------------------------------------------------------


@dataclass
class RewardDerivationReport:
    q_grid: np.ndarray
    q_closed_form: np.ndarray
    distance: float
    grid_step: float
    reward_residual: float
    reward_tolerance: float

    @property
    def within_grid(self) -> bool:
        return self.distance < 2 * self.grid_step

    @property
    def passed(self) -> bool:
        return self.within_grid and self.reward_residual <= self.reward_tolerance


def _simplex_grid(k: int, resolution: int, first: int | None = None):
    """Integer compositions of ``resolution`` into ``k`` parts (optionally fixing the first)."""
    if k == 1:
        return np.array([[resolution if first is None else first]])
    if first is not None:
        rest = _simplex_grid(k - 1, resolution - first)
        return np.hstack([np.full((rest.shape[0], 1), first), rest])
    if k == 2:
        a = np.arange(resolution + 1)
        return np.stack([a, resolution - a], axis=1)
    return np.vstack([_simplex_grid(k, resolution, f) for f in range(resolution + 1)])


def verify_reward_derivation(p, r, beta: float, grid_resolution: int = 400) -> RewardDerivationReport:
    """Grid-maximize ``sum q r - beta * KL(q || p)`` over the simplex.

    The maximizer should match the Gibbs distribution ``p * exp(r / beta) / Z``
    and invert to ``r = beta * log(q / p) + beta * log Z``.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    k = p.size
    if r.size != k:
        raise ValueError("p and r must have the same length")
    if not 2 <= k <= 4:
        raise ValueError("verify_reward_derivation supports 2 <= k <= 4")
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p off simplex: entries must be positive and sum to 1")
    if not beta > 0:
        raise ValueError("beta must be > 0")
    R = int(grid_resolution)
    step = 1.0 / R

    best_val, best_q = -np.inf, None
    chunks = [None] if k <= 3 else range(R + 1)
    for first in chunks:
        counts = _simplex_grid(k, R, first)
        q = counts / R
        J = q @ r - beta * np.sum(xlogy(q, q) - xlogy(q, p), axis=1)
        i = int(np.argmax(J))
        if J[i] > best_val:
            best_val, best_q = J[i], q[i]

    logits = np.log(p) + r / beta
    logZ = np.logaddexp.reduce(logits)
    gibbs = np.exp(logits - logZ)
    dist = float(np.max(np.abs(best_q - gibbs)))

    # reward recovered from the grid maximizer; zero grid entries carry no information
    support = best_q > 0
    recovered = beta * (np.log(best_q[support]) - np.log(p[support])) + beta * logZ
    residual = float(np.max(np.abs(recovered - r[support])))
    # |log(q_grid / q_gibbs)| <= log(1 + 2 step / q_gibbs) when |q_grid - q_gibbs| < 2 step
    tol = float(beta * np.max(np.log1p(2 * step / np.maximum(gibbs[support] - 2 * step, step))))
    return RewardDerivationReport(best_q, gibbs, dist, step, residual, tol)
