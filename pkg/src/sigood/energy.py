"""Node energies, the positive-energy transform, energy variation and the OOD/ID node partition."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffmat as dm

EPS_POS = 1e-6


def node_energy(logits) -> np.ndarray | float:
    """``-log(exp(f1) + exp(f2))`` per row; a single logit pair gives a float."""
    f = np.asarray(logits, dtype=np.float64)
    single = f.ndim == 1
    f2 = f.reshape(1, -1) if single else f
    e = -dm.logsumexp_rows(f2)[:, 0]
    return float(e[0]) if single else e


def positive_energy(e_hat, eps_pos: float = EPS_POS):
    """``softplus(e_hat) + eps_pos``: strictly positive and increasing."""
    out = dm.softplus_array(np.asarray(e_hat, dtype=np.float64)) + eps_pos
    return float(out) if np.ndim(out) == 0 else out


def energy_variation(e_p, e_t):
    """Log-ratio ``log(e_p / e_t)`` of positive energies."""
    e_p = np.asarray(e_p, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    if np.any(e_p <= 0) or np.any(e_t <= 0):
        raise ValueError("energy_variation needs strictly positive energies")
    out = np.log(e_p) - np.log(e_t)
    return float(out) if out.ndim == 0 else out


# tape versions; the value paths match the numpy functions above bit for bit


def node_energy_dv(logits: dm.DiffValue) -> dm.DiffValue:
    return dm.neg(dm.row_logsumexp(logits))


def positive_energy_dv(e_hat: dm.DiffValue, eps_pos: float = EPS_POS) -> dm.DiffValue:
    return dm.add(dm.softplus(e_hat), np.full((1, 1), eps_pos))


@dataclass(frozen=True)
class Partition:
    ood_idx: np.ndarray
    id_idx: np.ndarray
    fallback_used: bool = False

    @property
    def sizes(self) -> tuple[int, int]:
        return int(self.ood_idx.size), int(self.id_idx.size)


def partition_nodes(delta_e) -> Partition:
    """Split nodes by the sign of their energy variation.

    ``dE > 0`` is OOD, ``dE <= 0`` is ID.  If a side ends up empty the
    split falls back to the median (strictly above -> OOD); if that still
    leaves OOD empty because the maximum is tied with the median, every
    node at the maximum is OOD.  When all values are identical the first
    ``ceil(n / 2)`` nodes are OOD.
    """
    d = np.asarray(delta_e, dtype=np.float64).ravel()
    n = d.size
    if n == 0:
        raise ValueError("partition_nodes: empty energy-variation vector")
    ood = d > 0
    if ood.any() and not ood.all():
        return Partition(np.flatnonzero(ood), np.flatnonzero(~ood), False)
    if np.all(d == d[0]):
        k = (n + 1) // 2
        return Partition(np.arange(k), np.arange(k, n), True)
    med = np.median(d)
    ood = d > med
    if not ood.any():
        ood = d >= med
    return Partition(np.flatnonzero(ood), np.flatnonzero(~ood), True)


@dataclass(frozen=True)
class EnergyReport:
    raw_energy: np.ndarray
    pos_energy: np.ndarray
    delta_e: np.ndarray
    ood_idx: np.ndarray
    id_idx: np.ndarray
    fallback_used: bool

    def to_csv(self, path) -> None:
        side = np.full(self.raw_energy.size, "id", dtype=object)
        side[self.ood_idx] = "ood"
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "raw_energy", "pos_energy", "delta_e", "side"])
            for i in range(self.raw_energy.size):
                w.writerow([i, repr(float(self.raw_energy[i])), repr(float(self.pos_energy[i])),
                            repr(float(self.delta_e[i])), side[i]])


def energy_report(logits_p, logits_t, eps_pos: float = EPS_POS) -> EnergyReport:
    """Energies of the prompted graph against its reference, plus the partition."""
    raw_p = node_energy(np.atleast_2d(logits_p))
    pos_p = positive_energy(raw_p, eps_pos)
    pos_t = positive_energy(node_energy(np.atleast_2d(logits_t)), eps_pos)
    delta = energy_variation(pos_p, pos_t)
    part = partition_nodes(delta)
    return EnergyReport(raw_p, pos_p, np.atleast_1d(delta), part.ood_idx, part.id_idx, part.fallback_used)
