import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigood import diffmat as dm
from sigood.energy import (
    EPS_POS, energy_report, energy_variation, node_energy, node_energy_dv, partition_nodes, positive_energy,
    positive_energy_dv,
)


def test_node_energy_examples():
    assert node_energy([0.0, 0.0]) == pytest.approx(-math.log(2), abs=1e-15)
    assert node_energy([1.0, 1.0]) == pytest.approx(-1 - math.log(2), abs=1e-15)
    assert node_energy([-1000.0, -1000.0]) == pytest.approx(1000 - math.log(2), abs=1e-12)


def test_node_energy_rows():
    f = np.array([[0.0, 0.0], [2.0, -1.0]])
    np.testing.assert_allclose(node_energy(f), [-math.log(2), -math.log(math.exp(2) + math.exp(-1))], rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_node_energy_shift_identity(f, c):
    np.testing.assert_allclose(node_energy(f + c), node_energy(f) - c, rtol=0, atol=1e-10)


def test_positive_energy_examples():
    assert positive_energy(0.0) == pytest.approx(math.log(2) + 1e-6, abs=1e-15)
    assert positive_energy(50.0) == pytest.approx(50 + 1e-6, abs=1e-9)
    assert positive_energy(-800.0) == EPS_POS


@settings(max_examples=100, deadline=None)
@given(st.floats(-40, 40), st.floats(-40, 40))
def test_positive_energy_strictly_increasing_and_positive(a, b):
    pa, pb = positive_energy(a), positive_energy(b)
    assert pa > 0 and pb > 0
    if a < b:
        assert pa <= pb
    if a < b - 1e-6 and b > -10:  # strict once the difference is above float resolution
        assert pa < pb


def test_energy_variation_examples():
    assert energy_variation(0.3, 0.3) == 0.0
    assert energy_variation(math.e * 0.7, 0.7) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        energy_variation(0.0, 1.0)
    with pytest.raises(ValueError):
        energy_variation(1.0, -1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_energy_variation_antisymmetric_and_zero_iff_equal(a, b):
    assert energy_variation(a, b) == -energy_variation(b, a)
    assert (energy_variation(a, b) == 0.0) == (a == b)


def test_tape_versions_match_numpy_bitwise():
    f = np.random.default_rng(0).uniform(-5, 5, (7, 2))
    t = dm.Tape()
    e = node_energy_dv(t.leaf(f))
    np.testing.assert_array_equal(e.value[:, 0], node_energy(f))
    np.testing.assert_array_equal(positive_energy_dv(e).value[:, 0], positive_energy(node_energy(f)))


def test_energy_chain_gradient():
    W = np.random.default_rng(1).uniform(-1, 1, (3, 2))
    emb = np.random.default_rng(2).uniform(-2, 2, (4, 3))
    e_t = np.array([[0.4], [0.9], [1.3], [0.2]])

    def fn(tape, x):
        e = positive_energy_dv(node_energy_dv(dm.matmul(x, W)))
        return dm.reduce_sum(dm.log(dm.mul(e, 1.0 / e_t)))

    assert dm.grad_check(fn, [emb]).passed


# -- partition ---------------------------------------------------------------------------------


def test_partition_examples():
    p = partition_nodes([0.5, -0.2, 0.1])
    assert p.ood_idx.tolist() == [0, 2] and p.id_idx.tolist() == [1] and not p.fallback_used
    p = partition_nodes([0.0, 0.0, 0.0])
    assert p.ood_idx.tolist() == [0, 1] and p.id_idx.tolist() == [2] and p.fallback_used
    p = partition_nodes([-1.0, -2.0, -3.0])
    assert p.ood_idx.tolist() == [0] and p.id_idx.tolist() == [1, 2] and p.fallback_used


def test_partition_zero_goes_to_id():
    p = partition_nodes([0.0, 1.0, -1.0])
    assert p.id_idx.tolist() == [0, 2]


def test_partition_all_positive_uses_median():
    p = partition_nodes([1.0, 2.0, 3.0, 4.0])
    assert p.ood_idx.tolist() == [2, 3] and p.fallback_used


def test_partition_max_tied_with_median():
    p = partition_nodes([1.0, 1.0, 1.0, 0.5])
    assert p.ood_idx.tolist() == [0, 1, 2] and p.id_idx.tolist() == [3] and p.fallback_used


def test_partition_single_node():
    p = partition_nodes([0.3])
    assert p.ood_idx.tolist() == [0] and p.id_idx.size == 0 and p.fallback_used


def test_partition_empty_errors():
    with pytest.raises(ValueError):
        partition_nodes([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([-2.0, -1.0, 0.0, 0.5, 1.0, 3.0]) | st.floats(-5, 5), min_size=1, max_size=12))
def test_partition_total_disjoint_and_nonempty_ood(values):
    p = partition_nodes(values)
    n = len(values)
    both = np.concatenate([p.ood_idx, p.id_idx])
    assert sorted(both.tolist()) == list(range(n))
    assert p.ood_idx.size >= 1
    if n >= 2:
        assert p.id_idx.size >= 1
    d = np.asarray(values)
    if not p.fallback_used:
        assert np.all(d[p.ood_idx] > 0) and np.all(d[p.id_idx] <= 0)
    elif not np.all(d == d[0]):
        assert d[p.ood_idx].min() >= d[p.id_idx].max()


def test_energy_report_and_csv(tmp_path):
    lt = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, -1.0]])
    lp = lt + np.array([[-0.5, -0.5], [0.2, 0.2], [0.0, 0.0]])
    rep = energy_report(lp, lt)
    assert np.all(rep.pos_energy > 0)
    assert rep.ood_idx.tolist() == [0] and rep.id_idx.tolist() == [1, 2]
    np.testing.assert_allclose(rep.delta_e[2], 0.0, atol=0)
    rep.to_csv(tmp_path / "e.csv")
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert [r["side"] for r in rows] == ["ood", "id", "id"]
    assert float(rows[1]["raw_energy"]) == rep.raw_energy[1]
