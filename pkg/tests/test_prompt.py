import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigood import diffmat as dm
from sigood.graph import build_graph
from sigood.prompt import (
    EmbeddedGraph, PromptGenParams, generate_prompt, init_prompt_params, inject_prompt, prompt_forward,
)


def random_params(h, seed=0, depth=3):
    r = np.random.default_rng(seed)
    p = {k: r.uniform(-0.5, 0.5, (h, h)) for k in ("W1", "W2", "W3")}
    p.update({k: r.uniform(-0.2, 0.2, (1, h)) for k in ("b1", "b2", "b3", "lam")})
    p["gamma"] = r.uniform(0.5, 1.5, (1, h))
    return PromptGenParams(**p, depth=depth)


def numpy_prompt(V, p: PromptGenParams):
    """Row-by-row loop oracle for the generator."""
    out = []
    for v in V:
        h = v
        if p.depth >= 2:
            h = np.maximum(h @ p.W1 + p.b1[0], 0)
        if p.depth >= 3:
            h = np.maximum(h @ p.W2 + p.b2[0], 0)
        mu, var = h.mean(), h.var()
        u = p.gamma[0] * (h - mu) / np.sqrt(var + p.epsilon_ln) + p.lam[0]
        out.append(u @ p.W3 + p.b3[0])
    return np.array(out)


def test_zero_init_prompt_is_zero():
    p = init_prompt_params(6, seed=3)
    V = np.random.default_rng(0).standard_normal((5, 6))
    np.testing.assert_array_equal(generate_prompt(V, p), np.zeros((5, 6)))
    assert np.all(np.abs(p.W1) <= 0.1) and np.all(np.abs(p.W2) <= 0.1)


def test_zero_weights_give_bias_broadcast():
    h = 4
    z = np.zeros((h, h))
    b3 = np.array([[1.0, -2.0, 0.5, 3.0]])
    p = PromptGenParams(z, np.zeros((1, h)), z, np.zeros((1, h)), z, b3, np.ones((1, h)), np.zeros((1, h)))
    V = np.random.default_rng(1).standard_normal((3, h))
    np.testing.assert_array_equal(generate_prompt(V, p), np.tile(b3, (3, 1)))


def test_identity_weights_kill_negative_rows():
    h = 3
    I = np.eye(h)
    p = PromptGenParams(I, np.zeros((1, h)), I, np.zeros((1, h)), I, np.zeros((1, h)),
                        np.ones((1, h)), np.zeros((1, h)))
    V = -np.abs(np.random.default_rng(2).standard_normal((4, h))) - 0.1
    np.testing.assert_array_equal(generate_prompt(V, p), np.zeros((4, h)))


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_generator_matches_loop_oracle(depth):
    p = random_params(5, seed=depth, depth=depth)
    V = np.random.default_rng(4).standard_normal((7, 5))
    out = generate_prompt(V, p)
    assert out.shape == (7, 5)
    np.testing.assert_allclose(out, numpy_prompt(V, p), rtol=1e-12, atol=1e-13)


def test_gradient_of_prompt_sum_wrt_W1():
    p = random_params(4, seed=7)
    V = np.random.default_rng(5).standard_normal((6, 4))
    arrays = p.arrays()

    def fn(tape, W1):
        q = dict(arrays, W1=W1)
        return dm.reduce_sum(prompt_forward(tape.constant(V), q, 3, p.epsilon_ln))

    rep = dm.grad_check(fn, [arrays["W1"]])
    assert rep.passed, str(rep)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
def test_generator_is_row_local(n, seed, depth):
    p = random_params(4, seed=seed % 1000, depth=depth)
    r = np.random.default_rng(seed)
    V = r.standard_normal((n, 4))
    perm = r.permutation(n)
    np.testing.assert_array_equal(generate_prompt(V[perm], p), generate_prompt(V, p)[perm])


def test_inject_examples():
    g = build_graph(3, [(0, 1)], np.zeros((3, 1)))
    E = np.random.default_rng(6).standard_normal((3, 4))
    G = EmbeddedGraph(E, g)
    same = inject_prompt(G, np.zeros_like(E))
    np.testing.assert_array_equal(same.embeddings, E)
    assert same.origin is g
    np.testing.assert_array_equal(inject_prompt(G, -E).embeddings, np.zeros((3, 4)))


def test_inject_then_inverse_restores():
    # dyadic values keep every addition exact
    r = np.random.default_rng(7)
    E = r.integers(-64, 64, (5, 3)) / 8.0
    P = r.integers(-64, 64, (5, 3)) / 16.0
    G = EmbeddedGraph(E)
    back = inject_prompt(inject_prompt(inject_prompt(G, P), P), -2 * P)
    np.testing.assert_array_equal(back.embeddings, E)


def test_shape_errors():
    G = EmbeddedGraph(np.zeros((3, 4)))
    with pytest.raises(dm.ShapeError):
        inject_prompt(G, np.zeros((3, 5)))
    with pytest.raises(dm.ShapeError):
        generate_prompt(G, init_prompt_params(5))
    with pytest.raises(dm.ShapeError):
        EmbeddedGraph(np.zeros((2, 4)), build_graph(3, [], np.zeros((3, 1))))


def test_param_validation():
    with pytest.raises(ValueError):
        init_prompt_params(4, depth=4)
    with pytest.raises(ValueError):
        init_prompt_params(4, epsilon_ln=0.0)
    p = init_prompt_params(4)
    with pytest.raises(dm.ShapeError):
        p.with_arrays({"b1": np.zeros((1, 3))})
