import math

import numpy as np
import pytest

from qnbp.bp import (TannerGraph, bp_decode, bp_decode_batch, build_tanner, check_to_variable,
                     check_to_variable_backward, hard_decision, marginalize, phi, prior_llr,
                     variable_to_check)
from qnbp.codes import toric_code
from qnbp.gf2 import BitMatrix, in_rowspace

from conftest import posterior_llr, random_tree_code

TINY_EPS = 1e-300  # tree checks need unclipped messages


def tanh_rule(incoming, s):
    return (-1) ** s * 2 * math.atanh(np.prod(np.tanh(np.asarray(incoming) / 2)))


# ---------------------------------------------------------------- graph

def test_build_tanner_small():
    g = build_tanner(BitMatrix.from_dense([[1, 1, 0], [0, 1, 1]]))
    assert g.edges == [(0, 0), (0, 1), (1, 1), (1, 2)]
    assert g.neighbors_of_variable(1) == [0, 1]
    assert g.neighbors_of_check(1) == [1, 2]


def test_toric_plaquette_graph(toric2):
    g = TannerGraph(toric2.B)
    assert g.n_edges == 16
    assert set(g.var_degree.tolist()) == {2}


def test_identity_graph():
    g = TannerGraph(BitMatrix.identity(3))
    assert all(g.neighbors_of_check(c) == [c] for c in range(3))


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        TannerGraph(BitMatrix.zeros(0, 4))


def test_graph_reproduces_matrix():
    rng = np.random.default_rng(2)
    H = rng.integers(0, 2, (7, 11))
    g = TannerGraph(BitMatrix.from_dense(H))
    back = np.zeros_like(H)
    for c, v in g.edges:
        back[c, v] = 1
    assert np.array_equal(back, H)
    for v in range(11):
        assert g.neighbors_of_variable(v) == np.flatnonzero(H[:, v]).tolist()


# ---------------------------------------------------------------- elementary rules

def test_prior_llr():
    assert prior_llr(0.5) == 0.0
    assert prior_llr(0.01) == pytest.approx(math.log(99), abs=1e-12)
    assert prior_llr(0.01) == pytest.approx(4.5951199, abs=1e-7)
    for p in (1e-6, 0.1, 0.37, 0.9):
        assert 1 / (math.exp(prior_llr(p)) + 1) == pytest.approx(p, rel=1e-12)
    with pytest.raises(ValueError):
        prior_llr(0.0)
    with pytest.raises(ValueError):
        prior_llr(1.0)


def test_phi_self_inverse():
    x = np.linspace(0.05, 20, 50)
    assert np.allclose(phi(phi(x)), x, rtol=1e-9)


def test_variable_to_check_examples():
    H = BitMatrix.from_dense([[1], [1], [1]])  # one variable, three checks
    g = TannerGraph(H)
    cv = np.array([1.0, -2.0, 0.0])
    vc = variable_to_check(cv, np.array([0.5]), g)[0]
    assert vc[0] == pytest.approx(0.5 - 2.0)
    # t = 0: everything equals the prior
    assert np.all(variable_to_check(np.zeros(3), np.array([0.7]), g) == 0.7)
    # degree one variable sees only its prior
    g1 = TannerGraph(BitMatrix.from_dense([[1, 1]]))
    assert variable_to_check(np.array([3.0, 4.0]), np.array([0.2, 0.3]), g1).tolist() == [[0.2, 0.3]]


def test_check_to_variable_examples():
    g = TannerGraph(BitMatrix.from_dense([[1, 1, 1]]))
    vc = np.array([5.0, 2.0, 2.0])
    out = check_to_variable(vc, np.array([0]), g, eps=TINY_EPS)[0]
    # 2 atanh(tanh(1)^2) evaluated with 30-digit arithmetic
    assert out[0] == pytest.approx(1.3250027473578644, abs=1e-12)
    assert out[0] == pytest.approx(tanh_rule([2, 2], 0), abs=1e-12)
    neg = check_to_variable(vc, np.array([1]), g, eps=TINY_EPS)[0]
    assert neg[0] == -out[0]
    z = check_to_variable(np.array([0.0, 3.0, -1.0]), np.array([0]), g)[0]
    assert z[1] == 0 and z[2] == 0


def test_check_rule_matches_tanh_form():
    rng = np.random.default_rng(5)
    g = TannerGraph(BitMatrix.from_dense(rng.integers(0, 2, (6, 9)) | np.eye(6, 9, dtype=int)))
    for _ in range(20):
        vc = rng.normal(0, 3, g.n_edges)
        s = rng.integers(0, 2, g.m)
        out = check_to_variable(vc, s, g, eps=TINY_EPS)[0]
        for e, (c, v) in enumerate(g.edges):
            others = [vc[f] for f in g.check_edges[c] if f != e]
            want = tanh_rule(others, s[c]) if others else 0.0
            assert out[e] == pytest.approx(want, abs=1e-9)


def test_check_clipping_bounds_messages():
    g = TannerGraph(BitMatrix.from_dense([[1, 1]]))
    out = check_to_variable(np.array([80.0, 80.0]), np.array([0]), g, eps=1e-4)[0]
    assert out[0] == pytest.approx(2 * math.atanh(1 - 1e-4), rel=1e-9)


def test_check_backward_matches_finite_differences():
    rng = np.random.default_rng(9)
    g = TannerGraph(BitMatrix.from_dense(rng.integers(0, 2, (5, 8)) | np.eye(5, 8, dtype=int)))
    vc = rng.normal(0, 2, (3, g.n_edges))
    s = rng.integers(0, 2, (3, g.m))
    w = rng.normal(size=(3, g.n_edges))
    _, cache = check_to_variable(vc, s, g, return_cache=True)
    grad = check_to_variable_backward(w, vc, cache, g)
    h = 1e-6
    for b in range(3):
        for e in range(g.n_edges):
            up, dn = vc.copy(), vc.copy()
            up[b, e] += h
            dn[b, e] -= h
            fd = ((check_to_variable(up, s, g) - check_to_variable(dn, s, g)) * w).sum() / (2 * h)
            assert grad[b, e] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_marginalize_examples():
    g = TannerGraph(BitMatrix.from_dense([[1, 0], [1, 0]]))  # variable 1 isolated
    mu = marginalize(np.array([-0.5, -1.0]), np.array([1.0, 2.5]), g)[0]
    assert mu.tolist() == [-0.5, 2.5]
    assert marginalize(np.zeros(2), np.array([0.3, 0.4]), g).tolist() == [[0.3, 0.4]]


def test_hard_decision():
    assert hard_decision([3.1, -0.2]).tolist() == [0, 1]
    assert hard_decision([0.0]).tolist() == [0]
    assert not hard_decision(np.full(5, prior_llr(0.1))).any()


# ---------------------------------------------------------------- decoding

def test_zero_syndrome_early_stop(toric2):
    g = TannerGraph(toric2.B)
    res = bp_decode(g, np.zeros(4, dtype=int), prior_llr(0.01), T=10, early_stop=True)
    assert not res.inferred.any() and res.syndrome_matched and res.iterations_used == 1


@pytest.mark.parametrize("p", [0.05, 0.1, 0.3])
def test_repetition_code_exact(rep3, p):
    g = TannerGraph(rep3)
    for s in ([1, 0], [0, 1], [1, 1], [0, 0]):
        res = bp_decode(g, s, prior_llr(p), T=10, eps=TINY_EPS)
        assert np.allclose(res.marginals, posterior_llr(rep3.dense, s, p), atol=1e-8)


def test_random_trees_exact():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = int(rng.integers(3, 11))
        H = random_tree_code(n, rng)
        g = TannerGraph(BitMatrix.from_dense(H))
        s = rng.integers(0, 2, H.shape[0])
        p = float(rng.choice([0.05, 0.1, 0.3]))
        res = bp_decode(g, s, prior_llr(p), T=2 * n, eps=TINY_EPS)
        assert np.allclose(res.marginals, posterior_llr(H, s, p), atol=1e-8)


def test_single_error_on_toric_l2_stalls(toric2):
    # on L=2 the two edges joining a pair of plaquettes are equally likely
    # explanations of the same syndrome, so BP stays symmetric and returns zero
    g = TannerGraph(toric2.B)
    for v in range(8):
        e = np.zeros(8, dtype=np.uint8)
        e[v] = 1
        res = bp_decode(g, toric2.sector("x").syndrome(e), prior_llr(0.05), T=12)
        assert not res.syndrome_matched
        assert not res.inferred.any()


@pytest.mark.parametrize("L", [3, 4])
def test_single_error_on_toric_is_corrected(L):
    code = toric_code(L)
    g = TannerGraph(code.B)
    for v in range(code.n):
        e = np.zeros(code.n, dtype=np.uint8)
        e[v] = 1
        res = bp_decode(g, code.sector("x").syndrome(e), prior_llr(0.05), T=12)
        assert res.syndrome_matched
        assert in_rowspace(code.A, e ^ res.inferred)


def test_equal_degree_symmetry(toric4):
    g = TannerGraph(toric4.B)
    pri = np.full((1, g.n), prior_llr(0.02))
    vc = variable_to_check(np.zeros((1, g.n_edges)), pri, g)
    cv = check_to_variable(vc, np.zeros((1, g.m), dtype=int), g)
    vc2 = variable_to_check(cv, pri, g)
    assert np.ptp(vc2) == 0.0


def test_messages_stay_finite(toric4):
    g = TannerGraph(toric4.sector("xz").check)
    rng = np.random.default_rng(3)
    syn = rng.integers(0, 2, (2000, g.m))
    pri = rng.choice([-30.0, -3.0, 0.0, 0.5, 4.6, 30.0], size=(2000, g.n))
    mu = bp_decode_batch(g, syn, pri, T=15)
    assert np.isfinite(mu).all()
    bound = 2 * math.atanh(1 - 1e-4) * g.var_degree.max() + np.abs(pri).max()
    assert np.abs(mu).max() <= bound


def test_batch_matches_single_and_is_deterministic(toric4):
    g = TannerGraph(toric4.B)
    rng = np.random.default_rng(4)
    syn = rng.integers(0, 2, (5, g.m))
    batch = bp_decode_batch(g, syn, np.full(g.n, prior_llr(0.03)), T=7)
    for i in range(5):
        one = bp_decode(g, syn[i], prior_llr(0.03), T=7)
        assert np.array_equal(one.marginals, batch[i])
        assert one.to_json_obj() == bp_decode(g, syn[i], prior_llr(0.03), T=7).to_json_obj()


def test_decode_rejects_bad_input(rep3):
    g = TannerGraph(rep3)
    with pytest.raises(ValueError):
        bp_decode(g, [1, 0, 0], 1.0, T=3)
    with pytest.raises(ValueError):
        bp_decode(g, [1, 0], 1.0, T=0)
