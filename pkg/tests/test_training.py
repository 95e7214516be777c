import itertools
import math

import numpy as np
import pytest

from qnbp.bp import TannerGraph, prior_llr
from qnbp.codes import CssCode, bicycle_code, toric_code
from qnbp.evaluation import NBPDecoder, monte_carlo
from qnbp.gf2 import BitMatrix, gf2_nullspace, in_rowspace_many
from qnbp.nbp import init_identity, nbp_forward, tie_weights_toric
from qnbp.training import (AdamState, ConfigError, LossSpec, NumericalAbort, TrainConfig,
                           adam_step, backward, classical_bce_loss, cycle_loss,
                           cycle_loss_per_sample, default_rates, degeneracy_loss, fermi_sigma,
                           history_csv, sample_minibatch, sgd_step, smooth_parity, train)

from conftest import random_tree_code

SAT = 50.0  # |μ| large enough that σ(μ) underflows below 1e-21


def saturated(e_inf):
    return np.where(np.asarray(e_inf) == 1, -SAT, SAT)


def fd_check(model, syn, pri, errors, spec, idx, rel_tol=1e-4, abs_tol=1e-8):
    """Central differences on the listed flat parameters; returns worst score."""
    grad = backward(nbp_forward(model, syn, pri), model, errors, spec)
    theta = model.flat()
    worst = 0.0
    for i in idx:
        h = 1e-4 * max(1.0, abs(theta[i]))
        vals = []
        for s in (1, -1):
            t = theta.copy()
            t[i] += s * h
            model.set_flat(t)
            vals.append(cycle_loss(nbp_forward(model, syn, pri), errors, spec))
        model.set_flat(theta)
        fd = (vals[0] - vals[1]) / (2 * h)
        a = grad[i]
        if abs(a) < 1e-6:
            assert abs(a - fd) <= abs_tol, (i, a, fd)
        else:
            r = abs(a - fd) / max(abs(a), abs(fd))
            assert r <= rel_tol, (i, a, fd)
            worst = max(worst, r)
    return worst


# ---------------------------------------------------------------- elementwise

def test_fermi_sigma():
    assert fermi_sigma(0.0) == 0.5
    assert fermi_sigma(math.log(3)) == pytest.approx(0.25, abs=1e-15)
    x = np.random.default_rng(0).normal(0, 30, 1000)
    assert np.allclose(fermi_sigma(x) + fermi_sigma(-x), 1.0, atol=1e-15)
    with np.errstate(all="raise"):
        assert fermi_sigma(800.0) == 0.0 and fermi_sigma(-800.0) == 1.0


def test_smooth_parity():
    assert smooth_parity(0.0) == 0.0 and smooth_parity(2.0) == 0.0
    assert smooth_parity(1.0) == 1.0
    assert smooth_parity(0.5) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    x = np.random.default_rng(1).uniform(-10, 10, 200)
    assert np.allclose(smooth_parity(x), smooth_parity(x + 2), atol=1e-12)
    assert np.allclose(smooth_parity(x), np.abs(np.sin(np.pi * x / 2)), atol=1e-12)


# ---------------------------------------------------------------- losses

def test_degeneracy_loss_examples(toric2):
    sec = toric2.sector("x")
    G = sec.loss_matrix
    e = np.zeros(8, dtype=np.uint8)
    e[[0, 5]] = 1
    assert degeneracy_loss(saturated(e), e, G) <= 1e-15
    stab = e ^ sec.stabilizers.dense[0]
    assert degeneracy_loss(saturated(stab), e, G) <= 1e-15
    logical = gf2_nullspace(sec.check).dense
    logical = next(r for r in logical if not in_rowspace_many(sec.stabilizers, r[None])[0])
    assert degeneracy_loss(saturated(e ^ logical), e, G) >= 1
    with pytest.raises(ValueError):
        degeneracy_loss(np.zeros(7), np.zeros(7), G)


def test_bce_examples():
    e = np.array([0, 1, 1, 0])
    assert classical_bce_loss(np.zeros(4), e) == pytest.approx(4 * math.log(2))
    assert classical_bce_loss(np.full(4, 60.0), np.zeros(4)) < 1e-20
    assert classical_bce_loss([-math.log(3)], [1]) == pytest.approx(0.2876821, abs=1e-7)
    # the 1e-30 floor caps a confident miss at ln(1e30)
    assert classical_bce_loss([800.0], [1]) == pytest.approx(30 * math.log(10))


def test_loss_zero_iff_stabilizer_equivalent(toric2):
    # exhaustive over all pairs of weight <= 2 errors on the joint sector
    sec = toric2.sector("xz")
    n = sec.n
    low = [np.zeros(n, dtype=np.uint8)]
    for w in (1, 2):
        for sup in itertools.combinations(range(n), w):
            v = np.zeros(n, dtype=np.uint8)
            v[list(sup)] = 1
            low.append(v)
    low = np.array(low)
    E = np.repeat(low, len(low), axis=0)
    I = np.tile(low, (len(low), 1))
    loss = degeneracy_loss(saturated(I), E, sec.loss_matrix)
    assert (loss >= 0).all()
    stab = in_rowspace_many(sec.stabilizers, E ^ I)
    assert np.array_equal(loss <= 1e-12, stab)
    assert loss[~stab].min() >= 1 - 1e-12


def test_loss_discrimination(toric2):
    sec = toric2.sector("xz")
    e = np.zeros(16, dtype=np.uint8)
    e[3] = 1
    degenerate = e ^ sec.stabilizers.dense[2]
    mu = saturated(degenerate)
    assert degeneracy_loss(mu, e, sec.loss_matrix) <= 1e-12
    assert classical_bce_loss(mu, e) > sec.n * 10


def test_cycle_loss_modes(toric2_xz_graph, toric2):
    g = toric2_xz_graph
    G = toric2.sector("xz").loss_matrix
    rng = np.random.default_rng(2)
    syn = rng.integers(0, 2, (4, g.m))
    pri = np.full((4, g.n), prior_llr(0.05))
    err = rng.integers(0, 2, (4, g.n))
    one = nbp_forward(init_identity(g, 1), syn, pri)
    assert cycle_loss(one, err, LossSpec("final_cycle", "degeneracy", G)) == \
        cycle_loss(one, err, LossSpec("cycle_averaged", "degeneracy", G))
    tr = nbp_forward(init_identity(g, 4), syn, pri)
    avg = cycle_loss(tr, err, LossSpec("cycle_averaged", "degeneracy", G))
    per = [degeneracy_loss(mu, err, G).mean() for mu in tr.marginals]
    assert avg == pytest.approx(np.mean(per), rel=1e-14)
    tr.marginals = [tr.marginals[0]] * 4
    assert cycle_loss(tr, err, LossSpec("cycle_averaged", "degeneracy", G)) == \
        pytest.approx(cycle_loss(tr, err, LossSpec("final_cycle", "degeneracy", G)), rel=1e-14)
    assert cycle_loss_per_sample(tr, err, LossSpec("final_cycle", "classical_bce")).shape == (4,)


def test_loss_spec_validation(toric2):
    with pytest.raises(ValueError):
        LossSpec("sometimes", "degeneracy", toric2.sector("x").loss_matrix)
    with pytest.raises(ValueError):
        LossSpec("final_cycle", "degeneracy", None)


# ---------------------------------------------------------------- gradients

def _perturbed(model, rng, scale=0.3):
    model.set_flat(1 + scale * rng.normal(size=model.n_params))
    return model


@pytest.mark.parametrize("residual", [False, True])
@pytest.mark.parametrize("kind,target", [("cycle_averaged", "degeneracy"),
                                         ("final_cycle", "degeneracy"),
                                         ("cycle_averaged", "classical_bce")])
def test_gradient_toric_l2(toric2, residual, kind, target):
    sec = toric2.sector("xz")
    g = TannerGraph(sec.check)
    rng = np.random.default_rng(10)
    m = _perturbed(init_identity(g, 3, residual), rng)
    mb = sample_minibatch(toric2, "xz", default_rates(), 2, rng)
    spec = LossSpec(kind, target, sec.loss_matrix if target == "degeneracy" else None)
    idx = rng.choice(m.n_params, 60, replace=False)
    fd_check(m, mb.syndromes, mb.priors, mb.errors, spec, idx)


def test_gradient_tree_code():
    rng = np.random.default_rng(12)
    H = random_tree_code(9, rng)
    code = CssCode("tree", BitMatrix.from_dense(H), BitMatrix.zeros(1, 9))
    sec = code.sector("z")
    g = TannerGraph(sec.check)
    m = _perturbed(init_identity(g, 4, residual=True), rng)
    mb = sample_minibatch(code, "z", [0.05, 0.1, 0.2], 3, rng)
    spec = LossSpec("cycle_averaged", "degeneracy", sec.loss_matrix)
    fd_check(m, mb.syndromes, mb.priors, mb.errors, spec, range(m.n_params))


def test_gradient_small_bicycle():
    code = bicycle_code(16, 4, 4, seed=3)
    sec = code.sector("x")
    g = TannerGraph(sec.check)
    rng = np.random.default_rng(13)
    m = _perturbed(init_identity(g, 3), rng, 0.2)
    mb = sample_minibatch(code, "x", [0.02, 0.06], 3, rng)
    spec = LossSpec("cycle_averaged", "degeneracy", sec.loss_matrix)
    fd_check(m, mb.syndromes, mb.priors, mb.errors, spec, rng.choice(m.n_params, 80, replace=False))


def test_gradient_tied_model_sums_members(toric4):
    sec = toric4.sector("xz")
    g = TannerGraph(sec.check)
    rng = np.random.default_rng(14)
    base = init_identity(g, 2, True, lattice=toric4.lattice, sector="xz")
    mb = sample_minibatch(toric4, "xz", [0.03, 0.06], 3, rng)
    spec = LossSpec("cycle_averaged", "degeneracy", sec.loss_matrix)
    free = backward(nbp_forward(base, mb.syndromes, mb.priors), base, mb.errors, spec)
    tied = tie_weights_toric(base, period=(2, 2))
    g_tied = backward(nbp_forward(tied, mb.syndromes, mb.priors), tied, mb.errors, spec)
    cls = tied.class_index()
    want = np.bincount(cls, weights=free, minlength=cls.size)[cls]
    assert np.allclose(g_tied, want, rtol=1e-12, atol=1e-15)


def test_gradient_scale_and_dead_path(toric2):
    sec = toric2.sector("xz")
    g = TannerGraph(sec.check)
    rng = np.random.default_rng(15)
    m = init_identity(g, 3)
    mb = sample_minibatch(toric2, "xz", default_rates(), 2, rng)
    tr = nbp_forward(m, mb.syndromes, mb.priors)
    g1 = backward(tr, m, mb.errors, LossSpec(loss_matrix=sec.loss_matrix))
    g2 = backward(tr, m, mb.errors, LossSpec(loss_matrix=sec.loss_matrix, scale=2.0))
    assert np.array_equal(g2, 2 * g1)
    # first-cycle cvvc weights multiply all-zero incoming messages
    assert not g1[:g.n_pairs].any()


def test_backward_rejects_foreign_trace(toric2):
    g2 = TannerGraph(toric2.sector("xz").check)
    g3 = TannerGraph(toric_code(3).sector("xz").check)
    m2, m3 = init_identity(g2, 2), init_identity(g3, 2)
    tr = nbp_forward(m2, np.zeros(g2.m), 3.0)
    with pytest.raises(ValueError):
        backward(tr, m3, np.zeros((1, g3.n)), LossSpec("final_cycle", "classical_bce"))
    with pytest.raises(ValueError):
        backward(tr, init_identity(g2, 3), np.zeros((1, g2.n)), LossSpec("final_cycle", "classical_bce"))


# ---------------------------------------------------------------- optimizers

def test_sgd_step(toric2_xz_graph):
    m = init_identity(toric2_xz_graph, 1)
    sgd_step(m, np.zeros(m.n_params), 0.1)
    assert np.all(m.flat() == 1.0)
    sgd_step(m, np.full(m.n_params, 0.5), 2e-4)
    assert np.allclose(m.flat(), 0.9999, rtol=0, atol=1e-15)


def test_adam_first_step(toric2_xz_graph):
    m = init_identity(toric2_xz_graph, 1)
    grads = np.where(np.arange(m.n_params) % 2, 3.0, -0.01)
    state = AdamState.for_model(m)
    adam_step(m, grads, state, 1e-3)
    assert np.allclose(m.flat(), 1 - 1e-3 * np.sign(grads), rtol=0, atol=1e-9)
    before = m.flat()
    state2 = AdamState.for_model(m)
    adam_step(m, np.zeros(m.n_params), state2, 1e-3)
    assert np.array_equal(m.flat(), before)


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_tied_members_stay_equal(toric4, opt):
    sec = toric4.sector("xz")
    g = TannerGraph(sec.check)
    m = tie_weights_toric(init_identity(g, 2, lattice=toric4.lattice, sector="xz"), period=(2, 2))
    rng = np.random.default_rng(0)
    state = AdamState.for_model(m)
    spec = LossSpec(loss_matrix=sec.loss_matrix)
    for _ in range(5):
        mb = sample_minibatch(toric4, "xz", [0.04, 0.08], 3, rng)
        grads = backward(nbp_forward(m, mb.syndromes, mb.priors), m, mb.errors, spec)
        if opt == "sgd":
            sgd_step(m, grads, 0.05)
        else:
            adam_step(m, grads, state, 0.05)
        theta, cls = m.flat(), m.class_index()
        assert np.array_equal(theta, theta[cls])
    assert np.ptp(m.flat()) > 0


# ---------------------------------------------------------------- sampling

def test_sample_minibatch(toric4):
    rng = np.random.default_rng(0)
    mb = sample_minibatch(toric4, "xz", default_rates(), 20, rng)
    assert len(mb) == 120
    assert np.allclose(sorted(set(mb.rates)), [0.01, 0.018, 0.026, 0.034, 0.042, 0.05])
    assert np.array_equal(mb.syndromes, toric4.sector("xz").syndrome(mb.errors))
    assert np.allclose(mb.priors, prior_llr(mb.rates)[:, None])
    zero = sample_minibatch(toric4, "x", [1e-12], 50, rng)
    assert not zero.errors.any() and not zero.syndromes.any()


def test_sample_weight_statistics(toric4):
    rng = np.random.default_rng(1)
    mb = sample_minibatch(toric4, "x", [0.05], 100000, rng)
    n = mb.errors.shape[1]
    mean_w = mb.errors.sum(axis=1).mean()
    sigma = math.sqrt(n * 0.05 * 0.95 / 100000)
    assert abs(mean_w - 0.05 * n) < 3 * sigma


# ---------------------------------------------------------------- training loop

def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 1e-3, "learning_rate": 1})
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=100)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    cfg = TrainConfig(minibatches=3, seed=9)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert TrainConfig.load(path) == cfg


def test_zero_minibatches_is_identity(toric2):
    model, hist = train(TrainConfig(n_cycles=3, minibatches=0, residual=False), toric2)
    assert hist == [] and np.all(model.flat() == 1.0)


def test_training_is_deterministic(toric2, tmp_path):
    cfg = TrainConfig(n_cycles=3, minibatches=6, batch_size=12, optimizer="adam", lr=1e-2,
                      seed=3, eval_every=3, eval_trials=200, checkpoint_every=2)
    _, h1 = train(cfg, toric2, tmp_path / "a")
    _, h2 = train(cfg, toric2, tmp_path / "b")
    assert history_csv(h1) == history_csv(h2)
    for name in ("checkpoint_final.json", "checkpoint_000002.json", "history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert h1[2]["eval_total"] is not None and h1[0]["eval_total"] is None
    assert (tmp_path / "a" / "history.csv").read_text().splitlines()[0] == \
        "minibatch,mean_loss,eval_p,eval_flagged,eval_unflagged,eval_total"


def test_nan_aborts(toric2):
    g = TannerGraph(toric2.sector("xz").check)
    m = init_identity(g, 2)
    m.marg_b[0] = np.nan
    with pytest.raises(NumericalAbort):
        train(TrainConfig(n_cycles=2, minibatches=1, batch_size=6), toric2, model=m)


@pytest.mark.slow
def test_sgd_recipe_beats_identity(toric4):
    """lr 2e-4, 1500 minibatches, defaults otherwise: better than the untrained network."""
    cfg = TrainConfig(n_cycles=12, lr=2e-4, minibatches=1500, seed=1)
    model, hist = train(cfg, toric4)
    identity = init_identity(model.graph, 12, cfg.residual)
    trained = monte_carlo(NBPDecoder(model), toric4, "xz", 0.01, 50000, seed=21)
    untrained = monte_carlo(NBPDecoder(identity), toric4, "xz", 0.01, 50000, seed=21)
    assert trained.failure_rate < untrained.failure_rate
    assert trained.wilson()[1] < untrained.wilson()[0]
