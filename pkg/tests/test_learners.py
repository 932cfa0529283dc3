import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from o2nc.learners import (
    OGD,
    CarefulHintsOMD,
    OptimisticOMD,
    PerCoordinateOGD,
    ProtocolError,
    ResetWrapper,
    build_comparators,
    careful_hints,
    fresh_state,
    make_learner,
    ogd_regret_bound,
    ogd_step,
    omd_regret_bound,
    omd_step,
    omd_update,
    percoord_ogd_step,
    project_l2_ball,
    project_linf_ball,
    realized_regret,
    reset_wrapper,
)
from o2nc.objective import make_test_function

vec = hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(-1e3, 1e3))


def test_project_l2_examples():
    np.testing.assert_array_equal(project_l2_ball([3.0, 4.0], 10.0), [3.0, 4.0])
    np.testing.assert_allclose(project_l2_ball([6.0, 8.0], 5.0), [3.0, 4.0])
    np.testing.assert_array_equal(project_l2_ball([0.0, 0.0], 0.0), [0.0, 0.0])
    with pytest.raises(ValueError):
        project_l2_ball([1.0], -1.0)


@given(vec, st.floats(0, 100))
def test_projection_properties(x, D):
    p = project_l2_ball(x, D)
    assert np.linalg.norm(p) <= D * (1 + 1e-12) + 1e-300
    if np.linalg.norm(x) <= D:
        np.testing.assert_array_equal(p, x)
    q = project_linf_ball(x, D)
    assert np.max(np.abs(q)) <= D


def _state(kind, delta, eta, D):
    s = fresh_state(kind, len(delta), D, eta)
    from dataclasses import replace

    return replace(s, delta=np.asarray(delta, float), shadow=np.asarray(delta, float))


def test_ogd_step_examples():
    _, nxt = ogd_step(fresh_state("ogd", 2, 5.0, 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(nxt, [-1.0, 0.0])
    _, nxt = ogd_step(fresh_state("ogd", 2, 0.5, 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(nxt, [-0.5, 0.0])
    _, nxt = ogd_step(_state("ogd", [-1.0, 0.0], 1.0, 5.0), [0.0, 0.0])
    np.testing.assert_array_equal(nxt, [-1.0, 0.0])
    with pytest.raises(ValueError):
        ogd_step(fresh_state("ogd", 2, 1.0, 1.0), [1.0, 2.0, 3.0])


def test_fresh_state_is_zero():
    s = fresh_state("ogd", 3, 1.0, 0.1)
    np.testing.assert_array_equal(s.delta, np.zeros(3))
    assert s.round == 0


def test_percoord_examples():
    _, nxt = percoord_ogd_step(fresh_state("percoord", 2, 10.0, np.array([1.0, 2.0])), [1.0, 1.0])
    np.testing.assert_array_equal(nxt, [-1.0, -2.0])
    _, nxt = percoord_ogd_step(fresh_state("percoord", 2, 0.5, np.array([1.0, 1.0])), [3.0, -3.0])
    np.testing.assert_array_equal(nxt, [-0.5, 0.5])
    _, nxt = percoord_ogd_step(_state("percoord", [0.1, 0.2], np.array([1.0, 1.0]), 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(nxt, [0.1, 0.2])
    with pytest.raises(ValueError):
        percoord_ogd_step(fresh_state("percoord", 2, 1.0, np.array([1.0, 1.0, 1.0])), [1.0, 1.0])


def test_omd_examples():
    s, d = omd_step(fresh_state("omd", 2, 5.0, 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(d, [0.0, 0.0])
    s, d = omd_step(fresh_state("omd", 2, 0.25, 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(d, [-0.25, 0.0])
    s2 = omd_update(s, [2.0, 0.0])
    np.testing.assert_array_equal(s2.shadow, [-0.25, 0.0])
    with pytest.raises(ProtocolError):
        omd_update(s2, [1.0, 0.0])


def test_omd_perfect_hint_zero_variation_term():
    g = np.array([[0.3, -0.1], [0.2, 0.5]])
    assert omd_regret_bound(1.0, 0.5, g, g) == pytest.approx(1.0)  # only D^2 / (2 eta)


def test_two_phase_protocol_errors():
    L = OGD(2, 1.0, 0.1)
    with pytest.raises(ProtocolError):
        L.update([1.0, 0.0])
    L.propose()
    with pytest.raises(ProtocolError):
        L.propose()
    with pytest.raises(ProtocolError):
        L.reset()


def test_reset_wrapper_examples():
    gs = [np.array([1.0, 0.0]), np.array([0.0, 2.0]), np.array([-1.0, 1.0]), np.array([3.0, 0.0])]
    eta, D = 0.5, 10.0
    # T = 2: hand unroll
    w = reset_wrapper(OGD(2, D, eta), 2)
    out = []
    for g in gs:
        out.append(w.propose())
        w.update(g)
    np.testing.assert_array_equal(out[0], [0, 0])
    np.testing.assert_allclose(out[1], -eta * gs[0])
    np.testing.assert_array_equal(out[2], [0, 0])  # fresh state at round 3
    np.testing.assert_allclose(out[3], -eta * gs[2])
    # T = 1: every offset is the fresh zero
    w1 = ResetWrapper(OGD(2, D, eta), 1)
    for g in gs:
        np.testing.assert_array_equal(w1.propose(), [0, 0])
        w1.update(g)
    # T = N: same as unwrapped
    a, b = ResetWrapper(OGD(2, D, eta), 4), OGD(2, D, eta)
    for g in gs:
        np.testing.assert_array_equal(a.propose(), b.propose())
        a.update(g)
        b.update(g)
    with pytest.raises(ValueError):
        ResetWrapper(OGD(2, D, eta), 0)


def test_build_comparators_examples():
    c = build_comparators([[[3.0, 4.0]]], 1.0, "l2")
    np.testing.assert_allclose(c.us[0], [-0.6, -0.8])
    c = build_comparators([[[1.0, 1.0], [-1.0, -1.0]]], 1.0, "l2")
    np.testing.assert_array_equal(c.us[0], [0.0, 0.0])
    c = build_comparators([[[2.0, -5.0, 0.0]]], 0.5, "l1")
    np.testing.assert_array_equal(c.us[0], [-0.5, 0.5, 0.0])


def test_realized_regret_examples():
    gs = np.array([[1.0, 0.0], [0.0, 1.0]])
    comps = build_comparators([gs], 1.0)
    assert realized_regret(np.zeros((2, 2)), np.ones((2, 2)), comps) == 0.0
    u = np.repeat(comps.us, 2, axis=0)
    assert realized_regret(gs, u, comps) == pytest.approx(0.0, abs=1e-15)
    deltas = np.array([[0.0, 0.0], [-1.0, 0.0]])
    from o2nc.learners import ComparatorSequence

    cs = ComparatorSequence(us=np.array([[-1.0, -1.0]]) / math.sqrt(2), T=2)
    brute = sum(float(g @ (dl - cs.us[0])) for g, dl in zip(gs, deltas))
    assert realized_regret(gs, deltas, cs) == pytest.approx(brute)
    # <g1, 0 - u> + <g2, (-1, 0) - u> = 1/sqrt2 + 1/sqrt2
    assert brute == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        realized_regret(gs[:1], deltas[:1], cs)


def test_constant_sequence_unroll():
    """Constant g = (G, 0, ...), T = 4, eta = D / (2G): hand-unrolled regret."""
    G, D, T = 2.0, 1.0, 4
    eta = D / (G * 2)
    L = OGD(3, D, eta)
    gs = np.tile([G, 0.0, 0.0], (T, 1))
    deltas = []
    for g in gs:
        deltas.append(L.propose())
        L.update(g)
    # offsets: 0, -eta G = -0.5, -1.0, -1.0 (clipped) on the first axis
    np.testing.assert_allclose(np.array(deltas)[:, 0], [0.0, -0.5, -1.0, -1.0])
    comps = build_comparators([gs], D)
    hand = G * (0.0 - 0.5 - 1.0 - 1.0) + T * G * D
    assert realized_regret(gs, np.array(deltas), comps) == pytest.approx(hand)
    assert hand <= ogd_regret_bound(D, eta, gs) <= D * G * math.sqrt(T) + 1e-12


@given(st.integers(1, 64), st.integers(1, 4), st.integers(0, 10**6))
def test_ogd_regret_property(T, d, seed):
    rng = np.random.default_rng(seed)
    G, D = 1.5, 0.7
    gs = rng.normal(size=(T, d))
    gs *= G * rng.random((T, 1)) / np.maximum(np.linalg.norm(gs, axis=1, keepdims=True), 1e-12)
    eta = D / (G * math.sqrt(T))
    L = OGD(d, D, eta)
    deltas = []
    for g in gs:
        dl = L.propose()
        assert np.linalg.norm(dl) <= D * (1 + 1e-12)
        deltas.append(dl)
        L.update(g)
    reg = realized_regret(gs, np.array(deltas), build_comparators([gs], D))
    bound = ogd_regret_bound(D, eta, gs)
    assert reg <= bound * (1 + 1e-12) + 1e-12
    assert bound <= D * G * math.sqrt(T) * (1 + 1e-12)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10**6))
def test_shifting_regret_sum_property(T, K, seed):
    rng = np.random.default_rng(seed)
    d, D = 2, 1.0
    gs = rng.uniform(-1, 1, size=(T * K, d))
    eta = 0.3
    L = ResetWrapper(OGD(d, D, eta), T)
    deltas = []
    for g in gs:
        deltas.append(L.propose())
        L.update(g)
    windows = gs.reshape(K, T, d)
    comps = build_comparators(windows, D)
    reg = realized_regret(gs, np.array(deltas), comps)
    assert reg <= sum(ogd_regret_bound(D, eta, w) for w in windows) + 1e-12


@given(st.integers(1, 64), st.integers(0, 10**6))
def test_omd_regret_property(T, seed):
    rng = np.random.default_rng(seed)
    d, D, eta = 3, 1.0, 0.2
    gs = rng.normal(size=(T, d))
    hs = gs + rng.normal(size=(T, d)) * rng.random()
    L = OptimisticOMD(d, D, eta, hint_fn=lambda t: hs[t])
    deltas = []
    for g in gs:
        deltas.append(L.propose())
        L.update(g)
    reg = realized_regret(gs, np.array(deltas), build_comparators([gs], D))
    assert reg <= omd_regret_bound(D, eta, gs, hs) + 1e-12


def test_percoord_offsets_respect_box():
    L = PerCoordinateOGD(3, 0.2, np.array([0.5, 1.0, 2.0]))
    rng = np.random.default_rng(0)
    for _ in range(100):
        dl = L.propose()
        assert np.max(np.abs(dl)) <= 0.2
        L.update(rng.normal(size=3) * 5)


def test_careful_hints_examples():
    cm = make_test_function("cosine_mixture", d=3)
    x = np.array([0.1, 0.5, -0.3])
    np.testing.assert_array_equal(careful_hints(cm, x, np.zeros(3), 0.5, 1.0, Q=0), cm.grad(x))
    A = np.array([[1.0, 2.0], [-1.0, 0.0]])
    ma = make_test_function("max_affine", A=A, d=2)
    ma.H = 1.0  # any H works: the gradient is constant in this region
    h, tr = careful_hints(ma, np.array([5.0, 5.0]), np.zeros(2), 0.1, 0.1, Q=3, trace=True)
    np.testing.assert_array_equal(tr.hints[1], tr.hints[0])
    assert tr.grad_evals == 4
    q = make_test_function("quadratic", h=2.0, c=0.0, d=2)
    _, tr = careful_hints(q, np.array([1.0, -2.0]), np.array([0.3, 0.1]), 0.25, 100.0, Q=2, trace=True)
    dif = tr.diffs
    assert dif[1] <= 0.5 * dif[0] + 1e-15


def test_careful_hints_errors():
    sv = make_test_function("sharp_valley", d=2)
    with pytest.raises(ValueError):
        careful_hints(sv, np.zeros(2), np.zeros(2), 0.1, 1.0, 1)
    q = make_test_function("quadratic", h=2.0, d=2)
    with pytest.raises(ValueError):
        careful_hints(q, np.zeros(2), np.zeros(2), 0.6, 1.0, 1)
    with pytest.raises(ValueError):
        careful_hints(q, np.zeros(2), np.zeros(2), 0.25, 1.0, -1)


@given(st.integers(0, 10**6), st.integers(1, 8))
def test_careful_hints_contraction_property(seed, Q):
    rng = np.random.default_rng(seed)
    cm = make_test_function("cosine_mixture", a=1.0, omega=2.0, d=3)
    eta = 1 / (2 * cm.H)
    D = rng.uniform(0.01, 3.0)
    x = rng.normal(size=3) * 2
    shadow = project_l2_ball(rng.normal(size=3), D)
    _, tr = careful_hints(cm, x, shadow, eta, D, Q, trace=True)
    dif = tr.diffs
    for a, b in zip(dif, dif[1:]):
        assert b <= 0.5 * a + 1e-13


def test_careful_hints_learner_counts_and_needs_anchor():
    cm = make_test_function("cosine_mixture", d=2)
    L = CarefulHintsOMD(cm, D=0.1, Q=3)
    assert L.state.eta == pytest.approx(1 / (2 * cm.H))
    with pytest.raises(ProtocolError):
        L.propose()
    L.propose(np.zeros(2))
    L.update(cm.grad(np.zeros(2)))
    assert L.grad_evals == 4


def test_make_learner_defaults():
    L = make_learner("ogd", 2, 1.0, G=2.0, T=16)
    assert L.state.eta == pytest.approx(1.0 / (2.0 * 4))
    P = make_learner("percoord", 2, 1.0, G=np.array([1.0, 2.0]), T=4)
    np.testing.assert_allclose(P.state.eta, [0.5, 0.25])
    with pytest.raises(ValueError):
        make_learner("ogd", 2, 1.0)
    with pytest.raises(ValueError):
        make_learner("bogus", 2, 1.0, eta=0.1)
