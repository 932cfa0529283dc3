import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from o2nc.hardinstance import (
    G0,
    H0,
    GAMMA0,
    HardInstance,
    chain_build,
    make_hard_instance,
    make_nonsmooth_hard_instance,
    phi,
    phi_prime,
    prog,
    psi,
    psi_prime,
    q_grad,
    q_hess,
    q_value,
    rho,
    rho_jacobian,
    rho_jacobian_apply,
    sample_orthonormal,
    stress_sgd,
    zero_chain_oracle,
)
from o2nc.objective import central_difference_grad
from o2nc.seeding import derive_rng


def test_prog_examples():
    assert prog([0.5, 0.1, 0.0], 0.25) == 1
    assert prog([0.0, 0.0, 0.0], 0.0) == 0
    assert prog([1.0, 0.0, 2.0], 0.5) == 3
    assert prog([0.0, 1e-300], 0.0) == 2
    with pytest.raises(ValueError):
        prog([1.0], -0.1)


def test_bump_functions():
    assert psi(np.array([0.5]))[0] == 0.0
    assert psi(np.array([1.0]))[0] == pytest.approx(1.0)
    assert phi(0.0) == pytest.approx(math.sqrt(2 * math.pi * math.e) / 2)
    rng = derive_rng(0, "bumps")
    for x in rng.uniform(0.55, 3.0, 50):
        h = 1e-6
        assert psi_prime(np.array([x]))[0] == pytest.approx((psi(np.array([x + h])) - psi(np.array([x - h])))[0] / (2 * h),
                                                             rel=1e-5, abs=1e-9)
        assert phi_prime(x) == pytest.approx((phi(x + h) - phi(x - h)) / (2 * h), rel=1e-6)


@pytest.mark.parametrize("T", [1, 2, 3, 7])
def test_chain_properties_sampled(T):
    F = chain_build(T)
    assert F.value(np.zeros(T)) == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.norm(F.grad(np.zeros(T))) >= 1.0
    rng = derive_rng(T, "chain-props")
    for _ in range(2000):
        x = rng.uniform(-5, 5, T)
        y = x + rng.normal(size=T) * 0.1
        assert F.value(x) >= -GAMMA0 * T
        gx = F.grad(x)
        assert np.max(np.abs(gx)) <= G0
        assert np.linalg.norm(gx - F.grad(y)) <= H0 * np.linalg.norm(x - y)
        assert prog(gx, 0.0) <= prog(x, 0.5) + 1
        if prog(x, 1.0) < T:
            assert np.linalg.norm(gx) >= 1.0


def test_chain_min_T2_dense():
    F = chain_build(2)
    xs = derive_rng(1, "chain-t2").uniform(-5, 5, (10_000, 2))
    assert min(F.value(x) for x in xs) >= -24.0


def test_chain_gradient_matches_fd():
    F = chain_build(4)
    rng = derive_rng(2, "chain-fd")
    for _ in range(50):
        x = rng.uniform(-2, 2, 4)
        fd = central_difference_grad(F.value, x, 1e-6)
        np.testing.assert_allclose(F.grad(x), fd, rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError):
        F.value(np.zeros(3))
    with pytest.raises(ValueError):
        chain_build(0)


def test_zero_chain_examples():
    F = chain_build(5)
    x = np.array([1.2, 0.8, 0.1, 0.0, 0.0])
    for s in range(20):
        np.testing.assert_array_equal(zero_chain_oracle(F, x, 1.0, seed=s), F.grad(x))
    j = prog(x, 0.25)
    assert zero_chain_oracle(F, x, 0.3, z=0, mode="literal")[j - 1] == 0.0
    g0 = zero_chain_oracle(F, x, 0.3, z=0)
    assert prog(g0, 0.0) <= j
    assert prog(zero_chain_oracle(F, x, 0.3, z=1), 0.0) == j + 1
    with pytest.raises(ValueError):
        zero_chain_oracle(F, x, 0.0)
    with pytest.raises(ValueError):
        zero_chain_oracle(F, x, 0.5, mode="other")


@pytest.mark.parametrize("mode", ["shifted", "literal"])
def test_zero_chain_unbiased(mode):
    F = chain_build(4)
    x = np.array([1.1, 0.7, 0.05, 0.0])
    p = 0.3
    rng = derive_rng(3, f"zc-{mode}")
    n = 100_000
    gs = np.array([zero_chain_oracle(F, x, p, seed=rng, mode=mode) for _ in range(n)])
    se = gs.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(gs.mean(axis=0) - F.grad(x)) <= 3 * se + 1e-9 * np.abs(F.grad(x)))
    assert np.max(np.linalg.norm(gs, axis=1)) <= G0 / p + G0 * math.sqrt(4)


@given(st.integers(0, 10**6), st.floats(0.05, 1.0))
def test_zero_chain_property_shifted(seed, p):
    F = chain_build(6)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=6) * rng.uniform(0, 2)
    x[rng.integers(0, 7):] = 0.0
    for z in (0, 1):
        g = zero_chain_oracle(F, x, p, z=z)
        j = prog(x, 0.25)
        assert prog(g, 0.0) <= j + 1
        if z == 0:
            assert prog(g, 0.0) <= j


def test_rho_examples():
    R = 3.0
    np.testing.assert_array_equal(rho(np.zeros(3), R), np.zeros(3))
    np.testing.assert_array_equal(rho_jacobian(np.zeros(3), R), np.eye(3))
    u = np.array([0.6, 0.8, 0.0])
    np.testing.assert_allclose(rho(R * u, R), R / math.sqrt(2) * u)
    rng = derive_rng(4, "rho-big")
    for _ in range(100):
        x = rng.normal(size=3) * 10 ** rng.uniform(0, 8)
        assert np.linalg.norm(rho(x, R)) < R
    with pytest.raises(ValueError):
        rho(np.ones(2), 0.0)


@given(st.integers(0, 10**6), st.floats(0.5, 50.0))
def test_rho_contraction_and_jacobian(seed, R):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=4) * R, rng.normal(size=4) * R
    assert np.linalg.norm(rho(x, R) - rho(y, R)) <= np.linalg.norm(x - y) * (1 + 1e-12)
    fd = np.column_stack([(rho(x + 1e-6 * R * e, R) - rho(x - 1e-6 * R * e, R)) / (2e-6 * R) for e in np.eye(4)])
    J = rho_jacobian(x, R)
    np.testing.assert_allclose(J, fd, atol=1e-7)
    v = rng.normal(size=4)
    np.testing.assert_allclose(rho_jacobian_apply(x, R, v), J @ v)


def test_q_examples():
    B = 2.0
    assert q_value(np.zeros(3), B) == 0.0
    np.testing.assert_array_equal(q_grad(np.zeros(3), B), np.zeros(3))
    np.testing.assert_array_equal(q_hess(np.zeros(3), B), 2 * np.eye(3))
    assert q_value(np.array([B]), B) == pytest.approx(B**2 / math.sqrt(2))


@given(st.integers(0, 10**6), st.integers(1, 10), st.floats(0.5, 100.0))
def test_q_bounds(seed, d, B):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=d) * B * 10 ** rng.uniform(-2, 2)
    g = q_grad(x, B)
    s = math.sqrt(1 + float(x @ x) / B**2)
    n = np.linalg.norm(x) / s
    assert n * (1 - 1e-12) <= np.linalg.norm(g) <= 3 * n * (1 + 1e-12)
    assert np.linalg.norm(g) <= 3 * B
    assert np.linalg.norm(q_hess(x, B), 2) <= 8.0


def test_sample_orthonormal_examples():
    U = sample_orthonormal(1, 1, seed=0)
    assert abs(U[0, 0]) == 1.0
    U = sample_orthonormal(5, 2, seed=1)
    np.testing.assert_allclose(np.linalg.norm(U, axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-10)
    np.testing.assert_array_equal(U, sample_orthonormal(5, 2, seed=1))
    with pytest.raises(ValueError):
        sample_orthonormal(2, 3)


def test_stiefel_first_entry_second_moment():
    n = 10_000
    vals = np.array([sample_orthonormal(50, 3, seed=s)[0, 0] ** 2 for s in range(n)])
    assert abs(vals.mean() - 1 / 50) <= 3 * vals.std(ddof=1) / math.sqrt(n)


def test_hard_instance_invariants_and_gradient():
    inst = HardInstance.build(T=4, d=12, p=0.5, seed=2)
    assert inst.R == inst.B == 10 * G0 * 2
    np.testing.assert_allclose(inst.U.T @ inst.U, np.eye(4), atol=1e-10)
    assert inst.value(np.zeros(12)) == pytest.approx(0.0, abs=1e-12)
    rng = derive_rng(0, "hard-fd")
    for _ in range(10):
        x = rng.normal(size=12) * 3
        fd = central_difference_grad(inst.hat_value, x, 1e-5)
        np.testing.assert_allclose(inst.hat_grad(x), fd, rtol=1e-5, atol=1e-5)
    with pytest.raises(ValueError):
        HardInstance.build(T=4, d=3)


def test_hard_instance_lipschitz_metadata():
    T = 4
    inst = HardInstance.build(T=T, d=16, p=0.25, seed=5)
    rng = derive_rng(5, "hard-lip")
    orc = inst.oracle()
    for _ in range(300):
        x = rng.normal(size=16) * 10 ** rng.uniform(-1, 2.5)
        y = x + rng.normal(size=16) * 0.5
        dx = np.linalg.norm(x - y)
        assert abs(inst.hat_value(x) - inst.hat_value(y)) <= 92 * math.sqrt(T) * dx
        assert np.linalg.norm(inst.hat_grad(x) - inst.hat_grad(y)) <= 156 * dx
        assert np.linalg.norm(orc(x, rng)) <= G0 / inst.p + 92 * math.sqrt(T)
    assert orc.check.violations == 0


def test_hard_oracle_unbiased():
    inst = HardInstance.build(T=3, d=9, p=0.2, seed=1)
    x = inst.U @ np.array([1.0, 0.6, 0.0]) * 1.01
    orc = inst.oracle()
    rng = derive_rng(1, "hard-unbiased")
    g = orc.batch(x, 20_000, rng)
    se = g.std(axis=0, ddof=1) / math.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - inst.grad(x)) <= 4 * se + 1e-9 * np.abs(inst.grad(x)))
    assert orc.calls == 20_000 and orc.check.violations == 0


def test_make_hard_instance_unit_scale():
    gamma = 12 * 156 * 4 * 0.25 * 3 / 156  # gives T = 3 with H = 156, eps = 1/2
    inst = make_hard_instance(gamma, 156.0, 0.5, 1000.0, seed=0, d=12)
    assert inst.lam == pytest.approx(1.0)
    assert inst.value_scale == pytest.approx(1.0)
    assert inst.T == 3
    assert inst.p == pytest.approx(min(23.0**2 / 1000.0**2, 1.0))
    assert inst.value(np.zeros(12)) == pytest.approx(0.0, abs=1e-12)
    assert inst.meta["G"] == pytest.approx(3 * math.sqrt(156 * gamma))
    assert inst.pin_threshold == 0.5
    noisier = make_hard_instance(gamma, 156.0, 0.5, 10_000.0, d=12)
    assert noisier.p < inst.p


def test_make_hard_instance_scaled_metadata():
    H, eps, gamma = 2.0, 0.05, 100.0
    inst = make_hard_instance(gamma, H, eps, 1.0, seed=3, d=40)
    lam = 156 / H * 2 * eps
    assert inst.lam == pytest.approx(lam)
    assert inst.T == math.floor(H * gamma / (12 * 156 * 4 * eps**2))
    rng = derive_rng(3, "scaled")
    for _ in range(100):
        x = rng.normal(size=inst.d) * lam * 5
        y = x + rng.normal(size=inst.d) * lam * 0.1
        assert np.linalg.norm(inst.grad(x) - inst.grad(y)) <= H * np.linalg.norm(x - y) * (1 + 1e-9)
        assert inst.value(np.zeros(inst.d)) - inst.value(x) <= gamma
    with pytest.raises(ValueError):
        make_hard_instance(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        make_hard_instance(gamma, H, eps, 1.0, d=2)


def test_make_nonsmooth_hard_instance():
    gamma = 12 * 156 * 4 * 3 / 0.5  # T = 3 at H = 1/2, eps' = 1
    G = 3 * math.sqrt(2 * 0.5 * gamma / 1.0)
    inst = make_nonsmooth_hard_instance(1.0, 0.5, gamma, G, d=12)
    assert inst.meta["smoothness"] == 0.5
    assert inst.meta["G"] == pytest.approx(G / math.sqrt(2))
    assert inst.pin_threshold == 1.0
    with pytest.raises(ValueError):
        make_nonsmooth_hard_instance(1.0, 0.5, gamma, 0.0)


def test_default_dimension_warns():
    with pytest.warns(UserWarning):
        inst = HardInstance.build(T=3, p=0.5)
    assert inst.d == 30


def test_stress_sgd_small():
    inst = HardInstance.build(T=5, d=40, p=0.2, seed=0)
    rep = stress_sgd(inst, 2000, lr=0.01, seed=0)
    assert rep.zero_chain_violations == 0 and rep.pin_violations == 0
    assert rep.unfired_reveals == 0
    assert rep.min_pinned_grad >= 0.5


def test_literal_mode_can_reveal_without_firing():
    """With the coordinate-j scaling a zero draw may still expose coordinate j + 1."""
    F = chain_build(3)
    x = np.array([1.0, 0.9, 0.0])  # |x_2| > 1/2 so Psi(x_2) > 0 feeds coordinate 3
    g = zero_chain_oracle(F, x, 0.5, z=0, mode="literal")
    assert prog(g, 0.0) == prog(x, 0.25) + 1
