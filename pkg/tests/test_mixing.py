import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import custom_spec, make_spec
from mixgame.mixing import (
    PSDViolation,
    averaged_covariance,
    b_tilde,
    probe_tilde_regularity,
    psd_sqrt,
    sigma_tilde,
)
from mixgame.model import point_mass, probe_assumptions, uniform


def test_psd_sqrt_examples():
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    np.testing.assert_allclose(psd_sqrt(np.array([[6.25]])), [[2.5]])


def test_psd_sqrt_errors():
    with pytest.raises(PSDViolation, match="-1"):
        psd_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError, match="symmetric"):
        psd_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))
    # round-off negatives are clamped
    S = psd_sqrt(np.diag([1.0, -1e-12]))
    np.testing.assert_allclose(S, np.diag([1.0, 0.0]), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(0, 4))
def test_psd_sqrt_round_trip(seed, d, zeros):
    gen = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(gen.standard_normal((d, d)))
    lam = gen.uniform(0, 3, d)
    lam[: min(zeros, d)] = 0.0
    S0 = Q @ np.diag(lam) @ Q.T
    S0 = 0.5 * (S0 + S0.T)
    S = psd_sqrt(S0 @ S0)
    np.testing.assert_allclose(S, S0, atol=1e-7)
    np.testing.assert_allclose(S, S.T, atol=1e-12)
    assert np.linalg.eigvalsh(S).min() >= -1e-10
    np.testing.assert_allclose(S @ S, S0 @ S0, atol=1e-8 * max(1.0, np.abs(S0).max() ** 2))


def test_b_tilde_examples(pennies):
    assert b_tilde(pennies, 0.0, [0.0], uniform(2), uniform(2)) == pytest.approx([0.0], abs=1e-15)
    for i, u in enumerate((-1.0, 1.0)):
        for j, v in enumerate((-1.0, 1.0)):
            out = b_tilde(pennies, 0.0, [0.0], point_mass(i, 2), point_mass(j, 2))
            assert out == pytest.approx([u * v], abs=0)
    heat = make_spec("linear_drift", k=1.5, U=[0.0, 1.0], V=[0.0])
    assert b_tilde(heat, 0.0, [2.0], [0.3, 0.7], [1.0]) == pytest.approx([3.0])


def test_sigma_tilde_examples():
    spec = make_spec("switching_volatility", U=[1.0, 2.0], V=[0.0])
    assert sigma_tilde(spec, 0.0, [0.0], uniform(2), [1.0])[0, 0] == pytest.approx(np.sqrt(2.5), abs=1e-14)
    assert sigma_tilde(spec, 0.0, [0.0], point_mass(1, 2), [1.0])[0, 0] == pytest.approx(2.0)
    heat = make_spec("heat", d=2, s=1.7)
    np.testing.assert_allclose(sigma_tilde(heat, 0.0, [0.0, 0.0], [0.5, 0.5], [0.5, 0.5]), 1.7 * np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bilinearity_of_averages(seed):
    gen = np.random.default_rng(seed)
    spec = make_spec("switching_volatility", d=2, U=[0.5, 1.0, 3.0], V=[0.0, 1.0])
    spec_b = make_spec("matching_pennies", U=[-1.0, 0.5, 1.0], V=[-2.0, 1.0])
    x = gen.normal(size=2)
    mu1, mu2 = gen.dirichlet(np.ones(3), 2)
    nu = gen.dirichlet(np.ones(2))
    lam = gen.random()
    mix = lam * mu1 + (1 - lam) * mu2
    lhs = averaged_covariance(spec, 0.0, x, mix, nu)
    rhs = lam * averaged_covariance(spec, 0.0, x, mu1, nu) + (1 - lam) * averaged_covariance(spec, 0.0, x, mu2, nu)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    S = sigma_tilde(spec, 0.0, x, mix, nu)
    np.testing.assert_allclose(S @ S, lhs, atol=1e-8)
    lhs = b_tilde(spec_b, 0.0, x[:1], mix, nu)
    rhs = lam * b_tilde(spec_b, 0.0, x[:1], mu1, nu) + (1 - lam) * b_tilde(spec_b, 0.0, x[:1], mu2, nu)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_tilde_probe_constant_coefficients(pennies):
    rep = probe_tilde_regularity(pennies, 3.0, 300, seed=0)
    assert max(rep.lipschitz_estimate.values()) <= 1e-12


def test_tilde_probe_sine_volatility():
    spec = make_spec("sine_volatility", U=[0.0], V=[0.0])
    rep = probe_tilde_regularity(spec, 4.0, 2000, seed=3)
    assert rep.lipschitz_sigma[4.0] <= 1.0 + 1e-6
    assert rep.lipschitz_sigma[4.0] >= 0.9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_averaging_is_a_contraction(seed):
    def b(t, x, u, v):
        return np.sin(u * x) + v * x**2 / 10

    spec = custom_spec(b, lambda t, x, u, v: np.ones(np.broadcast_shapes(np.shape(t), x.shape[:-1], u.shape[:-1],
                                                                        v.shape[:-1]) + (1, 1)),
                       U=[0.5, 1.0, 2.0], V=[-1.0, 1.0])
    pure = probe_assumptions(spec, 3.0, 500, seed)
    mixed = probe_tilde_regularity(spec, 3.0, 500, seed)
    for K in pure.lipschitz_b:
        assert mixed.lipschitz_b[K] <= pure.lipschitz_b[K] + 1e-12


def test_tilde_growth_within_declared_constant():
    spec = make_spec("switching_volatility", U=[1.0, 2.0], V=[0.0], growth=2.0)
    assert probe_tilde_regularity(spec, 5.0, 500, seed=0).max_violation == 0.0
