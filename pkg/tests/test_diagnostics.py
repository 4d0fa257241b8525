import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import make_spec
from mixgame.diagnostics import (
    central_moment_stats,
    compare_laws,
    constant,
    coordinate,
    cosine,
    default_test_functions,
    ks_distance,
    ks_permutation_test,
    martingale_defect,
    square,
)
from mixgame.simulate import simulate_auxiliary, simulate_mixed
from mixgame.strategies import constant_strategy

UNI = constant_strategy([0.5, 0.5], 1.0, "uniform")
PLUS = constant_strategy([0.0, 1.0], 1.0, "plus")


@pytest.fixture(scope="module")
def drift_u_ensemble():
    spec = make_spec("drift_u", payoff="identity")
    return spec, simulate_mixed(spec, 0.0, [0.0], PLUS, UNI, 20_000, 0.01, seed=12, record_every=2)


def test_test_function_derivatives():
    x = np.array([[0.3], [-1.2]])
    for tf in (coordinate(), square(), cosine(), constant(2.0)):
        h = 1e-5
        num_grad = (tf.f(x + h) - tf.f(x - h)) / (2 * h)
        num_hess = (tf.f(x + h) - 2 * tf.f(x) + tf.f(x - h)) / h**2
        np.testing.assert_allclose(tf.grad(x)[:, 0], num_grad, atol=1e-6)
        np.testing.assert_allclose(tf.hess(x)[:, 0, 0], num_hess, atol=1e-3)


def test_constant_test_function_has_exactly_zero_defect(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    rep = martingale_defect(ens, spec, PLUS, UNI, [constant(3.0)], 0.2, 0.9)
    assert all(r.defect == 0.0 and r.se == 0.0 and r.passed for r in rep.rows)


def test_driftless_walk_is_a_martingale():
    spec = make_spec("heat", s=0.8)
    ens = simulate_mixed(spec, 0.0, [0.5], UNI, UNI, 20_000, 0.01, seed=1, record_every=5)
    rep = martingale_defect(ens, spec, UNI, UNI, [coordinate()], 0.0, 1.0)
    assert rep.passed and rep.weights_source == "recorded"
    assert rep.rows[0].se > 0


def test_correct_strategies_pass_with_state_features(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    rep = martingale_defect(ens, spec, PLUS, UNI, default_test_functions(), 0.3, 1.0,
                            features=("constant", "state_poly"))
    assert rep.features == ["1", "y1", "y1^2"]
    assert rep.passed


def test_miswired_strategy_is_flagged(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    wrong = constant_strategy([0.5, 0.5], 1.0, "wrong")
    rep = martingale_defect(ens, spec, wrong, UNI, [coordinate()], 0.0, 1.0)
    assert rep.weights_source == "replayed"
    assert not rep.passed
    # generator is off by the drift mismatch 1 over the whole window
    assert rep.rows[0].defect == pytest.approx(1.0, abs=0.05)


def test_replayed_equals_recorded_for_equal_strategies(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    copy = constant_strategy([0.0, 1.0], 1.0, "copy")
    a = martingale_defect(ens, spec, PLUS, UNI, default_test_functions(), 0.2, 0.8)
    b = martingale_defect(ens, spec, copy, UNI, default_test_functions(), 0.2, 0.8)
    assert b.weights_source == "replayed"
    for ra, rb in zip(a.rows, b.rows):
        assert ra.defect == pytest.approx(rb.defect, abs=1e-14)


def test_rank_deficient_features_are_dropped_with_warning(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    with pytest.warns(RuntimeWarning, match="rank-deficient"):
        rep = martingale_defect(ens, spec, PLUS, UNI, [coordinate()], 0.0, 1.0, features=("constant", "state_poly"))
    assert rep.dropped_features == ["y1", "y1^2"]
    assert rep.features == ["1"]


def test_localization_reports_escape_fraction(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    rep = martingale_defect(ens, spec, PLUS, UNI, [coordinate(), square()], 0.0, 1.0, localization_radius=1.0)
    exits = (np.abs(ens.paths[:, :, 0]) > 1.0).any(axis=1).mean()
    assert rep.escape_fraction == pytest.approx(exits)
    assert 0.1 < rep.escape_fraction < 0.9
    assert rep.passed


def test_defect_time_window_checks(drift_u_ensemble):
    spec, ens = drift_u_ensemble
    with pytest.raises(ValueError):
        martingale_defect(ens, spec, PLUS, UNI, [coordinate()], 0.5, 0.5)


def test_central_moments_against_scipy():
    x = np.random.default_rng(0).gamma(2.0, size=5000)
    s = central_moment_stats(x)
    assert s["mean"][0] == pytest.approx(x.mean())
    assert s["variance"][0] == pytest.approx(stats.moment(x, 2))
    assert s["central_moment_3"][0] == pytest.approx(stats.moment(x, 3))
    assert s["central_moment_4"][0] == pytest.approx(stats.moment(x, 4))
    assert s["mean"][1] == pytest.approx(stats.sem(x))


def test_variance_standard_error_matches_bootstrap():
    gen = np.random.default_rng(1)
    x = gen.normal(size=4000)
    se = central_moment_stats(x, 2)["variance"][1]
    boot = [np.var(gen.choice(x, x.size)) for _ in range(400)]
    assert se == pytest.approx(np.std(boot), rel=0.15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=40), st.lists(st.integers(-5, 5), min_size=1, max_size=40))
def test_ks_distance_matches_scipy_with_ties(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)


def test_ks_permutation_test_bounds_and_determinism():
    gen = np.random.default_rng(3)
    a, b = gen.normal(size=300), gen.normal(size=300)
    D, p = ks_permutation_test(a, b, 99, seed=4)
    assert (D, p) == ks_permutation_test(a, b, 99, seed=4)
    assert 1 / 100 <= p <= 1.0
    _, p_shift = ks_permutation_test(a, b + 1.0, 99, seed=4)
    assert p_shift == pytest.approx(1 / 100)


def test_compare_laws_identical_ensembles(pennies):
    e = simulate_mixed(pennies, 0.0, [0.0], UNI, UNI, 500, 0.05, seed=3)
    again = simulate_mixed(pennies, 0.0, [0.0], UNI, UNI, 500, 0.05, seed=3)
    rep = compare_laws(e, again)
    assert all(m["difference"] == 0.0 for m in rep.moments)
    assert rep.cdf[0]["ks_distance"] == 0.0 and rep.cdf[0]["p_value"] == 1.0
    assert rep.passed


def test_compare_laws_flags_a_drift_gap():
    spec = make_spec("drift_u", payoff="identity")
    a = simulate_mixed(spec, 0.0, [0.0], UNI, UNI, 5000, 0.01, seed=1, record_every=100)
    b = simulate_mixed(spec, 0.0, [0.0], PLUS, UNI, 5000, 0.01, seed=2, record_every=100)
    rep = compare_laws(a, b, statistics=("moments",))
    mean = next(m for m in rep.moments if m["statistic"] == "mean")
    assert not mean["passed"] and not rep.passed


def test_compare_laws_requires_matching_start(pennies):
    a = simulate_mixed(pennies, 0.0, [0.0], UNI, UNI, 10, 0.1, seed=1)
    b = simulate_mixed(pennies, 0.0, [1.0], UNI, UNI, 10, 0.1, seed=1)
    with pytest.raises(ValueError):
        compare_laws(a, b)


def test_mixed_and_auxiliary_laws_agree(pennies):
    a = simulate_mixed(pennies, 0.0, [0.0], UNI, UNI, 20_000, 0.01, seed=21, record_every=100)
    b = simulate_auxiliary(pennies, 0.0, [0.0], UNI, UNI, 20_000, 0.01, seed=22, record_every=100)
    assert compare_laws(a, b, seed=1).passed
