import numpy as np
import pytest

from conftest import custom_spec, make_spec
from mixgame.diagnostics import compare_laws, law_gap_trend
from mixgame.rng import BLOCK_SIZE
from mixgame.simulate import (
    SimulationError,
    recorded_steps,
    sample_indices,
    simulate_auxiliary,
    simulate_mixed,
    step_count,
)
from mixgame.rng import stream
from mixgame.strategies import constant_strategy, exit_ball, hitting_ball, piecewise_strategy

UNI = constant_strategy([0.5, 0.5], 1.0, "uniform")


def test_step_grid_checks():
    assert step_count(0.0, 1.0, 0.1) == 10
    assert step_count(0.25, 1.0, 0.25) == 3
    with pytest.raises(ValueError):
        step_count(0.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        step_count(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        step_count(1.5, 1.0, 0.1)
    assert recorded_steps(10, 4).tolist() == [0, 4, 8, 10]
    assert recorded_steps(10, 100).tolist() == [0, 10]


def test_sample_indices_frequencies():
    gen = stream(0, "player1", 0)
    w = np.tile([0.2, 0.0, 0.5, 0.3], (200_000, 1))
    idx = sample_indices(gen, np.cumsum(w, axis=1))
    freq = np.bincount(idx, minlength=4) / idx.size
    assert freq[1] == 0.0
    np.testing.assert_allclose(freq, [0.2, 0.0, 0.5, 0.3], atol=4e-3)


def test_no_noise_no_drift_gives_constant_paths():
    spec = make_spec("linear_drift", k=0.0, s=0.0)
    for sim in (simulate_mixed, simulate_auxiliary):
        ens = sim(spec, 0.0, [0.7], UNI, UNI, 50, 0.1, seed=1)
        assert np.all(ens.paths == 0.7)


def test_paths_start_at_x_and_share_the_time_grid(pennies):
    ens = simulate_mixed(pennies, 0.2, [0.3], UNI, UNI, 100, 0.1, seed=0, record_every=3)
    assert np.all(ens.paths[:, 0] == 0.3)
    np.testing.assert_allclose(ens.times, [0.2, 0.5, 0.8, 1.0])
    assert ens.paths.shape == (100, 4, 1)


def test_uniform_matching_pennies_without_noise_has_zero_mean_drift():
    spec = make_spec("matching_pennies", s=0.0)
    ens = simulate_mixed(spec, 0.0, [0.0], UNI, UNI, 20_000, 0.01, seed=3, record_every=100)
    inc = ens.terminal[:, 0]
    assert abs(inc.mean()) <= 3 * inc.std(ddof=1) / np.sqrt(inc.size)
    # each step moves by +-dt, so X_T is a scaled symmetric random walk
    assert inc.var() == pytest.approx(0.01, rel=0.05)


def test_point_masses_match_the_auxiliary_simulator_path_for_path(pennies):
    for i in range(2):
        for j in range(2):
            mu = constant_strategy(np.eye(2)[i], 1.0)
            nu = constant_strategy(np.eye(2)[j], 1.0)
            a = simulate_mixed(pennies, 0.0, [0.1], mu, nu, 300, 0.05, seed=9)
            b = simulate_auxiliary(pennies, 0.0, [0.1], mu, nu, 300, 0.05, seed=9)
            np.testing.assert_allclose(a.paths, b.paths, atol=1e-12)


def test_switching_volatility_variance():
    spec = make_spec("switching_volatility", U=[1.0, 2.0], V=[0.0])
    mu = constant_strategy([0.5, 0.5], 1.0)
    nu = constant_strategy([1.0], 1.0)
    for sim, seed in ((simulate_auxiliary, 1), (simulate_mixed, 2)):
        ens = sim(spec, 0.0, [0.0], mu, nu, 40_000, 0.01, seed=seed, record_every=5)
        delta = ens.times[1] - ens.times[0]
        inc = ens.paths[:, 1, 0] - ens.paths[:, 0, 0]
        se = 2.5 * delta * np.sqrt(2 / inc.size) * 1.2
        assert abs(inc.var() - 2.5 * delta) <= 3 * se


def test_determinism_across_workers_and_reruns(pennies):
    mu = piecewise_strategy([0.5], [[1.0, 0.0], [0.5, 0.5]], 1.0)
    kwargs = dict(record_every=7, record_actions=True)
    n = 2 * BLOCK_SIZE + 17
    a = simulate_mixed(pennies, 0.0, [0.0], mu, UNI, n, 0.02, seed=5, workers=1, **kwargs)
    b = simulate_mixed(pennies, 0.0, [0.0], mu, UNI, n, 0.02, seed=5, workers=3, **kwargs)
    c = simulate_mixed(pennies, 0.0, [0.0], mu, UNI, n, 0.02, seed=5, workers=1, **kwargs)
    for other in (b, c):
        np.testing.assert_array_equal(a.paths, other.paths)
        np.testing.assert_array_equal(a.action_draws, other.action_draws)
    d = simulate_auxiliary(pennies, 0.0, [0.0], mu, UNI, n, 0.02, seed=5, workers=1)
    e = simulate_auxiliary(pennies, 0.0, [0.0], mu, UNI, n, 0.02, seed=5, workers=2)
    np.testing.assert_array_equal(d.paths, e.paths)


def test_full_blocks_do_not_depend_on_the_path_count(pennies):
    small = simulate_mixed(pennies, 0.0, [0.0], UNI, UNI, BLOCK_SIZE, 0.05, seed=4)
    large = simulate_mixed(pennies, 0.0, [0.0], UNI, UNI, BLOCK_SIZE + 50, 0.05, seed=4)
    np.testing.assert_array_equal(small.paths, large.paths[:BLOCK_SIZE])
    assert large.seed_record(BLOCK_SIZE + 1) == (4, 1, 1)


def test_action_draws_follow_the_active_distribution(pennies):
    mu = piecewise_strategy([0.5], [[1.0, 0.0], [0.0, 1.0]], 1.0)
    ens = simulate_mixed(pennies, 0.0, [0.0], mu, UNI, 500, 0.1, seed=2, record_actions=True)
    draws = ens.action_draws[:, :, 0]
    assert np.all(draws[:, :5] == 0) and np.all(draws[:, 5:] == 1)
    v = ens.action_draws[:, :, 1]
    assert 0.45 <= v.mean() <= 0.55


def test_swapping_player_streams_changes_paths_not_statistics(pennies):
    mu = constant_strategy([0.3, 0.7], 1.0)
    a = simulate_mixed(pennies, 0.0, [0.0], mu, UNI, 20_000, 0.01, seed=6, record_every=100)
    b = simulate_mixed(pennies, 0.0, [0.0], mu, UNI, 20_000, 0.01, seed=6, record_every=100,
                       swap_player_streams=True)
    assert not np.array_equal(a.paths, b.paths)
    rep = compare_laws(a, b, statistics=("moments",), max_moment=2)
    assert rep.passed


def test_stopping_rule_freezes_paths():
    spec = make_spec("heat")
    stop = exit_ball([0.0], 0.5)
    ens = simulate_mixed(spec, 0.0, [0.0], UNI, UNI, 2000, 0.01, seed=1, stop=stop, record_actions=True)
    hit = ens.stopped_by_rule
    assert hit.mean() > 0.5
    assert np.all(np.abs(ens.stop_states[hit, 0]) >= 0.5)
    idx = np.searchsorted(ens.times, ens.stop_times[hit] - 1e-12)
    for p, r in zip(np.flatnonzero(hit)[:50], idx[:50]):
        assert np.all(ens.paths[p, r:] == ens.stop_states[p])
        assert np.all(ens.action_draws[p, r:] == -1)
    np.testing.assert_array_equal(ens.stop_states[~hit], ens.terminal[~hit])
    assert np.all(ens.stop_times[~hit] == 1.0)


def test_early_exit_when_every_path_is_stopped():
    spec = make_spec("linear_drift", k=0.0, s=0.0)
    ens = simulate_mixed(spec, 0.0, [0.0], UNI, UNI, 10, 0.1, seed=0, stop=hitting_ball([0.0], 1.0))
    assert np.all(ens.stopped_by_rule) and np.all(ens.stop_times == 0.0)
    assert ens.paths.shape == (10, 11, 1)


def test_blow_up_is_reported_with_path_id():
    def huge(t, x, u, v):
        return np.full(np.broadcast_shapes(np.shape(t), x.shape[:-1], u.shape[:-1], v.shape[:-1]) + (1,), 1e308)

    spec = custom_spec(huge, lambda t, x, u, v: np.zeros(x.shape[:-1] + (1, 1)), T=4.0)
    with pytest.raises(SimulationError, match="path 0"):
        simulate_mixed(spec, 0.0, [1.0], constant_strategy([0.5, 0.5], 4.0), constant_strategy([0.5, 0.5], 4.0),
                       3, 1.0, seed=0)


def test_strategy_grid_mismatch_is_rejected(pennies):
    with pytest.raises(ValueError):
        simulate_mixed(pennies, 0.0, [0.0], constant_strategy([1.0, 0.0, 0.0], 1.0), UNI, 5, 0.1, 0)


def test_weak_convergence_trend_not_flagged(pennies):
    trend = law_gap_trend(pennies, 0.0, [0.0], UNI, UNI, 20_000, [1e-1, 1e-2], seed=3)
    assert [r["dt"] for r in trend["rows"]] == [1e-1, 1e-2]
    assert not trend["flagged"]
