import math

import numpy as np
import pytest

from conftest import make_spec
from mixgame.game import (
    PreconditionError,
    StrategyFamily,
    constant_family,
    dpp_check,
    epsilon_saddle,
    estimate_J,
    family_from_selectors,
    interpolation_bound,
    payoff_table,
    pure_and_uniform_family,
    sup_inf,
)
from mixgame.pde import make_grid, solve_isaacs_pde
from mixgame.strategies import ConstantSelector, constant_strategy, deterministic_time, exit_ball

UNI = constant_strategy([0.5, 0.5], 1.0, "uniform")
PURE_U = pure_and_uniform_family(2, 1.0, "player1", include_uniform=False)
PURE_V = pure_and_uniform_family(2, 1.0, "player2", include_uniform=False)
FULL_U = pure_and_uniform_family(2, 1.0, "player1")
FULL_V = pure_and_uniform_family(2, 1.0, "player2")


@pytest.fixture(scope="module")
def heat_grid(heat):
    grid = make_grid(heat, [-2 * math.pi], [2 * math.pi], [101])
    return solve_isaacs_pde(heat, grid)


def test_families():
    assert FULL_U.ids() == ["delta0", "delta1", "uniform"]
    with pytest.raises(ValueError):
        StrategyFamily(())
    with pytest.raises(TypeError):
        StrategyFamily(("not a strategy",))
    fam = family_from_selectors([deterministic_time(0.5), deterministic_time(1.0)],
                                [ConstantSelector([1.0, 0.0]), ConstantSelector([0.0, 1.0])], "f")
    assert len(fam) == 4
    assert fam.ids() == ["f[0, 0]", "f[0, 1]", "f[1, 0]", "f[1, 1]"]


def test_constant_payoff_has_zero_se():
    spec = make_spec("matching_pennies", payoff="constant", payoff_params={"c": 2.0})
    est, se = estimate_J(spec, 0.0, [0.0], UNI, UNI, 500, 0.1, seed=0)
    assert est == 2.0 and se == 0.0


def test_heat_payoff_estimate(heat):
    est = estimate_J(heat, 0.0, [0.0], UNI, UNI, 40_000, 0.01, seed=3)
    assert abs(est.estimate - math.exp(-0.5)) <= 3 * est.se
    aux = estimate_J(heat, 0.0, [0.0], UNI, UNI, 40_000, 0.01, seed=3, simulator="auxiliary")
    assert aux.simulator == "auxiliary"
    assert abs(aux.estimate - math.exp(-0.5)) <= 3 * aux.se
    with pytest.raises(ValueError):
        estimate_J(heat, 0.0, [0.0], UNI, UNI, 10, 0.1, seed=0, simulator="exact")


def test_point_masses_match_auxiliary_estimates(pennies_linear):
    mu = constant_strategy([1.0, 0.0], 1.0)
    nu = constant_strategy([0.0, 1.0], 1.0)
    a = estimate_J(pennies_linear, 0.0, [0.0], mu, nu, 3000, 0.05, seed=8)
    b = estimate_J(pennies_linear, 0.0, [0.0], mu, nu, 3000, 0.05, seed=8, simulator="auxiliary")
    assert a.estimate == pytest.approx(b.estimate, abs=1e-12)


def test_singleton_families_collapse(pennies_linear):
    fam = constant_family([[0.5, 0.5]], 1.0, "one")
    rep = sup_inf(pennies_linear, 0.0, [0.0], fam, fam, n_paths=2000, dt_sim=0.05, seed=1)
    est = estimate_J(pennies_linear, 0.0, [0.0], UNI, UNI, 2000, 0.05, seed=1)
    assert rep.V_lower == rep.V_upper == est.estimate


def test_pure_strategy_gap(pennies_linear):
    rep = sup_inf(pennies_linear, 0.0, [0.0], PURE_U, PURE_V, n_paths=5000, dt_sim=0.02, seed=2)
    # each pure pair moves the mean by +-T; sup-inf is -1, inf-sup is +1
    assert rep.V_lower == pytest.approx(-1.0, abs=5 * rep.se_lower + 1e-9)
    assert rep.V_upper == pytest.approx(1.0, abs=5 * rep.se_upper + 1e-9)
    assert rep.weak_duality_ok and not rep.partial
    full = sup_inf(pennies_linear, 0.0, [0.0], FULL_U, FULL_V, n_paths=5000, dt_sim=0.02, seed=2)
    assert full.V_upper - full.V_lower < 0.1
    assert full.argmax_id == "uniform" and full.argmin_id == "uniform"


def test_family_monotonicity_with_common_random_numbers(pennies_linear):
    small = sup_inf(pennies_linear, 0.0, [0.0], PURE_U, FULL_V, n_paths=3000, dt_sim=0.05, seed=4)
    big = sup_inf(pennies_linear, 0.0, [0.0], FULL_U, FULL_V, n_paths=3000, dt_sim=0.05, seed=4)
    assert big.V_lower >= small.V_lower
    small_v = sup_inf(pennies_linear, 0.0, [0.0], FULL_U, PURE_V, n_paths=3000, dt_sim=0.05, seed=4)
    assert big.V_upper <= small_v.V_upper


def test_budget_flags_partial_reports(pennies_linear):
    tab = payoff_table(pennies_linear, 0.0, [0.0], FULL_U, FULL_V, 500, 0.1, seed=0, budget=4)
    assert tab.evaluated == 4 and not tab.complete
    assert np.isnan(tab.J).sum() == 5
    rep = sup_inf(pennies_linear, 0.0, [0.0], FULL_U, FULL_V, budget=4, n_paths=500, dt_sim=0.1, seed=0)
    assert rep.partial
    assert not math.isnan(rep.V_lower)  # first row is complete


def test_pde_cross_reference(heat, heat_grid):
    fam = constant_family([[0.5, 0.5]], 1.0, "one")
    rep = sup_inf(heat, 0.0, [0.0], fam, fam, n_paths=20_000, dt_sim=0.01, seed=5, vg=heat_grid)
    assert abs(rep.pde_value - math.exp(-0.5)) <= 1e-3
    assert abs(rep.V_lower - rep.pde_value) <= 3 * rep.se_lower + 2e-3


def test_dpp_at_start_needs_no_simulation(heat, heat_grid):
    rep = dpp_check(heat, 0.3, [0.2], deterministic_time(0.3), heat_grid, FULL_U, FULL_V)
    assert not rep.simulated
    assert rep.V_lower == rep.V_upper == rep.V_grid
    assert rep.passed


def test_dpp_at_horizon_and_midpoint(heat, heat_grid):
    for rho in (deterministic_time(1.0), deterministic_time(0.5)):
        rep = dpp_check(heat, 0.0, [0.0], rho, heat_grid, FULL_U, FULL_V, n_paths=20_000, dt_sim=0.01, seed=6)
        assert rep.passed, rep.as_dict()
        assert rep.simulated and rep.budget <= 2e-2


def test_dpp_with_exit_rule(heat, heat_grid):
    rep = dpp_check(heat, 0.0, [0.0], exit_ball([0.0], 1.0), heat_grid, FULL_U, FULL_V, n_paths=20_000,
                    dt_sim=0.01, seed=7)
    assert rep.passed and rep.escape_fraction == 0.0


def test_dpp_flags_escapes(heat):
    grid = make_grid(heat, [-0.5], [0.5], [21])
    vg = solve_isaacs_pde(heat, grid)
    rep = dpp_check(heat, 0.0, [0.0], deterministic_time(1.0), vg, PURE_U, PURE_V, n_paths=2000, dt_sim=0.05,
                    seed=0, scheme_error=0.0)
    assert rep.escape_fraction > 0.01 and rep.escape_flagged and not rep.passed


def test_dpp_requires_randomized_grid(pennies):
    grid = make_grid(pennies, [-2.0], [2.0], [21])
    vg = solve_isaacs_pde(pennies, grid, "minus")
    with pytest.raises(ValueError):
        dpp_check(pennies, 0.0, [0.0], deterministic_time(0.5), vg, PURE_U, PURE_V)


def test_interpolation_bound_on_a_quadratic():
    from mixgame.pde import SpaceTimeGrid, ValueGrid

    grid = SpaceTimeGrid((0.0,), (1.0,), (11,), 4, 1.0)
    x = grid.axes[0]
    vg = ValueGrid(grid, np.tile(x**2, (5, 1)))
    assert interpolation_bound(vg) == pytest.approx(grid.dx[0] ** 2 / 8 * 2.0)


def test_epsilon_saddle_uniform(pennies_linear):
    rep = epsilon_saddle(pennies_linear, 0.0, [0.0], FULL_U, FULL_V, 0.1, n_paths=10_000, dt_sim=0.02, seed=3,
                         verify_seed=99)
    assert rep.found and rep.mu_id == "uniform" and rep.nu_id == "uniform"
    assert rep.regret_u <= 0.1 and rep.regret_v <= 0.1
    assert rep.verification["holds"]


def test_epsilon_saddle_pure_only_not_found(pennies_linear):
    rep = epsilon_saddle(pennies_linear, 0.0, [0.0], PURE_U, PURE_V, 0.1, n_paths=10_000, dt_sim=0.02, seed=3)
    assert not rep.found
    # the best pure pair still leaves one player a deviation worth twice the horizon
    assert max(rep.regret_u, rep.regret_v) == pytest.approx(2.0, abs=0.1)


def test_epsilon_saddle_singleton_and_precondition(pennies_linear):
    fam = constant_family([[0.5, 0.5]], 1.0, "one")
    rep = epsilon_saddle(pennies_linear, 0.0, [0.0], fam, fam, 0.2, n_paths=2000, dt_sim=0.05, seed=1)
    assert rep.found and rep.regret_u == 0.0 and rep.regret_v == 0.0
    with pytest.raises(PreconditionError, match="3 SE"):
        epsilon_saddle(pennies_linear, 0.0, [0.0], fam, fam, 1e-4, n_paths=200, dt_sim=0.05, seed=1)
