"""Zero-sum stochastic differential games without the Isaacs condition.

Randomized Hamiltonians by matrix-game solves, an explicit monotone solver
for the Isaacs equation, Monte Carlo simulation under elementary mixed
strategies and under the averaged-coefficient SDE, and statistical checks
of the resulting laws and values.
"""

__version__ = "0.1.0"

from .config import load_spec, loads_spec, shipped_spec
from .hamiltonian import (
    assemble_payoff,
    evaluate_L,
    hamiltonians,
    solve_matrix_game_exact,
    solve_matrix_game_fp,
)
from .mixing import b_tilde, probe_tilde_regularity, psd_sqrt, sigma_tilde
from .model import GameSpec, MixedAction, point_mass, probe_assumptions, uniform
from .pde import SpaceTimeGrid, ValueGrid, convergence_study, evaluate_value, make_grid, solve_isaacs_pde
from .simulate import PathEnsemble, simulate_auxiliary, simulate_mixed
from .strategies import ElementaryMixedStrategy, StoppingRule, constant_strategy
from .diagnostics import compare_laws, martingale_defect
from .game import dpp_check, epsilon_saddle, estimate_J, sup_inf

__all__ = [
    "GameSpec",
    "MixedAction",
    "point_mass",
    "uniform",
    "probe_assumptions",
    "load_spec",
    "loads_spec",
    "shipped_spec",
    "evaluate_L",
    "assemble_payoff",
    "solve_matrix_game_exact",
    "solve_matrix_game_fp",
    "hamiltonians",
    "b_tilde",
    "sigma_tilde",
    "psd_sqrt",
    "probe_tilde_regularity",
    "SpaceTimeGrid",
    "ValueGrid",
    "make_grid",
    "solve_isaacs_pde",
    "evaluate_value",
    "convergence_study",
    "StoppingRule",
    "ElementaryMixedStrategy",
    "constant_strategy",
    "PathEnsemble",
    "simulate_mixed",
    "simulate_auxiliary",
    "martingale_defect",
    "compare_laws",
    "estimate_J",
    "sup_inf",
    "dpp_check",
    "epsilon_saddle",
]
