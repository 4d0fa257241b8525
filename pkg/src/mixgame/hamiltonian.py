"""Generator payoff ``L``, pure Hamiltonians and the randomized Hamiltonian.

At a point ``(t, x, p, M)`` the restriction of the game to the action grids
is the matrix game ``A[i, j] = L(t, x, u_i, v_j, p, M)``.  Its value over
mixed actions is the randomized Hamiltonian ``H``; its pure max-min and
min-max are ``H_minus`` and ``H_plus``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .model import MixedAction

SYMMETRY_TOL = 1e-12
# exact-solver gap above which a solution is reported as degraded
EXACT_GAP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PayoffMatrix:
    entries: np.ndarray
    p: np.ndarray
    M: np.ndarray
    t: float
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class GameSolution:
    value: float
    mu_star: MixedAction
    nu_star: MixedAction
    duality_gap: float
    iterations: int
    lower: float
    upper: float
    degraded: bool = False

    def as_dict(self):
        return {
            "value": self.value,
            "mu_star": self.mu_star.weights.tolist(),
            "nu_star": self.nu_star.weights.tolist(),
            "duality_gap": self.duality_gap,
            "lower": self.lower,
            "upper": self.upper,
            "iterations": self.iterations,
            "degraded": self.degraded,
        }


class Hamiltonians(NamedTuple):
    H_minus: float
    H_plus: float
    H: float
    mu_star: MixedAction
    nu_star: MixedAction


def _check_pM(spec, p, M):
    p = np.asarray(p, dtype=float).reshape(spec.d)
    M = np.asarray(M, dtype=float).reshape(spec.d, spec.d)
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
        raise ValueError("M must be symmetric")
    return p, M


def payoff_entries(b, a, p, M):
    """``b . p + 1/2 tr(a M)`` with ``a = sigma sigma^T``, batched.

    ``b``: ``[..., d]``, ``a``: ``[..., d, d]``; ``p`` and ``M`` broadcast
    against the leading dimensions.
    """
    return np.einsum("...k,...k->...", b, p) + 0.5 * np.einsum("...ij,...ji->...", a, M)


def evaluate_L(spec, t, x, u_index, v_index, p, M):
    """``b(t,x,u,v) . p + 1/2 tr(sigma sigma^T M)`` at grid actions."""
    p, M = _check_pM(spec, p, M)
    x = np.asarray(x, dtype=float).reshape(spec.d)
    u = spec.U_grid[u_index]
    v = spec.V_grid[v_index]
    b = spec.drift(t, x, u, v)
    s = spec.diffusion(t, x, u, v)
    return float(payoff_entries(b, s @ s.T, p, M))


def assemble_payoff(spec, t, x, p, M):
    p, M = _check_pM(spec, p, M)
    x = np.asarray(x, dtype=float).reshape(spec.d)
    b = spec.drift_pairs(t, x)
    a = spec.covariance_pairs(t, x)
    entries = payoff_entries(b, a, p, M)
    return PayoffMatrix(entries=entries, p=p, M=M, t=float(t), x=x)


def _matrix(A):
    A = A.entries if isinstance(A, PayoffMatrix) else A
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or 0 in A.shape:
        raise ValueError("payoff matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(A)):
        raise ValueError("payoff matrix has non-finite entries")
    return A


def bounds(A, mu, nu):
    """Best-response payoffs ``(min_j (mu^T A)_j, max_i (A nu)_i)``, batched."""
    lower = np.einsum("...i,...ij->...j", mu, A).min(axis=-1)
    upper = np.einsum("...ij,...j->...i", A, nu).max(axis=-1)
    return lower, upper


def _bracket(value, lower, upper):
    # at an exact optimum the two bounds can cross by rounding; order them
    lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)
    return np.minimum(np.maximum(value, lower), upper), lower, upper


def solve_exact_stack(A, workers=1):
    """Exact solves for ``A[N, m, n]``.

    Nodes whose gap exceeds ``EXACT_GAP_TOL`` are re-solved from the column
    player's side (the game ``-A^T``), whose pivot path differs, and each
    player keeps the better of its two strategies or of its best pure
    strategy.  Nodes that still fail
    both solves fall back to fictitious play.  ``degraded`` marks every node
    left above the tolerance.

    Returns ``(value, mu, nu, lower, upper, iterations, degraded)``.
    """
    value, mu, nu, iters, failed = kernels.solve_exact_batch(A, workers=workers)
    failed = failed.astype(bool)
    lower, upper = bounds(A, mu, nu)
    lower[failed], upper[failed] = -np.inf, np.inf
    retry = np.flatnonzero(upper - lower > EXACT_GAP_TOL)
    if retry.size:
        B = np.ascontiguousarray(-np.swapaxes(A[retry], -1, -2))
        tv, tnu, tmu, titers, tfailed = kernels.solve_exact_batch(B, workers=workers)
        tfailed = tfailed.astype(bool)
        tlower, tupper = bounds(A[retry], tmu, tnu)
        tlower[tfailed], tupper[tfailed] = -np.inf, np.inf
        take_mu = tlower > lower[retry]
        take_nu = tupper < upper[retry]
        mu[retry[take_mu]] = tmu[take_mu]
        lower[retry[take_mu]] = tlower[take_mu]
        nu[retry[take_nu]] = tnu[take_nu]
        upper[retry[take_nu]] = tupper[take_nu]
        value[retry] = np.where(failed[retry], -tv, value[retry])
        iters[retry] += titers
        failed[retry] &= tfailed
        # a pure strategy can beat both when two rows or columns differ by
        # less than the pivot tolerance
        Ar = A[retry]
        i_best, j_best = Ar.min(axis=2).argmax(axis=1), Ar.max(axis=1).argmin(axis=1)
        plower, pupper = Ar.min(axis=2).max(axis=1), Ar.max(axis=1).min(axis=1)
        take_mu = ~failed[retry] & (plower > lower[retry])
        take_nu = ~failed[retry] & (pupper < upper[retry])
        mu[retry[take_mu]] = np.eye(A.shape[1])[i_best[take_mu]]
        nu[retry[take_nu]] = np.eye(A.shape[2])[j_best[take_nu]]
    if failed.any():
        fmu, fnu, flo, fup = kernels.solve_fp_batch(A[failed], kernels.FALLBACK_FP_ITERATIONS)
        mu[failed], nu[failed] = fmu, fnu
        value[failed] = 0.5 * (flo + fup)
    lower, upper = bounds(A, mu, nu)
    value, lower, upper = _bracket(value, lower, upper)
    degraded = failed | ((upper - lower) > EXACT_GAP_TOL)
    return value, mu, nu, lower, upper, iters, degraded


def solve_fp_stack(A, iterations, workers=1):
    mu, nu, lower, upper = kernels.solve_fp_batch(A, iterations, workers=workers)
    value = np.einsum("...i,...ij,...j->...", mu, A, nu)
    value, lower, upper = _bracket(value, lower, upper)
    return value, mu, nu, lower, upper


def solve_matrix_game_exact(A):
    """Value and optimal mixed actions by a tableau simplex method.

    The row player maximizes.  Constant matrices short-circuit to point
    masses at index 0.  A gap above ``EXACT_GAP_TOL`` triggers the retries
    of :func:`solve_exact_stack`; ``degraded`` is set when they do not
    close it.
    """
    A = _matrix(A)
    value, mu, nu, lower, upper, iters, degraded = solve_exact_stack(A[None])
    return GameSolution(
        value=float(value[0]),
        mu_star=MixedAction(mu[0]),
        nu_star=MixedAction(nu[0]),
        duality_gap=float(max(upper[0] - lower[0], 0.0)),
        iterations=int(iters[0]),
        lower=float(lower[0]),
        upper=float(upper[0]),
        degraded=bool(degraded[0]),
    )


def solve_matrix_game_fp(A, iterations):
    """Alternating fictitious play; ``value`` is the payoff of the averages."""
    A = _matrix(A)
    value, mu, nu, lower, upper = solve_fp_stack(A[None], iterations)
    return GameSolution(
        value=float(value[0]),
        mu_star=MixedAction(mu[0]),
        nu_star=MixedAction(nu[0]),
        duality_gap=float(upper[0] - lower[0]),
        iterations=int(iterations),
        lower=float(lower[0]),
        upper=float(upper[0]),
    )


def pure_lower(A):
    """Max-min over pure actions with lowest-index optimal pair, batched.

    Returns ``(value, i_star, j_star)``.
    """
    row_min = A.min(axis=-1)
    i = row_min.argmax(axis=-1)
    row = np.take_along_axis(A, i[..., None, None], axis=-2)[..., 0, :]
    j = row.argmin(axis=-1)
    return row_min.max(axis=-1), i, j


def pure_upper(A):
    """Min-max over pure actions with lowest-index optimal pair, batched."""
    col_max = A.max(axis=-2)
    j = col_max.argmin(axis=-1)
    col = np.take_along_axis(A, j[..., None, None], axis=-1)[..., :, 0]
    i = col.argmax(axis=-1)
    return col_max.min(axis=-1), i, j


def hamiltonians(spec, t, x, p, M):
    A = assemble_payoff(spec, t, x, p, M).entries
    sol = solve_matrix_game_exact(A)
    h_minus = float(A.min(axis=1).max())
    h_plus = float(A.max(axis=0).min())
    # the sandwich holds exactly for the true value; keep round-off inside it
    h = min(max(sol.value, h_minus), h_plus)
    return Hamiltonians(h_minus, h_plus, h, sol.mu_star, sol.nu_star)


def hamiltonian_sweep(spec, t, x, p_values, M):
    """Rows ``(p, H_minus, H, H_plus)`` for scalar gradients along the first axis."""
    rows = []
    for pv in p_values:
        p = np.zeros(spec.d)
        p[0] = pv
        h = hamiltonians(spec, t, x, p, M)
        rows.append((float(pv), h.H_minus, h.H, h.H_plus))
    return rows


__all__ = [
    "PayoffMatrix",
    "GameSolution",
    "Hamiltonians",
    "evaluate_L",
    "assemble_payoff",
    "solve_matrix_game_exact",
    "solve_matrix_game_fp",
    "hamiltonians",
    "hamiltonian_sweep",
]
