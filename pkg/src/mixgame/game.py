"""Monte Carlo game values over finite strategy families.

Every strategy pair is simulated with the same seed (common random
numbers), so differences between pairs come only from the strategies.
Reported values are relative to the families searched; they bound the
true lower and upper values only as far as the families are rich enough.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import MixedAction, point_mass, uniform
from .pde import evaluate_value, make_grid, solve_isaacs_pde
from .simulate import simulate_auxiliary, simulate_mixed
from .strategies import ConstantSelector, ElementaryMixedStrategy, deterministic_time

Z_LEVEL = 3.0
ESCAPE_FLAG = 0.01
SIMULATORS = ("mixed", "auxiliary")


class PreconditionError(ValueError):
    pass


# -- families -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StrategyFamily:
    members: tuple
    name: str = ""

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("a strategy family needs at least one member")
        if not all(isinstance(m, ElementaryMixedStrategy) for m in members):
            raise TypeError("family members must be ElementaryMixedStrategy instances")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def ids(self):
        return [m.name or f"{self.name}[{i}]" for i, m in enumerate(self.members)]

    def describe(self):
        return {"name": self.name, "members": [m.describe() for m in self.members]}


def family_from_selectors(rules, selectors, name=""):
    """All strategies using one of ``selectors`` on each interval of ``rules``.

    Members are enumerated in lexicographic order of selector indices.
    """
    rules = tuple(rules)
    members = []
    for combo in itertools.product(range(len(selectors)), repeat=len(rules)):
        members.append(
            ElementaryMixedStrategy(rules, tuple(selectors[c] for c in combo), name=f"{name}{list(combo)}")
        )
    return StrategyFamily(tuple(members), name)


def constant_family(weight_list, T, name="", labels=None):
    """Single-interval strategies, one per weight vector."""
    members = []
    for i, w in enumerate(weight_list):
        label = labels[i] if labels else f"{name}[{i}]"
        members.append(ElementaryMixedStrategy((deterministic_time(T),), (ConstantSelector(w),), label))
    return StrategyFamily(tuple(members), name)


def pure_and_uniform_family(size, T, name, include_uniform=True):
    """Point masses on every grid action, optionally followed by the uniform mixture."""
    weights = [point_mass(i, size) for i in range(size)]
    labels = [f"delta{i}" for i in range(size)]
    if include_uniform:
        weights.append(uniform(size))
        labels.append("uniform")
    return constant_family(weights, T, name, labels)


# -- payoff estimation ------------------------------------------------------------------


@dataclass
class JEstimate:
    estimate: float
    se: float
    simulator: str
    n_paths: int

    def __iter__(self):
        return iter((self.estimate, self.se))


def _simulate(spec, s, x, mu, nu, n_paths, dt_sim, seed, simulator, workers, stop=None):
    if simulator not in SIMULATORS:
        raise ValueError(f"simulator must be one of {SIMULATORS}")
    if simulator == "mixed":
        return simulate_mixed(spec, s, x, mu, nu, n_paths, dt_sim, seed, record_every=10**9, workers=workers,
                              stop=stop)
    return simulate_auxiliary(spec, s, x, mu, nu, n_paths, dt_sim, seed, record_every=10**9, workers=workers,
                              stop=stop)


def _mean_se(values):
    n = values.size
    return float(values.mean()), (float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)


def estimate_J(spec, s, x, mu, nu, n_paths, dt_sim, seed, *, simulator="mixed", workers=1):
    """Sample mean and standard error of ``g(X_T)``."""
    e = _simulate(spec, s, x, mu, nu, n_paths, dt_sim, seed, simulator, workers)
    est, se = _mean_se(spec.payoff(e.terminal))
    return JEstimate(est, se, simulator, n_paths)


@dataclass
class PayoffTable:
    J: np.ndarray
    se: np.ndarray
    evaluated: int
    complete: bool
    extra: dict = field(default_factory=dict)


def payoff_table(spec, s, x, fam_U, fam_V, n_paths, dt_sim, seed, *, budget=None, simulator="mixed",
                 workers=1, stop=None, payoff=None):
    """``J[i, j]`` for all family pairs, row-major, up to ``budget`` evaluations.

    ``payoff(ensemble)`` returns one value per path; the default is ``g(X_T)``.
    Unevaluated entries are NaN.
    """
    m, n = len(fam_U), len(fam_V)
    J = np.full((m, n), np.nan)
    se = np.full((m, n), np.nan)
    limit = m * n if budget is None else min(int(budget), m * n)
    escapes = np.zeros((m, n))
    count = 0
    for i, j in itertools.product(range(m), range(n)):
        if count >= limit:
            break
        e = _simulate(spec, s, x, fam_U[i], fam_V[j], n_paths, dt_sim, seed, simulator, workers, stop)
        if payoff is None:
            vals = spec.payoff(e.terminal)
        else:
            vals, esc = payoff(e)
            escapes[i, j] = esc
        J[i, j], se[i, j] = _mean_se(vals)
        count += 1
    return PayoffTable(J, se, count, count == m * n, {"escape_fraction": escapes})


def _lower_upper(J, se):
    """Family-relative sup-inf and inf-sup with lowest-index tie-breaks."""
    rows_ok = ~np.isnan(J).any(axis=1)
    cols_ok = ~np.isnan(J).any(axis=0)
    out = {"V_lower": float("nan"), "V_upper": float("nan"), "argmax": None, "argmin": None,
           "responses_lower": [], "responses_upper": [], "se_lower": float("nan"), "se_upper": float("nan")}
    if rows_ok.any():
        row_min = np.where(rows_ok, np.nanmin(np.where(rows_ok[:, None], J, np.inf), axis=1), -np.inf)
        best_resp = [int(np.argmin(J[i])) if rows_ok[i] else None for i in range(J.shape[0])]
        i = int(np.argmax(row_min))
        out.update(V_lower=float(row_min[i]), argmax=i, responses_lower=best_resp,
                   se_lower=float(se[i, best_resp[i]]))
    if cols_ok.any():
        col_max = np.where(cols_ok, np.nanmax(np.where(cols_ok[None, :], J, -np.inf), axis=0), np.inf)
        best_resp = [int(np.argmax(J[:, j])) if cols_ok[j] else None for j in range(J.shape[1])]
        j = int(np.argmin(col_max))
        out.update(V_upper=float(col_max[j]), argmin=j, responses_upper=best_resp,
                   se_upper=float(se[best_resp[j], j]))
    return out


@dataclass
class GameValueReport:
    V_lower: float
    V_upper: float
    argmax_id: str | None
    argmin_id: str | None
    responses_lower: list
    responses_upper: list
    se_lower: float
    se_upper: float
    J: np.ndarray
    se: np.ndarray
    partial: bool
    pde_value: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def pooled_se(self):
        return float(math.hypot(self.se_lower, self.se_upper))

    @property
    def weak_duality_ok(self):
        if math.isnan(self.V_lower) or math.isnan(self.V_upper):
            return True
        return self.V_lower <= self.V_upper + Z_LEVEL * self.pooled_se

    def as_dict(self):
        return {
            "V_lower": self.V_lower,
            "V_upper": self.V_upper,
            "argmax": self.argmax_id,
            "argmin": self.argmin_id,
            "responses_lower": self.responses_lower,
            "responses_upper": self.responses_upper,
            "se_lower": self.se_lower,
            "se_upper": self.se_upper,
            "pooled_se": self.pooled_se,
            "weak_duality_ok": self.weak_duality_ok,
            "partial": self.partial,
            "pde_value": self.pde_value,
            "J": self.J.tolist(),
            "se": self.se.tolist(),
            **self.metadata,
        }


def _run_metadata(spec, seed, dt_sim, n_paths, fam_U, fam_V, simulator):
    return {
        "spec_hash": spec.spec_hash,
        "seed": int(seed),
        "dt_sim": dt_sim,
        "n_paths": n_paths,
        "simulator": simulator,
        "family_U": fam_U.describe(),
        "family_V": fam_V.describe(),
        "note": "values are relative to the strategy families searched",
    }


def sup_inf(spec, s, x, fam_U, fam_V, budget=None, *, n_paths=10_000, dt_sim=1e-2, seed=0, simulator="mixed",
            workers=1, vg=None):
    """Sup-inf and inf-sup of the estimated payoff over the two families.

    ``budget`` caps the number of pair simulations; when it runs out the
    report is flagged partial and only fully evaluated rows (columns) enter
    the lower (upper) value.
    """
    tab = payoff_table(spec, s, x, fam_U, fam_V, n_paths, dt_sim, seed, budget=budget, simulator=simulator,
                       workers=workers)
    lu = _lower_upper(tab.J, tab.se)
    ids_u, ids_v = fam_U.ids(), fam_V.ids()
    return GameValueReport(
        V_lower=lu["V_lower"],
        V_upper=lu["V_upper"],
        argmax_id=None if lu["argmax"] is None else ids_u[lu["argmax"]],
        argmin_id=None if lu["argmin"] is None else ids_v[lu["argmin"]],
        responses_lower=[None if r is None else ids_v[r] for r in lu["responses_lower"]],
        responses_upper=[None if r is None else ids_u[r] for r in lu["responses_upper"]],
        se_lower=lu["se_lower"],
        se_upper=lu["se_upper"],
        J=tab.J,
        se=tab.se,
        partial=not tab.complete,
        pde_value=None if vg is None else float(evaluate_value(vg, s, x)),
        metadata=_run_metadata(spec, seed, dt_sim, n_paths, fam_U, fam_V, simulator),
    )


# -- dynamic programming check ----------------------------------------------------------


def interpolation_bound(vg):
    """``sum_k dx_k^2/8 max|V_kk| + dt^2/8 max|V_tt|`` from grid differences."""
    grid = vg.grid
    V = vg.values
    bound = 0.0
    for k, h in enumerate(grid.dx):
        ax = k + 1
        n = V.shape[ax]
        second = (np.take(V, range(2, n), axis=ax) - 2 * np.take(V, range(1, n - 1), axis=ax)
                  + np.take(V, range(0, n - 2), axis=ax)) / h**2
        bound += h**2 / 8 * float(np.abs(second).max())
    if V.shape[0] >= 3:
        vtt = (V[2:] - 2 * V[1:-1] + V[:-2]) / grid.dt**2
        bound += grid.dt**2 / 8 * float(np.abs(vtt).max())
    return bound


def coarse_grid(grid):
    nx = tuple((n - 1) // 2 + 1 for n in grid.nx)
    if min(nx) < 3:
        raise ValueError("grid too small to coarsen")
    return nx


def scheme_error_estimate(spec, vg, **solve_kwargs):
    """Sup over trust-region nodes of ``|V_fine - V_coarse|`` at the coarse layers.

    The coarse grid halves the resolution in every direction, so for a
    convergent first-order scheme this over-estimates the fine error.
    """
    grid = vg.grid
    nx = coarse_grid(grid)
    cg = make_grid(spec, grid.x_min, grid.x_max, nx, grid.cfl_safety)
    kind = vg.metadata.get("kind", "randomized")
    solver = vg.metadata.get("solver", "fp")
    coarse = solve_isaacs_pde(spec, cg, kind, solver, **solve_kwargs)
    nodes = cg.nodes
    err = 0.0
    for n, t in enumerate(cg.times):
        mask = coarse.trust_mask(n)
        if mask.any():
            pts = nodes[mask]
            fine = evaluate_value(vg, np.full(pts.shape[0], t), pts)
            err = max(err, float(np.abs(fine - coarse.values[n][mask]).max()))
    return err


@dataclass
class DPPReport:
    V_grid: float
    V_lower: float
    V_upper: float
    gap_lower: float
    gap_upper: float
    budget: float
    mc_se: float
    interpolation: float
    scheme_error: float
    escape_fraction: float
    escape_flagged: bool
    partial: bool
    simulated: bool
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.gap_lower <= self.budget and self.gap_upper <= self.budget and not self.escape_flagged

    def as_dict(self):
        return {
            "V_grid": self.V_grid,
            "V_lower": self.V_lower,
            "V_upper": self.V_upper,
            "gap_lower": self.gap_lower,
            "gap_upper": self.gap_upper,
            "budget": self.budget,
            "mc_se": self.mc_se,
            "interpolation": self.interpolation,
            "scheme_error": self.scheme_error,
            "escape_fraction": self.escape_fraction,
            "escape_flagged": self.escape_flagged,
            "partial": self.partial,
            "simulated": self.simulated,
            "passed": self.passed,
            **self.metadata,
        }


def dpp_check(spec, s, x, rho, vg, fam_U, fam_V, budget=None, *, n_paths=10_000, dt_sim=1e-2, seed=0,
              simulator="mixed", workers=1, scheme_error=None):
    """Compare ``V(s, x)`` with sup-inf and inf-sup of ``E[V(rho, y_rho)]``.

    The error budget is ``3 * pooled SE + interpolation bound + scheme
    error``; the scheme error is estimated from a coarser solve unless
    given.  Stopped states outside the grid box are clamped to it and
    counted; the report is flagged when more than 1% escape.
    """
    if vg.kind != "randomized":
        raise ValueError("dpp_check needs a value grid solved with the randomized Hamiltonian")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    V0 = float(evaluate_value(vg, s, x))
    interp = interpolation_bound(vg)
    meta = _run_metadata(spec, seed, dt_sim, n_paths, fam_U, fam_V, simulator)
    meta["rho"] = rho.describe()

    if rho.kind == "deterministic_time" and rho.time <= s + 1e-12:
        # the rule fires at s: both sides are V(s, x)
        return DPPReport(V0, V0, V0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, False, False, meta)
    if rho.kind == "deterministic_time" and rho.time > spec.T + 1e-12:
        raise ValueError("rho must not exceed T")
    if scheme_error is None:
        scheme_error = scheme_error_estimate(spec, vg)

    lo = np.array(vg.grid.x_min)
    hi = np.array(vg.grid.x_max)

    def payoff(ens):
        states = ens.stop_states
        outside = np.any((states < lo) | (states > hi), axis=1)
        vals = evaluate_value(vg, ens.stop_times, np.clip(states, lo, hi))
        return vals, float(outside.mean())

    tab = payoff_table(spec, s, x, fam_U, fam_V, n_paths, dt_sim, seed, budget=budget, simulator=simulator,
                       workers=workers, stop=rho, payoff=payoff)
    lu = _lower_upper(tab.J, tab.se)
    mc = float(math.hypot(lu["se_lower"], lu["se_upper"]))
    total = Z_LEVEL * mc + interp + scheme_error
    escape = float(np.nanmax(tab.extra["escape_fraction"]))
    return DPPReport(
        V_grid=V0,
        V_lower=lu["V_lower"],
        V_upper=lu["V_upper"],
        gap_lower=abs(V0 - lu["V_lower"]),
        gap_upper=abs(V0 - lu["V_upper"]),
        budget=total,
        mc_se=mc,
        interpolation=interp,
        scheme_error=scheme_error,
        escape_fraction=escape,
        escape_flagged=escape > ESCAPE_FLAG,
        partial=not tab.complete,
        simulated=True,
        metadata=meta,
    )


# -- epsilon saddle points --------------------------------------------------------------


@dataclass
class SaddleReport:
    found: bool
    mu_index: int
    nu_index: int
    mu_id: str
    nu_id: str
    regret_u: float
    regret_v: float
    epsilon: float
    J: np.ndarray
    se: np.ndarray
    partial: bool
    verification: dict | None = None
    metadata: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "found": self.found,
            "mu": self.mu_id,
            "nu": self.nu_id,
            "regret_u": self.regret_u,
            "regret_v": self.regret_v,
            "epsilon": self.epsilon,
            "J": self.J.tolist(),
            "se": self.se.tolist(),
            "partial": self.partial,
            "verification": self.verification,
            **self.metadata,
        }


def _regrets(J):
    # player one gains by deviating in the row, player two in the column
    regret_u = np.nanmax(J, axis=0)[None, :] - J
    regret_v = J - np.nanmin(J, axis=1)[:, None]
    return regret_u, regret_v


def epsilon_saddle(spec, s, x, fam_U, fam_V, epsilon, budget=None, *, n_paths=10_000, dt_sim=1e-2, seed=0,
                   simulator="mixed", workers=1, verify_seed=None):
    """Pair with the smallest worst regret; ``found`` when both regrets are ``<= epsilon``.

    Regrets are taken against every member of the opposing family using
    common random numbers.  With ``verify_seed`` the chosen pair's row and
    column are re-simulated with that seed and the inequalities rechecked
    with a 3 SE allowance.
    """
    tab = payoff_table(spec, s, x, fam_U, fam_V, n_paths, dt_sim, seed, budget=budget, simulator=simulator,
                       workers=workers)
    max_se = float(np.nanmax(tab.se))
    if not epsilon > Z_LEVEL * max_se:
        raise PreconditionError(
            f"epsilon={epsilon:g} must exceed 3 SE = {Z_LEVEL * max_se:.3g}; increase n_paths"
        )
    ru, rv = _regrets(tab.J)
    worst = np.maximum(ru, rv)
    worst = np.where(np.isnan(worst), np.inf, worst)
    i, j = np.unravel_index(int(np.argmin(worst)), worst.shape)
    found = bool(worst[i, j] <= epsilon)
    verification = None
    if verify_seed is not None:
        row = [_simulate(spec, s, x, fam_U[i], fam_V[k], n_paths, dt_sim, verify_seed, simulator, workers)
               for k in range(len(fam_V))]
        col = [_simulate(spec, s, x, fam_U[k], fam_V[j], n_paths, dt_sim, verify_seed, simulator, workers)
               for k in range(len(fam_U))]
        Jrow = [_mean_se(spec.payoff(e.terminal)) for e in row]
        Jcol = [_mean_se(spec.payoff(e.terminal)) for e in col]
        centre, centre_se = Jrow[j]
        ok_u = all(v - epsilon <= centre + Z_LEVEL * math.hypot(se, centre_se) for v, se in Jcol)
        ok_v = all(centre <= v + epsilon + Z_LEVEL * math.hypot(se, centre_se) for v, se in Jrow)
        verification = {"seed": int(verify_seed), "holds": bool(ok_u and ok_v), "J_pair": centre, "se": centre_se}
    return SaddleReport(
        found=found,
        mu_index=int(i),
        nu_index=int(j),
        mu_id=fam_U.ids()[i],
        nu_id=fam_V.ids()[j],
        regret_u=float(ru[i, j]),
        regret_v=float(rv[i, j]),
        epsilon=float(epsilon),
        J=tab.J,
        se=tab.se,
        partial=not tab.complete,
        verification=verification,
        metadata=_run_metadata(spec, seed, dt_sim, n_paths, fam_U, fam_V, simulator),
    )
