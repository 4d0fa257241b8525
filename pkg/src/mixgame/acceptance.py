"""Built-in acceptance suite, run by ``mixgame verify`` and the test suite.

Each criterion returns a :class:`CriterionResult`; a criterion passes only
when its numerical check holds at the stated tolerance and it finishes
inside its time limit.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import catalog_coefficients, catalog_payoff, shipped_spec
from .diagnostics import compare_laws, default_test_functions, martingale_defect
from .game import dpp_check, epsilon_saddle, pure_and_uniform_family
from .hamiltonian import hamiltonians, solve_exact_stack
from .model import GameSpec
from .pde import make_grid, solve_isaacs_pde, sup_error
from .rng import stream
from .simulate import simulate_auxiliary, simulate_mixed
from .strategies import constant_strategy, deterministic_time


@dataclass
class Settings:
    paths: int = 100_000
    defect_control_paths: int = 20_000
    pde_nx: int = 201
    refinement: tuple = (51, 101, 201)
    seed: int = 1
    workers: int = 1

    @classmethod
    def quick(cls, seed=1, workers=1):
        return cls(paths=20_000, defect_control_paths=5_000, pde_nx=101, refinement=(51, 101), seed=seed,
                   workers=workers)


@dataclass
class CriterionResult:
    key: str
    title: str
    ok: bool
    seconds: float
    limit: float
    summary: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.ok and self.seconds <= self.limit

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        timing = f"{self.seconds:.1f}s of {self.limit:g}s"
        if self.ok and not self.passed:
            timing += " (over time limit)"
        return f"[{status}] {self.key} {self.title}: {self.summary} ({timing})"

    def as_dict(self):
        return {"key": self.key, "title": self.title, "passed": self.passed, "ok": self.ok,
                "limit_seconds": self.limit, "summary": self.summary, "details": self.details}


def _timed(key, title, limit, fn, *args):
    t0 = time.perf_counter()
    ok, summary, details = fn(*args)
    return CriterionResult(key, title, bool(ok), time.perf_counter() - t0, limit, summary, details)


HEAT_BOX = (-2 * math.pi, 2 * math.pi)


def heat_solution(t, X, T=1.0):
    return np.exp(-(T - t) / 2) * np.cos(X[..., 0])


def drift_u_spec():
    """Drift ``u`` on a two-point grid with unit noise; ``g(x) = x``."""
    b, sigma = catalog_coefficients("drift_u", 1, 1)
    return GameSpec(1, 1, 1.0, b, sigma, catalog_payoff("identity", 1), [-1.0, 1.0], [-1.0, 1.0],
                    growth_constant=2.0, name="drift-u")


# -- criteria --------------------------------------------------------------------------------


def check_minimax(settings):
    gen = stream(settings.seed, "probe", 101)
    worst = 0.0
    for _ in range(200):
        m, n = gen.integers(1, 7, size=2)
        scale = 10.0 ** gen.uniform(-3, 2)
        A = gen.standard_normal((1, m, n)) * scale
        value, mu, nu, lower, upper, _, degraded = solve_exact_stack(A)
        worst = max(worst, float(upper[0] - lower[0]))
    value, mu, nu, *_ = solve_exact_stack(np.array([[[1.0, -1.0], [-1.0, 1.0]]]))
    mp_ok = abs(value[0]) <= 1e-12 and np.allclose(mu[0], 0.5, atol=1e-12) and np.allclose(nu[0], 0.5, atol=1e-12)
    ok = worst <= 1e-9 and mp_ok
    return ok, f"max duality gap {worst:.2e} over 200 games; matching pennies value {value[0]:.1e}", {
        "max_gap": worst, "pennies_value": float(value[0]), "pennies_mu": mu[0].tolist(), "pennies_nu": nu[0].tolist()}


def check_isaacs_gap(settings):
    spec = shipped_spec("matching_pennies")
    gen = stream(settings.seed, "probe", 102)
    worst = 0.0
    count = 0
    for p in (-3.0, -1.0, -0.25, 0.1, 0.5, 2.0):
        for M in (-2.0, 0.0, 0.7, 3.0):
            t = gen.uniform(0, spec.T)
            x = gen.uniform(-3, 3, size=1)
            h = hamiltonians(spec, t, x, [p], [[M]])
            err = max(abs(h.H_minus - (-abs(p) + M / 2)), abs(h.H - M / 2), abs(h.H_plus - (abs(p) + M / 2)))
            worst = max(worst, err)
            count += 1
    return worst <= 1e-9, f"max deviation {worst:.2e} over {count} probes", {"max_error": worst, "probes": count}


def check_heat(settings):
    spec = shipped_spec("heat")
    errors = []
    for nx in settings.refinement:
        grid = make_grid(spec, [HEAT_BOX[0]], [HEAT_BOX[1]], [nx])
        vg = solve_isaacs_pde(spec, grid)
        errors.append(sup_error(vg, heat_solution))
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    ok = errors[-1] <= 5e-3 and decreasing
    table = ", ".join(f"nx={n}: {e:.2e}" for n, e in zip(settings.refinement, errors))
    return ok, table, {"nx": list(settings.refinement), "errors": errors, "decreasing": decreasing}


def check_randomized_value(settings):
    spec = shipped_spec("matching_pennies")
    heat = shipped_spec("heat")
    grid = make_grid(spec, [HEAT_BOX[0]], [HEAT_BOX[1]], [settings.pde_nx])
    vgs = {k: solve_isaacs_pde(spec, grid, k) for k in ("minus", "randomized", "plus")}
    v_heat = solve_isaacs_pde(heat, make_grid(heat, [HEAT_BOX[0]], [HEAT_BOX[1]], [settings.pde_nx], nt=grid.nt))
    vr = vgs["randomized"]
    agree = 0.0
    for n in range(grid.nt + 1):
        mask = vr.trust_mask(n)
        agree = max(agree, float(np.abs(vr.values[n][mask] - v_heat.values[n][mask]).max(initial=0.0)))
    closed = sup_error(vr, heat_solution)
    # strict ordering at interior nodes with a visible gradient, all layers before T
    V, Vm, Vp = vr.values[:-1], vgs["minus"].values[:-1], vgs["plus"].values[:-1]
    grad = (V[:, 2:] - V[:, :-2]) / (2 * grid.dx[0])
    steep = np.abs(grad) > 0.1
    strict = (Vm[:, 1:-1] < V[:, 1:-1]) & (V[:, 1:-1] < Vp[:, 1:-1])
    frac = float(strict[steep].mean()) if steep.any() else 0.0
    ordered = bool(np.all(Vm <= V) and np.all(V <= Vp))
    ok = agree <= 5e-3 and closed <= 5e-3 and frac >= 0.9 and ordered
    return ok, (f"|V - V_heat| = {agree:.2e}, |V - closed form| = {closed:.2e}, "
                f"strict V- < V < V+ at {100 * frac:.1f}% of steep nodes"), {
        "agreement_with_heat_grid": agree, "closed_form_error": closed, "strict_fraction": frac,
        "weak_ordering": ordered, "nt": grid.nt}


class _EnsembleCache:
    def __init__(self):
        self.mixed = None
        self.key = None


_CACHE = _EnsembleCache()


def _law_ensembles(settings):
    key = (settings.paths, settings.seed, settings.workers)
    if _CACHE.key != key:
        spec = shipped_spec("matching_pennies")
        uni = constant_strategy([0.5, 0.5], spec.T, "uniform")
        mixed = simulate_mixed(spec, 0.0, [0.0], uni, uni, settings.paths, 1e-3, settings.seed, record_every=10,
                               workers=settings.workers)
        aux = simulate_auxiliary(spec, 0.0, [0.0], uni, uni, settings.paths, 1e-3, settings.seed + 1,
                                 record_every=1000, workers=settings.workers)
        _CACHE.mixed, _CACHE.aux, _CACHE.spec, _CACHE.uni = mixed, aux, spec, uni
        _CACHE.key = key
    return _CACHE


def check_law_equivalence(settings):
    c = _law_ensembles(settings)
    rep = compare_laws(c.mixed, c.aux, statistics=("moments", "cdf"), seed=settings.seed)
    by = {m["statistic"]: m for m in rep.moments}
    mean_ok = by["mean"]["passed"]
    var_ok = by["variance"]["passed"]
    ks = rep.cdf[0]
    ok = mean_ok and var_ok and ks["p_value"] > 0.01
    summary = (f"mean diff {by['mean']['difference']:.2e} (3SE {3 * by['mean']['se']:.2e}), "
               f"var diff {by['variance']['difference']:.2e} (3SE {3 * by['variance']['se']:.2e}), "
               f"KS p = {ks['p_value']:.3f}")
    return ok, summary, rep.as_dict()


def check_martingale_defect(settings):
    c = _law_ensembles(settings)
    rep = martingale_defect(c.mixed, c.spec, c.uni, c.uni, default_test_functions(), 0.5, 1.0,
                            features=("constant", "state_poly"))
    worst = max(r.z for r in rep.rows)

    # negative control: paths driven by u = +1, generator averaged with uniform u
    spec = drift_u_spec()
    plus = constant_strategy([0.0, 1.0], spec.T, "u=+1")
    uni = constant_strategy([0.5, 0.5], spec.T, "uniform")
    ens = simulate_mixed(spec, 0.0, [0.0], plus, uni, settings.defect_control_paths, 1e-2, settings.seed + 2,
                         workers=settings.workers)
    wrong = martingale_defect(ens, spec, uni, uni, default_test_functions(), 0.0, 1.0)
    right = martingale_defect(ens, spec, plus, uni, default_test_functions(), 0.0, 1.0)
    flagged = not wrong.passed
    ok = rep.passed and flagged and right.passed
    summary = (f"max |defect|/SE = {worst:.2f} over {len(rep.rows)} estimates; miswired control "
               f"{'flagged' if flagged else 'NOT flagged'} (max z {max(r.z for r in wrong.rows):.1f}), "
               f"correct control {'passes' if right.passed else 'fails'}")
    return ok, summary, {"defect": rep.as_dict(), "miswired": wrong.as_dict(), "control": right.as_dict()}


def check_dpp(settings):
    spec = shipped_spec("heat")
    grid = make_grid(spec, [HEAT_BOX[0]], [HEAT_BOX[1]], [settings.pde_nx])
    vg = solve_isaacs_pde(spec, grid)
    fam_U = pure_and_uniform_family(spec.n_u, spec.T, "player1")
    fam_V = pure_and_uniform_family(spec.n_v, spec.T, "player2")
    rep = dpp_check(spec, 0.0, [0.0], deterministic_time(0.5), vg, fam_U, fam_V, n_paths=settings.paths,
                    dt_sim=1e-3, seed=settings.seed, workers=settings.workers)
    exact = float(heat_solution(0.0, np.zeros((1, 1)))[0])
    ok = rep.passed and rep.budget <= 2e-2
    summary = (f"gaps {rep.gap_lower:.2e} / {rep.gap_upper:.2e} within budget {rep.budget:.2e} "
               f"(3SE {3 * rep.mc_se:.1e}, interp {rep.interpolation:.1e}, scheme {rep.scheme_error:.1e}); "
               f"V(0,0) grid {rep.V_grid:.5f} vs exact {exact:.5f}")
    return ok, summary, rep.as_dict()


def check_saddle(settings):
    spec = shipped_spec("matching_pennies_linear")
    fam_U = pure_and_uniform_family(spec.n_u, spec.T, "player1")
    fam_V = pure_and_uniform_family(spec.n_v, spec.T, "player2")
    eps = 0.05
    mixed = epsilon_saddle(spec, 0.0, [0.0], fam_U, fam_V, eps, n_paths=settings.paths, dt_sim=1e-2,
                           seed=settings.seed, workers=settings.workers, verify_seed=settings.seed + 100)
    iu = fam_U.ids().index("uniform")
    iv = fam_V.ids().index("uniform")
    J = mixed.J
    reg_u = float(np.max(J[:, iv]) - J[iu, iv])
    reg_v = float(J[iu, iv] - np.min(J[iu, :]))
    uniform_ok = reg_u <= eps and reg_v <= eps
    pure_U = pure_and_uniform_family(spec.n_u, spec.T, "player1", include_uniform=False)
    pure_V = pure_and_uniform_family(spec.n_v, spec.T, "player2", include_uniform=False)
    pure = epsilon_saddle(spec, 0.0, [0.0], pure_U, pure_V, eps, n_paths=settings.paths, dt_sim=1e-2,
                          seed=settings.seed, workers=settings.workers)
    ok = uniform_ok and mixed.found and mixed.verification["holds"] and not pure.found
    summary = (f"uniform/uniform regrets {reg_u:.1e}, {reg_v:.1e} <= {eps}; "
               f"pure-only best regrets {pure.regret_u:.2f}, {pure.regret_v:.2f} -> "
               f"{'not found' if not pure.found else 'found'}")
    return ok, summary, {"mixed": mixed.as_dict(), "pure": pure.as_dict(), "uniform_regrets": [reg_u, reg_v]}


def determinism_commands(quick=True):
    """CLI invocations compared across worker counts."""
    paths = "3000" if quick else "20000"
    return [
        ["hamiltonian", "--spec", "matching_pennies", "--p", "0.7", "--M", "1.5", "--x", "0.2"],
        ["hamiltonian", "--spec", "matching_pennies", "--sweep=-2:2:9", "--M", "1.0"],
        ["mixing", "probe", "--spec", "switching_volatility", "--samples", "200", "--seed", "3"],
        ["solve-pde", "--spec", "matching_pennies", "--grid=-3:3:31"],
        ["simulate", "--spec", "matching_pennies", "--paths", "5000", "--dt", "0.01", "--record-every", "10",
         "--seed", "4"],
        ["value", "--spec", "matching_pennies_linear", "--paths", paths, "--seed", "5"],
        ["dpp-check", "--spec", "heat", "--grid=-6.283185307179586:6.283185307179586:41", "--paths", paths,
         "--seed", "6"],
        ["saddle-search", "--spec", "matching_pennies_linear", "--paths", paths, "--epsilon", "0.2", "--seed", "7"],
    ]


def check_determinism(settings, quick=True):
    from .cli import run

    mismatches = []
    failures = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, cmd in enumerate(determinism_commands(quick)):
            outputs = []
            for workers in (1, 2, 1):
                out = Path(tmp) / f"{i}-w{workers}-{len(outputs)}"
                code = run(cmd + ["--workers", str(workers), "--out", str(out)])
                if code != 0:
                    failures.append((cmd[0], workers, code))
                outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*"))})
            if not outputs[0] or any(o != outputs[0] for o in outputs[1:]):
                mismatches.append(" ".join(cmd[:1]))
    ok = not mismatches and not failures
    n = len(determinism_commands(quick))
    summary = f"{n} subcommand runs byte-identical across workers 1, 2 and a rerun" if ok else \
        f"mismatch in {mismatches}, failures {failures}"
    return ok, summary, {"mismatches": mismatches, "failures": failures}


CRITERIA = [
    ("C1", "minimax equality on random matrix games", 5.0, check_minimax),
    ("C2", "Isaacs-gap sandwich on matching pennies", 1.0, check_isaacs_gap),
    ("C3", "heat equation against its closed form", 60.0, check_heat),
    ("C4", "randomized value on a non-Isaacs game", 120.0, check_randomized_value),
    ("C5", "mixed versus averaged-coefficient laws", 120.0, check_law_equivalence),
    ("C6", "martingale defect and miswired control", 60.0, check_martingale_defect),
    ("C7", "dynamic programming at the midpoint", 180.0, check_dpp),
    ("C8", "epsilon-saddle with uniform mixtures", 120.0, check_saddle),
    ("C9", "determinism across worker counts", 300.0, check_determinism),
]


def run_criterion(key, settings):
    for k, title, limit, fn in CRITERIA:
        if k == key:
            return _timed(k, title, limit, fn, settings)
    raise KeyError(key)


def run_acceptance(quick=False, only=None, workers=1, seed=1, echo=print):
    settings = Settings.quick(seed, workers) if quick else Settings(seed=seed, workers=workers)
    results = []
    for key, title, limit, fn in CRITERIA:
        if only and key not in only:
            continue
        res = _timed(key, title, limit, fn, settings)
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results
