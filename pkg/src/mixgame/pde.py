"""Explicit finite-difference solver for the Isaacs equation

    -v_t - H(t, x, v_x, v_xx) = 0,   v(T, .) = g,

with ``H`` the randomized Hamiltonian or one of the pure ones, on a
truncated box in one or two space dimensions.

Each backward step solves one matrix game per interior node.  Second
derivatives are central.  The default ``stencil="pairwise"`` picks the
first-derivative stencil for every action pair from the coefficients alone:
central where the pair's cell Peclet number ``|b_k| dx_k / a_kk`` is at most
one, upwind along the pair's own drift otherwise.  Every entry of the node
game is then non-decreasing in the neighbouring values, and so is its value,
which makes the whole update monotone under the CFL bound.

``stencil="fixed_point"`` instead chooses one stencil per node by a capped
fixed point: solve with central differences, take the sign of the optimal
averaged drift, re-solve with that upwind stencil, and stop when the sign
repeats.  Nodes that have not settled after three solves keep the central
solution.  The choice depends on the data, so this variant is not monotone
in general.

Boundary nodes hold ``g`` for all times.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .hamiltonian import pure_lower, pure_upper, solve_exact_stack, solve_fp_stack

KINDS = ("minus", "plus", "randomized")
SOLVERS = ("exact", "fp")
STENCILS = ("pairwise", "fixed_point")
MAX_STENCIL_PASSES = 3
# half-width of the diffusive boundary layer, in standard deviations
TRUST_SIGMAS = 4.0
DRIFT_TIE_TOL = 1e-12
BOUNDARY_NOTE = "truncated box; boundary nodes hold g at all times"


class CFLError(ValueError):
    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ExtrapolationError(ValueError):
    """Point outside the space-time hull of a value grid."""


@dataclass(frozen=True)
class SpaceTimeGrid:
    x_min: tuple
    x_max: tuple
    nx: tuple
    nt: int
    T: float
    cfl_safety: float = 0.9

    def __post_init__(self):
        x_min = tuple(float(a) for a in np.atleast_1d(self.x_min))
        x_max = tuple(float(a) for a in np.atleast_1d(self.x_max))
        nx = tuple(int(n) for n in np.atleast_1d(self.nx))
        if not (len(x_min) == len(x_max) == len(nx)):
            raise ValueError("x_min, x_max and nx must have one entry per dimension")
        if any(lo >= hi for lo, hi in zip(x_min, x_max)):
            raise ValueError("x_min must be < x_max componentwise")
        if any(n < 3 for n in nx):
            raise ValueError("need at least 3 nodes per dimension")
        if int(self.nt) < 1:
            raise ValueError("nt must be >= 1")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        object.__setattr__(self, "x_min", x_min)
        object.__setattr__(self, "x_max", x_max)
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "T", float(self.T))

    @property
    def d(self):
        return len(self.nx)

    @property
    def dx(self):
        return tuple((hi - lo) / (n - 1) for lo, hi, n in zip(self.x_min, self.x_max, self.nx))

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.x_min, self.x_max, self.nx)]

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def nodes(self):
        """Node coordinates, shape ``nx + (d,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def describe(self):
        return {
            "x_min": list(self.x_min),
            "x_max": list(self.x_max),
            "nx": list(self.nx),
            "nt": self.nt,
            "dt": self.dt,
            "dx": list(self.dx),
            "T": self.T,
            "cfl_safety": self.cfl_safety,
        }


def coefficient_ranges(spec, x_min, x_max, nx, n_times=5):
    """Probe ``(cfl_lambda, drift_range, diffusion_range)`` over grid nodes.

    ``cfl_lambda`` is the largest ``a_kk + |b_k| dx_k`` over nodes, actions,
    sampled times and axes, with ``a = sigma sigma^T``.
    """
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(x_min, x_max, nx)]
    dx = np.array([(hi - lo) / (n - 1) for lo, hi, n in zip(x_min, x_max, nx)])
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(nx))
    lam = drift = diff = 0.0
    for t in np.linspace(0.0, spec.T, n_times):
        b = np.abs(spec.drift_pairs(t, X))
        a = np.diagonal(spec.covariance_pairs(t, X), axis1=-2, axis2=-1)
        lam = max(lam, float((a + b * dx).max()))
        drift = max(drift, float(b.max()))
        diff = max(diff, float(a.max()))
    return lam, drift, diff


def max_stable_dt(spec, x_min, x_max, nx, cfl_safety=0.9):
    lam, _, _ = coefficient_ranges(spec, x_min, x_max, nx)
    dx = [(hi - lo) / (n - 1) for lo, hi, n in zip(x_min, x_max, nx)]
    if lam <= 0:
        return math.inf
    return cfl_safety * min(dx) ** 2 / (len(nx) * lam)


def make_grid(spec, x_min, x_max, nx, cfl_safety=0.9, nt=None):
    """Grid over ``[0, T] x box`` with the smallest CFL-compliant ``nt`` unless given."""
    x_min, x_max, nx = np.atleast_1d(x_min), np.atleast_1d(x_max), np.atleast_1d(nx)
    if nt is None:
        dt = max_stable_dt(spec, x_min, x_max, nx, cfl_safety)
        nt = 1 if math.isinf(dt) else max(1, math.ceil(spec.T / dt - 1e-9))
    return SpaceTimeGrid(tuple(x_min), tuple(x_max), tuple(nx), int(nt), spec.T, cfl_safety)


@dataclass(eq=False)
class ValueGrid:
    grid: SpaceTimeGrid
    values: np.ndarray
    kind: str = "randomized"
    metadata: dict = field(default_factory=dict)

    def trust_shrink(self, t):
        tau = max(self.grid.T - float(t), 0.0)
        drift = self.metadata.get("drift_range", 0.0)
        diff = self.metadata.get("diffusion_range", 0.0)
        return drift * tau + TRUST_SIGMAS * math.sqrt(diff * tau)

    def trust_mask(self, n):
        """Interior nodes far enough from the box boundary at layer ``n``."""
        shrink = self.trust_shrink(self.grid.times[n])
        mask = np.ones(self.grid.nx, dtype=bool)
        nodes = self.grid.nodes
        for k, (lo, hi) in enumerate(zip(self.grid.x_min, self.grid.x_max)):
            xk = nodes[..., k]
            mask &= (xk >= lo + shrink - 1e-12) & (xk <= hi - shrink + 1e-12)
        inner = tuple(slice(1, -1) for _ in range(self.grid.d))
        interior = np.zeros(self.grid.nx, dtype=bool)
        interior[inner] = True
        return mask & interior

    def __call__(self, t, x):
        return evaluate_value(self, t, x)


# -- finite differences ------------------------------------------------------------


def _shift(v, axis, k):
    sl = [slice(1, -1)] * v.ndim
    sl[axis] = slice(1 + k, v.shape[axis] - 1 + k)
    return v[tuple(sl)]


def _derivatives(v, dx):
    """Backward, central, forward first differences and the Hessian at interior nodes."""
    d = v.ndim
    c = _shift(v, 0, 0)
    N = c.size
    Dm = np.empty((N, d))
    D0 = np.empty((N, d))
    Dp = np.empty((N, d))
    hess = np.zeros((N, d, d))
    for k in range(d):
        up = _shift(v, k, 1)
        dn = _shift(v, k, -1)
        Dm[:, k] = ((c - dn) / dx[k]).reshape(-1)
        Dp[:, k] = ((up - c) / dx[k]).reshape(-1)
        D0[:, k] = ((up - dn) / (2 * dx[k])).reshape(-1)
        hess[:, k, k] = ((up - 2 * c + dn) / dx[k] ** 2).reshape(-1)
    if d == 2:
        pp = v[2:, 2:]
        pm = v[2:, :-2]
        mp = v[:-2, 2:]
        mm = v[:-2, :-2]
        cross = ((pp - pm - mp + mm) / (4 * dx[0] * dx[1])).reshape(-1)
        hess[:, 0, 1] = cross
        hess[:, 1, 0] = cross
    return Dm, D0, Dp, hess


def _node_games(A, b, kind, solver, fp_iterations, gap_threshold, workers, stats):
    """Hamiltonian value, optimal mixed actions and averaged drift per node."""
    N, m, n = A.shape
    if kind == "randomized":
        if solver == "fp":
            h, mu, nu, lower, upper = solve_fp_stack(A, fp_iterations, workers)
            bad = (upper - lower) > gap_threshold
            stats["fp_solves"] += N
            stats["fp_fallbacks"] += int(bad.sum())
            if bad.any():
                eh, emu, enu, elo, eup, _, _ = solve_exact_stack(A[bad], workers)
                h[bad], mu[bad], nu[bad], lower[bad], upper[bad] = eh, emu, enu, elo, eup
        else:
            h, mu, nu, lower, upper, _, _ = solve_exact_stack(A, workers)
            stats["exact_solves"] += N
        gap = upper - lower
        drift = np.einsum("Ni,Nj,Nijk->Nk", mu, nu, b)
    else:
        if kind == "minus":
            h, i, j = pure_lower(A)
        else:
            h, i, j = pure_upper(A)
        gap = np.zeros(N)
        drift = b[np.arange(N), i, j]
    return h, drift, gap


def _upwind_violations(b, a, choice, dx):
    """Nodes where some action pair meets a non-monotone stencil.

    ``choice`` holds -1/0/+1 per node and dimension, or per node, action
    pair and dimension.
    """
    N = b.shape[0]
    if choice.ndim == 2:
        choice = choice[:, None, None, :]
    bad = np.zeros(N, dtype=bool)
    d = b.shape[-1]
    for k in range(d):
        bk = b[..., k]
        akk = a[..., k, k]
        ck = choice[..., k]
        central_ok = np.abs(bk) * dx[k] <= akk * (1 + 1e-12)
        against = (ck * bk) < 0
        upwind_ok = ~against | (2 * np.abs(bk) * dx[k] <= akk * (1 + 1e-12))
        ok = np.where(ck == 0, central_ok, upwind_ok)
        bad |= ~ok.reshape(N, -1).all(axis=1)
    if d == 2:
        bad |= (np.abs(a[..., 0, 1]) > 0).reshape(N, -1).any(axis=1)
    return bad


def _pairwise_choice(b, a, dx):
    """Central where the cell Peclet number is at most one, else upwind by the pair's drift."""
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    central = np.abs(b) * np.asarray(dx) <= diag * (1 + 1e-12)
    return np.where(central, 0, np.sign(b)).astype(np.int8)


def _pairwise_hamiltonian(b, a, Q, Dm, D0, Dp, dx, kind, solver, fp_iterations, gap_threshold, workers, stats):
    choice = _pairwise_choice(b, a, dx)
    p = np.where(choice < 0, Dm[:, None, None, :], np.where(choice > 0, Dp[:, None, None, :], D0[:, None, None, :]))
    A = Q + np.einsum("Nmnk,Nmnk->Nmn", b, p)
    H, _, gap = _node_games(A, b, kind, solver, fp_iterations, gap_threshold, workers, stats)
    return H, gap, choice


def _fixed_point_hamiltonian(b, Q, Dm, D0, Dp, kind, solver, fp_iterations, gap_threshold, workers, stats):
    N, d = D0.shape
    choice = np.zeros((N, d), dtype=np.int8)
    H = np.empty(N)
    gap = np.zeros(N)
    active = np.arange(N)
    h_central = gap_central = None
    for it in range(MAX_STENCIL_PASSES):
        c = choice[active]
        p = np.where(c < 0, Dm[active], np.where(c > 0, Dp[active], D0[active]))
        A = Q[active] + np.einsum("Nmnk,Nk->Nmn", b[active], p)
        h, drift, g = _node_games(A, b[active], kind, solver, fp_iterations, gap_threshold, workers, stats)
        if it == 0:
            h_central, gap_central = h.copy(), g.copy()
        tol = DRIFT_TIE_TOL * (1.0 + np.abs(b[active]).reshape(active.size, -1).max(axis=1))
        new = np.where(drift > tol[:, None], 1, np.where(drift < -tol[:, None], -1, 0)).astype(np.int8)
        settled = np.all(new == c, axis=1)
        H[active[settled]] = h[settled]
        gap[active[settled]] = g[settled]
        active = active[~settled]
        if active.size == 0:
            break
        choice[active] = new[~settled]
    if active.size:
        stats["unsettled_stencils"] += int(active.size)
        H[active] = h_central[active]
        gap[active] = gap_central[active]
        choice[active] = 0
    return H, gap, choice


def solve_isaacs_pde(
    spec,
    grid,
    hamiltonian_kind="randomized",
    solver="fp",
    *,
    fp_iterations=200,
    gap_threshold=1e-4,
    workers=1,
    check_cfl=True,
    stencil="pairwise",
):
    """Backward explicit solve of the Isaacs equation on ``grid``.

    ``hamiltonian_kind`` selects the randomized Hamiltonian or the pure
    lower/upper ones.  With ``solver="fp"`` each node game is first run
    through fictitious play and re-solved exactly when the duality gap
    exceeds ``gap_threshold``.  ``stencil`` picks the first-derivative
    discretization described in the module docstring.  Raises :class:`CFLError` when ``grid.dt``
    exceeds the probed stability bound.
    """
    if hamiltonian_kind not in KINDS:
        raise ValueError(f"hamiltonian_kind must be one of {KINDS}")
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}")
    if stencil not in STENCILS:
        raise ValueError(f"stencil must be one of {STENCILS}")
    if grid.d != spec.d:
        raise ValueError(f"grid dimension {grid.d} does not match state dimension {spec.d}")
    if grid.d not in (1, 2):
        raise ValueError("the grid solver supports d = 1 or 2")
    if abs(grid.T - spec.T) > 1e-12:
        raise ValueError("grid horizon differs from the game horizon")

    lam, drift_range, diff_range = coefficient_ranges(spec, grid.x_min, grid.x_max, grid.nx)
    dx = grid.dx
    dt = grid.dt
    limit = grid.cfl_safety * min(dx) ** 2 / (grid.d * lam) if lam > 0 else math.inf
    if check_cfl and dt > limit * (1 + 1e-12):
        raise CFLError(f"dt={dt:.6g} violates the CFL bound; use dt <= {limit:.6g}", limit)

    nodes = grid.nodes
    inner = tuple(slice(1, -1) for _ in range(grid.d))
    X = nodes[inner].reshape(-1, grid.d)
    shape_inner = nodes[inner].shape[:-1]
    times = grid.times

    values = np.empty((grid.nt + 1,) + grid.nx)
    values[-1] = spec.payoff(nodes)
    stats = {
        "fp_solves": 0,
        "fp_fallbacks": 0,
        "exact_solves": 0,
        "unsettled_stencils": 0,
        "max_gap": 0.0,
        "gap_warnings": 0,
        "monotonicity_violations": 0,
    }
    warn_nodes = []
    for n in range(grid.nt - 1, -1, -1):
        t_next = times[n + 1]
        v = values[n + 1]
        b = spec.drift_pairs(t_next, X)
        a = spec.covariance_pairs(t_next, X)
        Dm, D0, Dp, hess = _derivatives(v, dx)
        Q = 0.5 * np.einsum("Nmnij,Nji->Nmn", a, hess)
        if stencil == "pairwise":
            H, gap, choice = _pairwise_hamiltonian(
                b, a, Q, Dm, D0, Dp, dx, hamiltonian_kind, solver, fp_iterations, gap_threshold, workers, stats
            )
        else:
            H, gap, choice = _fixed_point_hamiltonian(
                b, Q, Dm, D0, Dp, hamiltonian_kind, solver, fp_iterations, gap_threshold, workers, stats
            )
        stats["max_gap"] = max(stats["max_gap"], float(gap.max(initial=0.0)))
        over = gap > gap_threshold
        if over.any():
            stats["gap_warnings"] += int(over.sum())
            if len(warn_nodes) < 5:
                warn_nodes.extend((float(t_next), X[i].tolist()) for i in np.flatnonzero(over)[:5])
        stats["monotonicity_violations"] += int(_upwind_violations(b, a, choice, dx).sum())
        values[n] = v
        values[n][inner] = v[inner] + dt * H.reshape(shape_inner)

    if warn_nodes:
        warnings.warn(
            f"node game gap above {gap_threshold:g} at {stats['gap_warnings']} nodes, e.g. (t, x) = {warn_nodes[:5]}",
            RuntimeWarning,
            stacklevel=2,
        )
    metadata = {
        "kind": hamiltonian_kind,
        "solver": solver,
        "stencil": stencil,
        "fp_iterations": fp_iterations,
        "gap_threshold": gap_threshold,
        "grid": grid.describe(),
        "cfl_lambda": lam,
        "cfl_limit_dt": limit,
        "drift_range": drift_range,
        "diffusion_range": diff_range,
        "boundary": BOUNDARY_NOTE,
        "trust_region": f"box shrunk by drift_range*(T-t) + {TRUST_SIGMAS:g}*sqrt(diffusion_range*(T-t))",
        "kernel_backend": kernels.BACKEND,
        **stats,
    }
    return ValueGrid(grid=grid, values=values, kind=hamiltonian_kind, metadata=metadata)


# -- interpolation ---------------------------------------------------------------


def evaluate_value(vg, t, x):
    """Multilinear interpolation in space, linear in time.

    ``x`` is ``(d,)`` or ``(N, d)``; ``t`` is a scalar or ``(N,)``.
    """
    grid = vg.grid
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, grid.d)
    N = X.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (N,))
    tol = 1e-12 * max(1.0, grid.T)
    if np.any(t < -tol) or np.any(t > grid.T + tol):
        raise ExtrapolationError(f"t outside [0, {grid.T}]")
    lo = np.array(grid.x_min)
    hi = np.array(grid.x_max)
    span = hi - lo
    if np.any(X < lo - 1e-12 * span) or np.any(X > hi + 1e-12 * span):
        bad = X[np.any((X < lo - 1e-12 * span) | (X > hi + 1e-12 * span), axis=1)][0]
        raise ExtrapolationError(f"x={bad.tolist()} outside the grid box")

    def locate(q, size):
        r = np.round(q)
        q = np.where(np.abs(q - r) < 1e-9, r, q)
        i0 = np.clip(np.floor(q), 0, size - 2).astype(int)
        return i0, np.clip(q - i0, 0.0, 1.0)

    n0, wt = locate(t / grid.dt, grid.nt + 1)
    idx = []
    wts = []
    for k in range(grid.d):
        i0, w = locate((X[:, k] - lo[k]) / grid.dx[k], grid.nx[k])
        idx.append(i0)
        wts.append(w)

    out = np.zeros(N)
    for dt_corner in (0, 1):
        wtime = wt if dt_corner else 1.0 - wt
        for corner in np.ndindex(*(2,) * grid.d):
            w = wtime.copy()
            sel = [n0 + dt_corner]
            for k, c in enumerate(corner):
                w = w * (wts[k] if c else 1.0 - wts[k])
                sel.append(idx[k] + c)
            nz = w != 0.0
            out[nz] += w[nz] * vg.values[tuple(s[nz] for s in sel)]
    return float(out[0]) if single else out


# -- convergence ------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    rows: list
    orders_dt: list
    decreasing: bool

    def as_dict(self):
        return {"rows": self.rows, "orders_dt": self.orders_dt, "decreasing": self.decreasing}


def sup_error(vg, reference):
    """Sup-norm error over trust-region nodes of every layer."""
    grid = vg.grid
    nodes = grid.nodes
    err = 0.0
    for n, t in enumerate(grid.times):
        mask = vg.trust_mask(n)
        if not mask.any():
            continue
        pts = nodes[mask]
        if isinstance(reference, ValueGrid):
            ref = evaluate_value(reference, np.full(pts.shape[0], t), pts)
        else:
            ref = np.asarray(reference(t, pts), dtype=float)
        err = max(err, float(np.abs(vg.values[n][mask] - ref).max()))
    return err


def convergence_study(spec, grids, reference, hamiltonian_kind="randomized", solver="fp", **kwargs):
    """Sup-norm errors against ``reference`` (closed form ``f(t, X)`` or a ValueGrid).

    The decrease under refinement is reported, not enforced.
    """
    rows = []
    for grid in grids:
        vg = solve_isaacs_pde(spec, grid, hamiltonian_kind, solver, **kwargs)
        rows.append(
            {
                "nx": list(grid.nx),
                "nt": grid.nt,
                "dx": list(grid.dx),
                "dt": grid.dt,
                "error": sup_error(vg, reference),
            }
        )
    orders = []
    for r0, r1 in zip(rows, rows[1:]):
        if r0["error"] > 0 and r1["error"] > 0:
            orders.append(math.log(r0["error"] / r1["error"]) / math.log(r0["dt"] / r1["dt"]))
        else:
            orders.append(float("nan"))
    decreasing = all(r1["error"] <= r0["error"] for r0, r1 in zip(rows, rows[1:]))
    return ConvergenceTable(rows=rows, orders_dt=orders, decreasing=decreasing)
