"""Euler–Maruyama simulation under elementary mixed strategies.

``simulate_mixed`` draws fresh independent actions for both players at
every Euler step from the currently active distributions; this per-step
sampling is how continuous-time mixing is discretized here.
``simulate_auxiliary`` instead integrates the averaged coefficients, with
the active distributions playing the role of pure actions.

Paths are simulated in blocks of ``rng.BLOCK_SIZE``.  Block ``k`` draws its
Gaussians and each player's actions from three separate streams keyed by
``(seed, tag, k)``, so the output does not depend on how many workers run
the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mixing import averaged_covariance, averaged_drift, psd_sqrt
from .rng import BLOCK_SIZE, stream
from .strategies import StrategyTracker

STEP_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass(eq=False)
class PathEnsemble:
    kind: str
    s: float
    x: np.ndarray
    dt_sim: float
    n_steps: int
    seed: int
    times: np.ndarray
    paths: np.ndarray
    mu: object
    nu: object
    interval_u: np.ndarray
    interval_v: np.ndarray
    weights_u: np.ndarray
    weights_v: np.ndarray
    action_draws: np.ndarray | None = None
    stop_times: np.ndarray | None = None
    stop_states: np.ndarray | None = None
    stopped_by_rule: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def terminal(self):
        return self.paths[:, -1]

    def seed_record(self, path):
        """``(seed, block, position)`` locating a path in the keyed streams."""
        return (self.seed, path // BLOCK_SIZE, path % BLOCK_SIZE)

    def active_weights(self, player, r):
        """Active distribution per path at recorded index ``r``."""
        if player == "u":
            idx, w = self.interval_u[:, r], self.weights_u
        else:
            idx, w = self.interval_v[:, r], self.weights_v
        return w[np.arange(self.n_paths), idx]


def step_count(s, T, dt_sim):
    if not dt_sim > 0:
        raise ValueError("dt_sim must be > 0")
    if not 0 <= s <= T:
        raise ValueError(f"start time {s} outside [0, {T}]")
    n = round((T - s) / dt_sim)
    if abs(n * dt_sim - (T - s)) > STEP_TOL * max(1.0, T) or (n == 0 and T > s):
        raise ValueError(f"dt_sim={dt_sim} does not divide T - s = {T - s}")
    return n


def recorded_steps(n_steps, record_every):
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    idx = np.arange(0, n_steps + 1, record_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def sample_indices(gen, cumulative):
    """Inverse-CDF draw of one index per row of cumulative weights ``[n, m]``.

    The index is the number of cumulative entries ``<= r`` for a uniform
    ``r``, capped at ``m - 1``.
    """
    n, m = cumulative.shape
    r = gen.random(n)
    idx = np.zeros(n, dtype=np.intp)
    for c in range(m - 1):
        idx += cumulative[:, c] <= r
    return idx


def _simulate_block(spec, kind, s, x, mu, nu, dt, n_steps, rec, seed, block, n, opts):
    gauss = stream(seed, "gauss", block)
    tags = ("player2", "player1") if opts["swap_player_streams"] else ("player1", "player2")
    gen_u = stream(seed, tags[0], block)
    gen_v = stream(seed, tags[1], block)
    d = spec.d
    noise_dim = spec.d_prime if kind == "mixed" else d
    times = s + dt * np.arange(n_steps + 1)
    times[-1] = spec.T

    track_u = StrategyTracker(mu, n)
    track_v = StrategyTracker(nu, n)
    keep = mu.needs_history or nu.needs_history
    history = np.empty((n, n_steps + 1, d)) if keep else None
    X = np.tile(x, (n, 1))
    if keep:
        history[:, 0] = X

    R = rec.size
    paths = np.empty((n, R, d))
    int_u = np.empty((n, R), dtype=np.int16)
    int_v = np.empty((n, R), dtype=np.int16)
    draws = np.empty((n, n_steps, 2), dtype=np.int16) if opts["record_actions"] else None
    stop = opts["stop"]
    running = np.ones(n, dtype=bool)
    stop_t = np.full(n, spec.T)
    stop_x = np.empty((n, d))
    by_rule = np.zeros(n, dtype=bool)
    sqdt = math.sqrt(dt)
    r = 0
    for j in range(n_steps + 1):
        t = times[j]
        active = running if stop is not None else None
        track_u.update(j, times, X, history, active)
        track_v.update(j, times, X, history, active)
        if stop is not None:
            fired = running & stop.fires(t, X)
            if fired.any():
                stop_t[fired] = t
                stop_x[fired] = X[fired]
                by_rule[fired] = True
                running &= ~fired
        if r < R and rec[r] == j:
            paths[:, r] = X
            int_u[:, r] = track_u.interval
            int_v[:, r] = track_v.interval
            r += 1
        if j == n_steps:
            break
        if stop is not None and not running.any():
            # every path is frozen: fill the remaining records and stop early
            paths[:, r:] = X[:, None]
            int_u[:, r:] = track_u.interval[:, None]
            int_v[:, r:] = track_v.interval[:, None]
            if draws is not None:
                draws[:, j:] = -1
            break
        wu, wv = track_u.weights, track_v.weights
        if kind == "mixed":
            iu = sample_indices(gen_u, track_u.cumulative)
            iv = sample_indices(gen_v, track_v.cumulative)
            if draws is not None:
                draws[:, j, 0] = iu
                draws[:, j, 1] = iv
            u = spec.U_grid[iu]
            v = spec.V_grid[iv]
            b = spec.drift(t, X, u, v)
            sig = spec.diffusion(t, X, u, v)
        else:
            b = averaged_drift(spec, t, X, wu, wv)
            sig = psd_sqrt(averaged_covariance(spec, t, X, wu, wv))
        Z = gauss.standard_normal((n, noise_dim))
        with np.errstate(over="ignore", invalid="ignore"):
            Xn = X + b * dt + np.einsum("nij,nj->ni", sig, Z) * sqdt
        if stop is not None:
            Xn[~running] = X[~running]
            if draws is not None:
                draws[~running, j] = -1
        if not np.all(np.isfinite(Xn)):
            p = int(np.flatnonzero(~np.all(np.isfinite(Xn), axis=1))[0])
            raise SimulationError(
                f"state blew up on path {block * BLOCK_SIZE + p} at t={times[j + 1]:.6g}; check the coefficient growth"
            )
        X = Xn
        if keep:
            history[:, j + 1] = X
    stop_x[~by_rule] = X[~by_rule]
    return {
        "paths": paths,
        "interval_u": int_u,
        "interval_v": int_v,
        "weights_u": track_u.interval_weights,
        "weights_v": track_v.interval_weights,
        "draws": draws,
        "stop_t": stop_t,
        "stop_x": stop_x,
        "by_rule": by_rule,
    }


def _simulate(spec, kind, s, x, mu, nu, n_paths, dt_sim, seed, record_every, workers, stop,
              record_actions, swap_player_streams):
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    mu.check(spec.n_u, spec.T)
    nu.check(spec.n_v, spec.T)
    n_steps = step_count(s, spec.T, dt_sim)
    rec = recorded_steps(n_steps, record_every)
    opts = {"stop": stop, "record_actions": record_actions and kind == "mixed",
            "swap_player_streams": swap_player_streams}
    blocks = [(k, min(BLOCK_SIZE, n_paths - k * BLOCK_SIZE)) for k in range(math.ceil(n_paths / BLOCK_SIZE))]

    def run(item):
        k, n = item
        return _simulate_block(spec, kind, s, x, mu, nu, dt_sim, n_steps, rec, seed, k, n, opts)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    times = s + dt_sim * rec.astype(float)
    times[-1] = spec.T if rec[-1] == n_steps else times[-1]
    return PathEnsemble(
        kind=kind,
        s=float(s),
        x=x,
        dt_sim=float(dt_sim),
        n_steps=n_steps,
        seed=int(seed),
        times=times,
        paths=cat("paths"),
        mu=mu,
        nu=nu,
        interval_u=cat("interval_u"),
        interval_v=cat("interval_v"),
        weights_u=cat("weights_u"),
        weights_v=cat("weights_v"),
        action_draws=cat("draws") if opts["record_actions"] else None,
        stop_times=cat("stop_t") if stop is not None else None,
        stop_states=cat("stop_x") if stop is not None else None,
        stopped_by_rule=cat("by_rule") if stop is not None else None,
        metadata={
            "spec_hash": spec.spec_hash,
            "record_every": record_every,
            "block_size": BLOCK_SIZE,
            "swap_player_streams": swap_player_streams,
            "stop": stop.describe() if stop is not None else None,
            "mu": mu.describe(),
            "nu": nu.describe(),
        },
    )


def simulate_mixed(spec, s, x, mu, nu, n_paths, dt_sim, seed, *, record_every=1, workers=1, stop=None,
                   record_actions=False, swap_player_streams=False):
    """Paths of the state when both players sample actions afresh at every step.

    ``stop`` optionally freezes each path at the first grid time a stopping
    rule fires; the stop times and states are recorded.  Per-step action
    indices are kept when ``record_actions`` is set.
    """
    return _simulate(spec, "mixed", s, x, mu, nu, n_paths, dt_sim, seed, record_every, workers, stop,
                     record_actions, swap_player_streams)


def simulate_auxiliary(spec, s, x, mu, nu, n_paths, dt_sim, seed, *, record_every=1, workers=1, stop=None):
    """Paths of the averaged-coefficient SDE driven by a ``d``-dimensional Brownian motion."""
    return _simulate(spec, "auxiliary", s, x, mu, nu, n_paths, dt_sim, seed, record_every, workers, stop,
                     False, False)
