"""Game definition: coefficients, payoff, finite action grids, mixed actions.

Coefficient callables are vectorized.  ``b(t, x, u, v)`` receives arrays
whose leading (batch) dimensions broadcast against each other, with
trailing dimensions ``d`` for ``x``, ``k`` for ``u`` and ``l`` for ``v``;
it returns an array of shape ``batch + (d,)``.  ``sigma`` returns
``batch + (d, d_prime)`` and ``g(x)`` returns ``batch``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .rng import stream

SIMPLEX_TOL = 1e-12


class SpecError(ValueError):
    """Invalid game specification or configuration."""


class CoefficientError(ValueError):
    """A coefficient or payoff evaluated to a non-finite value."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MixedAction:
    """Probability vector over a finite action grid."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("a mixed action needs at least one weight")
        if not np.all(np.isfinite(w)) or w.min() < 0.0:
            raise ValueError(f"weights must be finite and non-negative: {w}")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        return isinstance(other, MixedAction) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    @property
    def support(self):
        return tuple(int(i) for i in np.flatnonzero(self.weights > 0))

    def check_grid(self, size):
        if self.weights.size != size:
            raise ValueError(f"mixed action has {self.weights.size} weights, grid has {size} points")
        return self


def point_mass(index, size):
    """Dirac mass at grid point ``index``."""
    index = int(index)
    if not 0 <= index < size:
        raise IndexError(f"action index {index} outside grid of size {size}")
    w = np.zeros(size)
    w[index] = 1.0
    return MixedAction(w)


def uniform(size):
    return MixedAction(np.full(size, 1.0 / size))


def mixture(actions, coefficients):
    """Convex combination of mixed actions on the same grid."""
    c = np.asarray(coefficients, dtype=float)
    if c.min() < 0 or abs(c.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("mixture coefficients must lie on the simplex")
    w = sum(ci * a.weights for ci, a in zip(c, actions))
    return MixedAction(w / w.sum())


def _batch_shape(t, x, u, v):
    return np.broadcast_shapes(np.shape(t), x.shape[:-1], u.shape[:-1], v.shape[:-1])


@dataclass(frozen=True, eq=False)
class GameSpec:
    d: int
    d_prime: int
    T: float
    b: Callable
    sigma: Callable
    g: Callable
    U_grid: np.ndarray
    V_grid: np.ndarray
    growth_constant: float | None = None
    # Standing-assumption case claimed by the user: d == 1, or sigma smooth
    # in x.  Recorded only; not verified.
    smooth_sigma_attested: bool = False
    name: str = "game"
    source: str = field(default="", repr=False)

    def __post_init__(self):
        if int(self.d) < 1 or int(self.d_prime) < 1:
            raise SpecError("d and d_prime must be positive integers")
        if not self.T > 0:
            raise SpecError(f"horizon T must be > 0, got {self.T}")
        for label in ("U_grid", "V_grid"):
            grid = np.array(getattr(self, label), dtype=float)
            if grid.ndim == 1:
                grid = grid[:, None]
            if grid.ndim != 2 or grid.shape[0] == 0:
                raise SpecError(f"{label} must be a non-empty list of points")
            if not np.all(np.isfinite(grid)):
                raise SpecError(f"{label} has non-finite coordinates")
            if np.unique(grid, axis=0).shape[0] != grid.shape[0]:
                raise SpecError(f"{label} contains duplicate points")
            object.__setattr__(self, label, _readonly(grid))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "d_prime", int(self.d_prime))
        object.__setattr__(self, "T", float(self.T))

    @property
    def n_u(self):
        return self.U_grid.shape[0]

    @property
    def n_v(self):
        return self.V_grid.shape[0]

    @property
    def spec_hash(self):
        text = self.source or repr(
            (self.name, self.d, self.d_prime, self.T, self.U_grid.tobytes(), self.V_grid.tobytes(),
             getattr(self.b, "__qualname__", ""), getattr(self.sigma, "__qualname__", ""),
             getattr(self.g, "__qualname__", ""))
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    # -- evaluation -------------------------------------------------------

    def drift(self, t, x, u, v):
        t, x, u, v = np.asarray(t, float), np.asarray(x, float), np.asarray(u, float), np.asarray(v, float)
        batch = _batch_shape(t, x, u, v)
        out = np.broadcast_to(np.asarray(self.b(t, x, u, v), dtype=float), batch + (self.d,))
        _check_finite(out, "b", t, x, u, v, batch, 1)
        return out

    def diffusion(self, t, x, u, v):
        t, x, u, v = np.asarray(t, float), np.asarray(x, float), np.asarray(u, float), np.asarray(v, float)
        batch = _batch_shape(t, x, u, v)
        out = np.broadcast_to(
            np.asarray(self.sigma(t, x, u, v), dtype=float), batch + (self.d, self.d_prime)
        )
        _check_finite(out, "sigma", t, x, u, v, batch, 2)
        return out

    def payoff(self, x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(np.asarray(self.g(x), dtype=float), x.shape[:-1])
        if not np.all(np.isfinite(out)):
            i = np.unravel_index(np.flatnonzero(~np.isfinite(out))[0], out.shape)
            raise CoefficientError(f"g is not finite at x={x[i].tolist()}")
        return out

    def drift_pairs(self, t, X):
        """Drift at every grid pair: ``X[..., d] -> [..., n_u, n_v, d]``."""
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        t = t.reshape(t.shape + (1, 1))
        return self.drift(t, X[..., None, None, :], self.U_grid[:, None, :], self.V_grid[None, :, :])

    def diffusion_pairs(self, t, X):
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        t = t.reshape(t.shape + (1, 1))
        return self.diffusion(t, X[..., None, None, :], self.U_grid[:, None, :], self.V_grid[None, :, :])

    def covariance_pairs(self, t, X):
        """``sigma sigma^T`` at every grid pair."""
        s = self.diffusion_pairs(t, X)
        return np.einsum("...ik,...jk->...ij", s, s)


def _check_finite(out, what, t, x, u, v, batch, trailing):
    if np.all(np.isfinite(out)):
        return
    flat = np.isfinite(out).reshape(batch + (-1,)).all(axis=-1)
    idx = np.unravel_index(np.flatnonzero(~flat)[0], batch)
    tb = np.broadcast_to(t, batch)[idx]
    xb = np.broadcast_to(x, batch + x.shape[-1:])[idx]
    ub = np.broadcast_to(u, batch + u.shape[-1:])[idx]
    vb = np.broadcast_to(v, batch + v.shape[-1:])[idx]
    raise CoefficientError(
        f"{what} is not finite at t={float(tb)!r}, x={xb.tolist()}, u={ub.tolist()}, v={vb.tolist()}"
    )


# -- Standing-assumption probes -------------------------------------------------


@dataclass
class AssumptionProbeReport:
    """Empirical Lipschitz-in-x and growth constants.

    ``lipschitz_estimate[K]`` is the largest ratio
    ``(|b(x)-b(y)| + |sigma(x)-sigma(y)|) / |x-y|`` over sampled pairs with
    ``|x|, |y| <= K``; ``lipschitz_b`` and ``lipschitz_sigma`` split it by
    coefficient.  ``max_violation`` is measured against the declared growth
    constant (0 when none is declared).
    """

    lipschitz_estimate: dict
    growth_constant: float
    max_violation: float
    lipschitz_b: dict = field(default_factory=dict)
    lipschitz_sigma: dict = field(default_factory=dict)
    radius: float = 0.0
    samples: int = 0
    seed: int = 0

    def as_dict(self):
        return {
            "radius": self.radius,
            "samples": self.samples,
            "seed": self.seed,
            "lipschitz_estimate": {repr(k): v for k, v in self.lipschitz_estimate.items()},
            "lipschitz_b": {repr(k): v for k, v in self.lipschitz_b.items()},
            "lipschitz_sigma": {repr(k): v for k, v in self.lipschitz_sigma.items()},
            "growth_constant": self.growth_constant,
            "max_violation": self.max_violation,
        }


def sample_pairs(d, radius, samples, gen):
    """Pairs ``(x, y)`` in the closed ball; every other pair is a close pair."""
    def ball(n):
        z = gen.standard_normal((n, d))
        z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-300)
        r = radius * gen.random(n) ** (1.0 / d)
        return z * r[:, None]

    x = ball(samples)
    y = ball(samples)
    close = np.arange(samples) % 2 == 1
    step = gen.standard_normal((samples, d))
    step *= (1e-4 * radius) / np.maximum(np.linalg.norm(step, axis=1, keepdims=True), 1e-300)
    y_close = x + step
    norm = np.linalg.norm(y_close, axis=1)
    over = norm > radius
    y_close[over] *= (radius / norm[over])[:, None]
    y[close] = y_close[close]
    same = np.all(x == y, axis=1)
    y[same] = x[same] * (1.0 - 1e-4)
    same = np.all(x == y, axis=1)
    y[same, 0] += 1e-4 * radius
    return x, y


def probe_radii(radius):
    return tuple(radius * j / 4.0 for j in (1, 2, 3, 4))


def lipschitz_table(ratios, x, y, radius):
    """``K -> max ratio`` over pairs inside the K-ball, for the probe radii."""
    size = np.maximum(np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1))
    table = {}
    for K in probe_radii(radius):
        inside = size <= K * (1 + 1e-12)
        table[K] = float(ratios[inside].max()) if inside.any() else 0.0
    return table


def probe_assumptions(spec, radius, samples, seed):
    """Report empirical Lipschitz and linear-growth constants for ``b``, ``sigma``.

    Deterministic given ``seed``.  Advisory: nothing is rejected.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    gen = stream(seed, "probe")
    x, y = sample_pairs(spec.d, radius, samples, gen)
    t = gen.random(samples) * spec.T

    bx, by = spec.drift_pairs(t, x), spec.drift_pairs(t, y)
    sx, sy = spec.diffusion_pairs(t, x), spec.diffusion_pairs(t, y)
    dist = np.linalg.norm(x - y, axis=1)[:, None, None]
    db = np.linalg.norm(bx - by, axis=-1) / dist
    ds = np.linalg.norm(sx - sy, axis=(-2, -1)) / dist
    both = (db + ds).reshape(samples, -1).max(axis=1)

    pts = np.concatenate([np.zeros((1, spec.d)), x, y])
    tp = np.concatenate([[0.0], t, t])
    size = np.linalg.norm(spec.drift_pairs(tp, pts), axis=-1) + np.linalg.norm(
        spec.diffusion_pairs(tp, pts), axis=(-2, -1)
    )
    size = size.reshape(pts.shape[0], -1).max(axis=1)
    r = 1.0 + np.linalg.norm(pts, axis=1)
    growth = float((size / r).max())
    if spec.growth_constant is None:
        violation = 0.0
    else:
        violation = float(max(0.0, (size - spec.growth_constant * r).max()))
    return AssumptionProbeReport(
        lipschitz_estimate=lipschitz_table(both, x, y, radius),
        growth_constant=growth,
        max_violation=violation,
        lipschitz_b=lipschitz_table(db.reshape(samples, -1).max(axis=1), x, y, radius),
        lipschitz_sigma=lipschitz_table(ds.reshape(samples, -1).max(axis=1), x, y, radius),
        radius=float(radius),
        samples=int(samples),
        seed=int(seed),
    )
