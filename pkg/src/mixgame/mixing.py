"""Averaged coefficients of the auxiliary game.

For mixed actions ``mu`` on the U grid and ``nu`` on the V grid::

    b_tilde(t, x, mu, nu)     = sum_ij mu_i nu_j b(t, x, u_i, v_j)
    sigma_tilde(t, x, mu, nu) = (sum_ij mu_i nu_j sigma sigma^T)^(1/2)

with the symmetric positive semidefinite square root.  Any other square
root would give the same covariance; the symmetric one is the convention
used throughout.
"""

from __future__ import annotations

import numpy as np

from .model import AssumptionProbeReport, MixedAction, lipschitz_table, sample_pairs
from .rng import stream

SYMMETRY_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-8


class PSDViolation(ValueError):
    """Matrix has an eigenvalue too negative to be round-off."""


def _weights(w, size):
    if isinstance(w, MixedAction):
        w.check_grid(size)
        return w.weights
    return np.asarray(w, dtype=float)


def psd_sqrt(A):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues down to ``-1e-8 * max(1, |A|)`` are treated as round-off and
    clamped to zero; anything more negative raises :class:`PSDViolation`.
    Accepts a stack ``[..., d, d]``.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    scale = np.maximum(1.0, np.abs(A).max(axis=(-2, -1), initial=0.0))
    asym = np.abs(A - np.swapaxes(A, -1, -2)).max(axis=(-2, -1), initial=0.0)
    if np.any(asym > SYMMETRY_TOL * scale):
        raise ValueError(f"matrix is not symmetric (asymmetry {float(asym.max()):.3e})")
    if A.shape[-1] == 1:
        lam = A[..., 0, 0]
        if np.any(lam < -NEGATIVE_EIG_TOL * scale):
            raise PSDViolation(f"negative eigenvalue {float(lam.min())!r}")
        return np.sqrt(np.maximum(lam, 0.0))[..., None, None]
    lam, Q = np.linalg.eigh(0.5 * (A + np.swapaxes(A, -1, -2)))
    if np.any(lam[..., 0] < -NEGATIVE_EIG_TOL * scale):
        raise PSDViolation(f"negative eigenvalue {float(lam[..., 0].min())!r}")
    root = np.sqrt(np.maximum(lam, 0.0))
    S = np.einsum("...ik,...k,...jk->...ij", Q, root, Q)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def averaged_drift(spec, t, X, wu, wv):
    """Batched ``b_tilde``: ``X[N, d]``, weights ``[N, n_u]``, ``[N, n_v]``."""
    b = spec.drift_pairs(t, X)
    return np.einsum("...i,...j,...ijk->...k", wu, wv, b)


def averaged_covariance(spec, t, X, wu, wv):
    a = spec.covariance_pairs(t, X)
    return np.einsum("...i,...j,...ijkl->...kl", wu, wv, a)


def b_tilde(spec, t, x, mu, nu):
    """Drift averaged over ``mu x nu``; bilinear in the weights."""
    x = np.asarray(x, dtype=float).reshape(spec.d)
    return averaged_drift(spec, t, x, _weights(mu, spec.n_u), _weights(nu, spec.n_v))


def sigma_tilde(spec, t, x, mu, nu):
    x = np.asarray(x, dtype=float).reshape(spec.d)
    return psd_sqrt(averaged_covariance(spec, t, x, _weights(mu, spec.n_u), _weights(nu, spec.n_v)))


def _random_simplex(gen, n, size):
    # a third of the draws are point masses so vertices are probed as well
    w = gen.dirichlet(np.ones(size), n) if size > 1 else np.ones((n, 1))
    vertex = np.arange(n) % 3 == 0
    idx = gen.integers(0, size, n)
    w[vertex] = 0.0
    w[vertex, idx[vertex]] = 1.0
    return w


def probe_tilde_regularity(spec, radius, samples, seed):
    """Empirical Lipschitz-in-x and growth constants of ``b_tilde``, ``sigma_tilde``.

    Uses the same ``(t, x, y)`` draws as :func:`mixgame.model.probe_assumptions`
    for equal seeds, so the two reports are directly comparable.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    gen = stream(seed, "probe")
    x, y = sample_pairs(spec.d, radius, samples, gen)
    t = gen.random(samples) * spec.T
    mix = stream(seed, "probe_mix")
    wu = _random_simplex(mix, samples, spec.n_u)
    wv = _random_simplex(mix, samples, spec.n_v)

    bx = averaged_drift(spec, t, x, wu, wv)
    by = averaged_drift(spec, t, y, wu, wv)
    sx = psd_sqrt(averaged_covariance(spec, t, x, wu, wv))
    sy = psd_sqrt(averaged_covariance(spec, t, y, wu, wv))
    dist = np.linalg.norm(x - y, axis=1)
    db = np.linalg.norm(bx - by, axis=-1) / dist
    ds = np.linalg.norm(sx - sy, axis=(-2, -1)) / dist

    pts = np.concatenate([x, y])
    tp = np.concatenate([t, t])
    wup = np.concatenate([wu, wu])
    wvp = np.concatenate([wv, wv])
    size = np.linalg.norm(averaged_drift(spec, tp, pts, wup, wvp), axis=-1) + np.linalg.norm(
        psd_sqrt(averaged_covariance(spec, tp, pts, wup, wvp)), axis=(-2, -1)
    )
    r = 1.0 + np.linalg.norm(pts, axis=1)
    if spec.growth_constant is None:
        violation = 0.0
    else:
        violation = float(max(0.0, (size - spec.growth_constant * r).max()))
    return AssumptionProbeReport(
        lipschitz_estimate=lipschitz_table(db + ds, x, y, radius),
        growth_constant=float((size / r).max()),
        max_violation=violation,
        lipschitz_b=lipschitz_table(db, x, y, radius),
        lipschitz_sigma=lipschitz_table(ds, x, y, radius),
        radius=float(radius),
        samples=int(samples),
        seed=int(seed),
    )
