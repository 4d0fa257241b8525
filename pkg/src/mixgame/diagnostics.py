"""Statistical checks on path ensembles.

``martingale_defect`` estimates ``E[(M^f_{t2} - M^f_{t1}) phi]`` where

    M^f_t = f(y_t) - int_s^t sum_ij mu_i nu_j L(r, y_r, u_i, v_j, f_x, f_xx) dr

is built from the recorded paths with the active sampling distributions,
and ``phi`` runs over conditioning features measurable at ``t1``.  Under
the right law each estimate is zero up to Monte Carlo error.

``compare_laws`` tests whether two ensembles have the same terminal law.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hamiltonian import payoff_entries
from .rng import stream
from .strategies import StrategyTracker

Z_LEVEL = 3.0
N_PERMUTATIONS = 199
KS_ALPHA = 0.01


# -- test functions ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunction:
    """``f`` with its gradient and Hessian, all vectorized over ``[..., d]``."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    f: Callable
    grad: Callable
    hess: Callable


def coordinate(k=0):
    def grad(x):
        out = np.zeros_like(x)
        out[..., k] = 1.0
        return out

    return TestFunction(f"x{k + 1}", lambda x: x[..., k].copy(), grad, lambda x: np.zeros(x.shape + x.shape[-1:]))


def square(k=0):
    def grad(x):
        out = np.zeros_like(x)
        out[..., k] = 2 * x[..., k]
        return out

    def hess(x):
        out = np.zeros(x.shape + x.shape[-1:])
        out[..., k, k] = 2.0
        return out

    return TestFunction(f"x{k + 1}^2", lambda x: x[..., k] ** 2, grad, hess)


def cosine(k=0):
    def grad(x):
        out = np.zeros_like(x)
        out[..., k] = -np.sin(x[..., k])
        return out

    def hess(x):
        out = np.zeros(x.shape + x.shape[-1:])
        out[..., k, k] = -np.cos(x[..., k])
        return out

    return TestFunction(f"cos(x{k + 1})", lambda x: np.cos(x[..., k]), grad, hess)


def constant(c=1.0):
    return TestFunction(
        f"const({c:g})",
        lambda x: np.full(x.shape[:-1], float(c)),
        np.zeros_like,
        lambda x: np.zeros(x.shape + x.shape[-1:]),
    )


def default_test_functions(d=1):
    return [coordinate(0), square(0), cosine(0)]


# -- martingale defect ------------------------------------------------------------


@dataclass
class DefectRow:
    function: str
    feature: str
    defect: float
    se: float
    passed: bool

    @property
    def z(self):
        return abs(self.defect) / self.se if self.se > 0 else (0.0 if self.defect == 0 else float("inf"))


@dataclass
class MartingaleDefectReport:
    rows: list
    t1: float
    t2: float
    features: list
    escape_fraction: float
    dropped_features: list = field(default_factory=list)
    weights_source: str = "recorded"

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def as_dict(self):
        return {
            "t1": self.t1,
            "t2": self.t2,
            "features": self.features,
            "dropped_features": self.dropped_features,
            "escape_fraction": self.escape_fraction,
            "weights_source": self.weights_source,
            "passed": self.passed,
            "rows": [
                {"function": r.function, "feature": r.feature, "defect": r.defect, "se": r.se, "passed": r.passed}
                for r in self.rows
            ],
        }


def _time_index(times, t):
    r = int(np.argmin(np.abs(times - t)))
    if abs(times[r] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not on the recorded grid; record more often or pick a recorded time")
    return r


def _feature_matrix(Y1, features):
    cols = []
    names = []

    def add(name, col):
        if name not in names:
            names.append(name)
            cols.append(col)

    for feat in features:
        if feat not in ("constant", "state_poly"):
            raise ValueError(f"unknown feature family {feat!r}")
        add("1", np.ones(Y1.shape[0]))
        if feat == "state_poly":
            for k in range(Y1.shape[1]):
                add(f"y{k + 1}", Y1[:, k])
                add(f"y{k + 1}^2", Y1[:, k] ** 2)
    return np.column_stack(cols), names


def _independent_columns(Phi, names):
    keep = []
    dropped = []
    for c, name in enumerate(names):
        trial = keep + [c]
        if np.linalg.matrix_rank(Phi[:, trial]) < len(trial):
            dropped.append(name)
        else:
            keep.append(c)
    return keep, dropped


def _mean_se(values):
    n = values.size
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _passes(defect, se):
    if se == 0.0:
        return abs(defect) <= 1e-12
    return abs(defect) <= Z_LEVEL * se


def martingale_defect(ensemble, spec, mu, nu, test_functions, t1, t2, features=("constant",),
                      localization_radius=None):
    """Defect estimates per ``(test function, feature)`` on the recorded grid.

    ``mu`` and ``nu`` enter the generator average.  When they are the
    strategies the ensemble was simulated with, the recorded active
    distributions are used; any other strategy is replayed on the recorded
    paths.  With ``localization_radius`` each path is stopped at the first
    recorded time it leaves that ball, and the fraction that left is
    reported.
    """
    times = ensemble.times
    if not ensemble.s <= t1 < t2 <= ensemble.T + 1e-12:
        raise ValueError("need s <= t1 < t2 <= T")
    r1 = _time_index(times, t1)
    r2 = _time_index(times, t2)
    Y = ensemble.paths
    n = Y.shape[0]

    def weights_at(strategy, player):
        # yields the active distribution per path at each recorded index
        if strategy is (ensemble.mu if player == "u" else ensemble.nu):
            for r in range(r2 + 1):
                yield ensemble.active_weights(player, r)
            return
        tracker = StrategyTracker(strategy, n)
        history = Y if strategy.needs_history else None
        for r in range(r2 + 1):
            tracker.update(r, times, Y[:, r], history)
            yield tracker.weights

    source = "recorded" if (mu is ensemble.mu and nu is ensemble.nu) else "replayed"

    # localization: freeze each path at the first recorded exit from the ball
    stop_at = np.full(n, r2)
    escape = 0.0
    if localization_radius is not None:
        out = np.linalg.norm(Y[:, : r2 + 1], axis=-1) > localization_radius
        hit = out.any(axis=1)
        stop_at[hit] = out[hit].argmax(axis=1)
        escape = float(hit.mean())

    Phi, names = _feature_matrix(Y[:, r1], features)
    keep, dropped = _independent_columns(Phi, names)
    if dropped:
        warnings.warn(f"dropping rank-deficient features {dropped}", RuntimeWarning, stacklevel=2)
    Phi = Phi[:, keep]
    names = [names[k] for k in keep]

    # generator applied to each f along each path at recorded times up to t2
    gen = np.empty((len(test_functions), n, r2 + 1))
    for r, (wu, wv) in enumerate(zip(weights_at(mu, "u"), weights_at(nu, "v"))):
        y = Y[:, r]
        b = spec.drift_pairs(times[r], y)
        a = spec.covariance_pairs(times[r], y)
        for q, tf in enumerate(test_functions):
            L = payoff_entries(b, a, tf.grad(y)[:, None, None, :], tf.hess(y)[:, None, None, :, :])
            gen[q, :, r] = np.einsum("ni,nj,nij->n", wu, wv, L)

    dt = np.diff(times[: r2 + 1])
    live = np.arange(r2)[None, :] < stop_at[:, None]
    e1 = np.minimum(r1, stop_at)
    e2 = np.minimum(r2, stop_at)
    idx = np.arange(n)
    rows = []
    for q, tf in enumerate(test_functions):
        # trapezoid integral from s to each recorded time, frozen after the stop index
        increments = 0.5 * (gen[q, :, 1:] + gen[q, :, :-1]) * dt * live
        integral = np.concatenate([np.zeros((n, 1)), np.cumsum(increments, axis=1)], axis=1)
        dM = (tf.f(Y[idx, e2]) - integral[idx, e2]) - (tf.f(Y[idx, e1]) - integral[idx, e1])
        for c, name in enumerate(names):
            defect, se = _mean_se(dM * Phi[:, c])
            rows.append(DefectRow(tf.name, name, defect, se, _passes(defect, se)))
    return MartingaleDefectReport(
        rows=rows,
        t1=float(times[r1]),
        t2=float(times[r2]),
        features=names,
        escape_fraction=escape,
        dropped_features=dropped,
        weights_source=source,
    )


# -- law comparison -------------------------------------------------------------------


def central_moment_stats(x, max_moment=4):
    """Mean, variance and central moments 3..k with influence-function SEs."""
    n = x.size
    m = x.mean()
    c = x - m
    out = {}
    mom = {k: float(np.mean(c**k)) for k in range(1, max_moment + 1)}
    out["mean"] = (float(m), float(c.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0)
    for k in range(2, max_moment + 1):
        infl = c**k - mom[k] - k * mom[k - 1] * c
        se = float(infl.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        label = "variance" if k == 2 else f"central_moment_{k}"
        out[label] = (mom[k], se)
    return out


def ks_distance(a, b):
    """Two-sample Kolmogorov–Smirnov distance ``sup |F_a - F_b|``."""
    pooled = np.concatenate([a, b])
    order = np.argsort(pooled, kind="stable")
    return _ks_sorted((order < a.size).astype(np.int8), pooled[order], a.size, b.size)


def _tie_ends(sorted_values):
    # last position of each run of equal values
    return np.flatnonzero(np.append(sorted_values[1:] != sorted_values[:-1], True))


def _ks_sorted(labels, sorted_values, na, nb, ends=None):
    if ends is None:
        ends = _tie_ends(sorted_values)
    ca = np.cumsum(labels)[ends]
    cb = (ends + 1) - ca
    return float(np.max(np.abs(ca / na - cb / nb)))


def ks_permutation_test(a, b, n_permutations=N_PERMUTATIONS, seed=0):
    """KS distance and its permutation p-value ``(1 + #{D* >= D}) / (1 + P)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pooled = np.concatenate([a, b])
    order = np.argsort(pooled, kind="stable")
    values = pooled[order]
    ends = _tie_ends(values)
    labels = (order < a.size).astype(np.int8)
    observed = _ks_sorted(labels, values, a.size, b.size, ends)
    gen = stream(seed, "permutation")
    count = 0
    for _ in range(n_permutations):
        perm = gen.permutation(labels)
        if _ks_sorted(perm, values, a.size, b.size, ends) >= observed - 1e-12:
            count += 1
    return observed, (1 + count) / (1 + n_permutations)


@dataclass
class LawComparisonReport:
    moments: list
    cdf: list
    passed: bool

    def as_dict(self):
        return {"moments": self.moments, "cdf": self.cdf, "passed": self.passed}


def compare_laws(e1, e2, statistics=("moments", "cdf"), *, max_moment=4, n_permutations=N_PERMUTATIONS,
                 seed=0, alpha=KS_ALPHA):
    """Compare the terminal laws of two ensembles started from the same ``(s, x)``.

    Moment differences pass at ``3`` pooled SE; the CDF check passes when
    the permutation p-value of the KS distance exceeds ``alpha``.
    """
    if abs(e1.s - e2.s) > 1e-12 or not np.allclose(e1.x, e2.x, rtol=0, atol=1e-12):
        raise ValueError("ensembles start from different (s, x)")
    if abs(e1.T - e2.T) > 1e-12:
        raise ValueError("ensembles end at different times")
    X1 = e1.terminal
    X2 = e2.terminal
    moments = []
    cdf = []
    for k in range(X1.shape[1]):
        if "moments" in statistics:
            s1 = central_moment_stats(X1[:, k], max_moment)
            s2 = central_moment_stats(X2[:, k], max_moment)
            for name in s1:
                v1, se1 = s1[name]
                v2, se2 = s2[name]
                diff = v1 - v2
                se = float(np.hypot(se1, se2))
                moments.append({"coord": k, "statistic": name, "first": v1, "second": v2,
                                "difference": diff, "se": se, "passed": _passes(diff, se)})
        if "cdf" in statistics:
            D, p = ks_permutation_test(X1[:, k], X2[:, k], n_permutations, seed)
            cdf.append({"coord": k, "ks_distance": D, "p_value": p, "passed": bool(p > alpha)})
    passed = all(m["passed"] for m in moments) and all(c["passed"] for c in cdf)
    return LawComparisonReport(moments=moments, cdf=cdf, passed=passed)


def law_gap_trend(spec, s, x, mu, nu, n_paths, dts, seed, workers=1):
    """Mean/variance gaps between the mixed and auxiliary simulators across step sizes.

    Returned rows are ordered as ``dts``; ``flagged`` is set when the
    coarsest step beats the finest by more than 3 SE on either gap.
    """
    from .simulate import simulate_auxiliary, simulate_mixed

    rows = []
    for dt in dts:
        e1 = simulate_mixed(spec, s, x, mu, nu, n_paths, dt, seed, record_every=10**9, workers=workers)
        e2 = simulate_auxiliary(spec, s, x, mu, nu, n_paths, dt, seed + 1, record_every=10**9, workers=workers)
        rep = compare_laws(e1, e2, statistics=("moments",), max_moment=2)
        row = {"dt": dt}
        for m in rep.moments:
            if m["coord"] == 0:
                row[m["statistic"]] = abs(m["difference"])
                row[m["statistic"] + "_se"] = m["se"]
        rows.append(row)
    first, last = rows[0], rows[-1]
    flagged = any(
        first[k] + Z_LEVEL * np.hypot(first[k + "_se"], last[k + "_se"]) < last[k] for k in ("mean", "variance")
    )
    return {"rows": rows, "flagged": bool(flagged)}
