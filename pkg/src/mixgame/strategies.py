"""Stopping rules, selectors and elementary mixed strategies.

A strategy is a list of stopping rules ``tau_1 <= ... <= tau_n = T`` and
one selector per interval.  On ``(tau_{k-1}, tau_k]`` the player samples
actions from the distribution the k-th selector returned at ``tau_{k-1}``.
Rules look only at the current time and state; selectors receive a
read-only view of the path prefix up to ``tau_{k-1}`` and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import SIMPLEX_TOL, MixedAction

TIME_TOL = 1e-10
RULE_KINDS = ("deterministic_time", "hitting_time", "first_exit")


class StrategyError(ValueError):
    pass


# -- stopping rules ----------------------------------------------------------------


@dataclass(frozen=True)
class StoppingRule:
    """``deterministic_time`` fires once ``t >= time``; ``hitting_time`` once
    the state is in the closed set; ``first_exit`` once it leaves the open set.

    The set is a ball (``center``, ``radius``) or a box (``low``, ``high``).
    """

    kind: str
    time: float | None = None
    center: tuple | None = None
    radius: float | None = None
    low: tuple | None = None
    high: tuple | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise StrategyError(f"unknown stopping rule kind {self.kind!r}")
        if self.kind == "deterministic_time":
            if self.time is None:
                raise StrategyError("deterministic_time needs a time")
            object.__setattr__(self, "time", float(self.time))
            return
        ball = self.center is not None and self.radius is not None
        box = self.low is not None and self.high is not None
        if ball == box:
            raise StrategyError(f"{self.kind} needs exactly one of (center, radius) or (low, high)")
        if ball:
            object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
            if not self.radius > 0:
                raise StrategyError("radius must be > 0")
            object.__setattr__(self, "radius", float(self.radius))
        else:
            low = tuple(float(c) for c in np.atleast_1d(self.low))
            high = tuple(float(c) for c in np.atleast_1d(self.high))
            if len(low) != len(high) or any(a > b for a, b in zip(low, high)):
                raise StrategyError("box needs low <= high componentwise")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)

    def _inside_closed(self, X):
        if self.center is not None:
            return np.linalg.norm(X - np.asarray(self.center), axis=-1) <= self.radius
        return np.all((X >= np.asarray(self.low)) & (X <= np.asarray(self.high)), axis=-1)

    def _inside_open(self, X):
        if self.center is not None:
            return np.linalg.norm(X - np.asarray(self.center), axis=-1) < self.radius
        return np.all((X > np.asarray(self.low)) & (X < np.asarray(self.high)), axis=-1)

    def fires(self, t, X):
        """Boolean per path: has the rule fired at or before ``t`` given state ``X[n, d]``."""
        X = np.asarray(X, dtype=float)
        if self.kind == "deterministic_time":
            return np.full(X.shape[0], t >= self.time - TIME_TOL)
        if self.kind == "hitting_time":
            return self._inside_closed(X)
        return ~self._inside_open(X)

    @property
    def is_terminal(self):
        return self.kind == "deterministic_time"

    def describe(self):
        out = {"kind": self.kind}
        for key in ("time", "center", "radius", "low", "high"):
            val = getattr(self, key)
            if val is not None:
                out[key] = list(val) if isinstance(val, tuple) else val
        return out


def deterministic_time(t):
    return StoppingRule("deterministic_time", time=t)


def hitting_ball(center, radius):
    return StoppingRule("hitting_time", center=center, radius=radius)


def hitting_box(low, high):
    return StoppingRule("hitting_time", low=low, high=high)


def exit_ball(center, radius):
    return StoppingRule("first_exit", center=center, radius=radius)


def exit_box(low, high):
    return StoppingRule("first_exit", low=low, high=high)


# -- selectors -----------------------------------------------------------------------


def _as_weights(w):
    if isinstance(w, MixedAction):
        return w.weights
    return MixedAction(w).weights


class Selector:
    """Maps a path prefix ``[n, k+1, d]`` and its times ``[k+1]`` to weights ``[n, m]``.

    ``lag`` is how many past steps the selector reads besides the latest
    state; engines may pass only the last ``lag + 1`` states.
    """

    size: int

    def __call__(self, prefix, times):
        raise NotImplementedError

    def describe(self):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantSelector(Selector):
    weights: np.ndarray
    lag = 0

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_weights(self.weights))

    @property
    def size(self):
        return self.weights.size

    def __call__(self, prefix, times):
        return np.broadcast_to(self.weights, (prefix.shape[0], self.size))

    def describe(self):
        return {"selector": "constant", "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class ThresholdSelector(Selector):
    """``above`` when the latest value of ``coord`` is >= ``threshold``, else ``below``."""

    coord: int
    threshold: float
    above: np.ndarray
    below: np.ndarray
    lag = 0

    def __post_init__(self):
        object.__setattr__(self, "above", _as_weights(self.above))
        object.__setattr__(self, "below", _as_weights(self.below))
        if self.above.size != self.below.size:
            raise StrategyError("threshold selector branches have different sizes")

    @property
    def size(self):
        return self.above.size

    def __call__(self, prefix, times):
        hi = prefix[:, -1, self.coord] >= self.threshold
        return np.where(hi[:, None], self.above, self.below)

    def describe(self):
        return {
            "selector": "threshold",
            "coord": self.coord,
            "threshold": self.threshold,
            "above": self.above.tolist(),
            "below": self.below.tolist(),
        }


@dataclass(frozen=True, eq=False)
class SignOfIncrementSelector(Selector):
    """``positive`` when ``coord`` rose over the last ``lag`` grid steps, else ``negative``.

    With fewer than ``lag`` steps of history the increment from the start is used.
    """

    coord: int
    lag: int
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        if int(self.lag) < 1:
            raise StrategyError("lag must be >= 1")
        object.__setattr__(self, "lag", int(self.lag))
        object.__setattr__(self, "positive", _as_weights(self.positive))
        object.__setattr__(self, "negative", _as_weights(self.negative))
        if self.positive.size != self.negative.size:
            raise StrategyError("sign selector branches have different sizes")

    @property
    def size(self):
        return self.positive.size

    def __call__(self, prefix, times):
        back = max(prefix.shape[1] - 1 - self.lag, 0)
        rise = prefix[:, -1, self.coord] - prefix[:, back, self.coord] > 0
        return np.where(rise[:, None], self.positive, self.negative)

    def describe(self):
        return {
            "selector": "sign_of_increment",
            "coord": self.coord,
            "lag": self.lag,
            "positive": self.positive.tolist(),
            "negative": self.negative.tolist(),
        }


# -- strategies ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ElementaryMixedStrategy:
    rules: tuple
    selectors: tuple
    name: str = ""

    def __post_init__(self):
        rules = tuple(self.rules)
        selectors = tuple(self.selectors)
        if len(rules) < 1:
            raise StrategyError("a strategy needs at least one interval")
        if len(rules) != len(selectors):
            raise StrategyError("need one selector per stopping rule")
        if not rules[-1].is_terminal:
            raise StrategyError("the last stopping rule must be the deterministic horizon time")
        sizes = {sel.size for sel in selectors}
        if len(sizes) != 1:
            raise StrategyError("selectors disagree on the action-grid size")
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "selectors", selectors)

    @property
    def size(self):
        return self.selectors[0].size

    @property
    def needs_history(self):
        return any(getattr(s, "lag", 0) > 0 for s in self.selectors)

    def check(self, size, T):
        if self.size != size:
            raise StrategyError(f"strategy {self.name!r} has {self.size} weights, grid has {size} points")
        if abs(self.rules[-1].time - T) > TIME_TOL:
            raise StrategyError(f"strategy {self.name!r} must end at T={T}, ends at {self.rules[-1].time}")

    def describe(self):
        return {
            "name": self.name,
            "rules": [r.describe() for r in self.rules],
            "selectors": [s.describe() for s in self.selectors],
        }


def constant_strategy(weights, T, name=""):
    """One interval on ``[s, T]`` with a fixed sampling distribution."""
    sel = ConstantSelector(weights)
    return ElementaryMixedStrategy((deterministic_time(T),), (sel,), name or f"constant{sel.weights.tolist()}")


def piecewise_strategy(breakpoints, weights, T, name=""):
    """Constant distributions switched at deterministic ``breakpoints``."""
    if len(weights) != len(breakpoints) + 1:
        raise StrategyError("need one weight vector per interval")
    rules = tuple(deterministic_time(b) for b in breakpoints) + (deterministic_time(T),)
    return ElementaryMixedStrategy(rules, tuple(ConstantSelector(w) for w in weights), name)


def _validate_weights(w, n, size, step, name):
    w = np.asarray(w, dtype=float)
    if w.shape != (n, size):
        raise StrategyError(f"selector of {name!r} returned shape {w.shape} at step {step}, expected {(n, size)}")
    bad = (w.min(axis=1) < 0) | (np.abs(w.sum(axis=1) - 1.0) > SIMPLEX_TOL) | ~np.all(np.isfinite(w), axis=1)
    if bad.any():
        p = int(np.flatnonzero(bad)[0])
        raise StrategyError(f"selector of {name!r} returned an invalid distribution at step {step} (path {p}): {w[p].tolist()}")
    return w


@dataclass(eq=False)
class StrategyTracker:
    """Per-path interval index and active weights of one strategy along a simulation.

    ``update`` must be called at every grid time in order.  ``history``
    holds the states up to and including the current step; it may be
    omitted when no selector looks back, in which case selectors see only
    the current state.
    """

    strategy: ElementaryMixedStrategy
    n: int
    interval: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    cumulative: np.ndarray = field(init=False)
    interval_weights: np.ndarray = field(init=False)
    switch_times: np.ndarray = field(init=False)
    started: bool = field(default=False, init=False)

    def __post_init__(self):
        K = len(self.strategy.rules)
        m = self.strategy.size
        self.interval = np.zeros(self.n, dtype=np.int16)
        self.weights = np.empty((self.n, m))
        self.cumulative = np.empty((self.n, m), order="F")
        self.interval_weights = np.full((self.n, K, m), np.nan)
        self.switch_times = np.full((self.n, K), np.nan)

    def _enter(self, rows, k, step, times, X, history):
        if history is None:
            prefix = X[rows][:, None, :]
            tview = times[step : step + 1]
        else:
            prefix = history[rows, : step + 1]
            tview = times[: step + 1]
        prefix.setflags(write=False)
        w = _validate_weights(self.strategy.selectors[k](prefix, tview), rows.size, self.strategy.size, step, self.strategy.name)
        self.weights[rows] = w
        self.cumulative[rows] = np.cumsum(w, axis=1)
        self.interval_weights[rows, k] = w
        self.interval[rows] = k

    def update(self, step, times, X, history=None, active=None):
        """Advance paths whose current rule fires at ``times[step]``.

        ``active`` masks paths that are still running.
        """
        t = times[step]
        last = len(self.strategy.rules) - 1
        if not self.started:
            rows = np.arange(self.n)
            self.switch_times[:, 0] = t
            self._enter(rows, 0, step, times, X, history)
            self.started = True
        while True:
            moving = np.zeros(self.n, dtype=bool)
            for k in range(last):
                on_k = self.interval == k
                if active is not None:
                    on_k &= active
                if on_k.any():
                    rows = np.flatnonzero(on_k)
                    fired = self.strategy.rules[k].fires(t, X[rows])
                    moving[rows[fired]] = True
            if not moving.any():
                return
            rows = np.flatnonzero(moving)
            for k in np.unique(self.interval[rows]):
                sub = rows[self.interval[rows] == k]
                self.switch_times[sub, k + 1] = t
                self._enter(sub, int(k) + 1, step, times, X, history)


def replay_weights(strategy, times, paths):
    """Active weights of ``strategy`` at every recorded time of ``paths[n, R, d]``.

    Rules and selectors are evaluated on the recorded grid.
    """
    n, R, _ = paths.shape
    tracker = StrategyTracker(strategy, n)
    out = np.empty((n, R, strategy.size))
    history = paths if strategy.needs_history else None
    for r in range(R):
        tracker.update(r, times, paths[:, r], history)
        out[:, r] = tracker.weights
    return out
