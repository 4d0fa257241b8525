"""Coefficient catalog, expression compiler and TOML game-file loader.

A game file looks like::

    name = "matching-pennies"
    d = 1
    d_prime = 1
    T = 1.0
    growth_constant = 2.0
    U = [-1.0, 1.0]
    V = [-1.0, 1.0]

    [coefficients]
    catalog = "matching_pennies"   # or: drift = ["u1*v1"], diffusion = [["1.0"]]
    s = 1.0

    [payoff]
    expr = "cos(x1)"               # or: catalog = "cos"

Expressions see ``t``, ``x1..xd``, ``u1..uk``, ``v1..vl`` and a small set of
numpy functions.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .model import GameSpec, SpecError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_FUNCTIONS = {
    name: getattr(np, name)
    for name in (
        "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
        "arctan", "minimum", "maximum", "where", "sign", "pi", "e",
    )
}


def compile_expression(text, d, k=1, l=1):
    """Compile ``text`` into ``f(t, x, u, v)`` evaluated with broadcasting."""
    try:
        code = compile(str(text), "<expr>", "eval")
    except SyntaxError as exc:
        raise SpecError(f"cannot parse expression {text!r}: {exc.msg}") from None
    variables = {"t"} | {f"x{i + 1}" for i in range(d)}
    variables |= {f"u{i + 1}" for i in range(k)} | {f"v{i + 1}" for i in range(l)}
    unknown = set(code.co_names) - variables - set(_FUNCTIONS)
    if unknown:
        raise SpecError(f"unknown names in expression {text!r}: {sorted(unknown)}")

    def f(t, x, u, v):
        env = dict(_FUNCTIONS)
        env["t"] = t
        for i in range(d):
            env[f"x{i + 1}"] = x[..., i]
        for i in range(k):
            env[f"u{i + 1}"] = u[..., i]
        for i in range(l):
            env[f"v{i + 1}"] = v[..., i]
        return eval(code, {"__builtins__": {}}, env)

    f.expression = str(text)
    return f


def _batch(t, x, u, v):
    return np.broadcast_shapes(np.shape(t), x.shape[:-1], u.shape[:-1], v.shape[:-1])


def expression_drift(exprs, d, k, l):
    if len(exprs) != d:
        raise SpecError(f"drift needs {d} components, got {len(exprs)}")
    parts = [compile_expression(e, d, k, l) for e in exprs]

    def b(t, x, u, v):
        batch = _batch(t, x, u, v)
        return np.stack([np.broadcast_to(np.asarray(p(t, x, u, v), float), batch) for p in parts], axis=-1)

    return b


def expression_diffusion(rows, d, d_prime, k, l):
    if len(rows) != d or any(len(r) != d_prime for r in rows):
        raise SpecError(f"diffusion must be a {d}x{d_prime} table of expressions")
    parts = [[compile_expression(e, d, k, l) for e in r] for r in rows]

    def sigma(t, x, u, v):
        batch = _batch(t, x, u, v)
        return np.stack(
            [
                np.stack([np.broadcast_to(np.asarray(p(t, x, u, v), float), batch) for p in r], axis=-1)
                for r in parts
            ],
            axis=-2,
        )

    return sigma


def expression_payoff(text, d):
    f = compile_expression(text, d, 0, 0)

    def g(x):
        return np.broadcast_to(np.asarray(f(0.0, x, x[..., :0], x[..., :0]), float), x.shape[:-1])

    return g


# -- catalog -------------------------------------------------------------------


def _const_sigma(s, d, d_prime):
    mat = s * np.eye(d, d_prime)

    def sigma(t, x, u, v):
        return np.broadcast_to(mat, _batch(t, x, u, v) + mat.shape)

    return sigma


def _zero_drift(d):
    def b(t, x, u, v):
        return np.zeros(_batch(t, x, u, v) + (d,))

    return b


def _catalog_heat(d, d_prime, s=1.0):
    return _zero_drift(d), _const_sigma(s, d, d_prime)


def _catalog_matching_pennies(d, d_prime, s=1.0, a=1.0):
    # drift a*u*v on the first coordinate; pure sup-inf and inf-sup differ
    def b(t, x, u, v):
        out = np.zeros(_batch(t, x, u, v) + (d,))
        out[..., 0] = a * u[..., 0] * v[..., 0]
        return out

    return b, _const_sigma(s, d, d_prime)


def _catalog_drift_u(d, d_prime, s=1.0):
    def b(t, x, u, v):
        out = np.zeros(_batch(t, x, u, v) + (d,))
        out[..., 0] = u[..., 0]
        return out

    return b, _const_sigma(s, d, d_prime)


def _catalog_separable(d, d_prime, s=1.0):
    def b(t, x, u, v):
        out = np.zeros(_batch(t, x, u, v) + (d,))
        out[..., 0] = u[..., 0] + v[..., 0]
        return out

    return b, _const_sigma(s, d, d_prime)


def _catalog_switching_volatility(d, d_prime):
    # player one picks the volatility level u1
    def sigma(t, x, u, v):
        batch = _batch(t, x, u, v)
        return np.broadcast_to(u[..., 0], batch)[..., None, None] * np.eye(d, d_prime)

    return _zero_drift(d), sigma


def _catalog_sine_volatility(d, d_prime):
    def sigma(t, x, u, v):
        batch = _batch(t, x, u, v)
        level = np.broadcast_to(1.0 + np.sin(x[..., 0]), batch)
        return level[..., None, None] * np.eye(d, d_prime)

    return _zero_drift(d), sigma


def _catalog_linear_drift(d, d_prime, k=1.0, s=0.0):
    def b(t, x, u, v):
        return np.broadcast_to(k * x, _batch(t, x, u, v) + (d,))

    return b, _const_sigma(s, d, d_prime)


COEFFICIENTS = {
    "heat": _catalog_heat,
    "matching_pennies": _catalog_matching_pennies,
    "drift_u": _catalog_drift_u,
    "separable": _catalog_separable,
    "switching_volatility": _catalog_switching_volatility,
    "sine_volatility": _catalog_sine_volatility,
    "linear_drift": _catalog_linear_drift,
}


def _payoff_cos(d):
    return lambda x: np.cos(x[..., 0])


def _payoff_identity(d):
    return lambda x: x[..., 0].copy()


def _payoff_constant(d, c=0.0):
    return lambda x: np.full(x.shape[:-1], float(c))


PAYOFFS = {"cos": _payoff_cos, "identity": _payoff_identity, "constant": _payoff_constant}


def catalog_coefficients(name, d, d_prime, **params):
    try:
        factory = COEFFICIENTS[name]
    except KeyError:
        raise SpecError(f"unknown coefficient catalog entry {name!r}; known: {sorted(COEFFICIENTS)}") from None
    try:
        return factory(d, d_prime, **params)
    except TypeError as exc:
        raise SpecError(f"bad parameters for {name!r}: {exc}") from None


def catalog_payoff(name, d, **params):
    try:
        factory = PAYOFFS[name]
    except KeyError:
        raise SpecError(f"unknown payoff catalog entry {name!r}; known: {sorted(PAYOFFS)}") from None
    return factory(d, **params)


# -- loading -------------------------------------------------------------------


def spec_from_dict(data, source=""):
    try:
        d = int(data["d"])
        d_prime = int(data.get("d_prime", d))
        T = float(data["T"])
        U = data["U"]
        V = data["V"]
    except KeyError as exc:
        raise SpecError(f"game file is missing key {exc.args[0]!r}") from None
    U_grid = np.array(U, dtype=float)
    V_grid = np.array(V, dtype=float)
    k = 1 if U_grid.ndim == 1 else U_grid.shape[1]
    l = 1 if V_grid.ndim == 1 else V_grid.shape[1]

    coeff = dict(data.get("coefficients", {}))
    if "catalog" in coeff:
        name = coeff.pop("catalog")
        b, sigma = catalog_coefficients(name, d, d_prime, **coeff)
    else:
        if "drift" not in coeff or "diffusion" not in coeff:
            raise SpecError("[coefficients] needs either catalog or both drift and diffusion")
        b = expression_drift(coeff["drift"], d, k, l)
        sigma = expression_diffusion(coeff["diffusion"], d, d_prime, k, l)

    pay = dict(data.get("payoff", {}))
    if "expr" in pay:
        g = expression_payoff(pay["expr"], d)
    elif "catalog" in pay:
        name = pay.pop("catalog")
        g = catalog_payoff(name, d, **pay)
    else:
        raise SpecError("[payoff] needs expr or catalog")

    growth = data.get("growth_constant")
    return GameSpec(
        d=d,
        d_prime=d_prime,
        T=T,
        b=b,
        sigma=sigma,
        g=g,
        U_grid=U_grid,
        V_grid=V_grid,
        growth_constant=None if growth is None else float(growth),
        smooth_sigma_attested=bool(data.get("smooth_sigma_attested", False)),
        name=str(data.get("name", "game")),
        source=source,
    )


def loads_spec(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"cannot parse game file: {exc}") from None
    return spec_from_dict(data, source=text)


def load_spec(path):
    path = Path(path)
    return loads_spec(path.read_text())


def shipped_spec_path(name):
    """Path of a game file shipped in ``mixgame/data``."""
    path = Path(__file__).parent / "data" / f"{name}.toml"
    if not path.exists():
        raise SpecError(f"no shipped game file named {name!r}")
    return path


def shipped_spec(name):
    return load_spec(shipped_spec_path(name))


# -- strategy files ---------------------------------------------------------------
#
#   [[player1]]
#   name = "switch"
#   breakpoints = [0.5]                       # or: rules = [{kind = "hitting_time", center = [0.0], radius = 0.5}]
#   selectors = [{kind = "constant", weights = [1.0, 0.0]},
#                {kind = "threshold", coord = 0, threshold = 0.0, above = [1.0, 0.0], below = [0.0, 1.0]}]
#
#   [[player2]]
#   weights = [0.5, 0.5]                      # shorthand: one interval, constant distribution


def _rule_from_dict(data):
    from .strategies import StoppingRule

    data = dict(data)
    kind = data.pop("kind", None)
    try:
        return StoppingRule(kind, **data)
    except TypeError as exc:
        raise SpecError(f"bad stopping rule {data!r}: {exc}") from None


def _selector_from_dict(data):
    from .strategies import ConstantSelector, SignOfIncrementSelector, ThresholdSelector

    data = dict(data)
    kind = data.pop("kind", "constant")
    table = {"constant": ConstantSelector, "threshold": ThresholdSelector, "sign_of_increment": SignOfIncrementSelector}
    if kind not in table:
        raise SpecError(f"unknown selector kind {kind!r}; known: {sorted(table)}")
    try:
        return table[kind](**data)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad {kind} selector: {exc}") from None


def strategy_from_dict(data, T, default_name=""):
    from .strategies import ElementaryMixedStrategy, StrategyError, deterministic_time

    name = str(data.get("name", default_name))
    try:
        if "weights" in data:
            selectors = (_selector_from_dict({"kind": "constant", "weights": data["weights"]}),)
            rules = ()
        else:
            selectors = tuple(_selector_from_dict(s) for s in data.get("selectors", ()))
            if "rules" in data:
                rules = tuple(_rule_from_dict(r) for r in data["rules"])
            else:
                rules = tuple(deterministic_time(b) for b in data.get("breakpoints", ()))
        return ElementaryMixedStrategy(rules + (deterministic_time(T),), selectors, name)
    except StrategyError as exc:
        raise SpecError(f"strategy {name!r}: {exc}") from None


def families_from_dict(data, spec):
    """``(family_U, family_V)`` from ``[[player1]]`` and ``[[player2]]`` tables."""
    from .game import StrategyFamily

    out = []
    for key, size in (("player1", spec.n_u), ("player2", spec.n_v)):
        entries = data.get(key)
        if not entries:
            raise SpecError(f"strategy file needs at least one [[{key}]] table")
        members = tuple(strategy_from_dict(e, spec.T, f"{key}[{i}]") for i, e in enumerate(entries))
        for m in members:
            if m.size != size:
                raise SpecError(f"strategy {m.name!r} has {m.size} weights, the action grid has {size} points")
        out.append(StrategyFamily(members, key))
    return tuple(out)


def load_families(path, spec):
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"cannot parse strategy file {path}: {exc}") from None
    return families_from_dict(data, spec)
