"""Command-line entry point: ``mixgame <subcommand> [options]``.

Numeric tables are written as CSV with ``# key: value`` metadata lines on
top; reports are JSON with sorted keys.  Nothing time-dependent is written,
so reruns with the same options produce identical files.  Output goes to
``--out`` (or ``$MIXGAME_OUT_DIR``) when set, otherwise to stdout.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_families, load_spec, shipped_spec_path
from .model import SpecError, probe_assumptions, uniform

OUT_ENV = "MIXGAME_OUT_DIR"


class InputError(Exception):
    """Bad or missing input file; exit code 2."""


@dataclass
class RunConfig:
    command: str
    spec_path: str | None
    seed: int
    out_dir: str | None
    params: dict = field(default_factory=dict)

    def metadata(self, spec=None):
        meta = {"version": __version__, "command": self.command, "seed": self.seed}
        if spec is not None:
            meta["spec"] = spec.name
            meta["spec_hash"] = spec.spec_hash
        meta.update(self.params)
        return meta


# -- parsing helpers ----------------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid_spec(text):
    """``xmin:xmax:nx`` per dimension, dimensions separated by commas."""
    dims = []
    for part in str(text).split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise argparse.ArgumentTypeError(f"grid dimension must be xmin:xmax:nx, got {part!r}")
        try:
            dims.append((float(bits[0]), float(bits[1]), int(bits[2])))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid dimension {part!r}") from None
        if dims[-1][0] >= dims[-1][1] or dims[-1][2] < 3:
            raise argparse.ArgumentTypeError(f"grid dimension needs xmin < xmax and nx >= 3, got {part!r}")
    return dims


def _sweep(text):
    bits = str(text).split(":")
    if len(bits) != 3:
        raise argparse.ArgumentTypeError("sweep must be pmin:pmax:n")
    try:
        return float(bits[0]), float(bits[1]), int(bits[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--spec", help="game file (TOML) or the name of a shipped game")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=1e-2, help="Euler step of the simulators")
    p.add_argument("--paths", type=_positive_int, default=10_000)
    p.add_argument("--grid", type=_grid_spec, help="xmin:xmax:nx per dimension, comma separated")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}, else stdout)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--hamiltonian", choices=("minus", "plus", "randomized"), default="randomized")
    p.add_argument("--solver", choices=("exact", "fp"), default="fp")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="mixgame", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mixgame {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("hamiltonian", parents=[common], help="H-, H, H+ and optimal mixed actions")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--p", type=_floats, default=None, help="gradient, comma separated")
    p.add_argument("--M", type=_floats, default=None, help="Hessian entries, row-major")
    p.add_argument("--sweep", type=_sweep, help="CSV sweep over the first gradient component: pmin:pmax:n")

    p = sub.add_parser("mixing", parents=[common], help="regularity probes of the averaged coefficients")
    p.add_argument("action", choices=("probe",))
    p.add_argument("--radius", type=float, default=5.0)
    p.add_argument("--samples", type=_positive_int, default=1000)

    p = sub.add_parser("solve-pde", parents=[common], help="solve the Isaacs equation on a grid")
    p.add_argument("--cfl-safety", type=float, default=0.9)
    p.add_argument("--fp-iterations", type=_positive_int, default=200)
    p.add_argument("--gap-threshold", type=float, default=1e-4)
    p.add_argument("--every", type=_positive_int, default=1, help="write every n-th time layer")
    p.add_argument("--stencil", choices=("pairwise", "fixed-point"), default="pairwise",
                   help="first-derivative stencil: per action pair (monotone) or per-node fixed point")

    p = sub.add_parser("simulate", parents=[common], help="simulate a path ensemble")
    p.add_argument("--strategies", help="strategy file; the first member of each player is used")
    p.add_argument("--simulator", choices=("mixed", "auxiliary"), default="mixed")
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--record-every", type=int, default=0, help="record every n-th step (0: endpoints only)")
    p.add_argument("--report", choices=("none", "defect", "laws"), default="none")
    p.add_argument("--t1", type=float)
    p.add_argument("--t2", type=float)

    for name, helptext in (("value", "family-relative lower and upper values"),
                           ("dpp-check", "dynamic programming check against a value grid"),
                           ("saddle-search", "search for an epsilon-saddle pair")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--families", help="strategy file with [[player1]] and [[player2]] tables")
        p.add_argument("--simulator", choices=("mixed", "auxiliary"), default="mixed")
        p.add_argument("--s", type=float, default=0.0)
        p.add_argument("--x", type=_floats, default=None)
        p.add_argument("--budget", type=_positive_int, default=None, help="maximum number of pair simulations")
        if name == "dpp-check":
            p.add_argument("--rho-time", type=float, help="deterministic stopping time (default: midpoint)")
            p.add_argument("--scheme-error", type=float, help="skip the coarse solve and use this estimate")
        if name == "saddle-search":
            p.add_argument("--epsilon", type=float, required=True)
            p.add_argument("--verify-seed", type=int)

    # a private copy of the shared flags so the seed default below stays local
    p = sub.add_parser("verify", parents=[_common()], conflict_handler="resolve", help="run the acceptance suite")
    p.add_argument("--seed", type=int, default=1, help="same default as the pytest acceptance suite")
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    p.add_argument("--only", help="comma-separated criterion keys, e.g. C1,C3")
    return parser


# -- output ---------------------------------------------------------------------------------


def _out_dir(args):
    return args.out or os.environ.get(OUT_ENV) or None


def _emit(args, filename, text):
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / filename).write_text(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json(meta, body):
    return json.dumps(_jsonable({"metadata": meta, **body}), sort_keys=True, indent=2) + "\n"


def _csv(meta, header, rows):
    buf = io.StringIO()
    for key in sorted(meta):
        val = meta[key]
        text = json.dumps(_jsonable(val), sort_keys=True) if isinstance(val, (dict, list, tuple)) else val
        buf.write(f"# {key}: {text}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


# -- input ------------------------------------------------------------------------------


def _load_spec(args):
    if not args.spec:
        raise InputError("--spec is required")
    path = Path(args.spec)
    if not path.exists():
        if "/" not in args.spec and not args.spec.endswith(".toml"):
            try:
                path = shipped_spec_path(args.spec)
            except SpecError:
                raise InputError(f"spec file not found: {args.spec}") from None
        else:
            raise InputError(f"spec file not found: {path}")
    try:
        return load_spec(path)
    except SpecError as exc:
        raise InputError(f"invalid spec file {path}: {exc}") from None


def _strategy_path(value):
    """A strategy file path, or the name of one shipped in ``data/strategies``."""
    path = Path(value)
    if not path.exists() and "/" not in value and not value.endswith(".toml"):
        shipped = Path(__file__).parent / "data" / "strategies" / f"{value}.toml"
        if shipped.exists():
            return shipped
    if not path.exists():
        raise InputError(f"strategy file not found: {path}")
    return path


def _load_families(args, spec):
    from .game import pure_and_uniform_family

    if args.families is None:
        return (pure_and_uniform_family(spec.n_u, spec.T, "player1"),
                pure_and_uniform_family(spec.n_v, spec.T, "player2"))
    path = _strategy_path(args.families)
    try:
        return load_families(path, spec)
    except SpecError as exc:
        raise InputError(str(exc)) from None


def _state(args, spec, name="x"):
    x = getattr(args, name)
    if x is None:
        return np.zeros(spec.d)
    if len(x) != spec.d:
        raise InputError(f"--{name} needs {spec.d} components, got {len(x)}")
    return np.array(x)


def _grid(args, spec, cfl_safety=0.9):
    from .pde import make_grid

    if args.grid is None:
        raise InputError("--grid is required for this subcommand")
    if len(args.grid) != spec.d:
        raise InputError(f"--grid needs {spec.d} dimensions, got {len(args.grid)}")
    lo, hi, nx = zip(*args.grid)
    return make_grid(spec, lo, hi, nx, cfl_safety)


def _grid_text(args):
    return ",".join(f"{a!r}:{b!r}:{n}" for a, b, n in args.grid) if args.grid else None


# -- subcommands --------------------------------------------------------------------------


def cmd_hamiltonian(args, cfg):
    from .hamiltonian import hamiltonian_sweep, hamiltonians

    spec = _load_spec(args)
    x = _state(args, spec)
    p = np.zeros(spec.d) if args.p is None else np.array(args.p)
    M = np.zeros((spec.d, spec.d)) if args.M is None else np.array(args.M)
    if p.size != spec.d or M.size != spec.d**2:
        raise InputError(f"--p needs {spec.d} and --M needs {spec.d ** 2} entries")
    M = M.reshape(spec.d, spec.d)
    cfg.params.update(t=args.t, x=x.tolist(), p=p.tolist(), M=M.tolist())
    meta = cfg.metadata(spec)
    if args.sweep:
        lo, hi, n = args.sweep
        meta["sweep"] = list(args.sweep)
        rows = hamiltonian_sweep(spec, args.t, x, np.linspace(lo, hi, n), M)
        _emit(args, "hamiltonian_sweep.csv", _csv(meta, ["p", "H_minus", "H", "H_plus"], rows))
        return 0
    h = hamiltonians(spec, args.t, x, p, M)
    body = {"H_minus": h.H_minus, "H": h.H, "H_plus": h.H_plus,
            "mu_star": h.mu_star.weights.tolist(), "nu_star": h.nu_star.weights.tolist()}
    _emit(args, "hamiltonian.json", _json(meta, body))
    return 0


def cmd_mixing(args, cfg):
    from .mixing import probe_tilde_regularity

    spec = _load_spec(args)
    cfg.params.update(radius=args.radius, samples=args.samples)
    base = probe_assumptions(spec, args.radius, args.samples, args.seed)
    tilde = probe_tilde_regularity(spec, args.radius, args.samples, args.seed)
    body = {"coefficients": base.as_dict(), "averaged": tilde.as_dict(),
            "smooth_sigma_attested": spec.smooth_sigma_attested}
    _emit(args, "mixing_probe.json", _json(cfg.metadata(spec), body))
    return 0


def cmd_solve_pde(args, cfg):
    from .pde import solve_isaacs_pde

    spec = _load_spec(args)
    grid = _grid(args, spec, args.cfl_safety)
    vg = solve_isaacs_pde(spec, grid, args.hamiltonian, args.solver, fp_iterations=args.fp_iterations,
                          gap_threshold=args.gap_threshold, stencil=args.stencil.replace("-", "_"))
    cfg.params.update(grid=_grid_text(args), hamiltonian=args.hamiltonian, solver=args.solver,
                      stencil=args.stencil)
    meta = cfg.metadata(spec)
    meta.update({f"pde.{k}": v for k, v in vg.metadata.items() if k != "kernel_backend"})
    nodes = grid.nodes.reshape(-1, grid.d)
    rows = []
    for n in range(0, grid.nt + 1, args.every):
        vals = vg.values[n].reshape(-1)
        t = grid.times[n]
        rows.extend([t, *nodes[i], vals[i]] for i in range(nodes.shape[0]))
    if grid.nt % args.every:
        vals = vg.values[-1].reshape(-1)
        rows.extend([grid.T, *nodes[i], vals[i]] for i in range(nodes.shape[0]))
    header = ["t"] + [f"x{k + 1}" for k in range(grid.d)] + ["V"]
    _emit(args, "value_grid.csv", _csv(meta, header, rows))
    return 0


def _first_strategies(args, spec):
    from .strategies import constant_strategy

    if args.strategies is None:
        return constant_strategy(uniform(spec.n_u), spec.T, "uniform"), constant_strategy(uniform(spec.n_v), spec.T, "uniform")
    path = _strategy_path(args.strategies)
    try:
        fu, fv = load_families(path, spec)
    except SpecError as exc:
        raise InputError(str(exc)) from None
    return fu[0], fv[0]


def cmd_simulate(args, cfg):
    from .diagnostics import compare_laws, default_test_functions, martingale_defect
    from .simulate import simulate_auxiliary, simulate_mixed, step_count

    spec = _load_spec(args)
    mu, nu = _first_strategies(args, spec)
    x = _state(args, spec)
    n_steps = step_count(args.s, spec.T, args.dt)
    every = args.record_every if args.record_every > 0 else max(n_steps, 1)
    sim = simulate_mixed if args.simulator == "mixed" else simulate_auxiliary
    ens = sim(spec, args.s, x, mu, nu, args.paths, args.dt, args.seed, record_every=every, workers=args.workers)
    cfg.params.update(simulator=args.simulator, s=args.s, x=x.tolist(), dt=args.dt, paths=args.paths,
                      record_every=every, mu=mu.describe(), nu=nu.describe())
    meta = cfg.metadata(spec)
    header = ["path", "t"] + [f"x{k + 1}" for k in range(spec.d)]
    rows = [[p, t, *ens.paths[p, r]] for p in range(ens.n_paths) for r, t in enumerate(ens.times)]
    paths_csv = _csv(meta, header, rows)

    report = None
    if args.report == "defect":
        t1 = args.t1 if args.t1 is not None else args.s
        t2 = args.t2 if args.t2 is not None else spec.T
        rep = martingale_defect(ens, spec, mu, nu, default_test_functions(spec.d), t1, t2,
                                features=("constant", "state_poly"))
        report = rep.as_dict()
    elif args.report == "laws":
        other = simulate_auxiliary if args.simulator == "mixed" else simulate_mixed
        ens2 = other(spec, args.s, x, mu, nu, args.paths, args.dt, args.seed + 1, record_every=every,
                     workers=args.workers)
        report = compare_laws(ens, ens2, seed=args.seed).as_dict()

    if _out_dir(args) is not None:
        _emit(args, "paths.csv", paths_csv)
        if report is not None:
            _emit(args, f"{args.report}_report.json", _json(meta, report))
    else:
        sys.stdout.write(_json(meta, report) if report is not None else paths_csv)
    if report is not None and not report["passed"]:
        return 1
    return 0


def _pde_for_game(args, spec):
    from .pde import solve_isaacs_pde

    if args.grid is None:
        return None
    return solve_isaacs_pde(spec, _grid(args, spec), "randomized", args.solver)


def cmd_value(args, cfg):
    from .game import sup_inf

    spec = _load_spec(args)
    fam_U, fam_V = _load_families(args, spec)
    x = _state(args, spec)
    vg = _pde_for_game(args, spec)
    rep = sup_inf(spec, args.s, x, fam_U, fam_V, args.budget, n_paths=args.paths, dt_sim=args.dt, seed=args.seed,
                  simulator=args.simulator, workers=args.workers, vg=vg)
    cfg.params.update(s=args.s, x=x.tolist(), dt=args.dt, paths=args.paths, budget=args.budget,
                      grid=_grid_text(args))
    _emit(args, "value_report.json", _json(cfg.metadata(spec), rep.as_dict()))
    return 0


def cmd_dpp_check(args, cfg):
    from .game import dpp_check
    from .pde import solve_isaacs_pde
    from .strategies import deterministic_time

    spec = _load_spec(args)
    fam_U, fam_V = _load_families(args, spec)
    x = _state(args, spec)
    grid = _grid(args, spec)
    vg = solve_isaacs_pde(spec, grid, "randomized", args.solver)
    rho_t = args.rho_time if args.rho_time is not None else args.s + 0.5 * (spec.T - args.s)
    rep = dpp_check(spec, args.s, x, deterministic_time(rho_t), vg, fam_U, fam_V, args.budget, n_paths=args.paths,
                    dt_sim=args.dt, seed=args.seed, simulator=args.simulator, workers=args.workers,
                    scheme_error=args.scheme_error)
    cfg.params.update(s=args.s, x=x.tolist(), dt=args.dt, paths=args.paths, budget=args.budget,
                      grid=_grid_text(args), rho_time=rho_t)
    _emit(args, "dpp_report.json", _json(cfg.metadata(spec), rep.as_dict()))
    return 0 if rep.passed else 1


def cmd_saddle_search(args, cfg):
    from .game import epsilon_saddle

    spec = _load_spec(args)
    fam_U, fam_V = _load_families(args, spec)
    x = _state(args, spec)
    rep = epsilon_saddle(spec, args.s, x, fam_U, fam_V, args.epsilon, args.budget, n_paths=args.paths,
                         dt_sim=args.dt, seed=args.seed, simulator=args.simulator, workers=args.workers,
                         verify_seed=args.verify_seed)
    cfg.params.update(s=args.s, x=x.tolist(), dt=args.dt, paths=args.paths, budget=args.budget,
                      epsilon=args.epsilon)
    _emit(args, "saddle_report.json", _json(cfg.metadata(spec), rep.as_dict()))
    return 0


def cmd_verify(args, cfg):
    from .acceptance import run_acceptance

    only = None if not args.only else [k.strip().upper() for k in args.only.split(",")]
    results = run_acceptance(quick=args.quick, only=only, workers=args.workers, seed=args.seed)
    if _out_dir(args) is not None:
        cfg.params.update(quick=args.quick)
        body = {"criteria": [r.as_dict() for r in results], "passed": all(r.passed for r in results)}
        _emit(args, "verify_report.json", _json(cfg.metadata(), body))
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "hamiltonian": cmd_hamiltonian,
    "mixing": cmd_mixing,
    "solve-pde": cmd_solve_pde,
    "simulate": cmd_simulate,
    "value": cmd_value,
    "dpp-check": cmd_dpp_check,
    "saddle-search": cmd_saddle_search,
    "verify": cmd_verify,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    cfg = RunConfig(args.command, args.spec, args.seed, _out_dir(args))
    try:
        return COMMANDS[args.command](args, cfg)
    except InputError as exc:
        parser.print_usage(sys.stderr)
        print(f"mixgame: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"mixgame: computation failed: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
