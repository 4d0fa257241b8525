"""Compare the compiled and pure-Python matrix-game kernels.

Run from the repository root after an editable install::

    python3 benchmarks/bench_kernels.py --nodes 2000 --size 3
"""

import argparse
import time

import numpy as np

from mixgame.kernels import compiled_backend, python_backend


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000, help="matrices per batch")
    ap.add_argument("--size", type=int, nargs="+", default=[2, 3, 5], help="actions per player")
    ap.add_argument("--fp-iterations", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    fast = compiled_backend()
    slow = python_backend()
    if fast is None:
        print("compiled extension not built; only the Python timings are shown")

    gen = np.random.default_rng(args.seed)
    print(f"{'kernel':<8}{'size':>6}{'nodes':>8}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for m in args.size:
        A = np.ascontiguousarray(gen.normal(size=(args.nodes, m, m)))
        cases = [("exact", lambda b: b.solve_exact_batch(A, 0)),
                 ("fp", lambda b: b.solve_fp_batch(A, args.fp_iterations))]
        for name, call in cases:
            t_py, out_py = best_of(lambda: call(slow), args.repeats)
            if fast is None:
                print(f"{name:<8}{m:>6}{args.nodes:>8}{t_py:>12.4f}{'-':>12}{'-':>10}")
                continue
            t_cy, out_cy = best_of(lambda: call(fast), args.repeats)
            # the two backends must agree before their timings mean anything
            np.testing.assert_allclose(out_cy[0], out_py[0], atol=1e-9)
            print(f"{name:<8}{m:>6}{args.nodes:>8}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
