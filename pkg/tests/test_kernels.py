import os
import subprocess
import sys

import numpy as np
import pytest

from mixgame import kernels

compiled = kernels.compiled_backend()
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def random_stack(seed, N=300):
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(N):
        m, n = gen.integers(1, 7, 2)
        A = np.zeros((6, 6))
        A[:m, :n] = gen.standard_normal((m, n))
        out.append((m, n, A[:m, :n].copy()))
    return out


@needs_compiled
def test_backends_agree_on_exact_solves():
    for m, n, A in random_stack(1):
        v1, mu1, nu1, _, d1 = compiled.solve_exact_batch(A[None])
        v2, mu2, nu2, _, d2 = kernels.python_backend().solve_exact_batch(A[None])
        assert v1[0] == pytest.approx(v2[0], abs=1e-12)
        np.testing.assert_allclose(mu1, mu2, atol=1e-12)
        np.testing.assert_allclose(nu1, nu2, atol=1e-12)
        assert d1[0] == d2[0]


@needs_compiled
def test_backends_agree_on_fictitious_play():
    A = np.random.default_rng(2).standard_normal((50, 4, 3))
    a = compiled.solve_fp_batch(A, 300)
    b = kernels.python_backend().solve_fp_batch(A, 300)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=1e-12)


def test_results_do_not_depend_on_workers():
    A = np.random.default_rng(4).standard_normal((101, 3, 4))
    one = kernels.solve_exact_batch(A, workers=1)
    three = kernels.solve_exact_batch(A, workers=3)
    for x, y in zip(one, three):
        np.testing.assert_array_equal(x, y)
    one = kernels.solve_fp_batch(A, 40, workers=1)
    three = kernels.solve_fp_batch(A, 40, workers=3)
    for x, y in zip(one, three):
        np.testing.assert_array_equal(x, y)


def test_environment_variable_forces_python_backend():
    env = dict(os.environ, MIXGAME_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mixgame import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
