"""Pure-Python matrix-game kernels.

Reference implementation of the batched solvers in ``_kernels.pyx``.  Both
modules expose the same two functions and implement the same pivoting and
tie-breaking rules; the compiled one is selected at import by
:mod:`mixgame.kernels` when available.
"""

import numpy as np

# reduced costs above -COST_TOL count as optimal
COST_TOL = 1e-12
# column entries at or below PIVOT_TOL are never pivots
PIVOT_TOL = 1e-9
# right-hand-side slack of the Harris ratio test
HARRIS_DELTA = 1e-11
# relative tolerance for equal pivot magnitudes
TIE_TOL = 1e-12


def _simplex_one(A, max_iter):
    """Solve one game ``max_mu min_nu mu^T A nu`` with a tableau simplex.

    The entering column is the lowest-index one with a negative reduced
    cost.  The leaving row comes from a two-pass Harris ratio test: among
    rows whose ratio is within the step allowed by a ``HARRIS_DELTA``
    relaxation, take the largest pivot, lowest basis index on ties.  That
    keeps near-tied degenerate rows from forcing tiny pivots.

    Returns ``(value, mu, nu, iterations, degraded)``.
    """
    m, n = A.shape
    lo = A.min()
    hi = A.max()
    mu = np.zeros(m)
    nu = np.zeros(n)
    if hi == lo:
        mu[0] = 1.0
        nu[0] = 1.0
        return float(lo), mu, nu, 0, False

    scale = hi - lo
    width = n + m + 1
    tab = np.zeros((m + 1, width))
    tab[:m, :n] = 1.0 + (A - lo) / scale
    for i in range(m):
        tab[i, n + i] = 1.0
        tab[i, width - 1] = 1.0
    tab[m, :n] = -1.0
    basis = list(range(n, n + m))

    it = 0
    degraded = False
    while True:
        enter = -1
        for j in range(n + m):
            if tab[m, j] < -COST_TOL:
                enter = j
                break
        if enter < 0:
            break
        if it >= max_iter:
            degraded = True
            break
        step = np.inf
        for i in range(m):
            a = tab[i, enter]
            if a > PIVOT_TOL:
                step = min(step, (tab[i, width - 1] + HARRIS_DELTA) / a)
        leave = -1
        best = 0.0
        for i in range(m):
            a = tab[i, enter]
            if a > PIVOT_TOL and tab[i, width - 1] / a <= step:
                if a > best * (1 + TIE_TOL) or (a >= best * (1 - TIE_TOL) and basis[i] < basis[leave]):
                    leave = i
                    best = a
        if leave < 0:
            # unbounded cannot happen for a positive matrix
            degraded = True
            break
        piv = tab[leave, enter]
        tab[leave] /= piv
        for i in range(m + 1):
            if i != leave:
                f = tab[i, enter]
                if f != 0.0:
                    tab[i] -= f * tab[leave]
        # the relaxed step can leave tiny negative right-hand sides
        for i in range(m):
            if tab[i, width - 1] < 0.0:
                tab[i, width - 1] = 0.0
        basis[leave] = enter
        it += 1

    z = tab[m, width - 1]
    if degraded or not z > 0.0:
        return float("nan"), mu, nu, it, True
    for i in range(m):
        if basis[i] < n:
            nu[basis[i]] = tab[i, width - 1]
    for i in range(m):
        mu[i] = tab[m, n + i]
    # rounding dust from degenerate rows is not part of a support
    mu[mu <= COST_TOL] = 0.0
    nu[nu <= HARRIS_DELTA] = 0.0
    mu /= mu.sum()
    nu /= nu.sum()
    value = lo + scale * (1.0 / z - 1.0)
    return float(value), mu, nu, it, False


def solve_exact_batch(A, max_iter=0):
    """Exact solves for a stack ``A[k]`` of matrix games (row player maximizes).

    Returns ``(value, mu, nu, iterations, degraded)`` arrays.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    N, m, n = A.shape
    if max_iter <= 0:
        max_iter = 50 * (m + n) + 50
    value = np.empty(N)
    mu = np.empty((N, m))
    nu = np.empty((N, n))
    iters = np.empty(N, dtype=np.int64)
    degraded = np.zeros(N, dtype=np.int8)
    for k in range(N):
        v, x, y, it, bad = _simplex_one(A[k], max_iter)
        value[k] = v
        mu[k] = x
        nu[k] = y
        iters[k] = it
        degraded[k] = bad
    return value, mu, nu, iters, degraded


def solve_fp_batch(A, iterations):
    """Alternating fictitious play on a stack of games.

    The row player opens with a best response to the uniform column mix;
    each round the column player then best-responds to the row history
    including the current row move, and the row player to the column
    history.  Ties go to the lowest index.  Returns ``(mu, nu, lower,
    upper)`` with ``lower``/``upper`` the best-response payoffs against the
    averages.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    N, m, n = A.shape
    mu = np.empty((N, m))
    nu = np.empty((N, n))
    lower = np.empty(N)
    upper = np.empty(N)
    for k in range(N):
        a = A[k]
        row_pay = np.zeros(m)
        col_pay = np.zeros(n)
        cnt_mu = np.zeros(m)
        cnt_nu = np.zeros(n)
        i = int(np.argmax(a.sum(axis=1)))
        for _ in range(iterations):
            cnt_mu[i] += 1.0
            col_pay += a[i, :]
            j = int(np.argmin(col_pay))
            cnt_nu[j] += 1.0
            row_pay += a[:, j]
            i = int(np.argmax(row_pay))
        mu[k] = cnt_mu / iterations
        nu[k] = cnt_nu / iterations
        upper[k] = row_pay.max() / iterations
        lower[k] = col_pay.min() / iterations
    return mu, nu, lower, upper
