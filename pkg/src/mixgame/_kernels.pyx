# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled matrix-game kernels.

Mirrors ``_kernels_py`` line for line: same tableau layout, same entering
rule, same Harris ratio test, same lowest-index tie-breaks.  Loops run without the GIL so that
callers may split a batch across threads.
"""

import numpy as np

from libc.math cimport INFINITY, NAN
from libc.stdlib cimport malloc, free

cdef double COST_TOL = 1e-12
cdef double PIVOT_TOL = 1e-9
cdef double HARRIS_DELTA = 1e-11
cdef double TIE_TOL = 1e-12


cdef int _simplex_one(const double[:, :] A, double* tab, int* basis,
                      double[:] mu, double[:] nu, double* value,
                      int max_iter) noexcept nogil:
    """Returns the pivot count, or -1 - count when the solve degraded."""
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t width = n + m + 1
    cdef Py_ssize_t i, j, enter, leave, r
    cdef double lo = A[0, 0], hi = A[0, 0], scale, a, step, best, piv, f, z, s
    cdef int it = 0
    cdef bint degraded = False

    for i in range(m):
        for j in range(n):
            if A[i, j] < lo:
                lo = A[i, j]
            if A[i, j] > hi:
                hi = A[i, j]
    for i in range(m):
        mu[i] = 0.0
    for j in range(n):
        nu[j] = 0.0
    if hi == lo:
        mu[0] = 1.0
        nu[0] = 1.0
        value[0] = lo
        return 0

    scale = hi - lo
    for i in range((m + 1) * width):
        tab[i] = 0.0
    for i in range(m):
        for j in range(n):
            tab[i * width + j] = 1.0 + (A[i, j] - lo) / scale
        tab[i * width + n + i] = 1.0
        tab[i * width + width - 1] = 1.0
        basis[i] = <int>(n + i)
    for j in range(n):
        tab[m * width + j] = -1.0

    while True:
        enter = -1
        for j in range(n + m):
            if tab[m * width + j] < -COST_TOL:
                enter = j
                break
        if enter < 0:
            break
        if it >= max_iter:
            degraded = True
            break
        step = INFINITY
        for i in range(m):
            a = tab[i * width + enter]
            if a > PIVOT_TOL and (tab[i * width + width - 1] + HARRIS_DELTA) / a < step:
                step = (tab[i * width + width - 1] + HARRIS_DELTA) / a
        leave = -1
        best = 0.0
        for i in range(m):
            a = tab[i * width + enter]
            if a > PIVOT_TOL and tab[i * width + width - 1] / a <= step:
                if a > best * (1 + TIE_TOL) or (a >= best * (1 - TIE_TOL) and basis[i] < basis[leave]):
                    leave = i
                    best = a
        if leave < 0:
            degraded = True
            break
        piv = tab[leave * width + enter]
        for j in range(width):
            tab[leave * width + j] = tab[leave * width + j] / piv
        for r in range(m + 1):
            if r != leave:
                f = tab[r * width + enter]
                if f != 0.0:
                    for j in range(width):
                        tab[r * width + j] = tab[r * width + j] - f * tab[leave * width + j]
        for i in range(m):
            if tab[i * width + width - 1] < 0.0:
                tab[i * width + width - 1] = 0.0
        basis[leave] = <int>enter
        it += 1

    z = tab[m * width + width - 1]
    if degraded or not z > 0.0:
        value[0] = NAN
        return -1 - it
    for i in range(m):
        if basis[i] < n:
            nu[basis[i]] = tab[i * width + width - 1]
    for i in range(m):
        mu[i] = tab[m * width + n + i]
    s = 0.0
    for i in range(m):
        if mu[i] <= COST_TOL:
            mu[i] = 0.0
        s += mu[i]
    for i in range(m):
        mu[i] = mu[i] / s
    s = 0.0
    for j in range(n):
        if nu[j] <= HARRIS_DELTA:
            nu[j] = 0.0
        s += nu[j]
    for j in range(n):
        nu[j] = nu[j] / s
    value[0] = lo + scale * (1.0 / z - 1.0)
    return it


def solve_exact_batch(A, int max_iter=0):
    """Exact solves for a stack ``A[k]`` of matrix games (row player maximizes)."""
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t N = Av.shape[0], m = Av.shape[1], n = Av.shape[2], k
    if max_iter <= 0:
        max_iter = <int>(50 * (m + n) + 50)
    value_arr = np.empty(N)
    mu_arr = np.empty((N, m))
    nu_arr = np.empty((N, n))
    iters_arr = np.empty(N, dtype=np.int64)
    degraded_arr = np.zeros(N, dtype=np.int8)
    cdef double[::1] value = value_arr
    cdef double[:, ::1] mu = mu_arr
    cdef double[:, ::1] nu = nu_arr
    cdef long long[::1] iters = iters_arr
    cdef signed char[::1] degraded = degraded_arr
    cdef double* tab = <double*>malloc((m + 1) * (n + m + 1) * sizeof(double))
    cdef int* basis = <int*>malloc(m * sizeof(int))
    cdef int res
    if tab == NULL or basis == NULL:
        free(tab)
        free(basis)
        raise MemoryError()
    try:
        with nogil:
            for k in range(N):
                res = _simplex_one(Av[k], tab, basis, mu[k], nu[k], &value[k], max_iter)
                if res < 0:
                    degraded[k] = 1
                    iters[k] = -1 - res
                else:
                    iters[k] = res
    finally:
        free(tab)
        free(basis)
    return value_arr, mu_arr, nu_arr, iters_arr, degraded_arr


def solve_fp_batch(A, int iterations):
    """Alternating fictitious play on a stack of games; see ``_kernels_py``."""
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t N = Av.shape[0], m = Av.shape[1], n = Av.shape[2]
    cdef Py_ssize_t k, i, j, bi, bj, t
    mu_arr = np.empty((N, m))
    nu_arr = np.empty((N, n))
    lower_arr = np.empty(N)
    upper_arr = np.empty(N)
    cdef double[:, ::1] mu = mu_arr
    cdef double[:, ::1] nu = nu_arr
    cdef double[::1] lower = lower_arr
    cdef double[::1] upper = upper_arr
    cdef double* row_pay = <double*>malloc(m * sizeof(double))
    cdef double* col_pay = <double*>malloc(n * sizeof(double))
    cdef double s, best
    if row_pay == NULL or col_pay == NULL:
        free(row_pay)
        free(col_pay)
        raise MemoryError()
    try:
        with nogil:
            for k in range(N):
                for i in range(m):
                    row_pay[i] = 0.0
                    mu[k, i] = 0.0
                for j in range(n):
                    col_pay[j] = 0.0
                    nu[k, j] = 0.0
                # opening move: row best response to the uniform column mix
                bi = 0
                for i in range(m):
                    s = 0.0
                    for j in range(n):
                        s = s + Av[k, i, j]
                    if i == 0 or s > best:
                        best = s
                        bi = i
                for t in range(iterations):
                    mu[k, bi] += 1.0
                    for j in range(n):
                        col_pay[j] = col_pay[j] + Av[k, bi, j]
                    bj = 0
                    for j in range(1, n):
                        if col_pay[j] < col_pay[bj]:
                            bj = j
                    nu[k, bj] += 1.0
                    for i in range(m):
                        row_pay[i] = row_pay[i] + Av[k, i, bj]
                    bi = 0
                    for i in range(1, m):
                        if row_pay[i] > row_pay[bi]:
                            bi = i
                for i in range(m):
                    mu[k, i] = mu[k, i] / iterations
                for j in range(n):
                    nu[k, j] = nu[k, j] / iterations
                best = row_pay[0]
                for i in range(1, m):
                    if row_pay[i] > best:
                        best = row_pay[i]
                upper[k] = best / iterations
                best = col_pay[0]
                for j in range(1, n):
                    if col_pay[j] < best:
                        best = col_pay[j]
                lower[k] = best / iterations
    finally:
        free(row_pay)
        free(col_pay)
    return mu_arr, nu_arr, lower_arr, upper_arr
