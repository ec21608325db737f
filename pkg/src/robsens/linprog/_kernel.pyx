# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pivot loop of the bounded revised simplex.

Same contract as ``_kernel_py.run_pivots`` except that the constraint
matrix arrives in CSC form (``indptr``, ``indices``, ``data``).
"""

from libc.math cimport fabs, INFINITY, isfinite

cdef int OPTIMAL = 0
cdef int UNBOUNDED = 1
cdef int BUDGET = 2

cdef signed char AT_LOWER = 0
cdef signed char AT_UPPER = 1
cdef signed char BASIC = 2


def run_pivots(const long[::1] indptr, const long[::1] indices, const double[::1] data,
               const double[::1] c, const double[::1] u,
               double[:, ::1] binv, double[::1] xb, long[::1] basis,
               signed char[::1] status, long[::1] counters, long max_pivots,
               double tol_dual, double tol_piv, double tol_feas, long bland_after,
               double[::1] y, double[::1] alpha):
    cdef Py_ssize_t m = binv.shape[0]
    cdef Py_ssize_t N = c.shape[0]
    cdef Py_ssize_t i, j, k, p, q, r
    cdef double dj, score, best, direction, ai, lim, theta_max, theta, ex
    cdef double start, d_q, piv, f, best_a
    cdef long leaving, done = 0, bi
    cdef int bland
    cdef int code = BUDGET
    with nogil:
        for k in range(m):
            y[k] = 0.0
        for i in range(m):
            f = c[basis[i]]
            if f != 0.0:
                for k in range(m):
                    y[k] += f * binv[i, k]
        while done < max_pivots:
            bland = counters[2] != 0
            q = -1
            best = 0.0
            d_q = 0.0
            for j in range(N):
                if status[j] == BASIC:
                    continue
                if status[j] == AT_LOWER and u[j] <= 0.0:
                    continue
                dj = c[j]
                for p in range(indptr[j], indptr[j + 1]):
                    dj -= y[indices[p]] * data[p]
                if status[j] == AT_LOWER:
                    score = -dj
                else:
                    score = dj
                if score > tol_dual:
                    if bland:
                        q = j
                        d_q = dj
                        break
                    if score > best:
                        best = score
                        q = j
                        d_q = dj
            if q < 0:
                code = OPTIMAL
                break
            direction = 1.0 if status[q] == AT_LOWER else -1.0
            for i in range(m):
                alpha[i] = 0.0
            for p in range(indptr[q], indptr[q + 1]):
                k = indices[p]
                f = data[p]
                for i in range(m):
                    alpha[i] += binv[i, k] * f

            theta_max = INFINITY
            for i in range(m):
                ai = direction * alpha[i]
                if ai > tol_piv:
                    lim = (xb[i] + tol_feas) / ai
                    if lim < theta_max:
                        theta_max = lim
                elif ai < -tol_piv and isfinite(u[basis[i]]):
                    lim = (u[basis[i]] - xb[i] + tol_feas) / (-ai)
                    if lim < theta_max:
                        theta_max = lim
            r = -1
            theta = INFINITY
            if isfinite(theta_max):
                if bland:
                    best = INFINITY
                    for i in range(m):
                        ai = direction * alpha[i]
                        if ai > tol_piv:
                            ex = xb[i] / ai
                        elif ai < -tol_piv and isfinite(u[basis[i]]):
                            ex = (u[basis[i]] - xb[i]) / (-ai)
                        else:
                            continue
                        if ex <= theta_max and ex < best:
                            best = ex
                    bi = -1
                    for i in range(m):
                        ai = direction * alpha[i]
                        if ai > tol_piv:
                            ex = xb[i] / ai
                        elif ai < -tol_piv and isfinite(u[basis[i]]):
                            ex = (u[basis[i]] - xb[i]) / (-ai)
                        else:
                            continue
                        if ex <= best + tol_feas and (bi < 0 or basis[i] < bi):
                            bi = basis[i]
                            r = i
                            theta = ex
                else:
                    best_a = -1.0
                    for i in range(m):
                        ai = direction * alpha[i]
                        if ai > tol_piv:
                            ex = xb[i] / ai
                        elif ai < -tol_piv and isfinite(u[basis[i]]):
                            ex = (u[basis[i]] - xb[i]) / (-ai)
                        else:
                            continue
                        if ex <= theta_max and fabs(ai) > best_a:
                            best_a = fabs(ai)
                            r = i
                            theta = ex
                if theta < 0.0:
                    theta = 0.0

            if u[q] <= theta and isfinite(u[q]):
                theta = u[q]
                for i in range(m):
                    xb[i] -= theta * direction * alpha[i]
                status[q] = AT_UPPER if status[q] == AT_LOWER else AT_LOWER
                done += 1
                counters[0] += 1
                continue
            if r < 0:
                counters[3] = q
                code = UNBOUNDED
                break

            start = 0.0 if status[q] == AT_LOWER else u[q]
            leaving = basis[r]
            ai = direction * alpha[r]
            for i in range(m):
                xb[i] -= theta * direction * alpha[i]
            xb[r] = start + direction * theta
            status[leaving] = AT_LOWER if ai > 0 else AT_UPPER
            basis[r] = q
            status[q] = BASIC

            piv = alpha[r]
            for k in range(m):
                binv[r, k] /= piv
            for i in range(m):
                if i == r:
                    continue
                f = alpha[i]
                if f != 0.0:
                    for k in range(m):
                        binv[i, k] -= f * binv[r, k]
            for k in range(m):
                y[k] += d_q * binv[r, k]

            done += 1
            counters[0] += 1
            if theta < 1e-12:
                counters[1] += 1
                if counters[1] > bland_after:
                    counters[2] = 1
            else:
                counters[1] = 0
                counters[2] = 0
    return code
