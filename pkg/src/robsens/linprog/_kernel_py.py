"""Pure-NumPy pivot loop of the bounded revised simplex.

Mirrors ``_kernel.pyx`` step for step; the compiled version is preferred
when it imports. Both operate in place on ``binv``, ``xb``, ``basis``,
``status`` and ``counters`` (pivots, consecutive degenerate pivots,
Bland flag, unbounded column).
"""

import numpy as np

OPTIMAL = 0
UNBOUNDED = 1
BUDGET = 2

AT_LOWER = 0
AT_UPPER = 1
BASIC = 2


def run_pivots(A, c, u, binv, xb, basis, status, counters, max_pivots,
               tol_dual, tol_piv, tol_feas, bland_after):
    """Run at most ``max_pivots`` pivots; return a status code.

    ``A`` is dense (m, N). On ``UNBOUNDED`` the entering column index is
    stored in ``counters[3]``.
    """
    m = binv.shape[0]
    ub = u[basis]
    y = c[basis] @ binv
    done = 0
    while done < max_pivots:
        d = c - y @ A
        elig = ((status == AT_LOWER) & (u > 0) & (d < -tol_dual)) | (
            (status == AT_UPPER) & (d > tol_dual))
        cand = np.flatnonzero(elig)
        if cand.size == 0:
            return OPTIMAL
        if counters[2]:
            q = int(cand[0])
        else:
            q = int(cand[np.argmax(np.abs(d[cand]))])
        direction = 1.0 if status[q] == AT_LOWER else -1.0
        alpha = binv @ A[:, q]
        a = direction * alpha

        # Harris two-pass ratio test
        pos = a > tol_piv
        neg = (a < -tol_piv) & np.isfinite(ub)
        relaxed = np.full(m, np.inf)
        relaxed[pos] = (xb[pos] + tol_feas) / a[pos]
        relaxed[neg] = (ub[neg] - xb[neg] + tol_feas) / (-a[neg])
        theta_max = relaxed.min() if m else np.inf
        r = -1
        theta = np.inf
        if np.isfinite(theta_max):
            exact = np.full(m, np.inf)
            exact[pos] = xb[pos] / a[pos]
            exact[neg] = (ub[neg] - xb[neg]) / (-a[neg])
            ok = np.flatnonzero(exact <= theta_max)
            if counters[2]:
                best = exact[ok].min()
                ties = ok[exact[ok] <= best + tol_feas]
                r = int(ties[np.argmin(basis[ties])])
            else:
                r = int(ok[np.argmax(np.abs(a[ok]))])
            theta = max(exact[r], 0.0)

        if u[q] <= theta and np.isfinite(u[q]):
            theta = u[q]
            xb -= theta * a
            status[q] = AT_UPPER if status[q] == AT_LOWER else AT_LOWER
            done += 1
            counters[0] += 1
            continue
        if r < 0:
            counters[3] = q
            return UNBOUNDED

        start = 0.0 if status[q] == AT_LOWER else u[q]
        leaving = basis[r]
        xb -= theta * a
        xb[r] = start + direction * theta
        status[leaving] = AT_LOWER if a[r] > 0 else AT_UPPER
        basis[r] = q
        status[q] = BASIC
        ub[r] = u[q]

        d_q = d[q]
        prow = binv[r] / alpha[r]
        binv -= np.outer(alpha, prow)
        binv[r] = prow
        y += d_q * prow

        done += 1
        counters[0] += 1
        if theta < 1e-12:
            counters[1] += 1
            if counters[1] > bland_after:
                counters[2] = 1
        else:
            counters[1] = 0
            counters[2] = 0
    return BUDGET
