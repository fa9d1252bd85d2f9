"""Cyclic Jacobi eigenvalue iteration for dense symmetric matrices."""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _off_norm(a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return math.sqrt(s)


@numba.njit(cache=True)
def jacobi_sweeps(a, tol, max_sweeps):
    """Diagonalize ``a`` in place by row-cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors, sweeps, off_norm)``; eigenvalues
    are unsorted. Iteration stops once the off-diagonal Frobenius norm is
    at most ``tol`` or after ``max_sweeps`` full sweeps.
    """
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    off = _off_norm(a)
    while off > tol and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                # exact zero keeps the next off-norm honest
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
        off = _off_norm(a)
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps, off
