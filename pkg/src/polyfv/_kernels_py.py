"""Pure numpy/scipy implementation of the sparse kernels.

Same interface and operation order as the compiled module; used when the
extension is not built or when POLYFV_PURE=1 is set.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

BACKEND = "python"


def _csr(indptr, indices, data):
    n = len(indptr) - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def csr_matvec(indptr, indices, data, x, out):
    out[:] = _csr(indptr, indices, data) @ x


def dic_factor(indptr, indices, data):
    n = len(indptr) - 1
    d = np.empty(n)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        vals = data[lo:hi]
        low = cols < i
        s = vals[cols == i].sum() - np.sum(vals[low] ** 2 / d[cols[low]])
        if s <= 0.0:
            return d, i
        d[i] = s
    return d, -1


class _DIC:
    def __init__(self, indptr, indices, data, d):
        A = _csr(indptr, indices, data)
        D = sp.diags(d)
        self.lower = (sp.tril(A, k=-1) + D).tocsr()
        self.upper = (sp.triu(A, k=1) + D).tocsr()
        self.d = d

    def __call__(self, r, z):
        w = spsolve_triangular(self.lower, r, lower=True)
        z[:] = spsolve_triangular(self.upper, self.d * w, lower=False)


def dic_apply(indptr, indices, data, d, r, z):
    _DIC(indptr, indices, data, d)(r, z)


def pcg(indptr, indices, data, d, b, x, tol, max_it, jacobi=False):
    A = _csr(indptr, indices, data)
    if jacobi:
        def precond(r, z):
            z[:] = r / d
    else:
        precond = _DIC(indptr, indices, data, d)

    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0, 0
    r = b - A @ x
    res = np.sqrt(np.dot(r, r)) / bnorm
    if res <= tol:
        return 0, res, 0
    z = np.empty_like(r)
    precond(r, z)
    p = z.copy()
    rz = np.dot(r, z)
    it = 0
    status = 1
    while it < max_it:
        q = A @ p
        pq = np.dot(p, q)
        if pq <= 0.0:
            status = 2
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        res = np.sqrt(np.dot(r, r)) / bnorm
        if res <= tol:
            status = 0
            break
        precond(r, z)
        rz_new = np.dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return it, res, status
