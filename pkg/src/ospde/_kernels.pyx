# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tridiagonal kernels for the implicit and penalized time steps."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _thomas(const double[:] sub, const double[:] diag, const double[:] sup,
                  const double[:] rhs, double[:] out, double[:] work) noexcept nogil:
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double m
    work[0] = sup[0] / diag[0] if n > 1 else 0.0
    out[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - sub[i] * work[i - 1]
        if i < n - 1:
            work[i] = sup[i] / m
        out[i] = (rhs[i] - sub[i] * out[i - 1]) / m
    for i in range(n - 2, -1, -1):
        out[i] -= work[i] * out[i + 1]


def tridiag_solve(double[:] sub, double[:] diag, double[:] sup, double[:] rhs):
    """Solve a tridiagonal system; ``sub[0]`` and ``sup[-1]`` are ignored."""
    cdef Py_ssize_t n = diag.shape[0]
    out = np.empty(n)
    work = np.empty(n)
    cdef double[:] o = out
    cdef double[:] w = work
    with nogil:
        _thomas(sub, diag, sup, rhs, o, w)
    return out


def penalized_tridiag_solve(double[:] sub, double[:] diag, double[:] sup,
                            double[:] rhs, double[:] obstacle, double weight,
                            int max_iter, double tol):
    """Semi-smooth Newton for ``A u + weight * min(u - obstacle, 0) = rhs``.

    ``A`` is the tridiagonal M-matrix given by (sub, diag, sup).  Starting from
    the unpenalized solution the iterates increase monotonically.
    Returns ``(u, iterations, converged)``.
    """
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef int it = 0
    cdef bint converged = False
    cdef double delta, d
    u_arr = np.empty(n)
    new_arr = np.empty(n)
    dmod_arr = np.empty(n)
    rmod_arr = np.empty(n)
    work_arr = np.empty(n)
    cdef double[:] u = u_arr
    cdef double[:] unew = new_arr
    cdef double[:] dmod = dmod_arr
    cdef double[:] rmod = rmod_arr
    cdef double[:] work = work_arr
    with nogil:
        _thomas(sub, diag, sup, rhs, u, work)
        while it < max_iter:
            it += 1
            for i in range(n):
                if u[i] < obstacle[i]:
                    dmod[i] = diag[i] + weight
                    rmod[i] = rhs[i] + weight * obstacle[i]
                else:
                    dmod[i] = diag[i]
                    rmod[i] = rhs[i]
            _thomas(sub, dmod, sup, rmod, unew, work)
            delta = 0.0
            for i in range(n):
                d = unew[i] - u[i]
                if d < 0:
                    d = -d
                if d > delta:
                    delta = d
                u[i] = unew[i]
            if delta <= tol:
                converged = True
                break
    return u_arr, it, bool(converged)
