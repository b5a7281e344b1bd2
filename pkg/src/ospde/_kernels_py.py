"""Pure numpy/scipy versions of the compiled tridiagonal kernels."""
import numpy as np
from scipy.linalg import solve_banded


def tridiag_solve(sub, diag, sup, rhs):
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = sup[:-1]
    ab[1] = diag
    ab[2, :-1] = sub[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def penalized_tridiag_solve(sub, diag, sup, rhs, obstacle, weight, max_iter, tol):
    u = tridiag_solve(sub, diag, sup, rhs)
    for it in range(1, max_iter + 1):
        active = u < obstacle
        unew = tridiag_solve(sub, diag + weight * active, sup, rhs + weight * active * obstacle)
        delta = np.max(np.abs(unew - u))
        u = unew
        if delta <= tol:
            return u, it, True
    return u, max_iter, False
