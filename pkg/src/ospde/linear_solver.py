"""Semi-implicit time stepping for the SPDE without obstacle.

One step solves

    (I - dt L) u_{k+1} = u_k + dt (f_k + div g_k + b_k) + sum_j h_{j,k} dB_k^j

with f, g, h, l evaluated at (t_k, x, u_k, grad u_k).  ``div`` collects g on
interior faces and ``b`` injects the boundary flux data l, so the pair is the
discrete version of ``d_i g^i`` under the co-normal condition
``(a grad u + g) . n = l``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coefficients import AssumptionError


class StepRejected(ArithmeticError):
    pass


@dataclass(eq=False)
class FieldTrajectory:
    values: np.ndarray  # (steps + 1, N)
    dt: float
    seed: int = None
    grads: np.ndarray = field(default=None, repr=False)

    @property
    def steps(self):
        return self.values.shape[0] - 1

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    @property
    def final(self):
        return self.values[-1]


@dataclass
class StepTerms:
    """Coefficient values at one time level; reused by the energy ledgers."""

    f: np.ndarray
    g: np.ndarray  # (N, d)
    h: np.ndarray  # (N, J)
    l: np.ndarray  # on boundary nodes


def evaluate_terms(spec, coefficients, t, y, z, J, omega=None):
    g = spec.grid
    c = coefficients
    yb = y[g.boundary_nodes]
    return StepTerms(
        f=c.eval_f(t, g.centers, y, z, omega=omega),
        g=c.eval_g(t, g.centers, y, z, g.dimension, omega=omega),
        h=c.eval_h(t, g.centers, y, z, J, omega=omega),
        l=c.eval_l(t, g.centers[g.boundary_nodes], yb, omega=omega),
    )


def increment_rhs(u, terms, op, dt, dB):
    """Right side for the increment ``u_{k+1} - u_k``.

    Solving ``(I - dt L) delta = dt (L u_k + drift) + h dB`` is algebraically the
    same step, but a state in the kernel of L with no forcing stays put exactly.
    """
    drift = op.apply(u) + terms.f + op.divergence(terms.g) + op.boundary_source(terms.l)
    return dt * drift + terms.h @ dB


def check_path(spec, path):
    if path.steps != spec.steps or abs(path.dt - spec.dt) > 1e-12 * spec.dt:
        raise ValueError(
            f"path lattice ({path.steps} steps of {path.dt}) does not match spec "
            f"({spec.steps} steps of {spec.dt})"
        )


def _finite_or_reject(u, k, op, dt):
    if not np.all(np.isfinite(u)):
        cond = np.linalg.cond(op.implicit_system(dt).matrix.toarray())
        raise StepRejected(f"non-finite update at step {k} (condition estimate {cond:.3g})")
    return u


def step(u_k, spec, op, path, k, coefficients=None, state=None):
    """Advance one step.  ``state = (y, z)`` freezes the coefficient arguments."""
    coefficients = spec.coefficients if coefficients is None else coefficients
    u_k = np.asarray(u_k, dtype=float)
    if state is None:
        state = (u_k, op.cell_gradient(u_k))
    t = k * spec.dt
    terms = evaluate_terms(spec, coefficients, t, state[0], state[1], path.J, omega=path.seed)
    rhs = increment_rhs(u_k, terms, op, spec.dt, path.increments[k])
    u = u_k + op.implicit_system(spec.dt).solve(rhs)
    return _finite_or_reject(u, k, op, spec.dt)


def solve(spec, path, coefficients=None, xi=None):
    """Full trajectory of the linear/quasilinear SPDE on one path."""
    check_path(spec, path)
    op = spec.op
    xi = spec.xi if xi is None else np.asarray(xi, dtype=float)
    out = np.empty((spec.steps + 1, spec.grid.n_cells))
    out[0] = xi
    for k in range(spec.steps):
        out[k + 1] = step(out[k], spec, op, path, k, coefficients=coefficients)
    return FieldTrajectory(values=out, dt=spec.dt, seed=path.seed, grads=op.cell_gradient(out))


def _is_additive(c):
    zero_g = all(not g.state_dependent and g.name == "zero" for g in c.g)
    return not c.f.state_dependent and not any(h.state_dependent for h in c.h) and zero_g and c.l.name == "zero"


def mild_oracle(spec, path, max_nodes=200):
    """Semigroup representation with ``P_t = expm(t L)`` and left-point sums.

    u_{t_k} = P_{t_k} xi + sum_{m<k} P_{t_k - t_m} (f_m dt + h_m dB_m)

    Valid for additive data only (f, h independent of the state; g = l = 0).
    """
    check_path(spec, path)
    c = spec.coefficients
    if not _is_additive(c):
        raise AssumptionError("mild oracle needs additive f, h and zero g, l")
    n = spec.grid.n_cells
    if n > max_nodes:
        raise ValueError(f"mild oracle limited to {max_nodes} nodes, grid has {n}")
    K = spec.steps
    Ld = spec.op.L.toarray()
    P = np.stack([scipy.linalg.expm(m * spec.dt * Ld) for m in range(K + 1)])

    x = spec.grid.centers
    y0 = np.zeros(n)
    z0 = np.zeros((n, spec.d))
    inc = np.empty((K, n))
    for m in range(K):
        t = m * spec.dt
        inc[m] = c.eval_f(t, x, y0, z0, omega=path.seed) * spec.dt
        inc[m] += c.eval_h(t, x, y0, z0, path.J, omega=path.seed) @ path.increments[m]

    out = np.empty((K + 1, n))
    out[0] = spec.xi
    for k in range(1, K + 1):
        out[k] = P[k] @ spec.xi + np.einsum("mij,mj->i", P[k:0:-1], inc[:k])
    return FieldTrajectory(values=out, dt=spec.dt, seed=path.seed)


def _same(a, b):
    if a is b:
        return True
    return a.name == b.name and a.name != "custom" and a.params == b.params


def shares_noise_structure(c1, c2):
    if len(c1.g) != len(c2.g) or len(c1.h) != len(c2.h):
        return False
    return all(_same(a, b) for a, b in zip(c1.g, c2.g)) and all(_same(a, b) for a, b in zip(c1.h, c2.h))


def solve_spde_pair(spec1, spec2, path):
    """Two solutions on identical increments; g and h must be shared."""
    if spec1.grid is not spec2.grid or spec1.dt != spec2.dt or spec1.T != spec2.T:
        raise AssumptionError("paired specs must share grid and time lattice")
    if not shares_noise_structure(spec1.coefficients, spec2.coefficients):
        raise AssumptionError("paired specs must share g and h")
    return solve(spec1, path), solve(spec2, path)
