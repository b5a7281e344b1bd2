"""Penalization solver for the obstacle problem and the reflected potential.

The penalized step is implicit in both the operator and the penalty:

    (I - dt L) u_{k+1} = RHS_k + dt n (u_{k+1} - S_{k+1})^-

and the deposited measure on cell i is ``nu_{k,i} = n (u_{k+1,i} - S_{k+1,i})^- dt dx``,
so the measure sits exactly where the solution is below the obstacle.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .coefficients import require_contraction
from .grid import trace_norm_estimate
from .linear_solver import (
    FieldTrajectory, _finite_or_reject, check_path, evaluate_terms, increment_rhs, solve,
)

DEFAULT_SCHEDULE = (10.0, 1e2, 1e3, 1e4)


class InnerSolveError(ArithmeticError):
    pass


class PicardDivergence(ArithmeticError):
    pass


@dataclass(eq=False)
class RegularMeasure:
    masses: np.ndarray  # (steps, N); row k is deposited on (t_k, t_{k+1}]
    dt: float
    cell_volume: float

    @property
    def total_mass(self):
        return float(self.masses.sum())

    @property
    def density(self):
        return self.masses / (self.dt * self.cell_volume)


@dataclass(eq=False)
class ObstacleSolution:
    trajectory: FieldTrajectory
    measure: RegularMeasure
    obstacle: np.ndarray  # (steps + 1, N)
    n: float
    picard_iterations: int
    picard_gap: float
    contraction_margin: float = None
    history: list = field(default_factory=list)

    @property
    def u(self):
        return self.trajectory.values


def build_obstacle(spec, path):
    """Obstacle trajectory ``S_k`` for k = 0..steps."""
    check_path(spec, path)
    obs = spec.obstacle
    g = spec.grid
    if obs is None:
        raise ValueError("spec has no obstacle")
    if obs.mode == "driven":
        driver = solve(spec, path, coefficients=obs.coefficients, xi=obs.S0)
        S = driver.values + np.asarray(obs.offset, dtype=float)
    else:
        v = obs.values
        if callable(v):
            S = np.stack([np.asarray(v(t, g.centers), dtype=float) for t in spec.times()])
        else:
            v = np.asarray(v, dtype=float)
            S = np.broadcast_to(v, (spec.steps + 1, g.n_cells)).copy()
        if S.shape != (spec.steps + 1, g.n_cells):
            raise ValueError(f"direct obstacle has shape {S.shape}")
    if np.any(S[0] > spec.xi):
        raise ValueError("S_0 <= xi violated")
    return S


def penalized_step(u_k, S_next, n, spec, op, path, k, coefficients=None, state=None,
                   inner_max=50, inner_tol=1e-10):
    """One penalized step; returns ``(u_{k+1}, nu_row)``."""
    if not n > 0:
        raise ValueError(f"penalization level must be positive, got {n}")
    coefficients = spec.coefficients if coefficients is None else coefficients
    u_k = np.asarray(u_k, dtype=float)
    if state is None:
        state = (u_k, op.cell_gradient(u_k))
    terms = evaluate_terms(spec, coefficients, k * spec.dt, state[0], state[1], path.J, omega=path.seed)
    rhs = increment_rhs(u_k, terms, op, spec.dt, path.increments[k])
    system = op.implicit_system(spec.dt)
    delta, iters, ok = system.solve_penalized(rhs, S_next - u_k, spec.dt * n, inner_max, inner_tol)
    u = u_k + delta
    if not ok:
        raise InnerSolveError(f"penalty iteration did not converge at step {k} after {iters} sweeps (n={n:g})")
    _finite_or_reject(u, k, op, spec.dt)
    nu = n * np.maximum(S_next - u, 0.0) * spec.dt * spec.grid.cell_volume
    return u, nu


def _march(spec, path, S, n, frozen, inner_max, inner_tol):
    op = spec.op
    K = spec.steps
    u = np.empty((K + 1, spec.grid.n_cells))
    nu = np.empty((K, spec.grid.n_cells))
    u[0] = spec.xi
    grads = None if frozen is None else op.cell_gradient(frozen)
    for k in range(K):
        state = None if frozen is None else (frozen[k], grads[k])
        u[k + 1], nu[k] = penalized_step(
            u[k], S[k + 1], n, spec, op, path, k, state=state, inner_max=inner_max, inner_tol=inner_tol,
        )
    return u, nu


@lru_cache(maxsize=32)
def _trace_norm(op):
    return trace_norm_estimate(op.grid, op, trials=200)


def contraction_gate(spec, safety=0.05):
    op = spec.op
    return require_contraction(spec.coefficients, op.coeff.lam, _trace_norm(op), spec.d, safety).margin


def solve_obstacle(spec, path, n_schedule=DEFAULT_SCHEDULE, obstacle=None, tol_picard=1e-8,
                   max_picard=100, inner_max=50, inner_tol=1e-10, safety=0.05, force=False):
    """Penalized solve along an increasing schedule of penalization levels.

    For state-dependent coefficients an outer Picard loop freezes the (y, z)
    arguments at the previous iterate; each level warm-starts from the last.
    """
    check_path(spec, path)
    schedule = [float(n) for n in n_schedule]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError(f"n_schedule must be nonempty and increasing, got {schedule}")
    margin = None if force else contraction_gate(spec, safety)
    S = build_obstacle(spec, path) if obstacle is None else np.asarray(obstacle, dtype=float)
    picard = spec.coefficients.state_dependent
    dx = spec.grid.cell_volume

    previous = np.broadcast_to(spec.xi, (spec.steps + 1, spec.grid.n_cells)).copy()
    history = []
    for n in schedule:
        if not picard:
            u, nu = _march(spec, path, S, n, None, inner_max, inner_tol)
            its, gap = 1, 0.0
        else:
            gaps = []
            for its in range(1, max_picard + 1):
                u, nu = _march(spec, path, S, n, previous, inner_max, inner_tol)
                gap = float(np.max(np.sqrt(np.sum((u - previous) ** 2, axis=1) * dx)))
                previous = u
                gaps.append(gap)
                if gap <= tol_picard:
                    break
                if len(gaps) >= 4 and gaps[-1] > gaps[-2] > gaps[-3] > gaps[-4]:
                    raise PicardDivergence(
                        f"Picard gap grew for 3 consecutive iterations at n={n:g} "
                        f"(gaps {gaps[-4:]}); contraction margin {margin}"
                    )
        previous = u
        traj = FieldTrajectory(values=u, dt=spec.dt, seed=path.seed)
        measure = RegularMeasure(masses=nu, dt=spec.dt, cell_volume=dx)
        history.append({
            "n": n,
            "picard_iterations": its,
            "picard_gap": gap,
            "total_mass": measure.total_mass,
            "skorokhod_gap": _gap(u, S, nu),
            "max_violation": max_violation(u, S),
        })
    traj.grads = spec.op.cell_gradient(u)
    return ObstacleSolution(
        trajectory=traj, measure=measure, obstacle=S, n=schedule[-1],
        picard_iterations=its, picard_gap=gap, contraction_margin=margin, history=history,
    )


def max_violation(u, S):
    return float(np.max(np.maximum(np.asarray(S) - np.asarray(u), 0.0)))


def _gap(u, S, nu):
    return float(np.sum(np.abs(u[1:] - S[1:]) * nu))


def skorokhod_gap(sol, S=None):
    """Minimality defect ``sum_{k,i} |u_{k+1,i} - S_{k+1,i}| nu_{k,i}``.

    The penalized measure only charges cells where u < S, so this is the
    discrete ``int (u - S) dnu`` up to sign; it vanishes as n grows.
    """
    S = sol.obstacle if S is None else S
    return _gap(sol.u, S, sol.measure.masses)


def reflected_potential(u, op, n_schedule=DEFAULT_SCHEDULE, u0_plus=None, return_levels=False,
                        inner_max=50, inner_tol=1e-10):
    """Penalized approximations ``v^n`` of the smallest potential above ``u``.

    dv/dt = A v + n (v - u)^-, zero co-normal flux, v_0 = u_0^+; returns the
    largest-n iterate (and all levels when ``return_levels``).
    """
    values = u.values if isinstance(u, FieldTrajectory) else np.asarray(u, dtype=float)
    dt = u.dt if isinstance(u, FieldTrajectory) else None
    if dt is None:
        raise ValueError("reflected_potential needs a FieldTrajectory")
    v0 = np.maximum(values[0], 0.0) if u0_plus is None else np.asarray(u0_plus, dtype=float)
    system = op.implicit_system(dt)
    levels = []
    for n in n_schedule:
        v = np.empty_like(values)
        v[0] = v0
        for k in range(values.shape[0] - 1):
            delta, iters, ok = system.solve_penalized(
                dt * op.apply(v[k]), values[k + 1] - v[k], dt * n, inner_max, inner_tol,
            )
            v[k + 1] = v[k] + delta
            if not ok:
                raise InnerSolveError(f"reflected potential iteration failed at step {k} (n={n:g})")
        levels.append(FieldTrajectory(values=v, dt=dt, seed=getattr(u, "seed", None)))
    return (levels[-1], levels) if return_levels else levels[-1]
