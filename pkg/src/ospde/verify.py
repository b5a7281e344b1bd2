"""Property checks on solved trajectories: energy ledgers, estimates, comparison, weak form.

Every check returns a :class:`CheckReport` that records the seeds it used, so a
report can be regenerated exactly.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .coefficients import AssumptionError
from .grid import boundary_integral, dirichlet_form, energies
from .linear_solver import evaluate_terms, shares_noise_structure, solve
from .noise import antithetic, refinement_family, sample_path
from .obstacle_solver import build_obstacle, reflected_potential, solve_obstacle

COMPARISON_TOL = 1e-7


@dataclass
class CheckReport:
    name: str
    passed: bool
    margin: float
    tolerance: float
    trend: list = field(default_factory=list)
    paths: int = 0
    seeds: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def to_dict(self):
        d = asdict(self)
        d["verdict"] = self.verdict
        return d


def parallel_map(fn, items, threads=1):
    """Fan work units out over threads; results come back in input order."""
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# Ito ledger ------------------------------------------------------------------

@dataclass(frozen=True)
class Phi:
    value: object
    d1: object
    d2: object
    bounded: bool = True


PHI = {
    "square": Phi(lambda y: y * y, lambda y: 2 * y, lambda y: 2 * np.ones_like(y)),
    "logcosh": Phi(lambda y: np.log(np.cosh(y)), np.tanh, lambda y: 1 / np.cosh(y) ** 2),
    "cube": Phi(lambda y: y**3, lambda y: 3 * y * y, lambda y: 6 * y, bounded=False),
}


def _phi(choice):
    phi = PHI[choice] if isinstance(choice, str) else choice
    if not phi.bounded:
        raise ValueError("Ito ledger needs a function with bounded first and second derivatives")
    return phi


def ito_ledger(traj, spec, path, measure=None, phi="square"):
    """Per-step terms of the Ito formula for ``int Phi(u)``.

    Every term is taken at the left point t_k, as for the Ito integral; the
    bracket term uses the realized increments ``sum_j h_j^2 (dB^j)^2``.  The
    ``scheme`` columns replace the energy and bracket terms by the ones the
    implicit step actually produces, which makes that residual exact for a
    quadratic Phi.

    Returns a dict of per-step arrays plus ``residual``, ``residual_no_measure``
    and ``scheme_residual``.
    """
    phi = _phi(phi)
    g = spec.grid
    op = spec.op
    vol = g.cell_volume
    u = traj.values
    K = u.shape[0] - 1
    dt = traj.dt
    cols = {k: np.zeros(K) for k in (
        "energy", "drift", "flux", "noise", "boundary", "bracket", "measure",
        "energy_scheme", "bracket_scheme",
    )}
    grads = op.cell_gradient(u)
    for k in range(K):
        uk = u[k]
        p1 = phi.d1(uk)
        p2 = phi.d2(uk)
        terms = evaluate_terms(spec, spec.coefficients, k * dt, uk, grads[k], path.J, omega=path.seed)
        dB = path.increments[k]
        du = u[k + 1] - uk
        cols["energy"][k] = dt * dirichlet_form(op, p1, uk)
        cols["energy_scheme"][k] = dt * dirichlet_form(op, p1, u[k + 1])
        cols["drift"][k] = dt * np.dot(p1, terms.f) * vol
        cols["flux"][k] = dt * op.flux_pairing(terms.g, p1)
        cols["noise"][k] = np.dot(p1, terms.h @ dB) * vol
        cols["boundary"][k] = dt * boundary_integral(g, p1, terms.l)
        cols["bracket"][k] = 0.5 * np.sum(p2[:, None] * (terms.h * dB) ** 2) * vol
        cols["bracket_scheme"][k] = 0.5 * np.sum(p2 * du * du) * vol
        if measure is not None:
            cols["measure"][k] = np.dot(p1, measure.masses[k])
    lhs = float(np.sum(phi.value(u[-1])) * vol - np.sum(phi.value(u[0])) * vol)
    rest = -cols["drift"].sum() + cols["flux"].sum() - cols["noise"].sum() - cols["boundary"].sum()
    base = lhs + cols["energy"].sum() + rest - cols["bracket"].sum()
    scheme = lhs + cols["energy_scheme"].sum() + rest - cols["bracket_scheme"].sum() - cols["measure"].sum()
    cols["residual"] = abs(base - cols["measure"].sum())
    cols["residual_no_measure"] = abs(base)
    cols["scheme_residual"] = abs(scheme)
    return cols


def ito_report(traj, spec, path, measure=None, phi="square", tol=1e-10):
    """Single-trajectory ledger; passes iff the scheme-consistent residual is within ``tol``."""
    led = ito_ledger(traj, spec, path, measure, phi)
    return CheckReport(
        name="ito_identity", passed=bool(led["scheme_residual"] <= tol), margin=float(led["scheme_residual"]),
        tolerance=tol, paths=1, seeds=[path.seed],
        details={"residual": led["residual"], "residual_no_measure": led["residual_no_measure"]},
    )


def check_ito_identity(spec, seeds, phi="square", levels=3, n_schedule=(1e3,), required_fraction=0.9,
                       threads=1):
    """Refinement study of the Ito residual on nested Brownian paths.

    ``spec.dt`` is the coarsest step.  A seed counts as decreasing when the
    residual drops at every halving.  With an obstacle, dropping the measure
    term must enlarge the residual on every seed at the finest level.
    """
    if levels < 3:
        raise ValueError("refinement trends need at least 3 levels")
    seeds = list(seeds)
    if spec.J > 0 and len(seeds) < 10:
        raise ValueError("a refinement trend over random paths needs at least 10 seeds")
    obstacle = spec.obstacle is not None
    K = spec.steps * 2 ** (levels - 1)

    def one(seed):
        fam = refinement_family(seed, spec.J, spec.dt / 2 ** (levels - 1), K, levels)
        res, ablation = [], None
        for p in fam:
            s = spec.with_(dt=p.dt)
            if obstacle:
                sol = solve_obstacle(s, p, n_schedule=n_schedule, force=True)
                led = ito_ledger(sol.trajectory, s, p, sol.measure, phi)
                ablation = led["residual_no_measure"] > led["residual"]
            else:
                led = ito_ledger(solve(s, p), s, p, None, phi)
            res.append(led["residual"])
        return res, ablation

    out = parallel_map(one, list(seeds), threads)
    residuals = np.array([r for r, _ in out])
    decreasing = int(np.sum(np.all(np.diff(residuals, axis=1) < 0, axis=1)))
    fraction = decreasing / len(out)
    ablation = [a for _, a in out] if obstacle else []
    passed = fraction >= required_fraction and (not obstacle or all(ablation))
    return CheckReport(
        name="ito_identity", passed=bool(passed), margin=fraction, tolerance=required_fraction,
        trend=np.median(residuals, axis=0).tolist(), paths=len(out), seeds=list(seeds),
        details={
            "dt_levels": [spec.dt / 2**i for i in range(levels)],
            "residuals": residuals.tolist(),
            "decreasing_seeds": decreasing,
            "ablation_worse": int(sum(bool(a) for a in ablation)) if obstacle else None,
        },
    )


# a priori estimates ----------------------------------------------------------------

def energy_norm(op, values, dt):
    """``sup_k ||v_k||^2 + sum_{k>=1} E(v_k) dt``."""
    vol = op.grid.cell_volume
    sup = float(np.max(np.sum(values**2, axis=1)) * vol)
    energy = float(np.sum(energies(op, values[1:])) * dt)
    return sup + energy


def data_norm(spec, coefficients, path=None):
    """``int_0^T (|f0|^2 + |g0|^2 + |h0|^2 + |l0|^2_{dO}) dt`` on the time lattice."""
    g = spec.grid
    y0 = np.zeros(g.n_cells)
    z0 = np.zeros((g.n_cells, g.dimension))
    J = spec.J if path is None else path.J
    omega = None if path is None else path.seed
    total = 0.0
    for k in range(spec.steps):
        t = k * spec.dt
        terms = evaluate_terms(spec, coefficients, t, y0, z0, J, omega=omega)
        total += (np.sum(terms.f**2) + np.sum(terms.g**2) + np.sum(terms.h**2)) * g.cell_volume
        total += np.sum(terms.l**2 * g.surface_weights)
    return float(total * spec.dt)


def _paths(seed, J, dt, steps):
    p = sample_path(seed, J, dt, steps)
    return [p, antithetic(p)]


def _estimate_ratio(spec, seeds, lhs_rhs, threads):
    def one(seed):
        return [lhs_rhs(spec, p) for p in _paths(seed, spec.J, spec.dt, spec.steps)]

    vals = np.array([v for pair in parallel_map(one, list(seeds), threads) for v in pair])
    lhs, rhs = vals[:, 0].mean(), vals[:, 1].mean()
    if lhs == 0 and rhs == 0:
        return 0.0, lhs, rhs
    return float(lhs / rhs) if rhs > 0 else float("inf"), float(lhs), float(rhs)


def _refined(spec):
    return spec.with_(dt=spec.dt / 2)


def _refinement_report(name, spec, seeds, lhs_rhs, stability, threads, extra=None):
    seeds = list(seeds)
    if len(seeds) < 100:
        raise ValueError("a priori estimate checks need at least 100 antithetic pairs")
    r1, l1, q1 = _estimate_ratio(spec, seeds, lhs_rhs, threads)
    r2, l2, q2 = _estimate_ratio(_refined(spec), seeds, lhs_rhs, threads)
    finite = np.isfinite(r1) and np.isfinite(r2)
    change = 0.0 if r1 == 0 and r2 == 0 else abs(r2 / r1 - 1) if r1 > 0 else float("inf")
    details = {"lhs": [l1, l2], "rhs": [q1, q2], "ratio_change": change}
    details.update(extra or {})
    return CheckReport(
        name=name, passed=bool(finite and change <= stability), margin=change, tolerance=stability,
        trend=[r1, r2], paths=2 * len(seeds), seeds=seeds, details=details,
    )


def check_apriori_estimate(spec, seeds, target="solution", stability=0.25, threads=1):
    """Empirical constant ``E[sup|u|^2 + int E(u)] / E[|xi|^2 + int |data^0|^2]``.

    target: ``solution`` (the SPDE without obstacle) or ``driver`` (the
    equation of the obstacle's dominating process S').  Passes when the ratio
    is finite and moves by at most ``stability`` when dt halves.
    """
    if target == "driver":
        obs = spec.obstacle
        if obs is None or obs.mode != "driven":
            raise ValueError("driver estimate needs a driven obstacle")
        coeff, start = obs.coefficients, np.asarray(obs.S0, dtype=float)
    elif target == "solution":
        coeff, start = spec.coefficients, spec.xi
    else:
        raise ValueError(f"unknown target {target!r}")

    def lhs_rhs(s, p):
        traj = solve(s, p, coefficients=coeff, xi=start)
        lhs = energy_norm(s.op, traj.values, s.dt)
        rhs = float(np.sum(start**2) * s.grid.cell_volume) + data_norm(s, coeff, p)
        return lhs, rhs

    return _refinement_report(f"apriori_{target}", spec, seeds, lhs_rhs, stability, threads)


def domination_tolerance(u, dt, n, op=None):
    """Penalty leakage bound for ``v^n >= u``.

    Where v touches u the penalty must supply ``(du/dt - L u)^+``; the bound is
    its largest value over n.  Without ``op`` only the upward speed counts.
    """
    rate = np.diff(u, axis=0) / dt
    if op is not None:
        rate = rate - np.stack([op.apply(row) for row in u[1:]])
    return float(np.max(np.maximum(rate, 0.0), initial=0.0) / n)


def check_kappa_estimate(spec, seeds, n_schedule=(1e3,), stability=0.25, threads=1):
    """Estimate for the reflected potential of the solution without obstacle.

    Also scans every run for ``kappa >= u - tol`` with the leakage bound
    :func:`domination_tolerance`.
    """
    violations = []

    def lhs_rhs(s, p):
        u = solve(s, p)
        kappa = reflected_potential(u, s.op, n_schedule)
        tol = domination_tolerance(u.values, s.dt, n_schedule[-1], s.op) + 1e-10
        violations.append(float(np.max(u.values - kappa.values) - tol))
        lhs = energy_norm(s.op, kappa.values, s.dt)
        vol = s.grid.cell_volume
        rhs = float((np.sum(np.maximum(s.xi, 0) ** 2) + np.sum(s.xi**2)) * vol) + data_norm(s, s.coefficients, p)
        return lhs, rhs

    rep = _refinement_report("kappa_estimate", spec, seeds, lhs_rhs, stability, threads)
    worst = max(violations)
    rep.details["domination_excess"] = worst
    rep.passed = bool(rep.passed and worst <= 0)
    return rep


# comparison ------------------------------------------------------------------------

def _probe_order(c1, c2, d, seed=0, probes=256):
    """Largest ``f1 - f2`` and ``l1 - l2`` over random arguments."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 1, probes)
    x = rng.uniform(0, 1, (probes, d))
    y = rng.normal(0, 3, probes)
    z = rng.normal(0, 3, (probes, d))
    df = max(float(np.max(c1.eval_f(ti, x, y, z) - c2.eval_f(ti, x, y, z))) for ti in t[:8])
    dl = max(float(np.max(c1.eval_l(ti, x, y) - c2.eval_l(ti, x, y))) for ti in t[:8])
    return df, dl


def check_comparison(spec1, spec2, seeds, mode="linear", n_schedule=(1e2, 1e3), threads=1):
    """Max over paths, steps and nodes of ``(u1 - u2)^+``; passes iff <= 1e-7."""
    if mode not in ("linear", "obstacle"):
        raise ValueError(f"mode must be 'linear' or 'obstacle', got {mode!r}")
    if spec1.grid is not spec2.grid or spec1.dt != spec2.dt or spec1.T != spec2.T:
        raise AssumptionError("comparison needs a shared grid and time lattice")
    if not shares_noise_structure(spec1.coefficients, spec2.coefficients):
        raise AssumptionError("comparison needs shared g and h")
    if np.any(spec1.xi > spec2.xi):
        raise AssumptionError("comparison needs xi1 <= xi2")
    df, dl = _probe_order(spec1.coefficients, spec2.coefficients, spec1.d)
    if df > 0:
        raise AssumptionError(f"comparison needs f1 <= f2 (probe found excess {df:.3g})")
    if dl > 0:
        raise AssumptionError(f"comparison needs l1 <= l2 (probe found excess {dl:.3g})")
    if mode == "obstacle" and (spec1.obstacle is None or spec2.obstacle is None):
        raise AssumptionError("obstacle mode needs obstacles on both specs")

    def one(seed):
        p = sample_path(seed, spec1.J, spec1.dt, spec1.steps)
        if mode == "linear":
            u1, u2 = solve(spec1, p).values, solve(spec2, p).values
        else:
            S1, S2 = build_obstacle(spec1, p), build_obstacle(spec2, p)
            if np.any(S1 > S2):
                raise AssumptionError(f"comparison needs S1 <= S2 (seed {seed})")
            u1 = solve_obstacle(spec1, p, n_schedule, obstacle=S1, force=True).u
            u2 = solve_obstacle(spec2, p, n_schedule, obstacle=S2, force=True).u
        return float(np.max(np.maximum(u1 - u2, 0.0)))

    worst = parallel_map(one, list(seeds), threads)
    m = max(worst)
    return CheckReport(
        name=f"comparison_{mode}", passed=bool(m <= COMPARISON_TOL), margin=m, tolerance=COMPARISON_TOL,
        paths=len(worst), seeds=list(seeds), details={"per_seed": worst},
    )


# weak form -------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """``phi(t, x) = psi(t) chi(x)``."""

    __test__ = False  # not a pytest class

    psi: object
    dpsi: object
    chi: np.ndarray

    def at(self, t):
        return self.psi(t) * self.chi


def _bump(tau):
    def psi(t):
        s = np.clip(t / tau, 0, 1 - 1e-15)
        return np.exp(1 - 1 / (1 - s * s))

    def dpsi(t):
        s = np.clip(t / tau, 0, 1 - 1e-15)
        return psi(t) * (-2 * s / (1 - s * s) ** 2) / tau

    return psi, dpsi


def make_test_function(grid, psi="bump", chi="cos", T=1.0):
    """Library test function.  psi: ``bump`` (support [0, 1.5 T)) or ``one``;
    chi: ``one``, ``cos`` (1 + cos(pi x / L) / 2) or ``quadratic``."""
    if psi == "bump":
        p, dp = _bump(1.5 * T)
    elif psi == "one":
        p, dp = (lambda t: 1.0), (lambda t: 0.0)
    else:
        raise KeyError(f"unknown time factor {psi!r}")
    x = grid.centers / np.asarray(grid.extents)
    if chi == "one":
        c = np.ones(grid.n_cells)
    elif chi == "cos":
        c = 1 + 0.5 * np.prod(np.cos(np.pi * x), axis=1)
    elif chi == "quadratic":
        c = 1 + np.sum(x * x, axis=1)
    else:
        raise KeyError(f"unknown space factor {chi!r}")
    return TestFunction(psi=p, dpsi=dp, chi=c)


def weak_form_residual(traj, spec, path, phi, measure=None):
    """Residual of the weak relation tested against ``phi``; returns (with nu, without nu)."""
    g = spec.grid
    op = spec.op
    vol = g.cell_volume
    u = traj.values
    K = u.shape[0] - 1
    dt = traj.dt
    grads = op.cell_gradient(u)
    lhs = np.dot(u[-1], phi.at(K * dt)) * vol - np.dot(u[0], phi.at(0.0)) * vol
    rhs = 0.0
    nu_term = 0.0
    for k in range(K):
        t = k * dt
        ph = phi.at(t)
        terms = evaluate_terms(spec, spec.coefficients, t, u[k], grads[k], path.J, omega=path.seed)
        lhs -= dt * np.dot(u[k], phi.dpsi(t) * phi.chi) * vol
        lhs += dt * dirichlet_form(op, u[k], ph)
        lhs += dt * op.flux_pairing(terms.g, ph)
        rhs += dt * np.dot(terms.f, ph) * vol
        rhs += dt * boundary_integral(g, ph, terms.l)
        rhs += np.dot(terms.h @ path.increments[k], ph) * vol
        if measure is not None:
            nu_term += np.dot(phi.at(t + dt), measure.masses[k])
    return float(abs(lhs - rhs - nu_term)), float(abs(lhs - rhs))


def check_weak_form(traj, spec, path, phi=None, measure=None, tol=None):
    """Weak-form residual of one solved trajectory.

    ``tol`` defaults to ``dt`` times the size of the tested data, the order of
    the time-quadrature error.
    """
    phi = make_test_function(spec.grid, T=spec.T) if phi is None else phi
    with_nu, without_nu = weak_form_residual(traj, spec, path, phi, measure)
    if tol is None:
        scale = 1.0 + float(np.max(np.abs(traj.values))) + (measure.total_mass if measure is not None else 0.0)
        tol = 10.0 * traj.dt * scale
    return CheckReport(
        name="weak_form", passed=bool(with_nu <= tol), margin=with_nu, tolerance=float(tol),
        paths=1, seeds=[path.seed], details={"residual_without_measure": without_nu},
    )


def weak_form_refinement(spec, seed, levels=3, n_schedule=(1e3,), phi=None):
    """Weak-form residuals on one Brownian path at dt, dt/2, ..., coarsest first."""
    if levels < 3:
        raise ValueError("refinement trends need at least 3 levels")
    phi = make_test_function(spec.grid, T=spec.T) if phi is None else phi
    fam = refinement_family(seed, spec.J, spec.dt / 2 ** (levels - 1), spec.steps * 2 ** (levels - 1), levels)
    out = []
    for p in fam:
        s = spec.with_(dt=p.dt)
        if s.obstacle is not None:
            sol = solve_obstacle(s, p, n_schedule=n_schedule, force=True)
            out.append(weak_form_residual(sol.trajectory, s, p, phi, sol.measure)[0])
        else:
            out.append(weak_form_residual(solve(s, p), s, p, phi)[0])
    return out


CHECKS = {
    "ito_identity": "Ito energy ledger residual decreasing under dt halving (+ measure ablation)",
    "apriori_estimate": "a priori estimate ratio finite and stable under dt halving",
    "driver_estimate": "estimate for the obstacle's driving SPDE (driven obstacles)",
    "kappa_estimate": "reflected-potential estimate and kappa >= u",
    "comparison": "comparison of two ordered specs on shared noise",
    "weak_form": "weak-form residual with and without the measure term",
    "skorokhod": "Skorokhod gap nonincreasing along the penalization schedule",
}
