"""Acceptance suite: one test per criterion, each printing a single pass/fail line."""
import time

import numpy as np
import pytest

from ospde.coefficients import (
    CoefficientSet, Constants, ContractionError, ObstacleSpec, require_contraction, validate_contraction,
)
from ospde.grid import EllipticCoefficients, assemble_operator, build_grid, dirichlet_form, trace_norm_estimate
from ospde.linear_solver import mild_oracle, solve
from ospde.noise import sample_path
from ospde.obstacle_solver import max_violation, skorokhod_gap, solve_obstacle
from ospde.verify import (
    COMPARISON_TOL, check_apriori_estimate, check_comparison, check_ito_identity, check_kappa_estimate,
)

from conftest import QL_XI, QUASILINEAR, make_spec


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, elapsed, limit):
        ok = bool(ok and elapsed < limit)
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  runtime {elapsed:.2f}s (< {limit}s)")
        return ok
    return emit


def test_criterion_1_scalar_oracle(report):
    t0 = time.perf_counter()
    spec = make_spec(cells=32, T=1.0, dt=1e-3, f={"name": "constant", "c": -1.0}, obstacle=0.0)
    sol = solve_obstacle(spec, sample_path(0, 0, spec.dt, spec.steps), n_schedule=[1e4])
    elapsed = time.perf_counter() - t0

    oracle = [0.0]
    for _ in range(spec.steps):
        oracle.append((oracle[-1] - spec.dt) / (1 + 1e4 * spec.dt))
    oracle_err = float(np.max(np.abs(sol.u - np.array(oracle)[:, None])))
    sup = float(np.max(np.abs(sol.u)))
    mass = sol.measure.total_mass
    gap = skorokhod_gap(sol)
    ok = sup <= 2e-4 and abs(mass - 1.0) <= 0.05 and gap <= 2e-4 and oracle_err <= 1e-12
    detail = f"sup|u|={sup:.3e} (<=2e-4) mass={mass:.5f} (1+-5%) gap={gap:.3e} (<=2e-4) oracle_err={oracle_err:.1e}"
    assert report(1, ok, detail, elapsed, 5)


def _mild_gap(dt, seeds):
    spec = make_spec(cells=16, T=0.5, dt=dt, J=2, xi={"name": "cosine", "amp": 1.0},
                     f={"name": "constant", "c": 0.5, "profile": "cos"},
                     h=[{"name": "constant", "c": 0.4, "profile": "cos"}, {"name": "constant", "c": 0.2}])
    gaps = []
    for s in seeds:
        p = sample_path(s, 2, 2.5e-3, 200).coarsen(int(round(dt / 2.5e-3)))
        gaps.append(np.max(np.abs(solve(spec, p).values - mild_oracle(spec, p).values)))
    return max(gaps)


def test_criterion_2_mild_oracle(report):
    t0 = time.perf_counter()
    gaps = [_mild_gap(dt, range(10)) for dt in (1e-2, 5e-3, 2.5e-3)]
    elapsed = time.perf_counter() - t0
    ratios = [gaps[1] / gaps[0], gaps[2] / gaps[1]]
    ok = all(0.35 <= r <= 0.65 for r in ratios)
    detail = f"gaps={[f'{g:.3e}' for g in gaps]} ratios={[f'{r:.3f}' for r in ratios]} (0.5 +-30%)"
    assert report(2, ok, detail, elapsed, 10)


def test_criterion_3_ito_ledger(report):
    t0 = time.perf_counter()
    base = dict(xi=QL_XI, J=1, **QUASILINEAR)
    free = check_ito_identity(make_spec(**base), range(20))
    obst = check_ito_identity(make_spec(obstacle=0.5, **base), range(20))
    elapsed = time.perf_counter() - t0
    d_free = free.details["decreasing_seeds"]
    d_obst = obst.details["decreasing_seeds"]
    worse = obst.details["ablation_worse"]
    ok = d_free >= 18 and d_obst >= 18 and worse == 20
    detail = f"decreasing free={d_free}/20 obstacle={d_obst}/20 (>=18) ablation worse={worse}/20 (=20)"
    assert report(3, ok, detail, elapsed, 30)


CMP = dict(J=1, h=[{"name": "linear", "c": 0.3, "a": 0.2}], g=[{"name": "sine", "amp": 0.1}])


def _shift(spec, xi=0.0, f=0.0, l=0.0):
    c = spec.coefficients
    if f:
        c = c.with_(f=c.f.shifted(f))
    if l:
        c = c.with_(l=c.l.shifted(l))
    return spec.with_(xi=spec.xi + xi, coefficients=c)


def test_criterion_4_comparison(report):
    t0 = time.perf_counter()
    lo = make_spec(xi=QL_XI, f={"name": "sine", "amp": 0.5, "c": -1.0}, **CMP)
    lo_o = make_spec(xi=QL_XI, f={"name": "sine", "amp": 0.5, "c": -2.0}, obstacle=0.5, **CMP)
    hi_o = lo_o.with_(obstacle=ObstacleSpec("direct", values=np.full(32, 0.6)))
    reps = {
        "xi": check_comparison(lo, _shift(lo, xi=0.1), range(50)),
        "f": check_comparison(lo, _shift(lo, f=1.0), range(50)),
        "l": check_comparison(lo, _shift(lo, l=0.5), range(50)),
        "S": check_comparison(lo_o, hi_o, range(50), mode="obstacle", n_schedule=[1e3]),
    }
    elapsed = time.perf_counter() - t0
    viol = {k: sum(v > COMPARISON_TOL for v in r.details["per_seed"]) for k, r in reps.items()}
    ok = all(r.passed for r in reps.values()) and not any(viol.values())
    margins = " ".join(f"{k}:{r.margin:.1e}" for k, r in reps.items())
    detail = f"violations>{COMPARISON_TOL:g} {viol} worst excess {margins}"
    assert report(4, ok, detail, elapsed, 60)


def test_criterion_5_penalization(report):
    t0 = time.perf_counter()
    spec = make_spec(xi=QL_XI, J=1, obstacle=0.5, dt=0.05, **QUASILINEAR)
    levels = (10.0, 1e2, 1e3, 1e4)
    dip, worst_rate = 0.0, 0.0
    for seed in range(10):
        p = sample_path(seed, 1, spec.dt, spec.steps)
        sols = [solve_obstacle(spec, p, n_schedule=[n], tol_picard=1e-11) for n in levels]
        viol = [max_violation(s.u, s.obstacle) for s in sols]
        dip = min(dip, min(float(np.min(b.u - a.u)) for a, b in zip(sols, sols[1:])))
        worst_rate = max(worst_rate, max(viol[i + 1] / viol[i] * levels[i + 1] / levels[i] for i in range(3)))
    elapsed = time.perf_counter() - t0
    ok = dip >= -1e-8 and worst_rate <= 3.0
    detail = f"min(u_n2 - u_n1)={dip:.1e} (>=-1e-8) worst viol(10n)/viol(n)*10={worst_rate:.3f} (<=3)"
    assert report(5, ok, detail, elapsed, 60)


def test_criterion_6_apriori(report):
    t0 = time.perf_counter()
    base = dict(cells=16, dt=0.05, J=1, xi=QL_XI, l={"name": "constant", "c": 0.2}, **QUASILINEAR)
    drv = CoefficientSet.build(f={"name": "constant", "c": -0.5}, h=[{"name": "linear", "c": 0.2, "a": 0.1}])
    driven = ObstacleSpec("driven", coefficients=drv, S0=np.full(16, -0.5))
    reps = {
        "solution": check_apriori_estimate(make_spec(**base), range(200)),
        "driver": check_apriori_estimate(make_spec(obstacle=driven, **base), range(200), target="driver"),
        "kappa": check_kappa_estimate(make_spec(**base), range(200)),
    }
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in reps.values()) and all(np.all(np.isfinite(r.trend)) for r in reps.values())
    detail = " ".join(
        f"{k}: ratio {r.trend[0]:.4f}->{r.trend[1]:.4f} change {r.margin:.1%}" for k, r in reps.items()
    ) + " (<=25%, 200 pairs)"
    assert report(6, ok, detail, elapsed, 120)


def test_criterion_7_structural(report):
    t0 = time.perf_counter()
    g = build_grid(1, [1.0], [32])
    op = assemble_operator(g, EllipticCoefficients.constant(g))
    tr = trace_norm_estimate(g, op, trials=200)
    failing = validate_contraction(Constants(C=1.0, alpha=1.0, beta=1.0, theta=0.0), 1.0, tr)
    passing = validate_contraction(Constants(C=1.0, alpha=0.3, beta=0.5, theta=0.2 / tr**2), 1.0, tr)
    try:
        require_contraction(Constants(C=1.0, alpha=1.0, beta=1.0, theta=0.0), 1.0, tr)
        gated = False
    except ContractionError:
        gated = True
    gate_ok = gated and not failing.passed and passing.passed
    gate_ok = gate_ok and failing.margin == -1.0 and abs(passing.margin - 0.75) < 1e-12

    rng = np.random.default_rng(7)
    assembly_ok = True
    for grid, a in (
        (build_grid(1, [1.0], [40]), rng.uniform(0.5, 3.0, 40)),
        (build_grid(2, [1.0, 2.0], [12, 9]), None),
    ):
        if a is None:
            diag = rng.uniform(0.5, 3.0, (grid.n_cells, 2))
            a = np.zeros((grid.n_cells, 2, 2))
            a[:, 0, 0], a[:, 1, 1] = diag[:, 0], diag[:, 1]
        ell = EllipticCoefficients.from_field(a)
        A = assemble_operator(grid, ell)
        ident = assemble_operator(grid, EllipticCoefficients.constant(grid))
        L = A.L.toarray()
        assembly_ok &= np.max(np.abs(L - L.T)) == 0.0
        assembly_ok &= bool(np.all(A.apply(np.ones(grid.n_cells)) == 0.0))
        for _ in range(20):
            u = rng.normal(size=grid.n_cells)
            D, E = dirichlet_form(ident, u), dirichlet_form(A, u)
            eps = 4 * np.finfo(float).eps * E
            assembly_ok &= ell.lam * D - eps <= E <= ell.Lam * D + eps
    elapsed = time.perf_counter() - t0
    detail = (f"failing m={failing.margin:g} rejected={gated} passing m={passing.margin:.4f} "
              f"assembly symmetric/kernel/coercive={bool(assembly_ok)}")
    assert report(7, gate_ok and assembly_ok, detail, elapsed, 1)
