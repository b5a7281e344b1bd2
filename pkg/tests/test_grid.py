import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ospde.grid import (
    EllipticCoefficients, EllipticityError, GridError, assemble_operator, boundary_integral,
    build_grid, dirichlet_form, l2_inner, trace_norm_estimate,
)

from conftest import line


def test_build_grid_unit_line():
    g = build_grid(1, [1.0], [4])
    assert g.cell_volume == 0.25
    assert list(g.boundary_nodes) == [0, 3]
    assert list(g.surface_weights) == [1.0, 1.0]


def test_build_grid_long_line():
    g = build_grid(1, [2.0], [8])
    assert g.cell_volume == 0.25
    assert g.total_volume == pytest.approx(2.0, rel=1e-12)


def test_build_grid_square():
    g = build_grid(2, [1.0, 1.0], [3, 3])
    assert g.n_cells == 9
    assert len(g.boundary_nodes) == 8
    assert g.cell_volume == pytest.approx(1 / 9)


@pytest.mark.parametrize("args", [(3, [1, 1, 1], [2, 2, 2]), (1, [0.0], [4]), (1, [-1.0], [4]), (1, [1.0], [1])])
def test_build_grid_rejects(args):
    with pytest.raises(GridError):
        build_grid(*args)


def test_two_cell_matrix():
    h = 0.5
    g, op = line(2)
    np.testing.assert_array_equal(op.L.toarray(), np.array([[-1.0, 1.0], [1.0, -1.0]]) / h**2)


@pytest.mark.parametrize("dim,cells", [(1, [7]), (2, [4, 5])])
def test_constants_in_kernel(dim, cells):
    g = build_grid(dim, [1.0] * dim, cells)
    op = assemble_operator(g, EllipticCoefficients.constant(g, a=[1.0, 2.5][:dim]))
    assert np.all(op.apply(np.full(g.n_cells, 3.7)) == 0.0)


def test_spectrum_gershgorin():
    g, op = line(20)
    ev = np.linalg.eigvalsh(-op.L.toarray())
    assert ev.min() > -1e-9
    assert ev.max() <= 4 / g.cell_volume**2 + 1e-9


def test_ellipticity_violation_rejected():
    g = build_grid(1, [1.0], [4])
    with pytest.raises(EllipticityError):
        assemble_operator(g, EllipticCoefficients.constant(g, a=1.0, lam=2.0))
    with pytest.raises(EllipticityError):
        assemble_operator(build_grid(2, [1, 1], [2, 2]), EllipticCoefficients.constant(g, a=1.0))


def test_dirichlet_form_linear_field():
    # two-point fluxes see N-1 interior faces, each with slope exactly 1
    for n in (8, 32, 128):
        g, op = line(n)
        x = g.centers[:, 0]
        assert dirichlet_form(op, x) == pytest.approx((n - 1) / n, rel=1e-12)
        assert abs(dirichlet_form(op, x) - 1.0) <= g.cell_volume


def test_dirichlet_form_constant_and_symmetry():
    g, op = line(16)
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(2, 16))
    assert dirichlet_form(op, np.full(16, 2.0), v) == 0.0
    assert dirichlet_form(op, u, v) == pytest.approx(dirichlet_form(op, v, u), rel=1e-12)
    with pytest.raises(GridError):
        dirichlet_form(op, u[:5], v)


def test_boundary_integral():
    g, _ = line(10)
    assert boundary_integral(g, np.ones(10), np.ones(2)) == 2.0
    assert boundary_integral(g, np.zeros(10), np.ones(2)) == 0.0
    u = np.arange(10.0)
    assert boundary_integral(g, u, np.array([3.0, -2.0])) == 0.0 * 3 + 9.0 * -2.0
    sq = build_grid(2, [1.0, 1.0], [3, 3])
    assert abs(boundary_integral(sq, np.ones(9), np.ones(8)) - 4.0) <= 1 / 3
    with pytest.raises(GridError):
        boundary_integral(g, u, np.ones(3))


def test_trace_norm_estimate():
    g, op = line(32)
    est = trace_norm_estimate(g, op, trials=50)
    assert est >= np.sqrt(2) - 1e-12
    # continuum value on [0, 1] is sqrt(coth(1/2)) ~ 1.4707
    assert est <= 1.48
    assert trace_norm_estimate(g, op, trials=100) >= est


def test_flux_pairing_and_boundary_source():
    g, op = line(10)
    x = g.centers[:, 0]
    gfield = np.full((10, 1), 0.7)
    # interior faces only: sum c (phi_j - phi_i) = c (x_N - x_1)
    assert op.flux_pairing(gfield, x) == pytest.approx(0.7 * (x[-1] - x[0]), rel=1e-12)
    b = op.boundary_source(np.array([0.3, 0.5]))
    assert np.sum(b) * g.cell_volume == pytest.approx(0.8)


def test_cell_gradient_matches_numpy():
    g = build_grid(2, [1.0, 2.0], [5, 4])
    op = assemble_operator(g, EllipticCoefficients.constant(g))
    u = np.random.default_rng(0).normal(size=g.n_cells)
    grad = op.cell_gradient(u)
    U = u.reshape(4, 5)
    np.testing.assert_allclose(grad[:, 0], np.gradient(U, 0.2, axis=1, edge_order=1).ravel())
    np.testing.assert_allclose(grad[:, 1], np.gradient(U, 0.5, axis=0, edge_order=1).ravel())
    stacked = op.cell_gradient(np.stack([u, 2 * u]))
    np.testing.assert_allclose(stacked[1], 2 * grad)


@pytest.mark.parametrize("dim", [1, 2])
def test_implicit_system_matches_sparse_solve(dim):
    g = build_grid(dim, [1.0] * dim, [6] * dim)
    op = assemble_operator(g, EllipticCoefficients.constant(g))
    sys_ = op.implicit_system(0.01)
    rhs = np.random.default_rng(2).normal(size=g.n_cells)
    np.testing.assert_allclose(sys_.solve(rhs), spla.spsolve(sys_.matrix, rhs), atol=1e-12)
    S = np.full(g.n_cells, 0.5)
    u, it, ok = sys_.solve_penalized(rhs, S, 50.0)
    assert ok
    resid = sys_.matrix @ u + 50.0 * np.minimum(u - S, 0.0) - rhs
    assert np.max(np.abs(resid)) < 1e-9


# properties -------------------------------------------------------------------

fields_1d = st.integers(2, 24).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(0.1, 10.0))
)


@settings(max_examples=40, deadline=None)
@given(fields_1d)
def test_assembly_symmetric_kernel_coercive_1d(a):
    n = a.size
    g = build_grid(1, [1.0], [n])
    op = assemble_operator(g, EllipticCoefficients.from_field(a))
    L = op.L.toarray()
    assert np.max(np.abs(L - L.T)) == 0.0
    assert np.all(op.apply(np.ones(n)) == 0.0)
    ident = assemble_operator(g, EllipticCoefficients.constant(g))
    u = np.random.default_rng(n).normal(size=n)
    D = dirichlet_form(ident, u)
    E = dirichlet_form(op, u)
    assert a.min() * D - 1e-9 * D <= E <= a.max() * D + 1e-9 * D


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_assembly_properties_2d(nx, ny, ax, ay):
    g = build_grid(2, [1.0, 1.5], [nx, ny])
    coeff = EllipticCoefficients.constant(g, a=[ax, ay])
    op = assemble_operator(g, coeff)
    L = op.L.toarray()
    assert np.max(np.abs(L - L.T)) == 0.0
    assert np.all(op.apply(np.ones(g.n_cells)) == 0.0)
    assert np.linalg.eigvalsh(-L).min() > -1e-8 * np.abs(L).max()
    ident = assemble_operator(g, EllipticCoefficients.constant(g))
    u = np.random.default_rng(nx * ny).normal(size=g.n_cells)
    D, E = dirichlet_form(ident, u), dirichlet_form(op, u)
    assert coeff.lam * D * (1 - 1e-12) <= E <= coeff.Lam * D * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-5, 5)), st.floats(-3, 3))
def test_form_invariant_under_constant_shift(u, c):
    g, op = line(12)
    assert dirichlet_form(op, u) >= -1e-12
    assert dirichlet_form(op, u + c) == pytest.approx(dirichlet_form(op, u), rel=1e-9, abs=1e-9)
    assert l2_inner(g, u, u) >= 0


def test_flux_form_agrees_with_matrix():
    g = build_grid(2, [1.0, 1.0], [4, 3])
    op = assemble_operator(g, EllipticCoefficients.constant(g, a=[2.0, 0.5]))
    u, v = np.random.default_rng(3).normal(size=(2, g.n_cells))
    np.testing.assert_allclose(op.apply(u), op.L @ u, atol=1e-12)
    assert dirichlet_form(op, u, v) == pytest.approx(-(u @ (op.L @ v)) * g.cell_volume, rel=1e-12)
