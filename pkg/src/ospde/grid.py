"""Cell-centered finite-volume grids and the divergence-form Neumann operator.

Nodal fields live at cell centers and are indexed with the x axis running
fastest.  The operator ``L`` approximates ``div(a grad u)`` with zero co-normal
flux across the exterior faces, so constants are in its kernel.  Inhomogeneous
flux data enter the time stepper as separate source vectors.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels


class GridError(ValueError):
    pass


class EllipticityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    dimension: int
    extents: tuple
    cells: tuple
    spacing: tuple
    cell_volume: float
    centers: np.ndarray
    boundary_nodes: np.ndarray
    surface_weights: np.ndarray
    # interior faces: left cell, right cell, axis
    face_left: np.ndarray = field(repr=False)
    face_right: np.ndarray = field(repr=False)
    face_axis: np.ndarray = field(repr=False)

    @property
    def n_cells(self):
        return int(np.prod(self.cells))

    @property
    def total_volume(self):
        return self.cell_volume * self.n_cells

    def index(self, *ijk):
        if self.dimension == 1:
            return ijk[0]
        i, j = ijk
        return i + self.cells[0] * j

    def zeros(self):
        return np.zeros(self.n_cells)


def build_grid(dimension, extents, cells_per_axis):
    """Uniform box grid on ``[0, L_1] x ... x [0, L_d]``."""
    if dimension not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {dimension}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    cells = tuple(int(c) for c in np.atleast_1d(cells_per_axis))
    if len(extents) != dimension or len(cells) != dimension:
        raise GridError("extents and cells_per_axis need one entry per axis")
    if any(not np.isfinite(e) or e <= 0 for e in extents):
        raise GridError(f"extents must be positive, got {extents}")
    if any(c < 2 for c in cells):
        raise GridError(f"need at least 2 cells per axis, got {cells}")

    spacing = tuple(e / c for e, c in zip(extents, cells))
    axes = [(np.arange(c) + 0.5) * h for c, h in zip(cells, spacing)]

    if dimension == 1:
        n = cells[0]
        centers = axes[0][:, None]
        boundary = np.array([0, n - 1])
        weights = np.array([1.0, 1.0])
        left = np.arange(n - 1)
        right = left + 1
        axis = np.zeros(n - 1, dtype=int)
        volume = spacing[0]
    else:
        nx, ny = cells
        hx, hy = spacing
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        centers = np.column_stack([X.ravel(), Y.ravel()])
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        ix, iy = ix.ravel(), iy.ravel()
        # exterior face length owned by each cell
        w = np.zeros(nx * ny)
        w += hy * ((ix == 0).astype(float) + (ix == nx - 1))
        w += hx * ((iy == 0).astype(float) + (iy == ny - 1))
        boundary = np.flatnonzero(w > 0)
        weights = w[boundary]
        idx = ix + nx * iy
        mx = ix < nx - 1
        my = iy < ny - 1
        left = np.concatenate([idx[mx], idx[my]])
        right = np.concatenate([idx[mx] + 1, idx[my] + nx])
        axis = np.concatenate([np.zeros(mx.sum(), dtype=int), np.ones(my.sum(), dtype=int)])
        volume = hx * hy

    return SpatialGrid(
        dimension=dimension,
        extents=extents,
        cells=cells,
        spacing=spacing,
        cell_volume=float(volume),
        centers=centers,
        boundary_nodes=boundary,
        surface_weights=weights,
        face_left=left,
        face_right=right,
        face_axis=axis,
    )


# fixed probe directions for the ellipticity sandwich
_PROBES = {
    1: np.array([[1.0]]),
    2: np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0], [2.0, 1.0], [1.0, 3.0]]),
}


@dataclass(frozen=True, eq=False)
class EllipticCoefficients:
    """Per-cell diffusion tensors with declared ellipticity bounds."""

    a: np.ndarray  # (N, d, d)
    lam: float
    Lam: float

    @classmethod
    def constant(cls, grid, a=1.0, lam=None, Lam=None):
        d = grid.dimension
        diag = np.broadcast_to(np.asarray(a, dtype=float), (d,))
        tensor = np.broadcast_to(np.diag(diag), (grid.n_cells, d, d)).copy()
        return cls.from_field(tensor, lam, Lam)

    @classmethod
    def from_field(cls, a, lam=None, Lam=None):
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None, None]
        eig = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))
        lam = float(eig.min()) if lam is None else float(lam)
        Lam = float(eig.max()) if Lam is None else float(Lam)
        return cls(a=a, lam=lam, Lam=Lam)

    def check(self, dimension):
        a = self.a
        if a.shape[1:] != (dimension, dimension):
            raise EllipticityError(f"tensor shape {a.shape[1:]} does not match dimension {dimension}")
        if not np.array_equal(a, np.swapaxes(a, 1, 2)):
            raise EllipticityError("diffusion tensor is not symmetric")
        if self.lam <= 0 or self.Lam < self.lam:
            raise EllipticityError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        xi = _PROBES[dimension]
        quad = np.einsum("pi,nij,pj->np", xi, a, xi)
        norm2 = np.sum(xi**2, axis=1)
        slack = 1e-12 * norm2 * max(1.0, self.Lam)
        if np.any(quad < self.lam * norm2 - slack) or np.any(quad > self.Lam * norm2 + slack):
            raise EllipticityError(
                "uniform ellipticity violated: probe directions leave "
                f"[{self.lam}, {self.Lam}] (observed {quad.min() / norm2.max():.4g} .. "
                f"{quad.max() / norm2.min():.4g})"
            )


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    grid: SpatialGrid
    coeff: EllipticCoefficients
    L: sp.csr_matrix
    div: sp.csr_matrix  # (N, N*d): interior-face divergence of a cell vector field
    transmissibility: np.ndarray

    def face_jumps(self, u):
        """``u_right - u_left`` on every interior face (last axis indexes cells)."""
        u = np.asarray(u, dtype=float)
        return u[..., self.grid.face_right] - u[..., self.grid.face_left]

    def apply(self, u):
        """``L u`` in flux form, so constant fields map to exactly zero."""
        g = self.grid
        flux = self.transmissibility * self.face_jumps(u)
        return np.bincount(g.face_left, flux, g.n_cells) - np.bincount(g.face_right, flux, g.n_cells)

    def boundary_source(self, l_values):
        """Cell source for co-normal flux data given on the boundary nodes."""
        g = self.grid
        b = np.zeros(g.n_cells)
        b[g.boundary_nodes] = np.asarray(l_values) * g.surface_weights / g.cell_volume
        return b

    def divergence(self, gfield):
        return self.div @ np.asarray(gfield, dtype=float).reshape(-1)

    def flux_pairing(self, gfield, phi):
        """Discrete ``sum_i (g^i, d_i phi)``; equals ``-(div g, phi)`` by construction."""
        return -float(self.divergence(gfield) @ phi) * self.grid.cell_volume

    def cell_gradient(self, u):
        """Central differences in the interior, one-sided in boundary cells."""
        g = self.grid
        u = np.asarray(u, dtype=float)
        lead = u.shape[:-1]
        U = u.reshape(lead + tuple(g.cells[::-1]))
        out = np.empty(lead + (g.n_cells, g.dimension))
        for ax in range(g.dimension):
            axis = U.ndim - 1 - ax
            h = g.spacing[ax]
            D = np.empty_like(U)
            mid = [slice(None)] * U.ndim
            fwd, bwd = list(mid), list(mid)
            mid[axis], fwd[axis], bwd[axis] = slice(1, -1), slice(2, None), slice(None, -2)
            D[tuple(mid)] = (U[tuple(fwd)] - U[tuple(bwd)]) / (2 * h)
            for i, a, b in ((0, 1, 0), (-1, -1, -2)):
                sl, sa, sb = list(mid), list(mid), list(mid)
                sl[axis], sa[axis], sb[axis] = i, a, b
                D[tuple(sl)] = (U[tuple(sa)] - U[tuple(sb)]) / h
            out[..., ax] = D.reshape(lead + (g.n_cells,))
        return out

    def implicit_system(self, dt):
        return _implicit_system(self, float(dt))


def assemble_operator(grid, coeff):
    """Two-point flux assembly with harmonic face averages."""
    coeff.check(grid.dimension)
    d = grid.dimension
    if d == 2:
        off = coeff.a[:, 0, 1]
        if np.any(off != 0.0):
            raise EllipticityError("2D operator supports diagonal diffusion tensors only")
    n = grid.n_cells
    i, j, ax = grid.face_left, grid.face_right, grid.face_axis
    ai = coeff.a[i, ax, ax]
    aj = coeff.a[j, ax, ax]
    a_face = 2.0 * ai * aj / (ai + aj)
    h = np.asarray(grid.spacing)[ax]
    t = a_face / h**2

    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([t, t, -t, -t])
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    L.sum_duplicates()

    # face value 1/2 (g_i + g_j) of the face-normal component
    drows = np.concatenate([i, i, j, j])
    dcols = np.concatenate([i * d + ax, j * d + ax, i * d + ax, j * d + ax])
    dvals = np.concatenate([0.5 / h, 0.5 / h, -0.5 / h, -0.5 / h])
    div = sp.csr_matrix((dvals, (drows, dcols)), shape=(n, n * d))
    div.sum_duplicates()
    return DiscreteOperator(grid=grid, coeff=coeff, L=L, div=div, transmissibility=t)


def dirichlet_form(op, u, v=None):
    """Volume-weighted ``E(u, v) = -u^T L v dx``; ``E(u)`` when ``v`` is omitted."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    n = op.grid.n_cells
    if u.shape[-1] != n or v.shape[-1] != n:
        raise GridError(f"field length {u.shape[-1]}/{v.shape[-1]} does not match {n} cells")
    if u.ndim != 1 or v.ndim != 1:
        raise GridError("dirichlet_form takes single fields; use energies() for stacks")
    return float(np.sum(op.transmissibility * op.face_jumps(u) * op.face_jumps(v)) * op.grid.cell_volume)


def energies(op, values):
    """``E(u_k)`` for every row of a stacked trajectory."""
    jumps = op.face_jumps(values)
    return np.sum(op.transmissibility * jumps * jumps, axis=-1) * op.grid.cell_volume


def l2_inner(grid, u, v):
    return float(np.dot(u, v) * grid.cell_volume)


def boundary_integral(grid, u, w):
    """``int_{dO} u w dsigma`` with ``w`` given on the boundary nodes."""
    w = np.asarray(w, dtype=float)
    if w.shape != grid.boundary_nodes.shape:
        raise GridError(f"boundary field has {w.size} entries, grid has {grid.boundary_nodes.size} boundary nodes")
    u = np.asarray(u, dtype=float)
    return float(np.sum(u[grid.boundary_nodes] * w * grid.surface_weights))


def _trace_ratio(op, u):
    g = op.grid
    num = boundary_integral(g, u * u, np.ones_like(g.surface_weights))
    den = l2_inner(g, u, u) + dirichlet_form(op, u)
    if den <= 0:
        return 0.0
    return float(np.sqrt(num / den))


def trace_norm_estimate(grid, op, trials, seed=0):
    """Empirical ``||Tr||`` from the constant field plus ``trials`` random fields.

    Random fields are smoothed noise at random diffusion lengths, seeded either
    in the whole domain or on the boundary nodes only, so the sample covers
    rough, smooth and boundary-concentrated profiles.  The same seed
    yields a nested sample, so the estimate is nondecreasing in ``trials``.
    """
    best = _trace_ratio(op, np.ones(grid.n_cells))
    rng = np.random.default_rng(seed)
    for _ in range(int(trials)):
        u = rng.standard_normal(grid.n_cells)
        if rng.random() < 0.5:
            mask = np.zeros(grid.n_cells)
            mask[grid.boundary_nodes] = 1.0
            u = np.abs(u) * mask
        tau = 10.0 ** rng.uniform(-5, 0)
        u = spla.spsolve((sp.identity(grid.n_cells) - tau * op.L).tocsc(), u)
        if np.any(u):
            best = max(best, _trace_ratio(op, u))
    return best


class ImplicitSystem:
    """Solver for ``(I - dt L) u = rhs``, optionally with an implicit penalty.

    The penalized system is ``(I - dt L) u + w min(u - S, 0) = rhs`` with
    ``w = dt * n``; it is solved by semi-smooth Newton, whose iterates rise
    monotonically from the unpenalized solution.
    """

    def __init__(self, op, dt):
        self.op = op
        self.dt = dt
        n = op.grid.n_cells
        self.matrix = (sp.identity(n, format="csr") - dt * op.L).tocsc()
        self.banded = op.grid.dimension == 1
        if self.banded:
            d = self.matrix.diagonal()
            self.diag = np.ascontiguousarray(d)
            self.sup = np.zeros(n)
            self.sub = np.zeros(n)
            self.sup[:-1] = self.matrix.diagonal(1)
            self.sub[1:] = self.matrix.diagonal(-1)
        else:
            self._lu = spla.splu(self.matrix)

    def solve(self, rhs):
        rhs = np.ascontiguousarray(rhs, dtype=float)
        if self.banded:
            return kernels.tridiag_solve(self.sub, self.diag, self.sup, rhs)
        return self._lu.solve(rhs)

    def solve_penalized(self, rhs, obstacle, weight, max_iter=50, tol=1e-10):
        """Returns ``(u, iterations, converged)``."""
        rhs = np.ascontiguousarray(rhs, dtype=float)
        obstacle = np.ascontiguousarray(obstacle, dtype=float)
        if self.banded:
            return kernels.penalized_tridiag_solve(
                self.sub, self.diag, self.sup, rhs, obstacle, float(weight), int(max_iter), float(tol)
            )
        u = self._lu.solve(rhs)
        for it in range(1, max_iter + 1):
            active = (u < obstacle).astype(float)
            A = self.matrix + sp.diags(weight * active, format="csc")
            unew = spla.spsolve(A, rhs + weight * active * obstacle)
            delta = np.max(np.abs(unew - u))
            u = unew
            if delta <= tol:
                return u, it, True
        return u, max_iter, False


@lru_cache(maxsize=64)
def _implicit_system(op, dt):
    return ImplicitSystem(op, dt)
