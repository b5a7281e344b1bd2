"""Nonlinear coefficients (f, g, h, l), problem data, and assumption checks.

Coefficient callables are vectorized over nodes: ``t`` is a scalar, ``x`` an
``(N, d)`` array of positions, ``y`` an ``(N,)`` array of solution values and
``z`` an ``(N, d)`` array of gradients.  The boundary coefficient ``l``
receives ``z = None``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import GridError


class ContractionError(ValueError):
    """The contraction property 2 alpha + beta^2 + 2 ||Tr||^2 theta < 2 lambda fails."""


class AssumptionError(ValueError):
    pass


def _zsum(z):
    if z is None:
        return 0.0
    return z[..., 0] if z.shape[-1] == 1 else z.sum(axis=-1)


class Coefficient:
    """Scalar coefficient ``c(t, x, y, z)`` with analytic Lipschitz bounds.

    ``lip_y`` bounds the slope in ``y``.  ``lip_z`` bounds the slope in each
    gradient component, so the Euclidean bound in ``z`` is ``lip_z * sqrt(d)``.
    A coefficient with ``uses_omega`` receives the path seed as ``omega``.
    """

    def __init__(self, func, lip_y=0.0, lip_z=0.0, name="custom", params=None,
                 state_dependent=True, uses_omega=False):
        self.func = func
        self.lip_y = float(lip_y)
        self.lip_z = float(lip_z)
        self.name = name
        self.params = dict(params or {})
        self.state_dependent = bool(state_dependent)
        self.uses_omega = bool(uses_omega)

    def __call__(self, t, x, y, z=None, omega=None):
        if self.uses_omega:
            out = self.func(t, x, y, z, omega=omega)
        else:
            out = self.func(t, x, y, z)
        shape = np.shape(y)
        if isinstance(out, np.ndarray) and out.shape == shape and out.dtype == np.float64:
            return out
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def shifted(self, delta):
        """Same coefficient plus a constant."""
        inner = self
        return Coefficient(
            lambda t, x, y, z, omega=None: inner(t, x, y, z, omega=omega) + delta,
            inner.lip_y, inner.lip_z, name=f"{inner.name}+{delta:g}", params=inner.params,
            state_dependent=inner.state_dependent, uses_omega=True,
        )

    def __repr__(self):
        return f"Coefficient({self.name!r}, {self.params})"


def _profile(x, params):
    kind = params.get("profile", "uniform")
    if kind == "uniform":
        return 1.0
    if kind == "cos":
        k = params.get("k", 1)
        length = params.get("L", 1.0)
        return np.prod(np.cos(k * np.pi * np.atleast_2d(x) / length), axis=-1)
    raise ValueError(f"unknown profile {kind!r}")


def _rate(t, params):
    return params.get("rate", 0.0) * t


def _zero(**params):
    return Coefficient(lambda t, x, y, z: 0.0, name="zero", params=params, state_dependent=False)


def _constant(c=0.0, **params):
    params = dict(params, c=c)
    return Coefficient(
        lambda t, x, y, z: (c + _rate(t, params)) * _profile(x, params),
        name="constant", params=params, state_dependent=False,
    )


def _linear(c=0.0, a=0.0, b=0.0, **params):
    params = dict(params, c=c, a=a, b=b)
    return Coefficient(
        lambda t, x, y, z: (c + _rate(t, params) + a * y + b * _zsum(z)) * _profile(x, params),
        lip_y=abs(a), lip_z=abs(b), name="linear", params=params,
        state_dependent=bool(a or b),
    )


def _sine(c=0.0, amp=1.0, a=1.0, b=0.0, **params):
    params = dict(params, c=c, amp=amp, a=a, b=b)
    return Coefficient(
        lambda t, x, y, z: (c + _rate(t, params) + amp * np.sin(a * y + b * _zsum(z))) * _profile(x, params),
        lip_y=abs(amp * a), lip_z=abs(amp * b), name="sine", params=params,
        state_dependent=bool(amp and (a or b)),
    )


def _clipped_linear(c=0.0, a=0.0, b=0.0, lo=-1.0, hi=1.0, **params):
    if lo > hi:
        raise ValueError(f"clipped-linear needs lo <= hi, got {lo} > {hi}")
    params = dict(params, c=c, a=a, b=b, lo=lo, hi=hi)
    return Coefficient(
        lambda t, x, y, z: (c + _rate(t, params) + np.clip(a * y + b * _zsum(z), lo, hi)) * _profile(x, params),
        lip_y=abs(a), lip_z=abs(b), name="clipped-linear", params=params,
        state_dependent=bool(a or b),
    )


COEFFICIENTS = {
    "zero": _zero,
    "constant": _constant,
    "linear": _linear,
    "sine": _sine,
    "clipped-linear": _clipped_linear,
}


def register_coefficient(name, factory):
    """Add a named coefficient factory; the factory returns a :class:`Coefficient`."""
    if name in COEFFICIENTS:
        raise ValueError(f"coefficient {name!r} already registered")
    COEFFICIENTS[name] = factory


def make_coefficient(spec):
    """Build a coefficient from ``{"name": ..., **params}``, a number, or a Coefficient."""
    if isinstance(spec, Coefficient):
        return spec
    if spec is None:
        return _zero()
    if isinstance(spec, (int, float)):
        return _constant(c=float(spec))
    spec = dict(spec)
    name = spec.pop("name")
    if name not in COEFFICIENTS:
        raise KeyError(f"unknown coefficient {name!r}; available: {sorted(COEFFICIENTS)}")
    return COEFFICIENTS[name](**spec)


ZERO = _zero()


@dataclass(frozen=True)
class Constants:
    C: float
    alpha: float
    beta: float
    theta: float

    def __post_init__(self):
        for k in ("C", "alpha", "beta", "theta"):
            if getattr(self, k) < 0:
                raise ValueError(f"declared constant {k} must be nonnegative, got {getattr(self, k)}")


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """The nonlinear data of the equation plus declared Lipschitz constants.

    ``h`` lists the noise components; components beyond ``len(h)`` are zero and
    ``|h|^2`` always means the sum over the retained components.
    """

    f: Coefficient = ZERO
    g: tuple = ()
    h: tuple = ()
    l: Coefficient = ZERO
    declared: Constants = None

    @classmethod
    def build(cls, f=None, g=(), h=(), l=None, declared=None):
        if isinstance(g, (dict, Coefficient)):
            g = (g,)
        if isinstance(h, (dict, Coefficient)):
            h = (h,)
        if isinstance(declared, dict):
            declared = Constants(**declared)
        return cls(
            f=make_coefficient(f),
            g=tuple(make_coefficient(c) for c in g),
            h=tuple(make_coefficient(c) for c in h),
            l=make_coefficient(l),
            declared=declared,
        )

    @property
    def state_dependent(self):
        return any(c.state_dependent for c in (self.f, self.l, *self.g, *self.h))

    def analytic_constants(self, d):
        sd = np.sqrt(d)
        gy = np.hypot.reduce([c.lip_y for c in self.g]) if self.g else 0.0
        gz = np.hypot.reduce([c.lip_z for c in self.g]) * sd if self.g else 0.0
        hy = np.hypot.reduce([c.lip_y for c in self.h]) if self.h else 0.0
        hz = np.hypot.reduce([c.lip_z for c in self.h]) * sd if self.h else 0.0
        C = max(self.f.lip_y, self.f.lip_z * sd, gy, hy)
        return Constants(C=float(C), alpha=float(gz), beta=float(hz), theta=self.l.lip_y)

    def constants(self, d):
        return self.declared if self.declared is not None else self.analytic_constants(d)

    # evaluation -------------------------------------------------------------
    def eval_f(self, t, x, y, z, omega=None):
        return self.f(t, x, y, z, omega=omega)

    def eval_g(self, t, x, y, z, d, omega=None):
        out = np.zeros((np.size(y), d))
        for i, c in enumerate(self.g[:d]):
            out[:, i] = c(t, x, y, z, omega=omega)
        return out

    def eval_h(self, t, x, y, z, J, omega=None):
        out = np.zeros((np.size(y), J))
        for j, c in enumerate(self.h[:J]):
            out[:, j] = c(t, x, y, z, omega=omega)
        return out

    def eval_l(self, t, xb, yb, omega=None):
        return self.l(t, xb, yb, None, omega=omega)

    def with_(self, **changes):
        return replace(self, **changes)


# fields -----------------------------------------------------------------------

def make_field(grid, spec):
    """Nodal field from an array, a number, or ``{"name": ..., **params}``.

    Names: constant (c), cosine (c + amp * prod cos(k pi x / L)), gaussian
    (c + amp * exp(-|x - center|^2 / (2 width^2))), linear (c + sum slope_a x_a).
    """
    n = grid.n_cells
    if spec is None:
        return np.zeros(n)
    if isinstance(spec, (int, float)):
        return np.full(n, float(spec))
    if not isinstance(spec, dict):
        arr = np.asarray(spec, dtype=float)
        if arr.shape != (n,):
            raise GridError(f"field has shape {arr.shape}, grid has {n} cells")
        return arr.copy()
    spec = dict(spec)
    name = spec.pop("name")
    x = grid.centers
    L = np.asarray(grid.extents)
    c = spec.get("c", 0.0)
    if name == "constant":
        return np.full(n, float(c))
    if name == "cosine":
        k = spec.get("k", 1)
        return c + spec.get("amp", 1.0) * np.prod(np.cos(k * np.pi * x / L), axis=1)
    if name == "gaussian":
        center = np.broadcast_to(np.asarray(spec.get("center", L / 2), dtype=float), (grid.dimension,))
        w = spec.get("width", 0.1)
        return c + spec.get("amp", 1.0) * np.exp(-np.sum((x - center) ** 2, axis=1) / (2 * w * w))
    if name == "linear":
        slope = np.broadcast_to(np.asarray(spec.get("slope", 1.0), dtype=float), (grid.dimension,))
        return c + x @ slope
    raise KeyError(f"unknown field {name!r}")


# problem ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    """Lower obstacle S, either given directly or dominated by a driving SPDE.

    direct: ``values`` is a nodal field, a ``(steps + 1, N)`` array, or a
    callable ``S(t, x) -> (N,)``.
    driven: ``S = S' + offset`` where ``S'`` solves the linear equation with
    ``coefficients`` from ``S0``; ``offset <= 0`` keeps ``S <= S'``.
    """

    mode: str
    values: object = None
    coefficients: CoefficientSet = None
    S0: np.ndarray = None
    offset: object = 0.0

    def __post_init__(self):
        if self.mode not in ("direct", "driven"):
            raise ValueError(f"obstacle mode must be 'direct' or 'driven', got {self.mode!r}")
        if self.mode == "driven":
            if self.coefficients is None or self.S0 is None:
                raise ValueError("driven obstacle needs coefficients and S0")
            if np.any(np.asarray(self.offset) > 0):
                raise ValueError("driven obstacle offset must be <= 0 so that S <= S'")

    def initial(self, grid):
        if self.mode == "driven":
            return np.asarray(self.S0, dtype=float) + self.offset
        v = self.values
        if callable(v):
            return np.asarray(v(0.0, grid.centers), dtype=float)
        v = np.asarray(v, dtype=float)
        return v[0] if v.ndim == 2 else v


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: object
    op: object
    coefficients: CoefficientSet
    xi: np.ndarray
    T: float
    dt: float
    J: int = 8
    obstacle: ObstacleSpec = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(f"T / dt = {ratio} is not a positive integer")
        xi = np.asarray(self.xi, dtype=float)
        if xi.shape != (self.grid.n_cells,):
            raise GridError(f"initial datum has shape {xi.shape}, grid has {self.grid.n_cells} cells")
        object.__setattr__(self, "xi", xi)
        if self.obstacle is not None and np.any(self.obstacle.initial(self.grid) > xi):
            bad = int(np.argmax(self.obstacle.initial(self.grid) - xi))
            raise AssumptionError(f"S_0 <= xi violated at node {bad}")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def d(self):
        return self.grid.dimension

    def times(self):
        return np.arange(self.steps + 1) * self.dt

    def with_(self, **changes):
        return replace(self, **changes)


# assumption checks --------------------------------------------------------------

@dataclass(frozen=True)
class ContractionVerdict:
    passed: bool
    margin: float

    def __bool__(self):
        return self.passed


def contraction_margin(alpha, beta, theta, lam, trace_norm):
    for name, v in (("alpha", alpha), ("beta", beta), ("theta", theta), ("trace_norm", trace_norm)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return 2.0 * lam - (2.0 * alpha + beta**2 + 2.0 * trace_norm**2 * theta)


def validate_contraction(coeff, lam, trace_norm, d=1):
    """Margin ``m = 2 lambda - (2 alpha + beta^2 + 2 ||Tr||^2 theta)``; passes iff m > 0.

    ``coeff`` may be a :class:`CoefficientSet` or a :class:`Constants`.
    """
    k = coeff if isinstance(coeff, Constants) else coeff.constants(d)
    m = contraction_margin(k.alpha, k.beta, k.theta, lam, trace_norm)
    return ContractionVerdict(passed=bool(m > 0), margin=float(m))


def require_contraction(coeff, lam, trace_norm, d=1, safety=0.05):
    verdict = validate_contraction(coeff, lam, trace_norm, d)
    if verdict.margin <= safety:
        raise ContractionError(
            f"contraction property fails: margin {verdict.margin:.4g} <= safety {safety:g} "
            f"(lambda={lam:g}, ||Tr||={trace_norm:.4g})"
        )
    return verdict


@dataclass
class LipschitzReport:
    entries: list = field(default_factory=list)

    @property
    def violations(self):
        return [e for e in self.entries if e["violated"]]

    @property
    def ok(self):
        return not self.violations

    def observed(self, coefficient, argument):
        for e in self.entries:
            if e["coefficient"] == coefficient and e["argument"] == argument:
                return e["observed"]
        raise KeyError((coefficient, argument))


def probe_lipschitz(coeff, probes, seed=0, d=1, extents=None, rtol=1e-9):
    """Largest observed difference quotients against the declared constants.

    Pairs perturb either ``y`` alone or ``z`` alone, so slopes in each argument
    are measured separately.  Violations are report entries, never exceptions.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    L = np.ones(d) if extents is None else np.asarray(extents, dtype=float)
    k = coeff.constants(d)
    n = int(probes)
    t = float(rng.uniform(0, 1))
    x = rng.uniform(0, 1, (n, d)) * L
    y = rng.normal(0, 3, n)
    z = rng.normal(0, 3, (n, d))
    scale = 10.0 ** rng.uniform(-4, 0.5, n)
    dy = rng.choice([-1.0, 1.0], n) * scale
    dz = rng.normal(0, 1, (n, d))
    dz *= (scale / np.linalg.norm(dz, axis=1))[:, None]
    ndz = np.linalg.norm(dz, axis=1)

    eps = np.finfo(float).eps

    def quotient(fa, fb, step):
        # observed slope, and the slope less a rounding bound on the difference
        num = np.linalg.norm((fa - fb).reshape(n, -1), axis=1)
        mag = np.abs(fa).reshape(n, -1).max(axis=1) + np.abs(fb).reshape(n, -1).max(axis=1)
        r = num / step
        return float(r.max()), float(np.max(r - 8 * eps * mag / step))

    def ratios(fn, with_z=True):
        base = fn(t, x, y, z)
        ry = quotient(fn(t, x, y + dy, z), base, np.abs(dy))
        if not with_z:
            return ry, None
        return ry, quotient(fn(t, x, y, z + dz), base, ndz)

    def _f(t, x, y, z):
        return coeff.eval_f(t, x, y, z)

    def _g(t, x, y, z):
        return coeff.eval_g(t, x, y, z, d)

    def _h(t, x, y, z):
        return coeff.eval_h(t, x, y, z, max(len(coeff.h), 1))

    def _l_eval(t, x, y, z):
        return coeff.eval_l(t, x, y)

    report = LipschitzReport()

    def add(name, arg, obs, declared):
        observed, floor = obs
        report.entries.append({
            "coefficient": name, "argument": arg, "observed": observed, "declared": declared,
            "violated": bool(floor > declared * (1 + rtol) + 1e-12),
        })

    fy, fz = ratios(_f)
    add("f", "y", fy, k.C)
    add("f", "z", fz, k.C)
    gy, gz = ratios(_g)
    add("g", "y", gy, k.C)
    add("g", "z", gz, k.alpha)
    hy, hz = ratios(_h)
    add("h", "y", hy, k.C)
    add("h", "z", hz, k.beta)
    ly, _ = ratios(_l_eval, with_z=False)
    add("l", "y", ly, k.theta)
    return report


@dataclass
class IntegrabilityReport:
    passed: bool
    norms: dict
    location: tuple = None


def validate_integrability(spec):
    """Discrete ``int_0^T (|f0|^2 + |g0|^2 + |h0|^2 + |l0|^2_{dO}) dt`` on the lattice.

    Zero-state coefficients are evaluated at the left endpoints t_0..t_{K-1};
    any non-finite value fails the check with its (time index, node).
    """
    g = spec.grid
    c = spec.coefficients
    x = g.centers
    xb = x[g.boundary_nodes]
    y0 = np.zeros(g.n_cells)
    z0 = np.zeros((g.n_cells, g.dimension))
    yb0 = np.zeros(g.boundary_nodes.size)
    norms = {"xi": float(np.sum(spec.xi**2) * g.cell_volume), "f0": 0.0, "g0": 0.0, "h0": 0.0, "l0": 0.0}
    for k, t in enumerate(spec.times()[:-1]):
        vals = {
            "f0": c.eval_f(t, x, y0, z0),
            "g0": c.eval_g(t, x, y0, z0, g.dimension),
            "h0": c.eval_h(t, x, y0, z0, spec.J),
        }
        lb = c.eval_l(t, xb, yb0)
        for name, v in (*vals.items(), ("l0", lb)):
            bad = ~np.isfinite(v)
            if np.any(bad):
                node = int(np.argwhere(bad)[0][0])
                if name == "l0":
                    node = int(g.boundary_nodes[node])
                return IntegrabilityReport(False, norms, (name, k, node))
        for name, v in vals.items():
            norms[name] += float(np.sum(v**2)) * g.cell_volume * spec.dt
        norms["l0"] += float(np.sum(lb**2 * g.surface_weights)) * spec.dt
    norms["total"] = norms["f0"] + norms["g0"] + norms["h0"] + norms["l0"]
    return IntegrabilityReport(True, norms)
