import pytest

from ospde.coefficients import CoefficientSet, ObstacleSpec, ProblemSpec, make_field
from ospde.grid import EllipticCoefficients, assemble_operator, build_grid


def line(cells=32, length=1.0, a=1.0):
    g = build_grid(1, [length], [cells])
    return g, assemble_operator(g, EllipticCoefficients.constant(g, a=a))


def make_spec(cells=32, T=1.0, dt=1e-2, J=0, xi=0.0, obstacle=None, a=1.0, **coeffs):
    g, op = line(cells, a=a)
    if obstacle is not None and not isinstance(obstacle, ObstacleSpec):
        obstacle = ObstacleSpec("direct", values=make_field(g, obstacle))
    return ProblemSpec(g, op, CoefficientSet.build(**coeffs), make_field(g, xi), T, dt, J=J, obstacle=obstacle)


# quasilinear scenario with an active obstacle: state-dependent f, g and h
QUASILINEAR = dict(
    f={"name": "sine", "amp": 0.5, "c": -2.0},
    g=[{"name": "linear", "a": 0.2}],
    h=[{"name": "linear", "c": 0.5, "a": 0.3}],
)
QL_XI = {"name": "cosine", "amp": 0.4, "c": 1.0}


@pytest.fixture
def unit_line():
    return line()
