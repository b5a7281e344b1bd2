import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ospde import _kernels_py, kernels

cy = pytest.importorskip("ospde._kernels")


def system(n, seed):
    rng = np.random.default_rng(seed)
    sub, sup = rng.uniform(-1, 0, (2, n))
    diag = 1 + np.abs(sub) + np.abs(sup) + rng.uniform(0, 1, n)
    return sub, diag, sup, rng.normal(size=n)


def test_backend_is_compiled():
    assert kernels.BACKEND == "cython"


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 80), st.integers(0, 2**31))
def test_tridiag_parity(n, seed):
    sub, diag, sup, rhs = system(n, seed)
    a = cy.tridiag_solve(sub, diag, sup, rhs)
    b = _kernels_py.tridiag_solve(sub, diag, sup, rhs)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    A = np.diag(diag) + np.diag(sub[1:], -1) + np.diag(sup[:-1], 1)
    np.testing.assert_allclose(A @ a, rhs, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31), st.floats(1e-2, 1e4))
def test_penalized_parity(n, seed, weight):
    sub, diag, sup, rhs = system(n, seed)
    S = np.random.default_rng(seed + 1).normal(size=n)
    ua, ia, oka = cy.penalized_tridiag_solve(sub, diag, sup, rhs, S, weight, 50, 1e-12)
    ub, ib, okb = _kernels_py.penalized_tridiag_solve(sub, diag, sup, rhs, S, weight, 50, 1e-12)
    assert oka and okb and ia == ib
    np.testing.assert_allclose(ua, ub, rtol=1e-10, atol=1e-10)


def test_unused_band_entries_ignored():
    sub, diag, sup, rhs = system(6, 0)
    s2, p2 = sub.copy(), sup.copy()
    s2[0], p2[-1] = 99.0, -99.0
    for mod in (cy, _kernels_py):
        np.testing.assert_array_equal(mod.tridiag_solve(sub, diag, sup, rhs), mod.tridiag_solve(s2, diag, p2, rhs))


def test_pure_python_switch(monkeypatch):
    import importlib

    monkeypatch.setenv("OSPDE_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.tridiag_solve is _kernels_py.tridiag_solve
    finally:
        monkeypatch.delenv("OSPDE_PURE_PYTHON")
        importlib.reload(kernels)
