import numpy as np
import pytest

from ospde.noise import antithetic, refinement_family, sample_path


def test_same_seed_same_path():
    a = sample_path(7, 2, 0.01, 100)
    b = sample_path(7, 2, 0.01, 100)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, sample_path(8, 2, 0.01, 100).increments)


def test_zero_components():
    p = sample_path(1, 0, 0.1, 10)
    assert p.increments.shape == (10, 0)
    assert p.values().shape == (11, 0)


def test_moments():
    dt, n = 0.01, 10**6
    x = sample_path(3, 1, dt, n).increments[:, 0]
    assert abs(x.mean()) <= 4 * np.sqrt(dt / n)
    assert abs(x.var() / dt - 1) <= 0.01


def test_columns_independent():
    steps = 40_000
    inc = sample_path(5, 3, 1e-3, steps).increments
    c = np.corrcoef(inc.T)
    off = c[~np.eye(3, dtype=bool)]
    assert np.max(np.abs(off)) <= 4 / np.sqrt(steps)


def test_quadratic_variation():
    dt, T = 1e-4, 1.0
    for seed in range(5):
        x = sample_path(seed, 1, dt, int(T / dt)).increments[:, 0]
        assert abs(np.sum(x**2) - T) <= 3 * np.sqrt(2 * dt * T)


def test_antithetic():
    p = sample_path(11, 2, 0.05, 20)
    q = antithetic(p)
    np.testing.assert_array_equal(q.increments, -p.increments)
    assert q.seed == p.seed and q.antithetic and not p.antithetic
    r = antithetic(q)
    np.testing.assert_array_equal(r.increments, p.increments)
    assert not r.antithetic
    # odd moments cancel exactly over the pair
    assert np.sum(p.increments**3) + np.sum(q.increments**3) == 0.0


def test_values_start_at_zero():
    p = sample_path(2, 2, 0.1, 5)
    v = p.values()
    assert np.all(v[0] == 0)
    np.testing.assert_allclose(np.diff(v, axis=0), p.increments)


def test_refinement_family_nested():
    fam = refinement_family(4, 2, 0.25 / 4, 16, 3)
    assert [p.dt for p in fam] == [0.25, 0.125, 0.0625]
    fine = fam[-1].values()
    for p in fam:
        step = int(round(p.dt / fam[-1].dt))
        np.testing.assert_allclose(p.values(), fine[::step], atol=1e-14)


@pytest.mark.parametrize("args", [(0, 1, 0.0, 5), (0, 1, -1.0, 5), (0, -1, 0.1, 5), (0, 1, 0.1, 0)])
def test_sample_path_rejects(args):
    with pytest.raises(ValueError):
        sample_path(*args)


def test_coarsen_rejects_non_divisor():
    with pytest.raises(ValueError):
        sample_path(0, 1, 0.1, 10).coarsen(3)
