import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from semimatch import fields
from semimatch.fields import ResolutionError, ScalarField
from semimatch.geometry import Domain, Grid
from semimatch.heat import (
    PointCloud,
    check_resolution,
    clamp_density,
    heat_evolve,
    matching_field,
    poisson_then_heat,
    required_resolution,
    sample_cloud,
    solve_poisson,
)

T = Domain.torus()
S = Domain.square()


def image_sum_kernel(x, p, t, reach=3):
    out = np.zeros(x.shape[:-1])
    for m1 in range(-reach, reach + 1):
        for m2 in range(-reach, reach + 1):
            if m1 * m1 + m2 * m2 > reach * reach:
                continue
            d = x - p + np.array([m1, m2])
            out += np.exp(-np.sum(d * d, -1) / (4 * t)) / (4 * np.pi * t)
    return out


def test_cloud_determinism_and_errors(domain):
    a, b = sample_cloud(domain, 100, 42), sample_cloud(domain, 100, 42)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, sample_cloud(domain, 100, 43).points)
    with pytest.raises(ValueError):
        sample_cloud(domain, 0, 1)


def test_cloud_uniformity():
    c = sample_cloud(T, 100_000, 5)
    assert np.all(np.abs(c.points.mean(0) - 0.5) < 0.01)
    counts = np.histogram2d(c.points[:, 0], c.points[:, 1], bins=8, range=[[0, 1], [0, 1]])[0]
    chi2 = np.sum((counts - c.n / 64) ** 2 / (c.n / 64))
    assert chi2 < stats.chi2.ppf(0.999, 63)


def test_heat_matches_image_sum_kernel():
    g = Grid(T, 128)
    p = np.array([0.3, 0.7])
    rho = heat_evolve(PointCloud(T, p[None]), 0.01, g)
    assert np.abs(rho.values - image_sum_kernel(g.centers, p, 0.01)).max() < 1e-8


def test_heat_equilibrium_at_large_time(domain):
    g = Grid(domain, 64)
    rho = heat_evolve(sample_cloud(domain, 30, 1), 10.0, g)
    assert np.abs(rho.values - 1).max() < 1e-10
    _, grad = matching_field(sample_cloud(domain, 30, 1), 10.0, g)
    assert grad.sup_norm() < 1e-8


def test_single_atom_symmetry():
    g = Grid(T, 64)
    v = heat_evolve(PointCloud(T, [[0.5, 0.5]]), 0.005, g).values
    np.testing.assert_allclose(v, v[::-1, ::-1], atol=1e-12)
    i, j = np.unravel_index(np.argmax(v), v.shape)
    assert (i, j) in {(31, 31), (31, 32), (32, 31), (32, 32)}


def test_under_resolved_reports_required_N():
    t = 1e-3
    need = required_resolution(t)
    assert np.exp(-4 * np.pi**2 * (need / 2) ** 2 * t) < 1e-14
    with pytest.raises(ResolutionError, match=str(need)):
        heat_evolve(sample_cloud(T, 5, 0), t, Grid(T, need // 2))
    check_resolution(Grid(T, need), t)


def test_schedule_resolution_rule():
    # the heat time ln^4 n / n for n <= 1e4 is admitted on a 256 grid
    n = 10_000
    check_resolution(Grid(T, 256), np.log(n) ** 4 / n)


@given(st.integers(1, 50), st.integers(0, 10_000), st.sampled_from([1e-3, 1e-2, 0.1]),
       st.sampled_from(["torus", "square"]))
def test_mass_conservation_and_positivity(n, seed, t, kind):
    d = Domain(kind)
    g = Grid(d, 64)
    rho = heat_evolve(sample_cloud(d, n, seed), t, g)
    assert abs(rho.mean() - 1) < 1e-12
    assert rho.values.min() >= -1e-8


@given(st.integers(0, 10_000), st.sampled_from(["torus", "square"]))
def test_heat_semigroup(seed, kind):
    d = Domain(kind)
    g = Grid(d, 64)
    c = sample_cloud(d, 20, seed)
    t1, t2 = 0.003, 0.005
    a = heat_evolve(c, t1 + t2, g)
    b = fields.apply_multiplier(heat_evolve(c, t1, g), np.exp(-fields.laplacian_eigenvalues(g) * t2))
    assert np.abs(a.values - b.values).max() < 1e-12


def test_maximum_principle_on_random_clouds():
    g = Grid(T, 64)
    for seed in range(10):
        c = sample_cloud(T, 10, 100 + seed)
        r1 = heat_evolve(c, 0.005, g).values
        r2 = heat_evolve(c, 0.01, g).values
        i = np.unravel_index(np.argmax(r1), r1.shape)
        assert r1.min() >= -1e-8
        assert r2[i] <= r1[i]


def test_poisson_examples(domain):
    g = Grid(domain, 64)
    assert np.abs(solve_poisson(ScalarField(g, np.ones(g.shape))).values).max() == 0
    gt = Grid(T, 256)
    rho = fields.from_function(gt, lambda x, y: 1 + np.cos(2 * np.pi * x))
    f = solve_poisson(rho)
    exact = np.cos(2 * np.pi * gt.centers[..., 0]) / (4 * np.pi**2)
    assert np.abs(f.values - exact).max() / np.abs(exact).max() < 1e-10


@given(st.integers(0, 10_000), st.sampled_from(["torus", "square"]))
def test_poisson_residual(seed, kind):
    d = Domain(kind)
    g = Grid(d, 32)
    rho = heat_evolve(sample_cloud(d, 15, seed), 0.02, g)
    f = solve_poisson(rho)
    assert abs(f.mean()) < 1e-12
    resid = -fields.laplacian(f).values - (rho.values - 1)
    assert np.abs(resid).max() <= 1e-10 * max(1.0, np.abs(rho.values - 1).max())


def test_poisson_rejects_wrong_mass():
    g = Grid(T, 16)
    with pytest.raises(ValueError):
        solve_poisson(ScalarField(g, np.full(g.shape, 1.1)))


@given(st.integers(0, 10_000), st.sampled_from(["torus", "square"]))
def test_heat_and_poisson_commute(seed, kind):
    d = Domain(kind)
    g = Grid(d, 64)
    c = sample_cloud(d, 25, seed)
    f, _ = matching_field(c, 0.01, g)
    assert np.abs(f.values - poisson_then_heat(c, 0.01, g).values).max() < 1e-12


def test_energy_identity(domain):
    g = Grid(domain, 64)
    f, _ = matching_field(sample_cloud(domain, 30, 8), 0.01, g)
    e1, e2 = fields.dirichlet_energy(f), fields.dirichlet_energy_quadrature(f)
    assert abs(e1 - e2) / e1 < 1e-8


def test_schedule_energy_is_finite_and_positive():
    n = 1024
    t = np.log(n) ** 4 / n
    f, _ = matching_field(sample_cloud(T, n, 3), t, Grid(T, 256))
    assert 0 < fields.dirichlet_energy(f) < np.inf


def test_clamp_density():
    g = Grid(T, 4)
    v = np.ones((4, 4))
    v[0, 0] = -5e-9
    v[0, 1] += 5e-9
    c, under = clamp_density(ScalarField(g, v))
    assert under == pytest.approx(5e-9)
    assert c.values.min() >= 0 and abs(c.mean() - 1) < 1e-15
    v[0, 0] = -1e-6
    with pytest.raises(ValueError):
        clamp_density(ScalarField(g, v))


@pytest.mark.parametrize("t", [0.002, 0.02])
def test_matching_field_is_heat_then_poisson(domain, t):
    g = Grid(domain, 128)
    c = sample_cloud(domain, 40, 9)
    f, grad = matching_field(c, t, g)
    ref = solve_poisson(heat_evolve(c, t, g))
    assert np.abs(f.values - ref.values).max() < 1e-12
    np.testing.assert_array_equal(grad.values, fields.gradient(f).values)
