import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semimatch import fields
from semimatch.discrete import discrete_ot_exact, grid_cells_as_points
from semimatch.fields import ResolutionError, ScalarField, VectorField
from semimatch.geometry import Domain, Grid, dist2
from semimatch.heat import PointCloud, clamp_density, heat_evolve, sample_cloud
from semimatch.semidiscrete import (
    AntipodalDisplacement,
    TransportMapGrid,
    WeightedPoints,
    cyclical_monotonicity_violation,
    grad_potential_from_map,
    linf_map_distance,
    load_assignment,
    map_l2_distance,
    pushforward_density,
    pushforward_sigma,
    solve_semidiscrete,
)
from semimatch.sinkhorn import sinkhorn_w2

T = Domain.torus()
S = Domain.square()


@pytest.fixture(scope="module")
def plan64():
    g = Grid(T, 64)
    c = sample_cloud(T, 40, 12)
    return g, c, solve_semidiscrete(c, g, 1e-8)


# -- solve_semidiscrete -------------------------------------------------------


def test_single_atom_cost_is_one_sixth():
    g = Grid(T, 256)
    for p in ([0.1, 0.2], [0.5, 0.5], [0.73, 0.01]):
        plan = solve_semidiscrete(PointCloud(T, [p]), g, 1e-8)
        assert plan.w2sq == pytest.approx(1 / 6, abs=1e-5)
        assert np.all(plan.assignment == 0)


def test_two_atom_strip_cost():
    g = Grid(T, 256)
    plan = solve_semidiscrete(PointCloud(T, [[0.25, 0.5], [0.75, 0.5]]), g, 1e-10)
    assert plan.w2sq == pytest.approx(5 / 48, abs=1e-5)
    assert abs(plan.weights[0] - plan.weights[1]) < 1e-12


def test_shift_invariance_on_the_torus():
    g = Grid(T, 64)
    c = sample_cloud(T, 30, 4)
    base = solve_semidiscrete(c, g, 1e-10)
    # a lattice shift is an exact symmetry of the raster problem
    k = (5, 11)
    shifted = PointCloud(T, T.canonicalize(c.points + np.array(k) * g.h))
    plan = solve_semidiscrete(shifted, g, 1e-10)
    assert abs(plan.w2sq - base.w2sq) < 1e-10
    moved = np.roll(base.assignment.reshape(g.shape), k, axis=(0, 1)).ravel()
    np.testing.assert_array_equal(plan.assignment, moved)
    # a generic shift moves the cost only at the discretisation scale
    other = solve_semidiscrete(c.translated([0.0123, 0.456]), g, 1e-10)
    assert abs(other.w2sq - base.w2sq) < 5 * g.h**2


def test_cell_masses_and_tolerance(domain):
    g = Grid(domain, 64)
    c = sample_cloud(domain, 50, 3)
    tol = 1e-3
    plan = solve_semidiscrete(c, g, tol)
    assert abs(plan.cell_masses.sum() - 1) < 1e-12
    assert np.abs(plan.cell_masses - 1 / 50).max() <= tol / 50
    assert abs(plan.weights.mean()) < 1e-15


def test_assignment_is_lowest_index_argmin(plan64):
    g, c, plan = plan64
    X = g.flat_centers()
    cost = dist2(T, X[:, None, :], c.points[None, :, :]) - plan.weights[None, :]
    np.testing.assert_array_equal(plan.assignment, np.argmin(cost, axis=1))


def test_dual_primal_sandwich(plan64):
    # the raster cost moves mass to the hard cell masses, not exactly to 1/n,
    # so only the two-sided Holder bound holds
    _, _, plan = plan64
    assert abs(plan.w2sq - plan.dual_value) <= plan.duality_gap_bound
    assert plan.duality_gap == pytest.approx(
        np.sum(plan.weights * (plan.hard_masses - plan.target_masses)), abs=1e-15)


def test_dual_feasibility_and_monotonicity(plan64, domain):
    _, _, plan = plan64
    assert plan.dual_residual(1000, 0) <= 1e-12
    assert cyclical_monotonicity_violation(plan.transport_map(), 1000, 0) <= 1e-10
    g = Grid(domain, 64)
    p = solve_semidiscrete(sample_cloud(domain, 30, 5), g, 1e-6)
    assert p.dual_residual(1000, 1) <= 1e-12
    assert cyclical_monotonicity_violation(p.transport_map(), 1000, 1) <= 1e-10


def test_weight_gauge_invariance(plan64):
    g, c, plan = plan64
    again = solve_semidiscrete(c, g, 1e-8, weights0=plan.weights + 5.0)
    np.testing.assert_array_equal(again.assignment, plan.assignment)
    assert again.w2sq == plan.w2sq


def test_resolution_rule():
    with pytest.raises(ResolutionError):
        solve_semidiscrete(sample_cloud(T, 100, 0), Grid(T, 64), 1e-3)


def test_reweighted_source_density():
    g = Grid(T, 64)
    c = sample_cloud(T, 20, 6)
    rho = heat_evolve(sample_cloud(T, 3, 7), 0.02, g)
    plan = solve_semidiscrete(c, g, 1e-6, density=rho)
    pm = rho.values.ravel() / rho.values.sum()
    hard = np.bincount(plan.assignment, weights=pm, minlength=20)
    np.testing.assert_allclose(plan.hard_masses, hard, atol=1e-15)
    assert np.abs(plan.cell_masses - 1 / 20).max() <= 1e-6 / 20


def test_plan_serialisation(tmp_path, plan64):
    _, _, plan = plan64
    jpath, bpath = plan.save(str(tmp_path / "plan"))
    doc = json.load(open(jpath))
    assert doc["schema_version"] == 1 and doc["n"] == 40
    np.testing.assert_array_equal(load_assignment(bpath), plan.assignment)


# -- exact discrete oracle ----------------------------------------------------


def test_discrete_oracle_trivial_cases():
    rng = np.random.default_rng(0)
    P = rng.random((20, 2))
    a = WeightedPoints.uniform(T, P)
    res = discrete_ot_exact(a, a)
    assert res.cost == pytest.approx(0, abs=1e-15)
    np.testing.assert_allclose(res.plan, np.eye(20) / 20, atol=1e-12)
    one = discrete_ot_exact(WeightedPoints(T, [[0.1, 0.1]], [1.0]), WeightedPoints(T, [[0.3, 0.9]], [1.0]))
    assert one.cost == pytest.approx(0.2**2 + 0.2**2, abs=1e-15)


def test_discrete_oracle_errors():
    a = WeightedPoints(T, [[0.1, 0.1]], [1.0])
    with pytest.raises(ValueError):
        discrete_ot_exact(a, WeightedPoints(T, [[0.2, 0.2]], [1.0 + 1e-9]))
    big = WeightedPoints.uniform(T, np.random.default_rng(1).random((4000, 2)))
    with pytest.raises(ValueError):
        discrete_ot_exact(big, WeightedPoints.uniform(T, np.random.default_rng(2).random((1500, 2))))


@pytest.mark.parametrize("kind", ["torus", "square"])
def test_lp_matches_point_source_solver(kind):
    d = Domain(kind)
    rng = np.random.default_rng(8)
    src = WeightedPoints.uniform(d, rng.random((50, 2)))
    cloud = PointCloud(d, rng.random((50, 2)))
    lp = discrete_ot_exact(src, WeightedPoints.uniform(d, cloud.points))
    plan = solve_semidiscrete(cloud, src, 1e-12)
    assert abs(lp.cost - plan.w2sq) < 1e-9
    assert lp.max_reduced_cost_violation < 1e-9 and lp.max_slackness_violation < 1e-9


def test_cost_sandwich_against_lp():
    g = Grid(T, 64)
    c = sample_cloud(T, 16, 13)
    plan = solve_semidiscrete(c, g, 1e-10)
    centers = g.centers[:, ::2].reshape(-1, 2) + np.array([0.0, 0.5 / 64])
    src = grid_cells_as_points(T, centers, np.ones(len(centers)))
    lp = discrete_ot_exact(src, WeightedPoints.uniform(T, c.points))
    assert abs(lp.cost - plan.w2sq) / plan.w2sq < 0.02


# -- entropic bracket ---------------------------------------------------------


def bump(g, center, t=0.01):
    return clamp_density(heat_evolve(PointCloud(g.domain, [center]), t, g))[0]


def test_sinkhorn_identical_densities():
    g = Grid(T, 32)
    rho = bump(g, [0.4, 0.4], 0.02)
    br = sinkhorn_w2(rho, rho)
    assert br.contains(0.0)
    assert br.upper <= 2 * br.eps * np.log(g.N**2)


def test_sinkhorn_uniform_vs_single_bump():
    g = Grid(T, 32)
    br = sinkhorn_w2(ScalarField(g, np.ones(g.shape)), bump(g, [0.3, 0.6], 0.005))
    assert 0 <= br.lower <= br.upper <= 1 / 6 + br.discretization


def test_sinkhorn_translated_bump():
    # narrow bumps: a wide periodic bump is nearly uniform and translation
    # is then far from optimal
    g = Grid(T, 64)
    lattice = 6 * g.h
    br = sinkhorn_w2(bump(g, [0.3, 0.5], 0.002), bump(g, [0.3 + lattice, 0.5], 0.002))
    assert br.contains(lattice**2, slack=br.width)
    br = sinkhorn_w2(bump(g, [0.3, 0.5], 0.002), bump(g, [0.4, 0.5], 0.002))
    assert br.contains(0.01, slack=br.width + g.h**2)


def test_sinkhorn_rejects_bad_input():
    g = Grid(T, 16)
    one = ScalarField(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        sinkhorn_w2(one, ScalarField(g, np.full(g.shape, 2.0)))
    with pytest.raises(ValueError):
        sinkhorn_w2(one, one, [1e-3, 1e-2])


# -- pushforward --------------------------------------------------------------


def test_pushforward_zero_and_translation():
    g = Grid(T, 32)
    Q = 16 * 32 * 32
    rho = pushforward_density(VectorField.constant(g, [0, 0]), g, Q, 0)
    assert np.all(rho.values == 1.0)
    rho = pushforward_density(VectorField.constant(g, [0.1234, -0.31]), g, Q, 1)
    assert np.abs(rho.values - 1).max() <= 3 * pushforward_sigma(Q, 32)
    with pytest.raises(ValueError):
        pushforward_density(VectorField.constant(g, [0, 0]), g, 9 * 32 * 32, 0)


def test_pushforward_first_order_jacobian():
    g = Grid(T, 32)
    eps = 0.003
    f = fields.from_function(g, lambda x, y: eps * np.cos(2 * np.pi * x))
    Q = 1024 * 32 * 32
    rho = pushforward_density(fields.gradient(f), g, Q, 2)
    predicted = 1 - fields.laplacian(f).values
    assert np.abs(rho.values - predicted).max() <= 3 * pushforward_sigma(Q, 32) + 1e-2 * eps


def test_pushforward_is_seeded():
    g = Grid(T, 16)
    v = fields.gradient(fields.from_function(g, lambda x, y: 0.01 * np.sin(2 * np.pi * y)))
    a = pushforward_density(v, g, 16 * 256, 5)
    np.testing.assert_array_equal(a.values, pushforward_density(v, g, 16 * 256, 5).values)


# -- maps ---------------------------------------------------------------------


def test_map_distances():
    g = Grid(T, 16)
    I = TransportMapGrid.identity(g)
    assert map_l2_distance(I, I) == 0 and linf_map_distance(I) == 0
    s = np.array([0.1, -0.2])
    S_ = TransportMapGrid.from_displacement(VectorField.constant(g, s))
    assert map_l2_distance(I, S_) == pytest.approx(s @ s, abs=1e-15)
    tgt = g.centers.copy()
    tgt[3, 4, 0] = T.canonicalize(tgt[3, 4] + [0.3, 0])[0]
    assert linf_map_distance(TransportMapGrid(g, tgt)) == pytest.approx(0.3, abs=1e-14)
    with pytest.raises(ValueError):
        map_l2_distance(I, TransportMapGrid.identity(Grid(T, 8)))


@given(st.integers(0, 10_000))
def test_map_l2_matches_direct_sum_and_is_symmetric(seed):
    g = Grid(T, 8)
    rng = np.random.default_rng(seed)
    A = TransportMapGrid(g, rng.random(g.shape + (2,)))
    B = TransportMapGrid(g, rng.random(g.shape + (2,)))
    direct = np.mean(dist2(T, A.target, B.target))
    assert map_l2_distance(A, B) == pytest.approx(direct, rel=1e-14)
    assert map_l2_distance(A, B) == map_l2_distance(B, A)


def test_grad_potential_from_map(plan64):
    g = Grid(T, 16)
    assert np.all(grad_potential_from_map(TransportMapGrid.identity(g)).values == 0)
    s = np.array([0.05, 0.2])
    out = grad_potential_from_map(TransportMapGrid.from_displacement(VectorField.constant(g, s)))
    np.testing.assert_allclose(out.values, np.broadcast_to(s, out.values.shape), atol=1e-15)
    gg, _, plan = plan64
    Tn = plan.transport_map()
    back = TransportMapGrid.from_displacement(grad_potential_from_map(Tn))
    assert map_l2_distance(back, Tn) < 1e-28
    tgt = gg.centers.copy()
    tgt[0, 0] = T.canonicalize(tgt[0, 0] + [0.5, 0.0])
    with pytest.raises(AntipodalDisplacement):
        grad_potential_from_map(TransportMapGrid(gg, tgt))
