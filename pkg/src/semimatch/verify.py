"""Quick property suite behind ``semimatch verify``.

Every check measures one quantity and compares it with a tolerance; the
result table lists each invariant by name. Sizes are kept small so that the
whole suite runs in well under a minute.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fields
from . import hopflax as hl
from .calibration import C_M
from .discrete import discrete_ot_exact, grid_cells_as_points
from .fields import ScalarField
from .geometry import Domain, Grid, dist, dist2, exp_map, log_map
from .heat import heat_evolve, matching_field, sample_cloud
from .semidiscrete import (
    WeightedPoints,
    cyclical_monotonicity_violation,
    solve_semidiscrete,
)
from .stability import stability_check

TORUS = Domain.torus()


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


# each check returns (measured value, tolerance); pass means value <= tolerance


def _exp_log_roundtrip():
    a = (np.arange(32) + 0.25) / 32
    P = np.stack(np.meshgrid(a, a, indexing="ij"), -1).reshape(-1, 2)
    p = np.repeat(P, len(P), axis=0)
    q = np.tile(P, (len(P), 1))
    back = exp_map(TORUS, p, log_map(TORUS, p, q))
    return float(np.max(np.sqrt(dist2(TORUS, back, q)))), 1e-12


def _dist_translation():
    rng = np.random.default_rng(1)
    p, q, s = rng.random((3, 10_000, 2))
    return float(np.max(np.abs(dist(TORUS, p + s, q + s) - dist(TORUS, p, q)))), 1e-14


def _triangle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for dom in (TORUS, Domain.square()):
        p, q, r = rng.random((3, 10_000, 2))
        worst = max(worst, float(np.max(dist(dom, p, r) - dist(dom, p, q) - dist(dom, q, r))))
    return worst, 1e-12


def _random_field(grid, seed):
    v = np.random.default_rng(seed).normal(size=grid.shape)
    return ScalarField(grid, v - v.mean())


def _parseval():
    worst = 0.0
    for dom in (TORUS, Domain.square()):
        g = Grid(dom, 32)
        f = _random_field(g, 3)
        spec = np.sum(np.abs(f.spectral) ** 2)
        worst = max(worst, abs(fields.l2_norm_sq(f) - spec) / fields.l2_norm_sq(f))
    return worst, 1e-10


def _gradient_linear():
    g = Grid(TORUS, 32)
    f, h = _random_field(g, 4), _random_field(g, 5)
    lhs = fields.gradient(f + h).values
    rhs = fields.gradient(f).values + fields.gradient(h).values
    return float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))), 1e-12


def _hessian_scaling():
    g = Grid(TORUS, 32)
    f = _random_field(g, 6)
    a = -3.7
    return abs(fields.hessian_sup_norm(f.scaled(a)) - abs(a) * fields.hessian_sup_norm(f)) / (
        abs(a) * fields.hessian_sup_norm(f)), 1e-12


def _heat_mass():
    g = Grid(TORUS, 64)
    worst = 0.0
    for seed in range(3):
        c = sample_cloud(TORUS, 20, seed)
        for t in (1e-3, 1e-2, 0.1):
            worst = max(worst, abs(heat_evolve(c, t, g).mean() - 1.0))
    return worst, 1e-12


def _heat_semigroup():
    g = Grid(TORUS, 64)
    c = sample_cloud(TORUS, 20, 7)
    t1, t2 = 0.004, 0.006
    a = heat_evolve(c, t1 + t2, g)
    b = fields.apply_multiplier(heat_evolve(c, t1, g), np.exp(-fields.laplacian_eigenvalues(g) * t2))
    return float(np.max(np.abs(a.values - b.values))), 1e-12


def _heat_max_principle():
    g = Grid(TORUS, 64)
    worst = 0.0
    for seed in range(10):
        c = sample_cloud(TORUS, 10, 100 + seed)
        r1 = heat_evolve(c, 0.005, g).values
        r2 = heat_evolve(c, 0.01, g).values
        i = np.unravel_index(np.argmax(r1), r1.shape)
        worst = max(worst, -r1.min() - 1e-8, r2[i] - r1[i])
    return worst, 0.0


def _energy_identity():
    g = Grid(TORUS, 64)
    f, _ = matching_field(sample_cloud(TORUS, 30, 8), 0.01, g)
    e1, e2 = fields.dirichlet_energy(f), fields.dirichlet_energy_quadrature(f)
    return abs(e1 - e2) / e1, 1e-8


def _hl_semigroup():
    g = Grid(TORUS, 64)
    worst = 0.0
    for _, f in hl.test_family(g):
        size = hl.c11_size(f)
        s = t = 0.25 * C_M / size
        worst = max(worst, hl.semigroup_defect(f, s, t) / g.h)
    return worst, 3.0


def _hl_contraction():
    g = Grid(TORUS, 32)
    f, h = _random_field(g, 9).scaled(0.01), _random_field(g, 10).scaled(0.01)
    a = hl.hopflax_grid(f, 0.1).Qf.values
    b = hl.hopflax_grid(h, 0.1).Qf.values
    return float(np.max(np.abs(a - b)) - np.max(np.abs(f.values - h.values))), 0.0


def _hl_bilipschitz():
    g = Grid(TORUS, 64)
    worst = 0.0
    for _, f in hl.test_family(g):
        t = C_M / hl.c11_size(f)
        hi, lo = hl.bilipschitz_constants(f, t)
        worst = max(worst, hi - 2.0, 0.5 - lo)
    return worst, 2.0 * g.h


def _hl_monotone_in_t():
    g = Grid(TORUS, 32)
    f = _random_field(g, 11).scaled(0.01)
    q1 = hl.hopflax_grid(f, 0.05).Qf.values
    q2 = hl.hopflax_grid(f, 0.1).Qf.values
    return max(float(np.max(q1 - f.values)), float(np.max(q2 - q1))), 0.0


def _plan():
    g = Grid(TORUS, 64)
    c = sample_cloud(TORUS, 40, 12)
    return g, c, solve_semidiscrete(c, g, 1e-8)


def _dual_feasibility():
    _, _, plan = _plan()
    return plan.dual_residual(1000, 0), 1e-12


def _cyclical_monotonicity():
    _, _, plan = _plan()
    return cyclical_monotonicity_violation(plan.transport_map(), 1000, 0), 1e-10


def _cost_sandwich():
    # 2048 cells of a 64 x 32 subsample against 16 atoms, LP vs raster solver
    g = Grid(TORUS, 64)
    c = sample_cloud(TORUS, 16, 13)
    plan = solve_semidiscrete(c, g, 1e-10)
    centers = g.centers[:, ::2].reshape(-1, 2) + np.array([0.0, 0.5 / 64])
    src = grid_cells_as_points(TORUS, centers, np.ones(len(centers)))
    res = discrete_ot_exact(src, WeightedPoints.uniform(TORUS, c.points))
    return abs(res.cost - plan.w2sq) / plan.w2sq, 0.02


def _gauge():
    g, c, plan = _plan()
    shifted = solve_semidiscrete(c, g, 1e-8, weights0=plan.weights + 5.0)
    same = np.array_equal(shifted.assignment, plan.assignment)
    return (0.0 if same else 1.0) + abs(shifted.w2sq - plan.w2sq), 1e-12


def _stability_anchor():
    g = Grid(TORUS, 32)
    r = stability_check(ScalarField(g, np.zeros(g.shape)), sample_cloud(TORUS, 10, 14), g)
    return abs(r.ratio - 1.0), 1e-6


CHECKS: dict[str, Callable[[], tuple[float, float]]] = {
    "geometry.exp_log_roundtrip": _exp_log_roundtrip,
    "geometry.dist_translation_invariance": _dist_translation,
    "geometry.triangle_inequality": _triangle,
    "fields.parseval": _parseval,
    "fields.gradient_linearity": _gradient_linear,
    "fields.hessian_sup_norm_homogeneity": _hessian_scaling,
    "heat.mass_conservation": _heat_mass,
    "heat.semigroup": _heat_semigroup,
    "heat.maximum_principle": _heat_max_principle,
    "heat.energy_identity": _energy_identity,
    "hopflax.semigroup": _hl_semigroup,
    "hopflax.monotone_contraction": _hl_contraction,
    "hopflax.forward_map_bilipschitz": _hl_bilipschitz,
    "hopflax.below_datum_and_nonincreasing": _hl_monotone_in_t,
    "semidiscrete.dual_feasibility": _dual_feasibility,
    "semidiscrete.cyclical_monotonicity": _cyclical_monotonicity,
    "semidiscrete.cost_sandwich": _cost_sandwich,
    "semidiscrete.weight_gauge_invariance": _gauge,
    "stability.zero_potential_anchor": _stability_anchor,
}


def run_all(only=None, inject: str | None = None) -> list[CheckResult]:
    """Run the checks (optionally a subset); ``inject`` forces one to fail.

    Injection replaces that check's tolerance by -inf, which no measurement
    can meet; it exists to exercise the failure path.
    """
    if inject is not None and inject not in CHECKS:
        raise KeyError(f"unknown check {inject!r}")
    out = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        value, tol = fn()
        if name == inject:
            tol = -math.inf
        out.append(CheckResult(name, float(value), float(tol), time.perf_counter() - t0))
    return out


def format_table(results) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'check':{w}s}  result   value        tolerance"]
    for r in results:
        lines.append(f"{r.name:{w}s}  {'PASS' if r.passed else 'FAIL':6s}  {r.value:11.3e}  {r.tolerance:11.3e}")
    return "\n".join(lines)
