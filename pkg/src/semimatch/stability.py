"""Empirical check of optimal-map stability in the perturbative regime.

For a potential f, S = exp(grad f) pushes the uniform measure m to mu_1, and
T is the optimal map from m to a discrete mu_2. The inequality under test is

    int d^2(S, T) dm  <=  C [ W2^2(mu_1, mu_2) + W2(mu_1, mu_2) W2(m, mu_1) ].

The ratio of the two sides is reported; its ceiling C_STAB is an empirical
constant frozen after calibration.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import fields
from .calibration import C_M, C_STAB
from .fields import ScalarField
from .geometry import Grid
from .heat import PointCloud
from .semidiscrete import (
    TransportMapGrid,
    map_l2_distance,
    pushforward_density,
    solve_semidiscrete,
)
from .sinkhorn import sinkhorn_w2

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class StabilityReport:
    """Both sides of the stability inequality for one datum.

    ``w2_m_mu1_width`` is the width of the entropic bracket used for
    W2^2(m, mu_1); it is the uncertainty carried into ``rhsB``.
    """

    lhs: float
    rhsA: float
    rhsB: float
    ratio: float
    admissible: bool
    c11: float
    scale: float = 1.0
    w2_m_mu1_width: float = 0.0
    mu1_clamp: float = 0.0
    c_stab: float = C_STAB
    calibrated: bool = True  # constants are frozen empirical values

    def within_bound(self) -> bool:
        return (not self.admissible) or self.ratio <= self.c_stab

    def to_json(self) -> str:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return json.dumps(d, sort_keys=True)


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 1.0 if lhs == 0 else math.inf


def stability_check(f: ScalarField, cloud2: PointCloud, grid: Grid, *, seed: int = 0,
                    Q: int | None = None, tol_mass: float = 1e-6,
                    sinkhorn_max_N: int = 64,
                    sinkhorn_tol: float = 1e-3, c_M: float = C_M) -> StabilityReport:
    """Evaluate both sides of the stability inequality for S = exp(grad f).

    Parameters
    ----------
    f : ScalarField
        Potential on ``grid``; admissibility is recorded, not enforced.
    cloud2 : PointCloud
        Support of mu_2 (uniform weights).
    seed : int
        Seed of the Monte Carlo push-forward that produces mu_1.
    Q : int, optional
        Push-forward sample count, default 16 N^2.
    sinkhorn_tol : float
        Marginal tolerance for the W2(m, mu_1) bracket; the bracket stays
        certified at any tolerance, a looser one only widens it.
    """
    f.grid.check_same(grid)
    g = fields.gradient(f)
    c11 = g.sup_norm() + fields.hessian_sup_norm(f)
    S = TransportMapGrid.from_displacement(g)
    Q = 16 * grid.N * grid.N if Q is None else Q
    mu1, clamp = pushforward_density(g, grid, Q, seed, return_clamp=True)

    plan_T = solve_semidiscrete(cloud2, grid, tol_mass)
    T = plan_T.transport_map()
    lhs = map_l2_distance(S, T)

    if np.array_equal(mu1.values, np.ones(grid.shape)):
        plan_12 = plan_T
    else:
        plan_12 = solve_semidiscrete(cloud2, grid, tol_mass, density=mu1,
                                     weights0=plan_T.weights, allow_empty_cells=True)
    rhsA = max(plan_12.w2sq, 0.0)

    m = ScalarField(grid, np.ones(grid.shape), fields.DENSITY)
    br = sinkhorn_w2(m, mu1, tol=sinkhorn_tol, fail_tol=max(1e-2, sinkhorn_tol),
                     max_N=sinkhorn_max_N)
    rhsB = math.sqrt(rhsA) * math.sqrt(max(br.estimate, 0.0))
    return StabilityReport(lhs, rhsA, rhsB, _ratio(lhs, rhsA + rhsB), bool(c11 <= c_M), c11,
                           w2_m_mu1_width=br.width, mu1_clamp=clamp)


def perturbation_scaling(f: ScalarField, cloud2: PointCloud, scales, **kwargs) -> list[StabilityReport]:
    """``stability_check`` for alpha f over each alpha in ``scales``."""
    out = []
    for a in scales:
        r = stability_check(f.scaled(float(a)), cloud2, f.grid, **kwargs)
        out.append(StabilityReport(**{**asdict(r), "scale": float(a)}))
    return out


def scaling_spread(reports) -> float:
    """max ratio / min ratio over a scaling sweep."""
    r = [x.ratio for x in reports]
    return max(r) / min(r)


def loglog_slope(reports) -> float:
    """Least-squares slope of log lhs against log (rhsA + rhsB), zero-rhs points dropped."""
    pts = [(math.log(r.rhsA + r.rhsB), math.log(r.lhs)) for r in reports if r.rhsA + r.rhsB > 0 and r.lhs > 0]
    if len(pts) < 2:
        raise ValueError("need at least two nondegenerate reports")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def write_jsonl(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
