"""Exact discrete optimal transport between two finite weighted point sets.

This is an oracle for cross-checking the semi-discrete solver: the transport
linear program is handed to HiGHS, and optimality is then certified
independently by checking complementary slackness of the returned duals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .geometry import Domain, dist2
from .semidiscrete import WeightedPoints

MAX_ATOMS = 5000
MAX_VARIABLES = 4_000_000


class CertificateError(RuntimeError):
    """The LP duals do not certify optimality of the returned plan."""


@dataclass(frozen=True, eq=False)
class DiscreteOTResult:
    cost: float
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    max_reduced_cost_violation: float
    max_slackness_violation: float


def discrete_ot_exact(source: WeightedPoints, target: WeightedPoints, *,
                      cs_tol: float = 1e-9) -> DiscreteOTResult:
    """Solve min <c, P> over couplings of two weighted point sets, c = d^2.

    Raises
    ------
    ValueError
        Masses differ by more than 1e-12 or the instance exceeds the oracle
        size limit.
    CertificateError
        Dual feasibility or complementary slackness fails beyond ``cs_tol``.
    """
    if source.domain != target.domain:
        raise ValueError("source and target live on different domains")
    a, b = source.masses, target.masses
    if abs(a.sum() - b.sum()) > 1e-12:
        raise ValueError("total masses differ")
    m, n = len(a), len(b)
    if m + n > MAX_ATOMS or m * n > MAX_VARIABLES:
        raise ValueError(f"instance {m}x{n} exceeds the oracle size limit")
    C = dist2(source.domain, source.points[:, None, :], target.points[None, :, :])

    # row sums then column sums of the m x n plan, flattened row-major
    rows = sparse.kron(sparse.eye(m), np.ones((1, n)))
    cols = sparse.kron(np.ones((1, m)), sparse.eye(n))
    A = sparse.vstack([rows, cols]).tocsr()
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    P = res.x.reshape(m, n)
    duals = res.eqlin.marginals
    u, v = duals[:m], duals[m:]

    reduced = C - u[:, None] - v[None, :]
    infeas = float(max(0.0, -reduced.min()))
    slack = float(np.max(np.where(P > 1e-14, np.abs(reduced), 0.0)))
    if infeas > cs_tol or slack > cs_tol:
        raise CertificateError(f"dual infeasibility {infeas:.2e}, slackness violation {slack:.2e}")
    cost = float(np.sum(C * P))
    return DiscreteOTResult(cost, P, u, v, infeas, slack)


def dual_value(source: WeightedPoints, target: WeightedPoints, u, v) -> float:
    return float(source.masses @ u + target.masses @ v)


def grid_cells_as_points(domain: Domain, centers: np.ndarray, masses: np.ndarray) -> WeightedPoints:
    """Cell centres carrying the given masses, renormalised to sum 1."""
    m = np.asarray(masses, dtype=float).reshape(-1)
    return WeightedPoints(domain, np.asarray(centers).reshape(-1, 2), m / m.sum())
