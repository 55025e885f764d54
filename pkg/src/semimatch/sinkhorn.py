"""Certified brackets for W_2^2 between two grid densities.

Both densities are treated as discrete measures on the cell centres (after an
optional 2x2 block coarsening). Log-domain Sinkhorn with epsilon scaling
produces potentials, from which

* a lower bound comes from the c-transform: (f, f^c) is feasible for the
  unregularised dual, so <a, f> + <b, f^c> <= W_2^2;
* an upper bound comes from rounding the entropic plan onto the exact
  marginals and evaluating its transport cost.

The squared distance on the grid splits as c1(x1, y1) + c2(x2, y2), so every
kernel application factorises into two N x N matrix products.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .fields import ScalarField
from .geometry import Grid, wrap_difference

log = logging.getLogger(__name__)

DEFAULT_EPS_FACTORS = (1e-1, 1e-2, 1e-3, 1e-4)
MAX_WORK_N = 256
_TINY = 1e-280


class SinkhornError(RuntimeError):
    """Marginal violation too large at the end of the schedule."""

    def __init__(self, message: str, marginal_error: float):
        super().__init__(message)
        self.marginal_error = marginal_error


@dataclass(frozen=True)
class W2Bracket:
    """Certified interval for W_2^2 of the (coarsened) discrete problem.

    ``discretization`` bounds how far W_2 of the cell-centre measures can be
    from W_2 of the piecewise-constant densities (triangle inequality).
    """

    lower: float
    upper: float
    eps: float
    iterations: int
    marginal_error: float
    N: int
    discretization: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def estimate(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


def coarsen(rho: ScalarField, max_N: int = MAX_WORK_N) -> np.ndarray:
    """Cell masses (summing to 1) after 2x2 block averaging down to max_N."""
    v = rho.values
    while v.shape[0] > max_N:
        v = 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])
    return v / v.sum()


def axis_cost(N: int, periodic: bool) -> np.ndarray:
    x = (np.arange(N) + 0.5) / N
    d = x[None, :] - x[:, None]
    if periodic:
        d = wrap_difference(d)
    return d * d


def _lse_rows(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Z[a, x] = log sum_y exp(A[a, y] + P[x, y])."""
    amax = A.max(axis=1)
    pmax = P.max(axis=1)
    afin = np.isfinite(amax)
    sa = np.where(afin, amax, 0.0)
    sp = np.where(np.isfinite(pmax), pmax, 0.0)
    with np.errstate(under="ignore"):
        S = np.exp(A - sa[:, None]) @ np.exp(P - sp[:, None]).T
    with np.errstate(divide="ignore"):
        Z = np.log(S) + sa[:, None] + sp[None, :]
    # underflow of the shifted product: redo those entries exactly
    bad = (S < _TINY) & afin[:, None] & np.isfinite(pmax)[None, :]
    if np.any(bad):
        ra, rx = np.nonzero(bad)
        Z[ra, rx] = kernels.lse_entries(np.ascontiguousarray(A), np.ascontiguousarray(P),
                                        ra.astype(np.int64), rx.astype(np.int64))
    return Z


def _apply(P1: np.ndarray, P2: np.ndarray, B: np.ndarray) -> np.ndarray:
    """R[x1, x2] = log sum_{y1, y2} exp(P1[x1, y1] + P2[x2, y2] + B[y1, y2])."""
    T = _lse_rows(B, P2)  # T[y1, x2]
    return _lse_rows(T.T, P1).T


def _c_transform(f: np.ndarray, periodic: bool) -> np.ndarray:
    """g(y) = min_x d^2(x, y) - f(x) on the cell-centre grid (exact)."""
    N = f.shape[0]
    s = 1.0 / (N * N)
    t, _ = kernels.quad_infconv_lines(np.ascontiguousarray(-f), s, periodic)
    out, _ = kernels.quad_infconv_lines(np.ascontiguousarray(t.T), s, periodic)
    return out.T


def sinkhorn_w2(rhoA: ScalarField, rhoB: ScalarField, eps_schedule=None, *,
                tol: float = 1e-6, max_iter: int = 2000, fail_tol: float = 1e-3,
                max_N: int = MAX_WORK_N) -> W2Bracket:
    """Certified bracket for W_2^2(rhoA, rhoB).

    Parameters
    ----------
    rhoA, rhoB : ScalarField
        Nonnegative densities with mean 1 on the same grid.
    eps_schedule : sequence of float, optional
        Decreasing regularisation levels; defaults to {1e-1, ..., 1e-4} times
        the squared diameter. The last level must be >= 1e-4 times it.
    tol : float
        L1 marginal error at which each level stops.
    """
    rhoA.grid.check_same(rhoB.grid)
    grid: Grid = rhoA.grid
    periodic = grid.domain.periodic
    for r in (rhoA, rhoB):
        if r.values.min() < 0:
            raise ValueError("densities must be nonnegative")
        if abs(r.mean() - 1.0) > 1e-8:
            raise ValueError("densities must have mean 1")
    diam2 = grid.domain.diameter ** 2
    if eps_schedule is None:
        eps_schedule = [f * diam2 for f in DEFAULT_EPS_FACTORS]
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if eps_schedule[-1] < 1e-4 * diam2 * (1 - 1e-12):
        raise ValueError("final eps below 1e-4 diam^2")

    a = coarsen(rhoA, max_N)
    b = coarsen(rhoB, max_N)
    N = a.shape[0]
    c1 = axis_cost(N, periodic)
    disc = 2.0 * math.sqrt(1.0 / 6.0) / N
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)

    if np.array_equal(a, b):
        # the identity coupling is optimal; f = 0 certifies it
        return W2Bracket(0.0, 0.0, eps_schedule[-1], 0, 0.0, N, disc)

    f = np.zeros((N, N))
    g = np.zeros((N, N))
    total = 0
    err = math.inf
    for eps in eps_schedule:
        K = -c1 / eps
        F, G = f / eps, g / eps
        for it in range(max_iter):
            G = -_apply(K, K, F + la)
            F = -_apply(K, K, G + lb)
            total += 1
            if it % 5 == 4 or it == max_iter - 1:
                colm = np.exp(G + lb + _apply(K, K, F + la))
                err = float(np.abs(colm - b).sum())
                if err < tol:
                    break
        f, g = eps * F, eps * G
        log.debug("eps=%.2e: %d iterations, marginal error %.2e", eps, it + 1, err)
    if err > fail_tol:
        raise SinkhornError(f"marginal error {err:.2e} at eps={eps:.2e}", err)

    # lower bound: (f, f^c) is dual feasible
    gc = _c_transform(f, periodic)
    lower = float(np.sum(a * f) + np.sum(b * gc))

    # upper bound: round the plan onto the marginals, then price it
    rowm = np.exp(F + la + _apply(K, K, G + lb))
    with np.errstate(divide="ignore", invalid="ignore"):
        F = F + np.where(rowm > a, np.log(a) - np.log(rowm), 0.0)
    colm = np.exp(G + lb + _apply(K, K, F + la))
    with np.errstate(divide="ignore", invalid="ignore"):
        G = G + np.where(colm > b, np.log(b) - np.log(colm), 0.0)
    rowm = np.exp(F + la + _apply(K, K, G + lb))
    colm = np.exp(G + lb + _apply(K, K, F + la))
    ea = np.maximum(a - rowm, 0.0)
    eb = np.maximum(b - colm, 0.0)
    with np.errstate(divide="ignore"):
        W = np.log(c1) + K
    part = np.exp(F + la + _apply(W, K, G + lb)) + np.exp(F + la + _apply(K, W, G + lb))
    cost = float(part.sum())
    mass = ea.sum()
    if mass > 0:
        cost += float(ea.sum(1) @ c1 @ eb.sum(1) + ea.sum(0) @ c1 @ eb.sum(0)) / mass
    lower = max(lower, 0.0)
    upper = float(max(cost, lower))
    return W2Bracket(lower, upper, eps_schedule[-1], total, err, N, disc)
