"""Semi-discrete optimal transport onto a point cloud, and transport maps.

The Kantorovich dual of the transport from a source measure to the atoms
``X_i`` with masses ``nu_i`` is

    F(w) = sum_p m_p min_i (d^2(x_p, X_i) - w_i) + sum_i nu_i w_i,

concave in the weights ``w``. Its gradient is ``nu - M(w)`` where ``M_i`` is
the source mass of the Laguerre cell of atom ``i``.

Grid sources are treated as pixels rather than point masses: a pixel crossed
by the bisector of its two best atoms is split by the exact area fraction on
each side of that (locally straight) bisector. This makes ``M(w)`` continuous
and piecewise smooth, so a damped Newton iteration reaches mass tolerances far
below one pixel. The Jacobian of ``M`` is the weighted graph Laplacian of the
cell adjacency and is assembled exactly from the same fractions.

Point sources (equal masses) are solved exactly by an auction algorithm with
epsilon scaling, whose prices are again Laguerre weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import fields
from ._backend import kernels
from .fields import ResolutionError, ScalarField, VectorField
from .geometry import Domain, Grid, displacement, dist2, exp_map
from .heat import PointCloud

log = logging.getLogger(__name__)

PLAN_SCHEMA_VERSION = 1
MIN_CELLS_PER_ATOM = 50


class SolverError(RuntimeError):
    """The dual ascent did not reach the mass tolerance."""

    def __init__(self, message: str, grad_norm: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations


class AntipodalDisplacement(ValueError):
    """A displacement reached the cut locus of the torus."""


@dataclass(frozen=True, eq=False)
class WeightedPoints:
    """Finite source measure: points with nonnegative masses summing to 1."""

    domain: Domain
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 2)
        m = np.array(self.masses, dtype=float).reshape(-1)
        if len(p) != len(m):
            raise ValueError("points and masses differ in length")
        if np.any(m < 0):
            raise ValueError("masses must be nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {m.sum():.15g}, not 1")
        for a in (p, m):
            a.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "masses", m)

    @classmethod
    def uniform(cls, domain: Domain, points) -> "WeightedPoints":
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(domain, p, np.full(len(p), 1.0 / len(p)))

    def __len__(self) -> int:
        return len(self.points)


Source = Union[Grid, WeightedPoints]


# -- transport maps ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransportMapGrid:
    """A map given by its value at every cell centre; ``target`` is (N, N, 2)."""

    grid: Grid
    target: np.ndarray

    def __post_init__(self):
        t = np.array(self.target, dtype=float)
        if t.shape != self.grid.shape + (2,):
            raise ValueError(f"target of shape {t.shape} on a {self.grid.shape} grid")
        if not np.all(self.grid.domain.contains(t)):
            raise ValueError("map targets outside the domain")
        t.setflags(write=False)
        object.__setattr__(self, "target", t)

    @classmethod
    def identity(cls, grid: Grid) -> "TransportMapGrid":
        return cls(grid, grid.centers)

    @classmethod
    def from_displacement(cls, g: VectorField) -> "TransportMapGrid":
        """x -> exp_x(g(x)); raises if the square clamps any target."""
        out, clamp = exp_map(g.grid.domain, g.grid.centers, g.values, return_clamp=True)
        if clamp > 0:
            raise ValueError(f"displacement leaves the square (clamp {clamp:.3e})")
        return cls(g.grid, out)

    def displacement_sq(self) -> np.ndarray:
        return dist2(self.grid.domain, self.grid.centers, self.target)


def map_l2_distance(T1: TransportMapGrid, T2: TransportMapGrid) -> float:
    """Integral of d^2(T1(x), T2(x)) against the uniform measure."""
    T1.grid.check_same(T2.grid)
    return float(np.mean(dist2(T1.grid.domain, T1.target, T2.target)))


def linf_map_distance(T: TransportMapGrid) -> float:
    return float(np.sqrt(T.displacement_sq().max()))


def grad_potential_from_map(T: TransportMapGrid) -> VectorField:
    """The displacement field v with exp_x(v(x)) = T(x)."""
    v = displacement(T.grid.domain, T.grid.centers, T.target)
    if T.grid.domain.periodic and np.any(np.abs(v) >= 0.5):
        raise AntipodalDisplacement("map displaces a cell to the antipode of its centre")
    return VectorField(T.grid, v)


def cyclical_monotonicity_violation(T: TransportMapGrid, pairs: int = 1000, seed: int = 0) -> float:
    """Largest violation of the two-point swap inequality on random cell pairs.

    Returns max over pairs of d2(x,Tx) + d2(x',Tx') - d2(x,Tx') - d2(x',Tx),
    which is <= 0 for a c-cyclically monotone map.
    """
    rng = np.random.default_rng(seed)
    n = T.grid.N * T.grid.N
    return _swap_violation(T, rng.integers(0, n, pairs), rng.integers(0, n, pairs))


def monotonicity_violation_at(T: TransportMapGrid, cell: int) -> float:
    """Largest swap-inequality violation between ``cell`` and every other cell."""
    n = T.grid.N * T.grid.N
    return _swap_violation(T, np.full(n, cell), np.arange(n))


def _swap_violation(T: TransportMapGrid, i: np.ndarray, j: np.ndarray) -> float:
    X = T.grid.flat_centers()
    Y = T.target.reshape(-1, 2)
    d = T.grid.domain
    lhs = dist2(d, X[i], Y[i]) + dist2(d, X[j], Y[j])
    rhs = dist2(d, X[i], Y[j]) + dist2(d, X[j], Y[i])
    return float(np.max(lhs - rhs))


# -- the plan -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SemiDiscretePlan:
    """Converged dual weights and the Laguerre assignment they induce.

    ``cell_masses`` are the (split-pixel) masses the solver drives to the
    targets; ``hard_masses`` are those of the raster assignment. ``w2sq`` is
    the cost of the raster assignment, ``dual_value`` the dual objective at
    ``weights`` and their difference equals ``sum_i w_i (hard_i - nu_i)``.
    """

    cloud: PointCloud
    source: Source
    weights: np.ndarray
    assignment: np.ndarray
    cell_masses: np.ndarray
    hard_masses: np.ndarray
    target_masses: np.ndarray
    dual_value: float
    w2sq: float
    iterations: int
    grad_norm: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.cloud.n

    @property
    def duality_gap(self) -> float:
        return self.w2sq - self.dual_value

    @property
    def duality_gap_bound(self) -> float:
        """Holder bound on |w2sq - dual_value| from the raster mass error."""
        w = self.weights - self.weights.mean()
        return float(np.abs(w).max() * np.abs(self.hard_masses - self.target_masses).sum())

    def transport_map(self) -> TransportMapGrid:
        if not isinstance(self.source, Grid):
            raise TypeError("only grid sources define a map on cells")
        tgt = self.cloud.points[self.assignment].reshape(self.source.shape + (2,))
        return TransportMapGrid(self.source, tgt)

    def source_points(self) -> np.ndarray:
        if isinstance(self.source, Grid):
            return self.source.flat_centers()
        return self.source.points

    def dual_residual(self, pairs: int = 1000, seed: int = 0) -> float:
        """Largest excess of the assigned power cost over a random competitor."""
        rng = np.random.default_rng(seed)
        X = self.source_points()
        p = rng.integers(0, len(X), pairs)
        j = rng.integers(0, self.n, pairs)
        a = self.assignment[p]
        d = self.cloud.domain
        own = dist2(d, X[p], self.cloud.points[a]) - self.weights[a]
        other = dist2(d, X[p], self.cloud.points[j]) - self.weights[j]
        return float(np.max(own - other))

    def to_json(self) -> dict:
        src = self.source
        if isinstance(src, Grid):
            source = {"type": "grid", "N": src.N}
        else:
            source = {"type": "points", "count": len(src)}
        return {
            "schema_version": PLAN_SCHEMA_VERSION,
            "domain": self.cloud.domain.kind.value,
            "n": self.n,
            "seed": self.cloud.seed,
            "source": source,
            "weights": self.weights.tolist(),
            "w2sq": self.w2sq,
            "dual_value": self.dual_value,
            "duality_gap_bound": self.duality_gap_bound,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "cell_masses": self.cell_masses.tolist(),
            "diagnostics": self.diagnostics,
        }

    def save(self, prefix: str) -> tuple[str, str]:
        """Write ``prefix.json`` and ``prefix.assign`` (little-endian int32)."""
        jpath, bpath = prefix + ".json", prefix + ".assign"
        with open(jpath, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
        self.assignment.astype("<i4").tofile(bpath)
        return jpath, bpath


def load_assignment(path: str) -> np.ndarray:
    return np.fromfile(path, dtype="<i4").astype(np.int64)


# -- exact pixel masses --------------------------------------------------------


@dataclass
class _Eval:
    best: np.ndarray
    bval: np.ndarray
    masses: np.ndarray
    hard: np.ndarray
    dual: float
    edges: tuple | None = None
    overflow: int = 0


class _RasterProblem:
    """Dual evaluation on a grid source with pixelwise-constant density.

    Power-diagram bisectors are straight lines, so the mass of every
    Laguerre cell inside every pixel is a polygon area computed exactly by
    the kernel, together with the facet lengths that make up the Jacobian.
    """

    def __init__(self, cloud: PointCloud, grid: Grid, pixel_mass: np.ndarray, nu: np.ndarray):
        self.cloud = cloud
        self.grid = grid
        self.m = np.ascontiguousarray(pixel_mass, dtype=float)
        self.nu = nu
        c = grid.flat_centers()
        self.sx = np.ascontiguousarray(c[:, 0])
        self.sy = np.ascontiguousarray(c[:, 1])
        self.ax = np.ascontiguousarray(cloud.points[:, 0])
        self.ay = np.ascontiguousarray(cloud.points[:, 1])
        self.periodic = grid.domain.periodic

    def evaluate(self, w: np.ndarray) -> _Eval:
        n = self.cloud.n
        best, bval, masses, ei, ej, ec, overflow = kernels.laguerre_pixel_masses(
            self.sx, self.sy, self.grid.h, self.ax, self.ay,
            np.ascontiguousarray(w, dtype=float), self.m, self.periodic)
        hard = np.bincount(best, weights=self.m, minlength=n)
        dual = float(self.m @ bval + self.nu @ w)
        return _Eval(best, bval, masses, hard, dual, (ei, ej, ec), int(overflow))


def _laplacian(n: int, edges) -> sparse.csr_matrix:
    i, j, c = edges
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([c, c, -c, -c])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _newton_direction(n: int, ev: _Eval, residual: np.ndarray) -> np.ndarray:
    L = _laplacian(n, ev.edges)
    diag = L.diagonal()
    pos = diag[diag > 0]
    fill = float(np.median(pos)) if len(pos) else 1.0
    # atoms without a boundary get a nominal stiffness; the tiny shift fixes the gauge
    extra = np.where(diag > 0, 0.0, fill) + 1e-10 * fill
    A = (L + sparse.diags(extra)).tocsc()
    return splinalg.spsolve(A, residual)


def _solve_grid(cloud, grid, pixel_mass, nu, tol_mass, max_iter, w0):
    n = cloud.n
    prob = _RasterProblem(cloud, grid, pixel_mass, nu)
    w = np.zeros(n) if w0 is None else np.array(w0, dtype=float)
    ev = prob.evaluate(w)
    tol = tol_mass * nu
    it = 0
    history = []
    while True:
        r = nu - ev.masses
        gnorm = float(np.linalg.norm(r))
        history.append(gnorm)
        if np.all(np.abs(r) <= tol):
            break
        if it >= max_iter:
            raise SolverError(
                f"mass tolerance not met after {it} iterations (|grad| = {gnorm:.3e})", gnorm, it)
        it += 1
        floor = 0.5 * min(float(ev.masses.min()), float(nu.min()))
        accepted = None
        for direction in ("newton", "gradient"):
            if direction == "newton":
                d = _newton_direction(n, ev, r)
            else:
                # preconditioned ascent fallback when Newton stalls
                L = _laplacian(n, ev.edges)
                diag = L.diagonal()
                d = r / np.where(diag > 0, diag, max(diag.max(), 1.0))
            tau = 1.0
            while tau > 2.0**-30:
                trial = w + tau * d
                tev = prob.evaluate(trial)
                tr = nu - tev.masses
                if tev.masses.min() >= floor and np.linalg.norm(tr) <= (1 - 0.5 * tau) * gnorm:
                    accepted = (trial, tev)
                    break
                tau *= 0.5
            if accepted is not None:
                break
            log.debug("%s step stalled at iteration %d", direction, it)
        if accepted is None:
            raise SolverError(f"line search failed at iteration {it} (|grad| = {gnorm:.3e})", gnorm, it)
        w, ev = accepted
    return w, ev, it, history


# -- point sources: auction ----------------------------------------------------


def _auction(cost: np.ndarray, capacity: np.ndarray, eps_final: float = 1e-13):
    """Forward auction with epsilon scaling for unit-mass bidders.

    Bidder i buys one slot of object j for cost[i, j] + price[j]. ``capacity``
    counts the slots of each object; slots of one object share bookkeeping
    by keeping a per-slot price. Returns (owner_object, object_prices).
    """
    m, n = cost.shape
    slot_obj = np.repeat(np.arange(n), capacity)
    S = len(slot_obj)
    if S != m:
        raise ValueError("capacities must add up to the number of bidders")
    C = cost[:, slot_obj]
    price = np.zeros(S)
    span = float(C.max() - C.min())
    eps = max(span / 4.0, eps_final)
    while True:
        owner = np.full(S, -1)
        held = np.full(m, -1)
        free = list(range(m))
        while free:
            i = free.pop()
            v = C[i] + price
            k = int(np.argmin(v))
            v1 = v[k]
            v[k] = np.inf
            v2 = float(v.min()) if S > 1 else v1 + span + eps
            price[k] += (v2 - v1) + eps
            prev = owner[k]
            owner[k] = i
            held[i] = k
            if prev >= 0:
                held[prev] = -1
                free.append(prev)
        if eps <= eps_final:
            break
        eps = max(eps / 8.0, eps_final)
    obj_price = np.full(n, np.inf)
    np.minimum.at(obj_price, slot_obj, price)
    return slot_obj[held], obj_price


def _solve_points(cloud, src: WeightedPoints, nu):
    unit = src.masses[0]
    if not np.allclose(src.masses, unit, rtol=0, atol=1e-15):
        raise ValueError("point sources must carry equal masses")
    counts = nu / unit
    cap = np.rint(counts).astype(np.int64)
    if np.abs(counts - cap).max() > 1e-9:
        raise ValueError("target masses must be integer multiples of the source mass")
    cost = dist2(cloud.domain, src.points[:, None, :], cloud.points[None, :, :])
    assign, price = _auction(cost, cap)
    w = -price
    bvals = cost[np.arange(len(src)), assign] - w[assign]
    hard = np.bincount(assign, weights=src.masses, minlength=cloud.n)
    dual = float(src.masses @ np.min(cost - w[None, :], axis=1) + nu @ w)
    return w, _Eval(assign, bvals, hard, hard, dual)


# -- entry point ---------------------------------------------------------------


def solve_semidiscrete(
    cloud: PointCloud,
    source: Source,
    tol_mass: float = 1e-3,
    *,
    density: ScalarField | None = None,
    target_masses=None,
    weights0=None,
    max_iter: int = 200,
    check_resolution: bool = True,
    allow_empty_cells: bool = False,
) -> SemiDiscretePlan:
    """Optimal transport from a grid (or weighted points) onto ``cloud``.

    Parameters
    ----------
    cloud : PointCloud
        Target atoms.
    source : Grid or WeightedPoints
        A grid carries the uniform measure unless ``density`` is given.
    tol_mass : float
        Stop once every cell mass is within ``tol_mass * nu_i`` of its target.
    density : ScalarField, optional
        Nonnegative source density with mean 1 on ``source`` (reweighted
        problem).
    target_masses : array, optional
        Atom masses; uniform ``1/n`` by default.
    weights0 : array, optional
        Warm start for the dual weights.
    allow_empty_cells : bool
        Accept a converged solution in which some atom owns no cell centre
        (possible for strongly concentrated densities).

    Raises
    ------
    SolverError
        The mass tolerance was not reached.
    ResolutionError
        Too few cells per atom, or a Laguerre cell is empty at convergence.
    """
    n = cloud.n
    nu = np.full(n, 1.0 / n) if target_masses is None else np.asarray(target_masses, dtype=float)
    if nu.shape != (n,) or np.any(nu <= 0) or abs(nu.sum() - 1.0) > 1e-12:
        raise ValueError("target masses must be positive and sum to 1")
    if source.domain != cloud.domain:
        raise ValueError("source and cloud live on different domains")

    if isinstance(source, WeightedPoints):
        pm = source.masses
        w, ev = _solve_points(cloud, source, nu)
        it, history = 0, []
    else:
        grid = source
        if check_resolution and grid.N * grid.N < MIN_CELLS_PER_ATOM * n:
            raise ResolutionError(
                f"N={grid.N} gives fewer than {MIN_CELLS_PER_ATOM} cells per atom for n={n}")
        if density is None:
            pm = np.full(grid.N * grid.N, grid.quadrature_weight)
        else:
            grid.check_same(density.grid)
            if density.values.min() < 0:
                raise ValueError("source density must be nonnegative")
            pm = density.values.reshape(-1) * grid.quadrature_weight
            pm = pm / pm.sum()
        w, ev, it, history = _solve_grid(cloud, grid, pm, nu, tol_mass, max_iter, weights0)

    if np.any(ev.hard <= 0) and not allow_empty_cells:
        raise ResolutionError(f"{int(np.sum(ev.hard <= 0))} Laguerre cell(s) empty at convergence")
    # bval is d^2 - w at the assigned atom
    w2sq = float(pm @ (ev.bval + w[ev.best]))
    w = w - w.mean()
    return SemiDiscretePlan(
        cloud=cloud,
        source=source,
        weights=w,
        assignment=ev.best.astype(np.int64),
        cell_masses=ev.masses,
        hard_masses=ev.hard,
        target_masses=nu,
        dual_value=float(ev.dual),
        w2sq=w2sq,
        iterations=it,
        grad_norm=float(np.linalg.norm(nu - ev.masses)),
        diagnostics={"grad_history": history},
    )


# -- pushforward ---------------------------------------------------------------


def pushforward_sigma(Q: int, N: int) -> float:
    """Per-cell relative Monte Carlo error of ``pushforward_density``."""
    return (Q / (N * N)) ** -0.5


def pushforward_density(g: VectorField, grid: Grid, Q: int, seed: int,
                        *, return_clamp: bool = False):
    """Histogram density of the image of the uniform measure under x -> exp_x(g(x)).

    Samples are stratified: every cell is split into r x r sub-cells with one
    jittered sample each, r = ceil(sqrt(Q / N^2)). ``g`` is interpolated at
    the samples. For g = 0 every sample stays in its own cell and the result is
    exactly 1.
    """
    if Q < 10 * grid.N * grid.N:
        raise ValueError(f"Q={Q} is below 10 N^2 = {10 * grid.N * grid.N}")
    N = grid.N
    r = int(math.ceil(math.sqrt(Q / (N * N))))
    rng = np.random.default_rng(seed)
    out = np.zeros(N * N)
    clamp = 0.0
    sub = np.arange(r)
    interp = fields.Sampler(g)
    # one row of cells at a time keeps memory at O(N r^2)
    for i in range(N):
        u = np.minimum(rng.random((N, r, r, 2)), 1.0 - 1e-9)
        x1 = (i + (sub[None, :, None] + u[..., 0]) / r) / N
        x2 = (np.arange(N)[:, None, None] + (sub[None, None, :] + u[..., 1]) / r) / N
        pts = np.stack([x1, x2], axis=-1).reshape(-1, 2)
        disp = interp(pts)
        y, c = exp_map(grid.domain, pts, disp, return_clamp=True)
        clamp = max(clamp, c)
        out += np.bincount(grid.cell_index(y), minlength=N * N)
    dens = out.reshape(N, N) / (r * r)
    rho = ScalarField(grid, dens, fields.DENSITY)
    if return_clamp:
        return rho, clamp
    return rho
