"""The Hopf-Lax semigroup on grid functions.

    Q_t f(y) = min_x  d^2(x, y) / (2t) + f(x)

Two independent evaluations are provided:

``hopflax_grid``
    exact minimisation over all grid nodes. The quadratic cost separates
    along the axes, so the 2-D minimum is two passes of an exact 1-D lower
    envelope of parabolas; ``method="ball"`` instead scans every offset in a
    disc around each node, which is the literal definition and serves as an
    oracle for small grids.
``hopflax_characteristics``
    forward characteristics: node x travels to y = exp_x(t grad f(x)) carrying
    the value f(x) + t |grad f(x)|^2 / 2 and the velocity grad f(x); the
    scattered values are resampled on the grid by local moving least squares.
    Valid for small times only (see ``admissibility``).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import fields
from ._backend import kernels
from .calibration import C_CAL, C_M
from .fields import ScalarField, VectorField
from .geometry import Grid, dist2, exp_map, wrap_difference

log = logging.getLogger(__name__)

MLS_NEIGHBOURS = 8
MLS_RIDGE = 1e-3


class HopfLaxMethod(str, enum.Enum):
    GRID_MIN = "grid_min"
    CHARACTERISTICS = "characteristics"


class AdmissibilityError(ValueError):
    """t (|grad f|_inf + |hess f|_inf) exceeds the calibrated constant c_M."""


@dataclass(frozen=True, eq=False)
class HopfLaxResult:
    """Q_t f on the grid and the minimiser x_t(y) for every node y.

    ``preimage_disp[i, j]`` is the vector from node y_ij to its minimiser (in
    the local chart on the torus), so ``argmin = exp_y(preimage_disp)``.
    ``grad`` is grad Q_t f where the method provides it.
    """

    Qf: ScalarField
    preimage_disp: np.ndarray
    method: HopfLaxMethod
    t: float
    grad: VectorField | None = None
    clamp: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.Qf.grid

    @property
    def argmin(self) -> np.ndarray:
        return exp_map(self.grid.domain, self.grid.centers, self.preimage_disp)


# -- grid minimisation ---------------------------------------------------------


def _separable_min(values: np.ndarray, s: float, periodic: bool):
    """min over all nodes x of s |x - y|^2 + values[x] (index units)."""
    N = values.shape[0]
    inner, o2 = kernels.quad_infconv_lines(np.ascontiguousarray(values), s, periodic)
    outer, o1 = kernels.quad_infconv_lines(np.ascontiguousarray(inner.T), s, periodic)
    out = outer.T
    o1 = o1.T
    y1 = np.arange(N)[:, None]
    y2 = np.arange(N)[None, :]
    x1 = (y1 + o1) % N if periodic else y1 + o1
    o2_at = o2[x1, np.broadcast_to(y2, x1.shape)]
    return out, o1, o2_at


def search_radius(f: ScalarField, t: float) -> float:
    """Radius beyond which no minimiser can lie, plus a grid buffer."""
    g = fields.gradient(f).sup_norm()
    return min(f.grid.domain.diameter, 2.0 * t * g + 8.0 * f.grid.h)


def hopflax_grid(f: ScalarField, t: float, *, method: str = "separable",
                 radius: float | None = None) -> HopfLaxResult:
    """Exact discrete Hopf-Lax value and minimiser at every node.

    Parameters
    ----------
    method : {"separable", "ball"}
        "separable" minimises over the whole grid; "ball" scans the disc of
        ``radius`` (default ``search_radius(f, t)``) around each node.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    grid = f.grid
    h = grid.h
    s = h * h / (2.0 * t)
    periodic = grid.domain.periodic
    if method == "separable":
        out, o1, o2 = _separable_min(f.values, s, periodic)
    elif method == "ball":
        r = search_radius(f, t) if radius is None else radius
        rc = int(np.ceil(r / h))
        out, o1, o2 = kernels.ball_min(np.ascontiguousarray(f.values), s, rc, periodic)
    else:
        raise ValueError(f"unknown method {method!r}")
    disp = np.stack([o1, o2], axis=-1) * h
    return HopfLaxResult(ScalarField(grid, out), disp, HopfLaxMethod.GRID_MIN, t)


def c_transform(f: ScalarField) -> ScalarField:
    """f^c(y) = min_x d^2(x, y)/2 - f(x), i.e. Q_1 applied to -f."""
    return hopflax_grid(ScalarField(f.grid, -f.values), 1.0).Qf


# -- characteristics -----------------------------------------------------------


def c11_size(f: ScalarField) -> float:
    """|grad f|_inf + |hess f|_inf on the grid."""
    return fields.gradient(f).sup_norm() + fields.hessian_sup_norm(f)


def admissibility(f: ScalarField, t: float) -> float:
    """t (|grad f|_inf + |hess f|_inf); characteristics need this <= c_M."""
    return t * c11_size(f)


def _mls_weights(nodes: np.ndarray, sites: np.ndarray, domain, h: float, k: int):
    """Weights w[node, j] over neighbour ids nb[node, j] reproducing quadratics.

    Each node value is the constant term of a weighted least-squares
    quadratic fit to its k nearest sites.
    """
    periodic = domain.periodic
    if periodic:
        tree = cKDTree(domain.canonicalize(sites), boxsize=1.0)
    else:
        tree = cKDTree(sites)
    _, nb = tree.query(nodes, k=k)
    d = sites[nb] - nodes[:, None, :]
    if periodic:
        d = wrap_difference(d)
    d = d / h
    dx, dy = d[..., 0], d[..., 1]
    B = np.stack([np.ones_like(dx), dx, dy, dx * dx, dx * dy, dy * dy], axis=-1)
    wt = np.sqrt(np.exp(-0.5 * (dx * dx + dy * dy)))
    A = B * wt[..., None]
    # a light ridge on the curvature terms keeps lattice-degenerate
    # neighbourhoods well posed; in units of h those terms are O(h^2) anyway
    M = np.einsum("mji,mjk->mik", A, A)
    M[:, 3:, 3:] += MLS_RIDGE * np.eye(3)
    e0 = np.zeros((len(nodes), 6, 1))
    e0[:, 0] = 1.0
    z = np.linalg.solve(M, e0)[..., 0]
    w = np.einsum("mjk,mk->mj", A, z) * wt
    return nb, w


def _mirror_sites(y, v, g, band):
    """Add reflections of sites near the square's edges.

    Fields here satisfy a Neumann condition, so their even extension is
    smooth and the mirrored characteristics are genuine; the ghosts spare
    boundary nodes a one-sided extrapolation.
    """
    ys, vs, gs = [y], [v], [g]
    for axis in (0, 1):
        for edge in (0.0, 1.0):
            near = np.abs(y[:, axis] - edge) < band
            yr = y[near].copy()
            yr[:, axis] = 2.0 * edge - yr[:, axis]
            gr = g[near].copy()
            gr[:, axis] *= -1.0
            ys.append(yr)
            vs.append(v[near])
            gs.append(gr)
    return np.concatenate(ys), np.concatenate(vs), np.concatenate(gs)


def hopflax_characteristics(f: ScalarField, t: float, *, c_M: float = C_M,
                            check: bool = True) -> HopfLaxResult:
    """Q_t f by forward characteristics and moving-least-squares resampling.

    Raises
    ------
    AdmissibilityError
        When ``check`` is set and t (|grad f|_inf + |hess f|_inf) > c_M.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    grid = f.grid
    lam = admissibility(f, t)
    if check and lam > c_M:
        raise AdmissibilityError(f"t*(|grad f|+|hess f|) = {lam:.4f} exceeds c_M = {c_M:.4f}")
    g = fields.gradient(f).flat()
    x = grid.flat_centers()
    v = f.values.reshape(-1) + 0.5 * t * np.sum(g * g, axis=1)
    y, clamp = exp_map(grid.domain, x, t * g, return_clamp=True)
    if not grid.domain.periodic:
        y, v, g = _mirror_sites(y, v, g, 3.0 * grid.h)
    nb, w = _mls_weights(x, y, grid.domain, grid.h, MLS_NEIGHBOURS)
    # fit offsets from the nearest site so constant data is reproduced exactly
    ref = v[nb[:, 0]]
    Q = (ref + np.sum(w * (v[nb] - ref[:, None]), axis=1)).reshape(grid.shape)
    gref = g[nb[:, 0]]
    grad = np.stack([gref[:, c] + np.sum(w * (g[nb, c] - gref[:, c, None]), axis=1) for c in range(2)],
                    axis=-1).reshape(grid.shape + (2,))
    # gamma'(t) = grad f(x) is constant along a characteristic, and x = y - t gamma'
    disp = -t * grad
    return HopfLaxResult(ScalarField(grid, Q), disp, HopfLaxMethod.CHARACTERISTICS, t,
                         VectorField(grid, grad), clamp)


def forward_images(f: ScalarField, t: float) -> np.ndarray:
    """phi_t(x) = exp_x(t grad f(x)) at every node, shape (N, N, 2)."""
    g = fields.gradient(f).values
    return exp_map(f.grid.domain, f.grid.centers, t * g)


# -- diagnostics ---------------------------------------------------------------


def hj_residual(f: ScalarField, t: float, dt: float, *, half: bool = True,
                c_M: float = C_M) -> float:
    """Sup-norm of d/dt Q_t f + (1/2)|grad Q_t f|^2 by a central difference.

    With ``half=False`` the factor 1/2 is dropped, for comparison.
    """
    if t - dt <= 0:
        raise ValueError("need t - dt > 0")
    qp = hopflax_characteristics(f, t + dt, c_M=c_M)
    qm = hopflax_characteristics(f, t - dt, c_M=c_M)
    q0 = hopflax_characteristics(f, t, c_M=c_M)
    dq = (qp.Qf.values - qm.Qf.values) / (2.0 * dt)
    g2 = np.sum(q0.grad.values ** 2, axis=-1)
    coef = 0.5 if half else 1.0
    return float(np.abs(dq + coef * g2).max())


def random_pairs(grid: Grid, count: int, seed: int, max_offset: int | None = None) -> np.ndarray:
    """Node index pairs, shape (count, 2) of flat indices; optionally nearby."""
    rng = np.random.default_rng(seed)
    N = grid.N
    a = rng.integers(0, N * N, count)
    if max_offset is None:
        b = rng.integers(0, N * N, count)
    else:
        i, j = np.divmod(a, N)
        di = rng.integers(-max_offset, max_offset + 1, count)
        dj = rng.integers(-max_offset, max_offset + 1, count)
        if grid.domain.periodic:
            i2, j2 = (i + di) % N, (j + dj) % N
        else:
            i2, j2 = np.clip(i + di, 0, N - 1), np.clip(j + dj, 0, N - 1)
        b = i2 * N + j2
    return np.stack([a, b], axis=-1)


def strict_convexity_gap(res: HopfLaxResult, pairs: np.ndarray, C_cal: float = C_CAL) -> float:
    """Largest value of d^2(y,y')/t - C_cal * RHS over node pairs.

    RHS = Q(y) - Q(y') + [d^2(x, y') - d^2(x, y)] / (2t) with x = x_t(y).
    Nonpositive means no violation.
    """
    grid = res.grid
    dom = grid.domain
    t = res.t
    Y = grid.flat_centers()
    Q = res.Qf.values.reshape(-1)
    X = res.argmin.reshape(-1, 2)
    a, b = pairs[:, 0], pairs[:, 1]
    lhs = dist2(dom, Y[a], Y[b]) / t
    rhs = Q[a] - Q[b] + (dist2(dom, X[a], Y[b]) - dist2(dom, X[a], Y[a])) / (2.0 * t)
    return float(np.max(lhs - C_cal * rhs))


def lip_defect(f: ScalarField, t: float, res: HopfLaxResult | None = None) -> tuple[float, float]:
    """Sup-norm of grad(Q_t f - f) and the bound t |grad f|_inf |hess f|_inf."""
    if res is None:
        res = hopflax_characteristics(f, t)
    diff = ScalarField(f.grid, res.Qf.values - f.values)
    defect = fields.gradient(diff).sup_norm()
    bound = t * fields.gradient(f).sup_norm() * fields.hessian_sup_norm(f)
    return defect, bound


def semigroup_defect(f: ScalarField, s: float, t: float, method: str = "characteristics") -> float:
    """Sup-norm of Q_{s+t} f - Q_s Q_t f."""
    run = hopflax_characteristics if method == "characteristics" else hopflax_grid
    qt = run(f, t).Qf
    qs_qt = run(ScalarField(f.grid, qt.values - qt.mean()), s).Qf.values + qt.mean()
    return float(np.abs(run(f, s + t).Qf.values - qs_qt).max())


def bilipschitz_constants(f: ScalarField, t: float) -> tuple[float, float]:
    """Discrete Lipschitz constants of phi_t and of its inverse over grid edges.

    Returns (max ratio, min ratio) of |phi(x) - phi(x')| / |x - x'| over all
    horizontally and vertically adjacent nodes; the inverse has Lipschitz
    constant 1 / min ratio on these pairs.
    """
    grid = f.grid
    dom = grid.domain
    img = forward_images(f, t)
    ratios = []
    for axis in (0, 1):
        if dom.periodic:
            nxt = np.roll(img, -1, axis=axis)
            d = np.sqrt(dist2(dom, img, nxt))
        else:
            sl = [slice(None), slice(None)]
            sl[axis] = slice(1, None)
            sl0 = [slice(None), slice(None)]
            sl0[axis] = slice(None, -1)
            d = np.sqrt(dist2(dom, img[tuple(sl0)], img[tuple(sl)]))
        ratios.append(d.ravel() / grid.h)
    r = np.concatenate(ratios)
    return float(r.max()), float(r.min())


def forward_injective(f: ScalarField, t: float) -> bool:
    """Every grid cell keeps its orientation under x -> x + t grad f(x).

    Checks the signed area of both triangles of every cell, using unwrapped
    displacements on the torus.
    """
    grid = f.grid
    g = fields.gradient(f).values
    P = grid.centers + t * g  # unwrapped images
    if grid.domain.periodic:
        Pr = np.roll(P, -1, axis=0)
        Pr[-1, :, 0] += 1.0
        Pu = np.roll(P, -1, axis=1)
        Pu[:, -1, 1] += 1.0
        Pru = np.roll(Pr, -1, axis=1)
        Pru[:, -1, 1] += 1.0
        P0 = P
    else:
        P0, Pr, Pu, Pru = P[:-1, :-1], P[1:, :-1], P[:-1, 1:], P[1:, 1:]

    def area(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    return bool(np.all(area(P0, Pr, Pru) > 0) and np.all(area(P0, Pru, Pu) > 0))


def injectivity_threshold(f: ScalarField, t_hi: float = 10.0, iters: int = 40) -> float:
    """Largest t (|grad f| + |hess f|) keeping the forward map injective (bisection)."""
    size = c11_size(f)
    if size == 0:
        return float("inf")
    lo, hi = 0.0, t_hi / size
    if forward_injective(f, hi):
        return t_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if forward_injective(f, mid):
            lo = mid
        else:
            hi = mid
    return lo * size


# -- pinned test family --------------------------------------------------------

FAMILY_EPS = (0.003, 0.01, 0.03)
FAMILY_SHAPES = ("cos", "cos_sin", "random")
_FAMILY_SEED = 20240611


def family_member(grid: Grid, shape: str, eps: float) -> ScalarField:
    """Zero-mean member of the fixed test corpus.

    ``random`` is a band-limited field (|k| <= 4) with decaying random
    coefficients, normalised to sup-norm 1 before scaling by ``eps``. On the
    square the sine in ``cos_sin`` becomes a cosine to respect the Neumann
    condition.
    """
    c = grid.centers
    x1, x2 = c[..., 0], c[..., 1]
    if shape == "cos":
        v = np.cos(2 * np.pi * x1)
    elif shape == "cos_sin":
        v = np.cos(2 * np.pi * x1) + (np.sin(2 * np.pi * x2) if grid.domain.periodic else np.cos(2 * np.pi * x2))
    elif shape == "random":
        rng = np.random.default_rng(_FAMILY_SEED)
        v = np.zeros(grid.shape)
        for k1 in range(0, 5):
            for k2 in range(0, 5):
                if k1 == k2 == 0 or k1 * k1 + k2 * k2 > 16:
                    continue
                amp = rng.normal() / (1.0 + k1 * k1 + k2 * k2)
                ph1, ph2 = rng.uniform(0, 2 * np.pi, 2)
                if grid.domain.periodic:
                    v += amp * np.cos(2 * np.pi * k1 * x1 + ph1) * np.cos(2 * np.pi * k2 * x2 + ph2)
                else:
                    v += amp * np.cos(np.pi * k1 * x1) * np.cos(np.pi * k2 * x2)
        v /= np.abs(v).max()
    else:
        raise ValueError(f"unknown family shape {shape!r}")
    v = eps * v
    return ScalarField(grid, v - v.mean(), fields.POTENTIAL)


def test_family(grid: Grid):
    """All (name, field) pairs of the pinned corpus on ``grid``."""
    return [(f"{s}@{e:g}", family_member(grid, s, e)) for s in FAMILY_SHAPES for e in FAMILY_EPS]


test_family.__test__ = False  # keep pytest from collecting it
