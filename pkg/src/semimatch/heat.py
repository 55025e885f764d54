"""Heat-regularised empirical measures and the zero-mean Poisson solve.

The empirical measure of a point cloud is evolved by the heat semigroup in
closed form: its spectral coefficients are exact sums over the atoms, damped
by ``exp(-lambda_k t)``. Modes whose damping factor underflows (below
``exp(-700)``) are never formed, so large times cost almost nothing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import fields
from .fields import DENSITY, POTENTIAL, ResolutionError, ScalarField, VectorField
from .geometry import Domain, Grid

log = logging.getLogger(__name__)

TRUNCATION_TOL = 1e-14
_NEGLIGIBLE_EXPONENT = 700.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    domain: Domain
    points: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        p = np.array(self.points, dtype=float, copy=True).reshape(-1, 2)
        if len(p) < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(self.domain.contains(p)):
            raise ValueError("points outside the domain")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def n(self) -> int:
        return len(self.points)

    def translated(self, shift) -> "PointCloud":
        if not self.domain.periodic:
            raise ValueError("translation is only a symmetry of the torus")
        return PointCloud(self.domain, self.domain.canonicalize(self.points + np.asarray(shift)), self.seed)


def sample_cloud(domain: Domain, n: int, seed: int) -> PointCloud:
    """n i.i.d. uniform points; bit-for-bit reproducible from ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(int(seed))
    return PointCloud(domain, rng.random((n, 2)), int(seed))


def required_resolution(t: float, tol: float = TRUNCATION_TOL) -> int:
    """Smallest power of two N with exp(-4 pi^2 (N/2)^2 t) < tol."""
    kmin = math.sqrt(math.log(1.0 / tol) / (4.0 * math.pi**2 * t))
    N = 2
    while N / 2 <= kmin:
        N *= 2
    return N


def check_resolution(grid: Grid, t: float, tol: float = TRUNCATION_TOL) -> None:
    if t <= 0:
        raise ValueError("heat time must be positive")
    tail = math.exp(-4.0 * math.pi**2 * (grid.N / 2) ** 2 * t)
    if tail >= tol:
        need = required_resolution(t, tol)
        raise ResolutionError(
            f"N={grid.N} under-resolves t={t:g} (tail {tail:.2e} >= {tol:g}); need N >= {need}"
        )


def _cutoff(t: float, kmax: int, scale: float) -> int:
    if t <= 0:
        return kmax
    k = int(math.sqrt(_NEGLIGIBLE_EXPONENT / (scale**2 * t))) + 1
    return min(k, kmax)


def _box_coefficients(cloud: PointCloud, grid: Grid, t: float):
    """Undamped coefficients of mu^n on the box of modes retained at time t.

    Returns the box coefficients, the matching -Laplacian eigenvalues and the
    index arrays placing the box into the full coefficient layout.
    """
    N = grid.N
    X = cloud.points
    if grid.domain.periodic:
        K = _cutoff(t, N // 2 - 1, 2.0 * np.pi)
        k = np.arange(-K, K + 1)
        # the FFT layout is anchored at j/N while cells are centred at (j+1/2)/N
        A = np.exp(-2j * np.pi * np.outer(X[:, 0] - 0.5 / N, k))
        B = np.exp(-2j * np.pi * np.outer(X[:, 1] - 0.5 / N, k))
        lam = (2.0 * np.pi) ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)
        idx = np.mod(k, N)
    else:
        K = _cutoff(t, N - 1, np.pi)
        k = np.arange(K + 1)
        a = np.where(k == 0, 1.0, np.sqrt(2.0))
        A = a * np.cos(np.pi * np.outer(X[:, 0], k))
        B = a * np.cos(np.pi * np.outer(X[:, 1], k))
        lam = np.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2)
        idx = k
    c = (A.T @ B) / cloud.n
    c[lam == 0] = 1.0
    return c, lam, np.ix_(idx, idx)


def _place(grid: Grid, box: np.ndarray, where) -> np.ndarray:
    out = np.zeros(grid.shape, dtype=complex if grid.domain.periodic else float)
    out[where] = box
    return out


def empirical_coefficients(cloud: PointCloud, grid: Grid, t: float = 0.0) -> np.ndarray:
    """Spectral coefficients of P_t mu^n in the layout of ``fields.transform``.

    Modes whose damping factor underflows are left at zero.
    """
    c, lam, where = _box_coefficients(cloud, grid, t)
    return _place(grid, c * np.exp(-lam * t), where)


def heat_evolve(cloud: PointCloud, t: float, grid: Grid) -> ScalarField:
    """Density of P_t* mu^n sampled at the cell centres."""
    if cloud.domain != grid.domain:
        raise ValueError("cloud and grid live on different domains")
    check_resolution(grid, t)
    coeffs = empirical_coefficients(cloud, grid, t)
    values = fields._synthesize(coeffs, grid)
    # remove round-off drift of the zero mode
    values += 1.0 - values.mean()
    return ScalarField(grid, values, DENSITY)


def solve_poisson(rho: ScalarField, mean_tol: float = 1e-8) -> ScalarField:
    """Zero-mean f with -Laplacian f = rho - 1."""
    m = rho.mean()
    if abs(m - 1.0) > mean_tol:
        raise ValueError(f"right-hand side must have mean 1, got {m:.12g}")
    lam = fields.laplacian_eigenvalues(rho.grid)
    c = np.array(rho.spectral, copy=True)
    c[0, 0] = 0.0
    lam[0, 0] = 1.0
    f = fields._synthesize(c / lam, rho.grid)
    f -= f.mean()
    return ScalarField(rho.grid, f, POTENTIAL)


def matching_field(cloud: PointCloud, t: float, grid: Grid) -> tuple[ScalarField, VectorField]:
    """f^{n,t} and its gradient: heat evolution, Poisson solve, differentiation.

    The two diagonal steps are applied to the coefficients directly rather
    than through the sampled density; at large t the density rounds to 1 in
    floating point while f^{n,t} is still a (tiny) nonzero field.
    """
    if cloud.domain != grid.domain:
        raise ValueError("cloud and grid live on different domains")
    check_resolution(grid, t)
    c, lam, where = _box_coefficients(cloud, grid, t)
    safe = np.where(lam == 0, 1.0, lam)
    pot = np.where(lam == 0, 0.0, (c * np.exp(-lam * t)) / safe)
    f = fields._synthesize(_place(grid, pot, where), grid)
    f = ScalarField(grid, f - f.mean(), POTENTIAL)
    return f, fields.gradient(f)


def poisson_then_heat(cloud: PointCloud, t: float, grid: Grid) -> ScalarField:
    """P_t applied to the band-limited Poisson potential of mu^n.

    Same operator as ``matching_field`` with the two diagonal factors applied
    in the other order; used to check that they commute.
    """
    check_resolution(grid, t)
    c, lam, where = _box_coefficients(cloud, grid, t)
    safe = np.where(lam == 0, 1.0, lam)
    pot = np.where(lam == 0, 0.0, c / safe)
    f = fields._synthesize(_place(grid, pot * np.exp(-lam * t), where), grid)
    return ScalarField(grid, f - f.mean(), POTENTIAL)


def clamp_density(rho: ScalarField) -> tuple[ScalarField, float]:
    """Zero out tiny negative undershoots and renormalise to mean 1.

    Returns the clamped density and the largest undershoot removed.
    """
    v = rho.values
    undershoot = float(max(0.0, -v.min()))
    if undershoot > 1e-8:
        raise ValueError(f"density undershoot {undershoot:.2e} exceeds 1e-8")
    if undershoot > 0:
        log.debug("clamping density undershoot %.3e", undershoot)
    c = np.maximum(v, 0.0)
    c = c / c.mean()
    return ScalarField(rho.grid, c), undershoot
