"""Grid-sampled scalar and vector fields with spectral calculus.

Torus fields expand in the Fourier basis ``exp(2 pi i k.x)``; square fields in
the Neumann cosine basis ``a_k1 a_k2 cos(pi k1 x1) cos(pi k2 x2)`` with
``a_0 = 1`` and ``a_k = sqrt(2)`` otherwise, which is orthonormal in L^2 and
exactly orthogonal on the cell-centred grid. Either way the zero coefficient
is the mean of the field.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .geometry import Domain, DomainKind, Grid

DENSITY = "density"
POTENTIAL = "potential"
_ROLE_TOL = 1e-10

# FFT/DCT sizes are restricted to powers of two unless this is switched off
REQUIRE_POWER_OF_TWO = True


class ResolutionError(ValueError):
    """Grid too coarse for the requested operation."""


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    role: str | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.shape:
            raise ValueError(f"values of shape {v.shape} on a {self.grid.shape} grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.role == DENSITY and abs(v.mean() - 1.0) > _ROLE_TOL:
            raise ValueError(f"density must have mean 1, got {v.mean():.3e}")
        if self.role == POTENTIAL and abs(v.mean()) > _ROLE_TOL:
            raise ValueError(f"potential must have mean 0, got {v.mean():.3e}")

    @cached_property
    def spectral(self) -> np.ndarray:
        return transform(self)

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self.grid.check_same(other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self.grid.check_same(other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def scaled(self, alpha: float) -> "ScalarField":
        role = self.role if self.role == POTENTIAL else None
        return ScalarField(self.grid, alpha * self.values, role)

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class VectorField:
    """Two-component field; ``values`` has shape (N, N, 2)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.shape + (2,):
            raise ValueError(f"vector values of shape {v.shape} on a {self.grid.shape} grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector field components must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, vec) -> "VectorField":
        return cls(grid, np.broadcast_to(np.asarray(vec, dtype=float), grid.shape + (2,)))

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=-1))

    def sup_norm(self) -> float:
        return float(self.norm().max())

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, 2)


# -- spectral machinery ------------------------------------------------------


def wavenumbers(grid: Grid) -> np.ndarray:
    """Integer wavenumbers along one axis, in the layout of the coefficients."""
    if grid.domain.periodic:
        return np.fft.fftfreq(grid.N, d=1.0 / grid.N)
    return np.arange(grid.N, dtype=float)


def laplacian_eigenvalues(grid: Grid) -> np.ndarray:
    """Eigenvalues of -Laplacian for each coefficient slot, shape (N, N)."""
    k = wavenumbers(grid)
    scale = 2.0 * np.pi if grid.domain.periodic else np.pi
    kk = (scale * k) ** 2
    return kk[:, None] + kk[None, :]


@lru_cache(maxsize=8)
def _cosine_matrices(N: int):
    x = (np.arange(N) + 0.5) / N
    k = np.arange(N)
    a = np.where(k == 0, 1.0, np.sqrt(2.0))
    phase = np.pi * np.outer(x, k)
    C = a * np.cos(phase)
    S = -(np.pi * k) * a * np.sin(phase)
    C2 = -((np.pi * k) ** 2) * C
    for m in (C, S, C2):
        m.setflags(write=False)
    return C, S, C2


def _check_size(N: int) -> None:
    if REQUIRE_POWER_OF_TWO and N & (N - 1):
        raise ResolutionError(f"N={N} is not a power of two (set fields.REQUIRE_POWER_OF_TWO = False)")


def transform(field: ScalarField) -> np.ndarray:
    """Spectral coefficients; the zero slot equals the field mean."""
    N = field.grid.N
    _check_size(N)
    if field.grid.domain.periodic:
        return np.fft.fft2(field.values) / (N * N)
    return sfft.dctn(field.values, type=2, norm="ortho") / N


def inverse_transform(coeffs: np.ndarray, grid: Grid, role: str | None = None) -> ScalarField:
    coeffs = np.asarray(coeffs)
    if coeffs.shape != grid.shape:
        raise ResolutionError(f"coefficients of shape {coeffs.shape} for a {grid.shape} grid")
    _check_size(grid.N)
    return ScalarField(grid, _synthesize(coeffs, grid), role)


def _synthesize(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    N = grid.N
    if grid.domain.periodic:
        return np.fft.ifft2(coeffs * (N * N)).real
    return sfft.idctn(np.real(coeffs) * N, type=2, norm="ortho")


def _torus_derivative(coeffs: np.ndarray, grid: Grid, order: tuple[int, int]) -> np.ndarray:
    N = grid.N
    k = wavenumbers(grid)
    mults = []
    for p in order:
        m = (2j * np.pi * k) ** p
        if p % 2 == 1:
            m = np.where(np.abs(k) == N // 2, 0.0, m)  # Nyquist has no odd derivative
        mults.append(m)
    return np.fft.ifft2(coeffs * mults[0][:, None] * mults[1][None, :] * (N * N)).real


def _square_derivative(coeffs: np.ndarray, grid: Grid, order: tuple[int, int]) -> np.ndarray:
    C, S, C2 = _cosine_matrices(grid.N)
    pick = {0: C, 1: S, 2: C2}
    return pick[order[0]] @ np.real(coeffs) @ pick[order[1]].T


def derivative(f: ScalarField, order: tuple[int, int]) -> np.ndarray:
    """Grid values of d^(order[0]) / dx1 d^(order[1]) / dx2 applied to f."""
    if f.grid.domain.periodic:
        return _torus_derivative(f.spectral, f.grid, order)
    return _square_derivative(f.spectral, f.grid, order)


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, np.stack([derivative(f, (1, 0)), derivative(f, (0, 1))], axis=-1))


def hessian(f: ScalarField) -> np.ndarray:
    """Pointwise Hessian, shape (N, N, 2, 2)."""
    a = derivative(f, (2, 0))
    b = derivative(f, (1, 1))
    c = derivative(f, (0, 2))
    return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)


def hessian_sup_norm(f: ScalarField) -> float:
    """Max over grid nodes of the Hessian's largest singular value."""
    a = derivative(f, (2, 0))
    b = derivative(f, (1, 1))
    c = derivative(f, (0, 2))
    # symmetric 2x2: largest |eigenvalue| = |tr|/2 + sqrt(((a-c)/2)^2 + b^2)
    sigma = np.abs(0.5 * (a + c)) + np.hypot(0.5 * (a - c), b)
    return float(sigma.max())


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _synthesize(-laplacian_eigenvalues(f.grid) * f.spectral, f.grid))


def apply_multiplier(f: ScalarField, multiplier: np.ndarray, role: str | None = None) -> ScalarField:
    return ScalarField(f.grid, _synthesize(f.spectral * multiplier, f.grid), role)


def dirichlet_energy(f: ScalarField) -> float:
    """Integral of |grad f|^2 against the uniform measure (Parseval)."""
    lam = laplacian_eigenvalues(f.grid)
    c = f.spectral
    if not f.grid.domain.periodic:
        c = np.real(c)
    return float(np.sum(lam * np.abs(c) ** 2))


def dirichlet_energy_quadrature(f: ScalarField) -> float:
    g = gradient(f).values
    return float(np.mean(np.sum(g * g, axis=-1)))


def l2_norm_sq(f: ScalarField) -> float:
    return float(np.mean(f.values**2))


# -- interpolation -------------------------------------------------------------


def _spline_mode(domain: Domain) -> str:
    return "grid-wrap" if domain.periodic else "reflect"


class Sampler:
    """Cubic-spline interpolant of a field, prefiltered once.

    Periodic extension on the torus, even reflection across the edges of the
    square (the Neumann extension). On the square the normal component of a
    vector field is reflected oddly instead, so it vanishes on the boundary.
    Exact at grid nodes.
    """

    def __init__(self, f: ScalarField | VectorField):
        self.grid = f.grid
        self.vector = isinstance(f, VectorField)
        self._doubled = self.vector and not f.grid.domain.periodic
        if self._doubled:
            # 2N-periodic extension: odd along the component's own axis
            self.mode = "grid-wrap"
            comps = [_odd_even_extension(f.values[..., c], c) for c in range(2)]
        else:
            self.mode = _spline_mode(f.grid.domain)
            comps = [f.values[..., c] for c in range(2)] if self.vector else [f.values]
        self._coeffs = [ndimage.spline_filter(np.ascontiguousarray(v), order=3, mode=self.mode) for v in comps]

    def __call__(self, points) -> np.ndarray:
        grid = self.grid
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        pts = pts.reshape(-1, 2)
        if grid.domain.periodic:
            pts = grid.domain.canonicalize(pts)
        coords = (pts * grid.N - 0.5).T
        if self._doubled:
            coords = np.mod(coords, 2 * grid.N)
        out = [ndimage.map_coordinates(c, coords, order=3, mode=self.mode, prefilter=False)
               for c in self._coeffs]
        if self.vector:
            return np.stack(out, axis=-1).reshape(lead + (2,))
        return out[0].reshape(lead)


def _odd_even_extension(v: np.ndarray, odd_axis: int) -> np.ndarray:
    for ax in range(2):
        mirrored = np.flip(v, axis=ax)
        v = np.concatenate([v, -mirrored if ax == odd_axis else mirrored], axis=ax)
    return v


def sample(f: ScalarField | VectorField, points) -> np.ndarray:
    """Cubic-spline interpolation of ``f`` at arbitrary points (see Sampler)."""
    return Sampler(f)(points)


# -- debugging dumps ----------------------------------------------------------

_MAGIC = b"SMF1"
_HEADER = struct.Struct("<4sBII")


def to_bytes(f: ScalarField | VectorField) -> bytes:
    """Flat binary layout: header (magic, domain kind, N, components), then
    row-major little-endian doubles."""
    kind = 0 if f.grid.domain.periodic else 1
    ncomp = 1 if isinstance(f, ScalarField) else 2
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    return _HEADER.pack(_MAGIC, kind, f.grid.N, ncomp) + payload


def from_bytes(blob: bytes) -> ScalarField | VectorField:
    magic, kind, N, ncomp = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError("not a field dump")
    grid = Grid(Domain(DomainKind.TORUS if kind == 0 else DomainKind.SQUARE), N)
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if ncomp == 1:
        return ScalarField(grid, data.reshape(N, N))
    return VectorField(grid, data.reshape(N, N, 2))


def from_function(grid: Grid, func, role: str | None = None) -> ScalarField:
    """Sample ``func(x1, x2)`` at the cell centres."""
    c = grid.centers
    return ScalarField(grid, func(c[..., 0], c[..., 1]), role)
