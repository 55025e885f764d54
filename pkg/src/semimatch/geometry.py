"""Flat two-dimensional domains: the unit-area torus and the unit square.

Points are stored as float64 arrays whose last axis has length 2, so every
function here works equally on a single point ``(2,)`` or a batch ``(..., 2)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class DomainKind(str, enum.Enum):
    TORUS = "torus"
    SQUARE = "square"


@dataclass(frozen=True)
class Domain:
    """A flat domain of side 1 carrying the uniform probability measure."""

    kind: DomainKind
    side: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if self.side != 1.0:
            raise ValueError("only unit side length is supported")

    @classmethod
    def torus(cls) -> "Domain":
        return cls(DomainKind.TORUS)

    @classmethod
    def square(cls) -> "Domain":
        return cls(DomainKind.SQUARE)

    @property
    def periodic(self) -> bool:
        return self.kind is DomainKind.TORUS

    @property
    def diameter(self) -> float:
        return float(np.sqrt(0.5)) if self.periodic else float(np.sqrt(2.0))

    @property
    def measure(self) -> float:
        return self.side**2

    def canonicalize(self, p):
        """Map coordinates into [0, 1) on the torus; check range on the square."""
        p = np.asarray(p, dtype=float)
        if self.periodic:
            q = p - np.floor(p)
            # floor subtraction can land exactly on 1.0 for tiny negative inputs
            return np.where(q >= 1.0, 0.0, q)
        if np.any((p < 0.0) | (p > 1.0)):
            raise ValueError("point outside the unit square")
        return p

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.periodic:
            return np.all((p >= 0.0) & (p < 1.0), axis=-1)
        return np.all((p >= 0.0) & (p <= 1.0), axis=-1)


def wrap_difference(delta):
    """Representative of a coordinate difference in (-1/2, 1/2].

    An exact tie at +-1/2 resolves to +1/2 (the positive representative).
    """
    delta = np.asarray(delta, dtype=float)
    w = delta - np.floor(delta + 0.5)
    return np.where(w == -0.5, 0.5, w)


def displacement(domain: Domain, p, q):
    """Vector from p to q along the shortest path (the logarithm map)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if domain.periodic:
        return wrap_difference(q - p)
    return q - p


def dist(domain: Domain, p, q):
    return np.sqrt(dist2(domain, p, q))


def dist2(domain: Domain, p, q):
    v = displacement(domain, p, q)
    return np.sum(v * v, axis=-1)


def log_map(domain: Domain, p, q):
    return displacement(domain, p, q)


def exp_map(domain: Domain, p, v, *, return_clamp: bool = False):
    """Translate p by v; wraps on the torus, clamps to the square.

    With ``return_clamp`` the largest clamp distance is returned too. A nonzero
    value means the displacement left the square, i.e. the vector field was not
    tangent to the boundary.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    q = p + v
    if domain.periodic:
        out = domain.canonicalize(q)
        clamp = 0.0
    else:
        out = np.clip(q, 0.0, 1.0)
        clamp = float(np.max(np.sqrt(np.sum((q - out) ** 2, axis=-1)), initial=0.0))
    if return_clamp:
        return out, clamp
    return out


@dataclass(frozen=True)
class Grid:
    """Regular N x N cell-centred grid; each cell carries mass 1/N^2."""

    domain: Domain
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("grid resolution must be at least 2")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.N)

    @property
    def quadrature_weight(self) -> float:
        return 1.0 / (self.N * self.N)

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres, shape (N, N, 2); index [i, j] is (x1_i, x2_j)."""
        x1, x2 = np.meshgrid(self.axis, self.axis, indexing="ij")
        c = np.stack([x1, x2], axis=-1)
        c.setflags(write=False)
        return c

    def flat_centers(self) -> np.ndarray:
        return self.centers.reshape(-1, 2)

    def cell_index(self, p) -> np.ndarray:
        """Flat index of the cell containing each point."""
        p = np.asarray(p, dtype=float)
        ij = np.floor(p * self.N).astype(np.int64)
        if self.domain.periodic:
            ij %= self.N
        else:
            np.clip(ij, 0, self.N - 1, out=ij)
        return ij[..., 0] * self.N + ij[..., 1]

    def check_same(self, other: "Grid") -> None:
        if self.domain != other.domain or self.N != other.N:
            raise ValueError(f"grid mismatch: {self} vs {other}")
