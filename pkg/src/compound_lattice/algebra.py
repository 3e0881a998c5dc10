"""Arithmetic in Z[sqrt 2] and the binary ideal partition chain it induces.

The canonical embedding used throughout is

    psi(a + b sqrt2) = (a + b sqrt2, a - b sqrt2)

and level ``i`` of the chain is ``eta * psi((sqrt2)^i Z[sqrt2])``.  Because
``(sqrt2)^2 = 2`` the chain is self-similar with period two and every
quotient ``Lambda_i / Lambda_{i+1}`` has order two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import LatticeBasis

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class QuadInt:
    """The algebraic integer ``a + b*sqrt(2)``."""

    a: int
    b: int = 0

    def __add__(self, other):
        other = _coerce(other)
        return QuadInt(self.a + other.a, self.b + other.b)

    __radd__ = __add__

    def __neg__(self):
        return QuadInt(-self.a, -self.b)

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        return QuadInt(self.a * other.a + 2 * self.b * other.b, self.a * other.b + self.b * other.a)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative powers leave the ring unless the element is a unit")
        out = QuadInt(1, 0)
        for _ in range(k):
            out = out * self
        return out

    def conjugate(self) -> "QuadInt":
        return QuadInt(self.a, -self.b)

    def norm(self) -> int:
        return self.a * self.a - 2 * self.b * self.b

    def is_unit(self) -> bool:
        return abs(self.norm()) == 1

    def __float__(self):
        return self.a + self.b * SQRT2

    @classmethod
    def sqrt2_power(cls, i: int) -> "QuadInt":
        """(sqrt 2)^i as an element of the ring."""
        if i < 0:
            raise ValueError("level must be non-negative")
        half = 2 ** (i // 2)
        return cls(half, 0) if i % 2 == 0 else cls(0, half)


def _coerce(x) -> QuadInt:
    if isinstance(x, QuadInt):
        return x
    if isinstance(x, (int, np.integer)):
        return QuadInt(int(x), 0)
    return NotImplemented


FUNDAMENTAL_UNIT = QuadInt(1, 1)
LOG_EPSILON = math.log(1.0 + SQRT2)


def embed(x: QuadInt, eta: float = 1.0) -> np.ndarray:
    """eta * psi(x) as a point of R^2."""
    return eta * np.array([x.a + x.b * SQRT2, x.a - x.b * SQRT2])


def field_norm(x: QuadInt) -> int:
    return x.norm()


def chain_basis(level: int, eta: float = 1.0) -> LatticeBasis:
    """Generator of ``eta * psi((sqrt2)^level Z[sqrt2])``.

    The columns are the embeddings of ``(sqrt2)^level`` and
    ``(sqrt2)^(level+1)``.
    """
    if level < 0:
        raise ValueError("level must be non-negative")
    g = QuadInt.sqrt2_power(level)
    return LatticeBasis(np.column_stack([embed(g, eta), embed(g * QuadInt(0, 1), eta)]))


def product_distance(level: int, eta: float = 1.0) -> float:
    """min |x1 x2| over nonzero points of level ``level``.

    The minimum of |N(x)| over the ideal (sqrt2)^i is |N((sqrt2)^i)| = 2^i,
    attained at units times the generator.
    """
    if level < 0:
        raise ValueError("level must be non-negative")
    return eta**2 * 2.0**level


def worst_case_min_distance(level: int, eta: float = 1.0, D: float = 1.0) -> float:
    """min over H with |det H| = D of the minimum distance of H Lambda_level.

    By AM-GM, |Hx|^2 >= n (D |x1 x2|)^(2/n) with equality for a suitable H,
    which gives sqrt(n) (D d_prod)^(1/n) for n = 2.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    return SQRT2 * math.sqrt(D * product_distance(level, eta))


@dataclass(frozen=True)
class FadingRealization:
    """Diagonal block-fading gain ``H = sqrt(D) * diag(h, 1/h)``.

    ``det_target`` is ``|det H|``; the default of 1 gives the unimodular set.
    """

    h: float
    det_target: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.det_target > 0:
            raise ValueError("det_target must be positive")

    @property
    def diagonal(self) -> np.ndarray:
        s = math.sqrt(self.det_target)
        return np.array([self.h * s, s / self.h])

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)

    def apply(self, basis: LatticeBasis) -> LatticeBasis:
        return basis.transformed(self.matrix)


@dataclass(frozen=True)
class UnitGroupData:
    fundamental_unit: QuadInt
    rho: float


def log_unit_covering_radius() -> float:
    """Covering radius of the log-unit lattice Z (log eps, -log eps)."""
    return 0.5 * math.hypot(LOG_EPSILON, LOG_EPSILON)


def unit_group() -> UnitGroupData:
    return UnitGroupData(FUNDAMENTAL_UNIT, log_unit_covering_radius())


def reduce_fading(h: float) -> tuple[int, float]:
    """Absorb a power of the fundamental unit into the fading gain.

    Returns ``(k, h / eps^k)`` where ``k`` minimises the norm of
    ``(log h - k log eps, -log h + k log eps)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    k = math.floor(math.log(h) / LOG_EPSILON + 0.5)
    return k, h / (1.0 + SQRT2) ** k


def extreme_channels() -> tuple[float, float]:
    """The two fading gains at the ends of one multiplicative period."""
    return 1.0, math.sqrt(1.0 + SQRT2)


@dataclass(frozen=True)
class PartitionChain:
    """Binary chain Lambda_0 > Lambda_1 > ... > Lambda_depth over Z[sqrt2]."""

    eta: float = 1.0
    depth: int = 3

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")

    @cached_property
    def level_bases(self) -> list[LatticeBasis]:
        return [chain_basis(i, self.eta) for i in range(self.depth + 1)]

    def basis(self, level: int) -> LatticeBasis:
        if 0 <= level <= self.depth:
            return self.level_bases[level]
        return chain_basis(level, self.eta)

    def faded_basis(self, level: int, fading: FadingRealization | None) -> LatticeBasis:
        b = self.basis(level)
        return b if fading is None else fading.apply(b)

    def coset_representative(self, level: int) -> np.ndarray:
        """eta * psi((sqrt2)^level): the nontrivial coset of level+1 in level."""
        return embed(QuadInt.sqrt2_power(level), self.eta)

    @property
    def quotient_order(self) -> int:
        return 2

    def volume(self, level: int) -> float:
        return self.basis(level).volume
