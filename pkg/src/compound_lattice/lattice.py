"""Two-dimensional lattice geometry.

Points are stored as columns: a single point has shape ``(2,)`` and a batch of
``M`` points has shape ``(2, M)``.  A lattice is described by a generator whose
columns are basis vectors, so ``lam = G @ k`` for an integer vector ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI_E = 2.0 * math.pi * math.e

# relative slack used when deciding that two candidate distances are tied
_TIE_RTOL = 1e-12


def _lagrange_reduce(generator: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange-Gauss reduction of a 2-D basis.

    Returns ``(reduced, U)`` with ``reduced = generator @ U`` and ``U``
    unimodular.  The reduced basis satisfies ``|b1| <= |b2|`` and
    ``|b1.b2| <= |b1|^2 / 2``.
    """
    b = generator.astype(float).copy()
    U = np.eye(2, dtype=np.int64)
    if b[:, 0] @ b[:, 0] > b[:, 1] @ b[:, 1]:
        b = b[:, ::-1].copy()
        U = U[:, ::-1].copy()
    for _ in range(200):
        n1 = b[:, 0] @ b[:, 0]
        q = int(round((b[:, 0] @ b[:, 1]) / n1))
        if q:
            b[:, 1] -= q * b[:, 0]
            U[:, 1] -= q * U[:, 0]
        if b[:, 1] @ b[:, 1] < n1 * (1 - 1e-15):
            b = b[:, ::-1].copy()
            U = U[:, ::-1].copy()
            continue
        break
    # make the pair acute so that (0, b1, b2) is a Delaunay triangle
    if b[:, 0] @ b[:, 1] < 0:
        b[:, 1] = -b[:, 1]
        U[:, 1] = -U[:, 1]
    return b, U


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """A full-rank lattice in R^2 given by its generator matrix."""

    generator: np.ndarray
    volume: float = field(init=False)

    def __post_init__(self):
        G = np.array(self.generator, dtype=float)
        if G.shape != (2, 2):
            raise ValueError(f"generator must be 2x2, got shape {G.shape}")
        det = float(np.linalg.det(G))
        if not abs(det) > 0:
            raise ValueError("basis vectors are linearly dependent")
        G.setflags(write=False)
        object.__setattr__(self, "generator", G)
        object.__setattr__(self, "volume", abs(det))

    @property
    def dimension(self) -> int:
        return 2

    def scaled(self, c: float) -> "LatticeBasis":
        return LatticeBasis(c * self.generator)

    def transformed(self, M) -> "LatticeBasis":
        """The lattice ``M @ Lambda`` for a linear map ``M``."""
        return LatticeBasis(np.asarray(M, dtype=float) @ self.generator)

    def dual(self) -> "LatticeBasis":
        return LatticeBasis(np.linalg.inv(self.generator).T)

    def point(self, coeffs) -> np.ndarray:
        return self.generator @ np.asarray(coeffs)

    @cached_property
    def _reduction(self):
        red, U = _lagrange_reduce(self.generator)
        return red, U, np.linalg.inv(red)

    @property
    def reduced_generator(self) -> np.ndarray:
        return self._reduction[0]

    @cached_property
    def packing_radius(self) -> float:
        red = self._reduction[0]
        return 0.5 * float(np.linalg.norm(red[:, 0]))

    @cached_property
    def covering_radius(self) -> float:
        # circumradius of the non-obtuse triangle (0, b1, b2) of a reduced basis
        red = self._reduction[0]
        b1, b2 = red[:, 0], red[:, 1]
        a = np.linalg.norm(b1)
        b = np.linalg.norm(b2)
        c = np.linalg.norm(b1 - b2)
        return float(a * b * c / (2.0 * self.volume))

    @cached_property
    def babai_radius(self) -> float:
        """Largest possible distance between a point and its Babai rounding."""
        red = self._reduction[0]
        return 0.5 * float(np.linalg.norm(red[:, 0]) + np.linalg.norm(red[:, 1]))

    @cached_property
    def _search_box(self) -> int:
        # If k0 is the Babai rounding then the closest point k* obeys
        # |B(k* - k0)| <= 2 |y - B k0| <= 2 babai_radius, which bounds the box.
        red_inv = self._reduction[2]
        return int(math.floor(2.0 * self.babai_radius * np.linalg.norm(red_inv, 2) + 1e-9))

    @cached_property
    def _candidate_offsets(self) -> np.ndarray:
        K = self._search_box
        r = np.arange(-K, K + 1)
        a, b = np.meshgrid(r, r, indexing="ij")
        return np.vstack([a.ravel(), b.ravel()])

    def babai(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Round ``y`` in the reduced basis; returns ``(residual, coeffs)``.

        ``coeffs`` are integer coefficients with respect to the original
        generator and ``residual = y - G @ coeffs``.  The residual lies in a
        centred fundamental parallelogram, within :attr:`babai_radius` of 0.
        """
        red, U, red_inv = self._reduction
        y = np.asarray(y, dtype=float)
        k_red = np.rint(red_inv @ y)
        residual = y - red @ k_red
        return residual, U @ k_red.astype(np.int64)

    def points_within(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """All lattice points of norm <= radius, with their coefficients."""
        red, U, red_inv = self._reduction
        K = int(math.ceil(radius * np.linalg.norm(red_inv, 2))) + 1
        r = np.arange(-K, K + 1)
        a, b = np.meshgrid(r, r, indexing="ij")
        k_red = np.vstack([a.ravel(), b.ravel()])
        pts = red @ k_red
        keep = np.einsum("ij,ij->j", pts, pts) <= radius * radius
        return pts[:, keep], (U @ k_red[:, keep]).astype(np.int64)


def closest_point(basis: LatticeBasis, y, return_coeffs: bool = False):
    """Exact closest lattice point to ``y`` (shape ``(2,)`` or ``(2, M)``).

    Ties are broken towards the lexicographically smallest coordinate vector.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = y[:, None] if single else y
    red, U, red_inv = basis._reduction
    k0 = np.rint(red_inv @ Y)
    # inside the packing ball the Babai point is the unique closest point
    r = Y - red @ k0
    inside = np.einsum("ij,ij->j", r, r) < basis.packing_radius**2 * (1 - 1e-9)
    lam = red @ k0
    k_best = k0.astype(np.int64)
    if not inside.all():
        out = ~inside
        lam[:, out], k_best[:, out] = _search(basis, Y[:, out], k0[:, out])
    coeffs = U @ k_best
    if single:
        lam, coeffs = lam[:, 0], coeffs[:, 0]
    if return_coeffs:
        return lam, coeffs
    return lam


def _search(basis: LatticeBasis, Y: np.ndarray, k0: np.ndarray):
    red = basis._reduction[0]
    offs = basis._candidate_offsets
    cand_k = k0[:, :, None] + offs[:, None, :]  # (2, M, C)
    cand = np.einsum("ij,jmc->imc", red, cand_k)
    d2 = ((Y[:, :, None] - cand) ** 2).sum(axis=0)  # (M, C)
    dmin = d2.min(axis=1, keepdims=True)
    near = d2 <= dmin * (1 + _TIE_RTOL) + 1e-300
    # lexicographic tie-break among the (rare) tied candidates
    x0 = np.where(near, cand[0], np.inf)
    x0min = x0.min(axis=1, keepdims=True)
    near &= np.abs(cand[0] - x0min) <= _TIE_RTOL * (1 + np.abs(x0min))
    x1 = np.where(near, cand[1], np.inf)
    best = np.argmin(x1, axis=1)
    idx = np.arange(Y.shape[1])
    return cand[:, idx, best], cand_k[:, idx, best].astype(np.int64)


def mod_lattice(basis: LatticeBasis, y) -> np.ndarray:
    """Representative of ``y`` in the Voronoi region of the lattice."""
    y = np.asarray(y, dtype=float)
    return y - closest_point(basis, y)


def vnr(basis: LatticeBasis, sigma: float) -> float:
    """Volume-to-noise ratio V^(2/n) / sigma^2."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = basis.dimension
    return basis.volume ** (2.0 / n) / sigma**2


def poltyrev_limit_logvol(sigma: float, D: float = 1.0, n: int = 2) -> float:
    """Smallest normalized log-volume (bits per n-dim block) with vanishing error."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if D < 1:
        raise ValueError("D must be >= 1")
    return 0.5 * n * math.log2(TWO_PI_E * sigma**2 * D ** (2.0 / n))


def distance_to_poltyrev_db(logvol_bits: float, sigma: float, D: float = 1.0, n: int = 2) -> float:
    """10 log10(gamma * D^(2/n) / 2 pi e) for a normalized log-volume in bits.

    0 dB is the Poltyrev limit; positive values are the excess VNR needed.
    """
    gamma = 2.0 ** (2.0 * logvol_bits / n) / sigma**2
    return 10.0 * math.log10(gamma * D ** (2.0 / n) / TWO_PI_E)


def sigma_for_distance_db(logvol_bits: float, gap_db: float, D: float = 1.0, n: int = 2) -> float:
    """Inverse of :func:`distance_to_poltyrev_db` in sigma."""
    gamma = TWO_PI_E * 10.0 ** (gap_db / 10.0) / D ** (2.0 / n)
    return math.sqrt(2.0 ** (2.0 * logvol_bits / n) / gamma)
