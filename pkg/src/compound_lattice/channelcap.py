"""Entropy, capacity and Bhattacharyya estimates for mod-lattice channels.

All estimators draw Gaussian noise ``w ~ N(0, sigma^2 I_2)`` and average a
per-sample statistic.  Samples are produced in fixed-size shards, each with
its own child seed, and merged in shard order, so a result depends only on
``(seed, n_samples)`` and never on the number of worker threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .algebra import FadingRealization, PartitionChain, extreme_channels, log_unit_covering_radius
from .lattice import LatticeBasis

LN2 = math.log(2.0)
SHARD_SIZE = 1 << 14
MIN_SAMPLES = 10_000

# Gaussian tail: terms further than this many sigmas past the nearest point
# contribute less than exp(-32) each relative to the leading term.
TRUNCATION_SIGMAS = 8.0
# dual (Poisson) terms below exp(-DUAL_CUTOFF) are dropped
DUAL_CUTOFF = 40.0


@dataclass(frozen=True)
class CapacityEstimate:
    bits: float
    stderr: float
    samples: int

    def clamped(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return min(max(self.bits, lo), hi)


@dataclass(frozen=True)
class BhattacharyyaEstimate:
    z: float
    stderr: float
    samples: int


# ---------------------------------------------------------------------------
# aliased Gaussian density


class _DensityPlan:
    """Precomputed terms for f(y) = sum_lambda g_sigma(y - lambda)."""

    def __init__(self, basis: LatticeBasis, sigma: float):
        self.basis = basis
        self.sigma = sigma
        reach = basis.babai_radius + basis.covering_radius + TRUNCATION_SIGMAS * sigma
        n_direct = math.pi * reach**2 / basis.volume
        dual = basis.dual()
        dual_reach = math.sqrt(DUAL_CUTOFF / (2.0 * math.pi**2 * sigma**2))
        n_dual = math.pi * (dual_reach + dual.babai_radius) ** 2 / dual.volume
        if n_dual < n_direct:
            self.mode = "dual"
            pts, _ = dual.points_within(dual_reach)
            self.points = pts
            self.weights = np.exp(-2.0 * math.pi**2 * sigma**2 * np.einsum("ij,ij->j", pts, pts))
        else:
            self.mode = "direct"
            pts, _ = basis.points_within(reach)
            self.points = pts
            self.sqnorm = np.einsum("ij,ij->j", pts, pts)
        self.log_norm = -math.log(2.0 * math.pi * sigma**2)

    def log_density(self, y: np.ndarray, chunk: int = 1 << 15) -> np.ndarray:
        r, _ = self.basis.babai(y)
        out = np.empty(r.shape[1])
        for s in range(0, r.shape[1], chunk):
            rc = r[:, s : s + chunk]
            if self.mode == "direct":
                inv2s2 = 0.5 / self.sigma**2
                e = (2.0 * (rc.T @ self.points) - self.sqnorm[None, :]) * inv2s2
                e -= (np.einsum("ij,ij->j", rc, rc) * inv2s2)[:, None]
                m = e.max(axis=1)
                out[s : s + chunk] = m + np.log(np.exp(e - m[:, None]).sum(axis=1)) + self.log_norm
            else:
                c = np.cos(2.0 * math.pi * (rc.T @ self.points)) @ self.weights
                out[s : s + chunk] = np.log(np.maximum(c, 1e-300)) - math.log(self.basis.volume)
        return out


@lru_cache(maxsize=256)
def _plan_cached(gen_bytes: bytes, sigma: float) -> _DensityPlan:
    G = np.frombuffer(gen_bytes, dtype=float).reshape(2, 2)
    return _DensityPlan(LatticeBasis(G), sigma)


def _plan(basis: LatticeBasis, sigma: float) -> _DensityPlan:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return _plan_cached(np.ascontiguousarray(basis.generator).tobytes(), float(sigma))


def log_aliased_density(basis: LatticeBasis, sigma: float, y) -> np.ndarray | float:
    """Natural log of the Gaussian density folded modulo the lattice."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    out = _plan(basis, sigma).log_density(y[:, None] if single else y)
    return float(out[0]) if single else out


def aliased_density(basis: LatticeBasis, sigma: float, y) -> np.ndarray | float:
    """f(y) = sum over lattice points of the N(0, sigma^2 I) density at y - lambda."""
    return np.exp(log_aliased_density(basis, sigma, y))


def coset_llr(bottom: LatticeBasis, rep: np.ndarray, sigma: float, y: np.ndarray) -> np.ndarray:
    """log f_bottom(y) - log f_bottom(y - rep) for points ``y`` of shape (2, M)."""
    rep = np.asarray(rep, dtype=float)[:, None]
    return log_aliased_density(bottom, sigma, y) - log_aliased_density(bottom, sigma, y - rep)


# ---------------------------------------------------------------------------
# Monte-Carlo harness


def _shard_stats(sample_fn, seed_seq, count):
    rng = np.random.default_rng(seed_seq)
    v = np.asarray(sample_fn(rng, count), dtype=float)
    mean = float(v.mean())
    return count, mean, float(((v - mean) ** 2).sum())


def mc_mean(
    sample_fn: Callable[[np.random.Generator, int], np.ndarray],
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> tuple[float, float, int]:
    """Mean and standard error of ``sample_fn`` over ``n_samples`` draws.

    Shards are merged in index order with Chan's pairwise update, so the
    result is bit-identical for any ``workers``.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    n_shards = -(-n_samples // SHARD_SIZE)
    counts = [SHARD_SIZE] * (n_shards - 1) + [n_samples - SHARD_SIZE * (n_shards - 1)]
    seeds = np.random.SeedSequence(seed).spawn(n_shards)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _shard_stats(sample_fn, *a), zip(seeds, counts)))
    else:
        parts = [_shard_stats(sample_fn, s, c) for s, c in zip(seeds, counts)]
    n, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        tot = n + nb
        delta = mb - mean
        mean += delta * nb / tot
        m2 += m2b + delta * delta * n * nb / tot
        n = tot
    return mean, math.sqrt(m2 / (n - 1) / n), n


def _check_samples(n_samples: int):
    if n_samples < MIN_SAMPLES:
        warnings.warn(
            f"n_samples={n_samples} is below {MIN_SAMPLES}; the reported stderr may be unreliable",
            stacklevel=3,
        )


def _noise(rng: np.random.Generator, sigma: float, count: int) -> np.ndarray:
    return rng.normal(0.0, sigma, size=(2, count))


# ---------------------------------------------------------------------------
# entropies and capacities


def mod_entropy(basis: LatticeBasis, sigma: float, n_samples: int = 100_000, seed: int = 0, workers: int = 1) -> CapacityEstimate:
    """Differential entropy (bits) of Gaussian noise reduced modulo the lattice."""
    _check_samples(n_samples)
    plan = _plan(basis, sigma)

    def sample(rng, count):
        return -plan.log_density(_noise(rng, sigma, count)) / LN2

    mean, se, n = mc_mean(sample, n_samples, seed, workers)
    return CapacityEstimate(mean, se, n)


def partition_capacity(
    top: LatticeBasis,
    bottom: LatticeBasis,
    sigma: float,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> CapacityEstimate:
    """Capacity of the top/bottom partition channel for any nested pair.

    log2|top/bottom| + h(top) - h(bottom), both entropies evaluated on the
    same noise samples.
    """
    _check_samples(n_samples)
    index = bottom.volume / top.volume
    if abs(index - round(index)) > 1e-6 or round(index) < 1:
        raise ValueError(f"lattices are not nested: volume ratio {index}")
    log_index = math.log2(round(index))
    p_top, p_bottom = _plan(top, sigma), _plan(bottom, sigma)

    def sample(rng, count):
        w = _noise(rng, sigma, count)
        return log_index + (p_bottom.log_density(w) - p_top.log_density(w)) / LN2

    mean, se, n = mc_mean(sample, n_samples, seed, workers)
    return CapacityEstimate(mean, se, n)


def _level_llr_sampler(chain: PartitionChain, level: int, fading, sigma: float):
    bottom = chain.faded_basis(level + 1, fading)
    rep = chain.coset_representative(level)
    if fading is not None:
        rep = fading.diagonal * rep

    def llr(rng, count):
        return coset_llr(bottom, rep, sigma, _noise(rng, sigma, count))

    return llr


def level_capacity(
    chain: PartitionChain,
    level: int,
    fading: FadingRealization | None,
    sigma: float,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> CapacityEstimate:
    """Capacity of the H Lambda_i / H Lambda_{i+1} channel in bits.

    With shared noise, 1 + log2 f_{i+1}(w) - log2 f_i(w) equals
    1 - log2(1 + exp(-L(w))) where L is the coset log-likelihood ratio, so the
    two entropies are differenced sample by sample.
    """
    if not 0 <= level:
        raise ValueError("level must be non-negative")
    _check_samples(n_samples)
    llr = _level_llr_sampler(chain, level, fading, sigma)

    def sample(rng, count):
        return 1.0 - np.logaddexp(0.0, -llr(rng, count)) / LN2

    mean, se, n = mc_mean(sample, n_samples, seed, workers)
    return CapacityEstimate(mean, se, n)


def mod_capacity(
    chain: PartitionChain,
    level: int,
    fading: FadingRealization | None,
    sigma: float,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> CapacityEstimate:
    """Capacity of the mod-H Lambda_i channel: log2 V(Lambda_i) - h(H Lambda_i)."""
    basis = chain.faded_basis(level, fading)
    h = mod_entropy(basis, sigma, n_samples, seed, workers)
    return CapacityEstimate(math.log2(basis.volume) - h.bits, h.stderr, h.samples)


def bhattacharyya(
    chain: PartitionChain,
    level: int,
    fading: FadingRealization | None,
    sigma: float,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> BhattacharyyaEstimate:
    """Bhattacharyya parameter of the binary partition channel at ``level``.

    The channel is symmetric, so Z = E[sqrt(p1/p0)] under input 0, i.e. the
    mean of exp(-L/2).
    """
    _check_samples(n_samples)
    llr = _level_llr_sampler(chain, level, fading, sigma)

    def sample(rng, count):
        return np.exp(-0.5 * llr(rng, count))

    mean, se, n = mc_mean(sample, n_samples, seed, workers)
    return BhattacharyyaEstimate(mean, se, n)


@dataclass(frozen=True)
class ModChannelSpec:
    """A mod-H Lambda_top channel, or a partition channel when ``bottom_level`` is set."""

    top_level: int
    bottom_level: int | None
    fading: FadingRealization | None
    sigma: float

    def __post_init__(self):
        if self.bottom_level is not None and self.bottom_level != self.top_level + 1:
            raise ValueError("binary partition channels need bottom_level = top_level + 1")

    def capacity(self, chain: PartitionChain, n_samples: int = 100_000, seed: int = 0, workers: int = 1) -> CapacityEstimate:
        if self.bottom_level is None:
            return mod_capacity(chain, self.top_level, self.fading, self.sigma, n_samples, seed, workers)
        return level_capacity(chain, self.top_level, self.fading, self.sigma, n_samples, seed, workers)


# ---------------------------------------------------------------------------
# compound capacity


@dataclass
class CompoundCapacity:
    value: float
    stderr: float
    h_argmin: float
    side: str  # "h1", "h2" or "interior"
    grid_h: np.ndarray = field(repr=False)
    grid_values: np.ndarray = field(repr=False)


def compound_level_capacity(
    chain: PartitionChain,
    level: int,
    sigma: float,
    grid_size: int = 64,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    refine_iters: int = 20,
) -> CompoundCapacity:
    """Infimum of the level capacity over the unimodular fading set.

    The capacity is periodic in log h with period log(1+sqrt2) and symmetric
    under h -> 1/h, so one half-period h in [1, sqrt(1+sqrt2)] covers the whole
    set.  All evaluations share the same noise (common random numbers), which
    keeps the curve smooth enough for a golden-section refinement.
    """
    h1, h2 = extreme_channels()
    grid = np.exp(np.linspace(0.0, math.log(h2), grid_size))

    def cap(h):
        return level_capacity(chain, level, FadingRealization(float(h)), sigma, n_samples, seed, workers)

    ests = [cap(h) for h in grid]
    vals = np.array([e.bits for e in ests])
    j = int(np.argmin(vals))
    best_h, best = float(grid[j]), ests[j]
    lo = float(grid[max(j - 1, 0)])
    hi = float(grid[min(j + 1, grid_size - 1)])
    if 0 < j < grid_size - 1:
        # golden-section search in log h
        g = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = math.log(lo), math.log(hi)
        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = cap(math.exp(c)), cap(math.exp(d))
        for _ in range(refine_iters):
            if fc.bits < fd.bits:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = cap(math.exp(c))
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = cap(math.exp(d))
        for hh, e in ((math.exp(c), fc), (math.exp(d), fd)):
            if e.bits < best.bits:
                best_h, best = hh, e
    half_step = 0.5 * math.log(h2) / max(grid_size - 1, 1)
    if abs(math.log(best_h)) <= half_step:
        side = "h1"
    elif abs(math.log(best_h) - math.log(h2)) <= half_step:
        side = "h2"
    else:
        side = "interior"
    return CompoundCapacity(best.bits, best.stderr, best_h, side, grid, vals)


# ---------------------------------------------------------------------------
# unit-lattice sandwich


@dataclass
class BoundRow:
    h: float
    lower: CapacityEstimate
    value: CapacityEstimate
    upper: CapacityEstimate
    ok_lower: bool
    ok_upper: bool

    @property
    def ok(self) -> bool:
        return self.ok_lower and self.ok_upper


@dataclass
class BoundReport:
    level: int
    sigma: float
    rho: float
    rows: list[BoundRow]

    @property
    def violations(self) -> list[BoundRow]:
        return [r for r in self.rows if not r.ok]


def capacity_bound_check(
    chain: PartitionChain,
    level: int,
    sigma: float,
    h_samples: Sequence[float],
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    n_sigma: float = 3.0,
) -> BoundReport:
    """Check C(L, (e^rho s)^2) <= C_H(L, s^2) <= C(L, (e^-rho s)^2) for each h.

    Every estimate uses the same seed; a bound counts as violated only when
    it fails by more than ``n_sigma`` combined standard errors.
    """
    rho = log_unit_covering_radius()
    lower = mod_capacity(chain, level, None, math.exp(rho) * sigma, n_samples, seed, workers)
    upper = mod_capacity(chain, level, None, math.exp(-rho) * sigma, n_samples, seed, workers)
    rows = []
    for h in h_samples:
        mid = mod_capacity(chain, level, FadingRealization(float(h)), sigma, n_samples, seed, workers)
        tol_lo = n_sigma * math.hypot(lower.stderr, mid.stderr)
        tol_hi = n_sigma * math.hypot(upper.stderr, mid.stderr)
        rows.append(
            BoundRow(
                float(h),
                lower,
                mid,
                upper,
                lower.bits <= mid.bits + tol_lo,
                mid.bits <= upper.bits + tol_hi,
            )
        )
    return BoundReport(level, sigma, rho, rows)


def sigma_from_db(inv_sigma2_db: float) -> float:
    """sigma for a given 1/sigma^2 in dB (per-dimension noise variance)."""
    return 10.0 ** (-inv_sigma2_db / 20.0)
