"""Construction-D multilevel lattice codes and multistage decoding.

A codeword is a ``2 x (k*T)`` real matrix: ``k`` chained blocks of ``T``
two-dimensional lattice points.  Column ``t`` is

    eta * psi( sum_i c_{i,t} (sqrt2)^i )

where ``c_i`` is the level-``i`` polar codeword; the coarse lattice part is
fixed at zero (infinite-constellation transmission).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import FadingRealization, PartitionChain, extreme_channels, reduce_fading, worst_case_min_distance
from .channelcap import (
    BhattacharyyaEstimate,
    CapacityEstimate,
    _level_llr_sampler,
    bhattacharyya,
    coset_llr,
    level_capacity,
)
from .lattice import closest_point, distance_to_poltyrev_db, poltyrev_limit_logvol
from .polar import (
    FORMAT_VERSION,
    LLR_CLAMP,
    PolarCode,
    UniversalPolarCode,
    _parse_header,
    bec_evolve,
    build_universal,
    decode_universal,
    genie_error_probabilities,
)


@dataclass(eq=False)
class MultilevelCode:
    chain: PartitionChain
    codes: list[UniversalPolarCode]

    def __post_init__(self):
        self.codes = [UniversalPolarCode.from_polar(c) if isinstance(c, PolarCode) else c for c in self.codes]
        if len(self.codes) != self.chain.depth:
            raise ValueError(f"need one code per level ({self.chain.depth}), got {len(self.codes)}")
        if len({c.N for c in self.codes}) != 1 or len({c.k for c in self.codes}) != 1:
            raise ValueError("all component codes must share N and k")

    @property
    def T(self) -> int:
        return self.codes[0].N

    @property
    def k(self) -> int:
        return self.codes[0].k

    @property
    def depth(self) -> int:
        return self.chain.depth

    @property
    def n_info(self) -> list[int]:
        return [c.n_info for c in self.codes]

    @property
    def rates(self) -> list[float]:
        return [c.rate for c in self.codes]

    def dumps(self) -> str:
        out = [
            f"# multilevel-code v{FORMAT_VERSION}",
            f"eta={self.chain.eta!r}",
            f"depth={self.chain.depth}",
        ]
        for i, c in enumerate(self.codes):
            out.append(f"[level {i}]")
            out.append(c.dumps().rstrip("\n"))
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MultilevelCode":
        head, *sections = text.split("[level ")
        fields = _parse_header(head, "multilevel-code")
        chain = PartitionChain(float(fields["eta"]), int(fields["depth"]))
        codes = []
        for sec in sections:
            _, _, body = sec.partition("]")
            codes.append(UniversalPolarCode.loads(body))
        return cls(chain, codes)


# ---------------------------------------------------------------------------
# message layout


def pack_message(bits_per_level) -> np.ndarray:
    """Flat bit array, level-major then position."""
    return np.concatenate([np.asarray(b, dtype=np.uint8) for b in bits_per_level], axis=-1)


def unpack_message(code: MultilevelCode, flat) -> list[np.ndarray]:
    flat = np.asarray(flat, dtype=np.uint8)
    if flat.shape[-1] != sum(code.n_info):
        raise ValueError(f"expected {sum(code.n_info)} bits, got {flat.shape[-1]}")
    cuts = np.cumsum(code.n_info)[:-1]
    return np.split(flat, cuts, axis=-1)


def random_message(code: MultilevelCode, rng: np.random.Generator, batch: int) -> list[np.ndarray]:
    return [rng.integers(0, 2, size=(batch, n), dtype=np.uint8) for n in code.n_info]


# ---------------------------------------------------------------------------
# encoding


def _reps(chain: PartitionChain) -> np.ndarray:
    return np.column_stack([chain.coset_representative(i) for i in range(chain.depth)])  # (2, m)


def level_codewords(code: MultilevelCode, bits_per_level) -> list[np.ndarray]:
    """Polar codewords per level, each of shape (..., k*T)."""
    if len(bits_per_level) != code.depth:
        raise ValueError("need one bit array per level")
    out = []
    for c, b in zip(code.codes, bits_per_level):
        x = c.encode(b)
        out.append(x.reshape(x.shape[:-2] + (c.k * c.N,)))
    return out


def lattice_point_from_codewords(chain: PartitionChain, cws) -> np.ndarray:
    reps = _reps(chain)
    X = 0.0
    for i, c in enumerate(cws):
        X = X + reps[:, i][:, None] * np.asarray(c, dtype=float)[..., None, :]
    return np.asarray(X)


def encode(code: MultilevelCode, bits_per_level) -> np.ndarray:
    """Codeword of shape (..., 2, k*T) for per-level information bits."""
    return lattice_point_from_codewords(code.chain, level_codewords(code, bits_per_level))


def coset_bits(chain: PartitionChain, X: np.ndarray) -> list[np.ndarray]:
    """Recover the per-level coset digits of points of Lambda_0 (columns of X)."""
    X = np.asarray(X, dtype=float)
    lead = X.shape[:-2]
    cols = np.moveaxis(X, -2, 0).reshape(2, -1)
    out = []
    for i in range(chain.depth):
        coeffs = np.rint(np.linalg.solve(chain.basis(i).generator, cols)).astype(np.int64)
        bit = (coeffs[0] & 1).astype(np.uint8)
        cols = cols - chain.coset_representative(i)[:, None] * bit
        out.append(bit.reshape(lead + (X.shape[-1],)))
    return out


# ---------------------------------------------------------------------------
# decoding


def level_llr(y_cols, fading: FadingRealization | None, sigma: float, chain: PartitionChain, level: int, partial_sum=None) -> np.ndarray:
    """Coset LLR at ``level`` for received columns ``y_cols`` (2, M).

    ``partial_sum`` (2, M) is the unfaded contribution of the levels already
    decoded; it is faded and removed before folding.
    """
    y = np.asarray(y_cols, dtype=float)
    single = y.ndim == 1
    if single:
        y = y[:, None]
    diag = np.ones(2) if fading is None else fading.diagonal
    if partial_sum is not None:
        ps = np.asarray(partial_sum, dtype=float)
        y = y - diag[:, None] * (ps[:, None] if ps.ndim == 1 else ps)
    bottom = chain.faded_basis(level + 1, fading)
    rep = diag * chain.coset_representative(level)
    L = np.clip(coset_llr(bottom, rep, sigma, y), -LLR_CLAMP, LLR_CLAMP)
    return float(L[0]) if single else L


@dataclass
class MultistageResult:
    bits: list[np.ndarray]  # per level (B, n_info_i)
    codewords: list[np.ndarray]  # per level (B, k*T)
    coarse: np.ndarray  # (B, 2, k*T) decoded point of Lambda_m^(kT)
    x_hat: np.ndarray  # (B, 2, k*T) decoded lattice codeword


def multistage_decode(
    Y,
    fading: FadingRealization | None,
    sigma: float,
    code: MultilevelCode,
    state_hint: int | None = None,
) -> MultistageResult:
    """Decode levels bottom-up, subtracting each decided level, then solve CVP on H Lambda_m."""
    Y = np.asarray(Y, dtype=float)
    single = Y.ndim == 2
    if single:
        Y = Y[None]
    B, _, n_cols = Y.shape
    k, T = code.k, code.T
    if n_cols != k * T:
        raise ValueError(f"expected {k * T} columns, got {n_cols}")
    chain = code.chain
    diag = np.ones(2) if fading is None else fading.diagonal
    cols = np.moveaxis(Y, 1, 0).reshape(2, B * n_cols)
    partial = np.zeros_like(cols)
    bits, cws = [], []
    for i, ucode in enumerate(code.codes):
        L = level_llr(cols, fading, sigma, chain, i, partial)
        res = decode_universal(L.reshape(B, k, T), ucode, state_hint)
        cw = ucode.encode(res.info).reshape(B, n_cols)
        bits.append(res.info)
        cws.append(cw)
        partial = partial + chain.coset_representative(i)[:, None] * cw.reshape(-1)[None, :]
    residual = cols - diag[:, None] * partial
    _, coeffs = closest_point(chain.faded_basis(chain.depth, fading), residual, return_coeffs=True)
    coarse = chain.basis(chain.depth).generator @ coeffs
    x_hat = partial + coarse

    def unflat(a):
        return np.moveaxis(a.reshape(2, B, n_cols), 0, 1)

    out = MultistageResult(bits, cws, unflat(coarse), unflat(x_hat))
    if single:
        out = MultistageResult([b[0] for b in bits], [c[0] for c in cws], out.coarse[0], out.x_hat[0])
    return out


def block_errors(X, X_hat, T: int, atol: float = 1e-6) -> np.ndarray:
    """Per-block error indicators, shape (..., k)."""
    diff = np.abs(np.asarray(X) - np.asarray(X_hat)) > atol
    per_col = diff.any(axis=-2)
    return per_col.reshape(per_col.shape[:-1] + (-1, T)).any(axis=-1)


# ---------------------------------------------------------------------------
# analysis


def prop1_error_bound(level: int, eta: float, D: float, sigma: float) -> float:
    """P(|w| >= d_min/2) for 2-D Gaussian noise, d_min the worst-case minimum distance.

    |w|^2 / sigma^2 is chi-square with two degrees of freedom, so the tail
    is exactly exp(-d^2 / 8 sigma^2).
    """
    d = worst_case_min_distance(level, eta, D)
    return math.exp(-(d * d) / (8.0 * sigma * sigma))


@dataclass
class RateReport:
    rates: list[float]
    sum_rate: float
    logvol: float  # bits per 2-D block, received lattice
    poltyrev_logvol: float
    gap_db: float
    formulas: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"rate[{i}]={r:.6f} bits" for i, r in enumerate(self.rates)]
        out += [
            f"sum_rate={self.sum_rate:.6f} bits",
            f"logvol={self.logvol:.6f} bits",
            f"poltyrev_logvol={self.poltyrev_logvol:.6f} bits",
            f"gap_db={self.gap_db:.4f} dB",
        ]
        return out + self.formulas


def rate_accounting(code: MultilevelCode, sigma: float, D: float = 1.0) -> RateReport:
    """Normalized log-volume of the lattice and its distance to the Poltyrev limit."""
    rates = code.rates
    vm = code.chain.volume(code.depth)
    logvol = math.log2(vm) - sum(rates) + math.log2(D)
    gap = distance_to_poltyrev_db(logvol - math.log2(D), sigma, D)
    return RateReport(
        rates,
        sum(rates),
        logvol,
        poltyrev_limit_logvol(sigma, D),
        gap,
        [
            "logvol = log2 V(Lambda_m) - sum_i R_i + log2 D",
            "poltyrev_logvol = log2(2 pi e sigma^2 D)",
            "gap_db = 10 log10(2^(logvol - log2 D) D / (2 pi e sigma^2))",
        ],
    )


# ---------------------------------------------------------------------------
# construction


def state_for_fading(fading: FadingRealization | None) -> int:
    """The extreme state (1 for h1, 2 for h2) nearest to ``fading`` modulo units and h -> 1/h."""
    if fading is None:
        return 1
    _, h = reduce_fading(fading.h)
    half = 0.5 * math.log(extreme_channels()[1])
    return 1 if abs(math.log(h)) <= half else 2


@dataclass
class LevelDesign:
    level: int
    capacity: list[CapacityEstimate]  # per state
    bhattacharyya: list[BhattacharyyaEstimate]  # per state
    max_info: int
    k_state: list[int]  # good-set size per state (or the single surrogate code)
    rate: float
    epsilon: float | None = None  # BEC surrogate parameter

    @property
    def min_capacity(self) -> CapacityEstimate:
        return min(self.capacity, key=lambda c: c.bits)

    @property
    def certified(self) -> bool:
        c = self.min_capacity
        return self.rate <= c.bits + 3.0 * c.stderr


@dataclass
class ConstructionReport:
    variant: str
    sigma: float
    target_fer: float
    N: int
    k: int
    states: tuple[float, float]
    levels: list[LevelDesign]
    union_bound: list[float]  # per state, sum of per-index error bounds over all levels
    accounting: RateReport

    @property
    def certified(self) -> bool:
        return all(lv.certified for lv in self.levels)

    def lines(self) -> list[str]:
        out = [
            f"variant={self.variant}",
            f"sigma={self.sigma!r}",
            f"target_fer={self.target_fer:g}",
            f"N={self.N} k={self.k}",
            "states=" + ",".join(f"{h:.6f}" for h in self.states),
        ]
        for lv in self.levels:
            caps = " ".join(f"C{s + 1}={c.bits:.4f}+-{c.stderr:.4f}" for s, c in enumerate(lv.capacity))
            zs = " ".join(f"Z{s + 1}={z.z:.4f}" for s, z in enumerate(lv.bhattacharyya))
            eps = "" if lv.epsilon is None else f" eps={lv.epsilon:.4f}"
            ks = ",".join(str(x) for x in lv.k_state)
            out.append(
                f"level {lv.level}: rate={lv.rate:.4f} bits {caps} {zs}{eps} K={ks} "
                f"max_info={lv.max_info} certified={'yes' if lv.certified else 'NO'}"
            )
        out.append("union_bound=" + ",".join(f"{u:.3g}" for u in self.union_bound))
        out += self.accounting.lines()
        out.append(f"certified={'yes' if self.certified else 'NO'}")
        return out


def _greedy_allocation(bounds: np.ndarray, target: float, caps: np.ndarray) -> tuple[np.ndarray, float]:
    """Unfreeze the globally most reliable (level, index) pairs while the summed bound <= target.

    ``bounds`` is (m, N).  Returns the (m, N) good mask and the bound sum.
    """
    m, N = bounds.shape
    flat = bounds.ravel()
    order = np.lexsort((-np.tile(np.arange(N), m), flat))
    good = np.zeros(m * N, dtype=bool)
    count = np.zeros(m, dtype=np.int64)
    total = 0.0
    for j in order:
        lvl = j // N
        if count[lvl] >= caps[lvl]:
            continue
        if total + flat[j] > target * (1 + 1e-12):
            break
        good[j] = True
        count[lvl] += 1
        total += flat[j]
    return good.reshape(m, N), total


def design_multilevel(
    chain: PartitionChain,
    sigma: float,
    N: int,
    k: int,
    target_fer: float,
    variant: str = "chained",
    states: tuple[float, float] | None = None,
    rate_caps=None,
    n_codewords: int = 1000,
    n_samples: int = 200_000,
    seed: int = 0,
    workers: int = 1,
    bound: str = "bhattacharyya",
) -> tuple[MultilevelCode, ConstructionReport]:
    """Build a two-state universal multilevel code at noise level ``sigma``.

    ``variant="chained"`` estimates the synthetic-channel reliabilities of
    every level at each state by genie-aided SC and chains the two
    per-state codes.  ``bound`` selects what is summed: Bhattacharyya
    parameters (default, the same criterion the BEC variant uses) or bit
    error probabilities (``"error"``, tighter, higher rate).
    ``variant="bec"`` builds one code per level for a BEC whose erasure
    probability is the largest Bhattacharyya parameter over the states
    (plus three standard errors).  In both cases the per-state union bound
    over all levels is held below ``target_fer``, and
    a level never carries more than ``floor(cap * N)`` information indices
    per state, where ``cap`` is the smaller of ``rate_caps[i]`` and the
    worst-state capacity estimate.
    """
    if variant not in ("chained", "bec"):
        raise ValueError(f"unknown variant {variant!r}")
    if bound not in ("bhattacharyya", "error"):
        raise ValueError(f"unknown bound {bound!r}")
    if not 0 < target_fer < 1:
        raise ValueError("target_fer must lie in (0, 1)")
    states = tuple(states) if states is not None else extreme_channels()
    if len(states) != 2:
        raise ValueError("exactly two states are supported")
    m = chain.depth
    fadings = [FadingRealization(h) for h in states]
    root = np.random.SeedSequence(seed)
    # common random numbers across states: equal states give equal designs
    seeds = np.repeat(root.generate_state(4 * m).reshape(m, 1, 4), 2, axis=1)
    caps_user = np.ones(m) if rate_caps is None else np.asarray(list(rate_caps) + [1.0] * (m - len(rate_caps)), float)[:m]

    capacity, bhatta = [], []
    for i in range(m):
        capacity.append([level_capacity(chain, i, f, sigma, n_samples, int(seeds[i, s, 0]), workers) for s, f in enumerate(fadings)])
        bhatta.append([bhattacharyya(chain, i, f, sigma, n_samples, int(seeds[i, s, 1]), workers) for s, f in enumerate(fadings)])
    cap_bits = np.array([min(caps_user[i], min(c.bits for c in capacity[i])) for i in range(m)])
    max_info = np.floor(np.clip(cap_bits, 0.0, 1.0) * N + 1e-9).astype(np.int64)

    if variant == "chained":
        bounds = np.empty((2, m, N))
        for i in range(m):
            for s, f in enumerate(fadings):
                sampler = _level_llr_sampler(chain, i, f, sigma)
                bounds[s, i], _ = genie_error_probabilities(
                    sampler, N, n_codewords, int(seeds[i, s, 2]), metric=bound
                )
        goods, totals = zip(*(_greedy_allocation(bounds[s], target_fer, max_info) for s in range(2)))
        codes = [build_universal(~goods[0][i], ~goods[1][i], k, bounds[0, i], bounds[1, i]) for i in range(m)]
        eps = [None] * m
        k_state = [[int(goods[0][i].sum()), int(goods[1][i].sum())] for i in range(m)]
    else:
        eps = [float(min(max(b.z + 3.0 * b.stderr for b in bhatta[i]), 1.0 - 1e-12)) for i in range(m)]
        z = np.vstack([bec_evolve(max(e, 0.0), N) for e in eps])
        good, total = _greedy_allocation(z, target_fer, max_info)
        totals = (total, total)
        codes = [UniversalPolarCode.from_polar(PolarCode(N, ~good[i]), k) for i in range(m)]
        k_state = [[int(good[i].sum())] for i in range(m)]

    code = MultilevelCode(chain, codes)
    levels = [
        LevelDesign(i, capacity[i], bhatta[i], int(max_info[i]), k_state[i], code.codes[i].rate, eps[i]) for i in range(m)
    ]
    report = ConstructionReport(variant, sigma, target_fer, N, k, states, levels, list(totals), rate_accounting(code, sigma))
    return code, report
