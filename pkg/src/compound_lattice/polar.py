"""Binary polar codes in natural (non bit-reversed) order.

Encoding is ``x = u F^{(x)m}`` with ``F = [[1, 0], [1, 1]]``.  With this
ordering the first half of ``u`` sees the "minus" combination of the channel
pairs ``(x_j, x_{j+N/2})`` and the second half the "plus" combination, so bit
index ``i`` read MSB first lists the minus/plus choices from the outermost
stage inwards.

LLRs are ``log P(y|0) / P(y|1)``; a zero LLR decides bit 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

LLR_CLAMP = 300.0
FORMAT_VERSION = 1


def _check_length(N: int) -> int:
    if N < 1 or N & (N - 1):
        raise ValueError(f"block length must be a power of two, got {N}")
    return N.bit_length() - 1


def polar_transform(u) -> np.ndarray:
    """x = u F^{(x)log2 N} over GF(2), along the last axis.  An involution."""
    x = np.array(u, dtype=np.uint8) & 1
    N = x.shape[-1]
    _check_length(N)
    half = N // 2
    while half >= 1:
        x = x.reshape(x.shape[:-1] + (N // (2 * half), 2, half))
        x[..., 0, :] ^= x[..., 1, :]
        x = x.reshape(x.shape[:-3] + (N,))
        half //= 2
    return x


def bec_evolve(epsilon, N: int) -> np.ndarray:
    """Erasure probabilities of the N synthetic channels of a BEC(epsilon).

    Passing a :class:`fractions.Fraction` keeps the computation exact.
    """
    n = _check_length(N)
    exact = isinstance(epsilon, Fraction)
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    z = np.array([epsilon], dtype=object if exact else float)
    for _ in range(n):
        z = np.stack([2 * z - z * z, z * z], axis=1).ravel()
    return z


@dataclass(eq=False)
class PolarCode:
    N: int
    frozen_mask: np.ndarray
    frozen_values: np.ndarray | None = None

    def __post_init__(self):
        _check_length(self.N)
        self.frozen_mask = np.asarray(self.frozen_mask, dtype=bool)
        if self.frozen_mask.shape != (self.N,):
            raise ValueError("frozen mask must have length N")
        if self.frozen_values is not None:
            self.frozen_values = np.asarray(self.frozen_values, dtype=np.uint8)

    @property
    def info_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen_mask)

    @property
    def K(self) -> int:
        return int((~self.frozen_mask).sum())

    @property
    def rate(self) -> float:
        return self.K / self.N

    def u_from_info(self, info) -> np.ndarray:
        info = np.asarray(info, dtype=np.uint8)
        if info.shape[-1] != self.K:
            raise ValueError(f"expected {self.K} information bits, got {info.shape[-1]}")
        u = np.zeros(info.shape[:-1] + (self.N,), dtype=np.uint8)
        if self.frozen_values is not None:
            u[..., self.frozen_mask] = self.frozen_values[self.frozen_mask]
        u[..., ~self.frozen_mask] = info
        return u

    def encode(self, info) -> np.ndarray:
        return polar_transform(self.u_from_info(info))


# ---------------------------------------------------------------------------
# successive cancellation


def boxplus(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact check-node combination 2 atanh(tanh(a/2) tanh(b/2))."""
    return (
        np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
        + np.log1p(np.exp(-np.abs(a + b)))
        - np.log1p(np.exp(-np.abs(a - b)))
    )


def _softplus(x):
    return np.logaddexp(0.0, x)


class _SCState:
    def __init__(self, frozen, values, genie, record):
        self.frozen = frozen  # (N,) bool or (B, N) bool
        self.values = values  # (B, N) uint8
        self.genie = genie
        self.record = record
        self.u = np.zeros_like(values)
        self.metric = np.zeros(values.shape[0])
        self.leaf_llr = np.zeros(values.shape, dtype=float) if record else None


def _sc_node(st: _SCState, L: np.ndarray, lo: int) -> np.ndarray:
    n = L.shape[1]
    if n == 1:
        llr = L[:, 0]
        if st.record:
            st.leaf_llr[:, lo] = llr
        fz = st.frozen[..., lo]
        if st.genie:
            bit = st.values[:, lo]
        else:
            hard = (llr < 0).astype(np.uint8)
            bit = np.where(fz, st.values[:, lo], hard)
        st.u[:, lo] = bit
        st.metric += _softplus(-(1.0 - 2.0 * bit) * llr)
        return bit[:, None]
    h = n // 2
    a, b = L[:, :h], L[:, h:]
    xa = _sc_node(st, boxplus(a, b), lo)
    xb = _sc_node(st, b + (1.0 - 2.0 * xa) * a, lo + h)
    return np.concatenate([xa ^ xb, xb], axis=1)


@dataclass
class SCResult:
    u: np.ndarray  # (B, N) decided u (frozen positions included)
    metric: np.ndarray  # (B,) path metric, -log of the SC path probability
    leaf_llr: np.ndarray | None = None

    def info(self, code: PolarCode) -> np.ndarray:
        return self.u[:, code.info_indices]


def sc_decode_u(
    llr,
    frozen_mask: np.ndarray,
    frozen_values: np.ndarray | None = None,
    *,
    genie: bool = False,
    record: bool = False,
) -> SCResult:
    """Batched successive-cancellation decoding.

    ``llr`` has shape ``(B, N)`` (or ``(N,)``); ``frozen_mask`` is ``(N,)`` or
    ``(B, N)`` and ``frozen_values`` is ``(N,)`` or ``(B, N)``.  With ``genie``
    every bit is set to ``frozen_values`` (used for code construction), and
    ``record`` keeps the LLR seen at every leaf.
    """
    if callable(llr):
        llr = llr()
    L = np.clip(np.atleast_2d(np.asarray(llr, dtype=float)), -LLR_CLAMP, LLR_CLAMP)
    B, N = L.shape
    _check_length(N)
    frozen = np.asarray(frozen_mask, dtype=bool)
    if frozen_values is None:
        values = np.zeros((B, N), dtype=np.uint8)
    else:
        values = np.broadcast_to(np.asarray(frozen_values, dtype=np.uint8), (B, N)).copy()
    st = _SCState(frozen, values, genie, record)
    _sc_node(st, L, 0)
    return SCResult(st.u, st.metric, st.leaf_llr)


def sc_decode(llr, code: PolarCode) -> np.ndarray:
    """Decode information bits of ``code`` from channel LLRs (array or callable)."""
    if callable(llr):
        llr = llr()
    res = sc_decode_u(llr, code.frozen_mask, code.frozen_values)
    out = res.info(code)
    return out[0] if np.ndim(llr) == 1 else out


# ---------------------------------------------------------------------------
# construction


def freeze_by_union_bound(reliability: np.ndarray, target: float, max_info: int | None = None) -> np.ndarray:
    """Unfreeze the most reliable indices while their summed error bound <= target.

    ``reliability`` holds per-index error bounds (smaller is better).  Returns
    the frozen mask.  Ties are resolved towards the larger index.
    """
    r = np.asarray(reliability, dtype=float)
    N = r.size
    order = np.lexsort((-np.arange(N), r))  # ascending bound, larger index first on ties
    csum = np.cumsum(r[order])
    k = int(np.searchsorted(csum, target * (1 + 1e-12), side="right"))
    if max_info is not None:
        k = min(k, max_info)
    frozen = np.ones(N, dtype=bool)
    frozen[order[:k]] = False
    return frozen


def construct_from_surrogate(epsilon: float, N: int, target_fer: float, max_info: int | None = None) -> PolarCode:
    """Polar code for a BEC(epsilon) surrogate by the union bound on erasure probabilities."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    z = bec_evolve(float(epsilon), N)
    frozen = freeze_by_union_bound(z, target_fer, max_info)
    if frozen.all():
        warnings.warn(
            f"target {target_fer:g} unreachable at N={N} for epsilon={epsilon:g}; returning a rate-0 code",
            stacklevel=2,
        )
    return PolarCode(N, frozen)


def genie_error_probabilities(
    llr_sampler: Callable[[np.random.Generator, int], np.ndarray],
    N: int,
    n_codewords: int,
    seed: int = 0,
    batch: int = 512,
    metric: str = "error",
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo reliabilities of the synthetic channels of an arbitrary BMS channel.

    ``llr_sampler(rng, count)`` returns channel LLRs for the all-zero input.
    Genie-aided SC records the LLR of every synthetic channel.  For a
    symmetric channel, conditioning on |L| gives low-variance estimators:

    * ``metric="error"``: bit error probability, E[1 / (1 + e^|L|)];
    * ``metric="bhattacharyya"``: Bhattacharyya parameter, E[1 / cosh(L/2)].

    Returns the per-index mean and its standard error.
    """
    _check_length(N)
    if metric not in ("error", "bhattacharyya"):
        raise ValueError(f"unknown metric {metric!r}")
    seeds = np.random.SeedSequence(seed).spawn(-(-n_codewords // batch))
    s1 = np.zeros(N)
    s2 = np.zeros(N)
    done = 0
    for ss in seeds:
        count = min(batch, n_codewords - done)
        rng = np.random.default_rng(ss)
        L = np.asarray(llr_sampler(rng, count * N), dtype=float).reshape(count, N)
        res = sc_decode_u(L, np.ones(N, dtype=bool), genie=True, record=True)
        a = np.minimum(np.abs(res.leaf_llr), 700.0)
        pe = 1.0 / (1.0 + np.exp(a)) if metric == "error" else 1.0 / np.cosh(0.5 * a)
        s1 += pe.sum(axis=0)
        s2 += (pe * pe).sum(axis=0)
        done += count
    mean = s1 / done
    var = np.maximum(s2 / done - mean**2, 0.0)
    return mean, np.sqrt(var / done)


# ---------------------------------------------------------------------------
# chaining for two channel states


@dataclass(eq=False)
class UniversalPolarCode:
    """Two-state chained polar code over ``k`` consecutive blocks.

    ``shared`` indices carry fresh bits in every block.  ``donors`` (good
    only in state 1) carry fresh bits in blocks 0..k-2, and each is repeated
    at its paired ``receivers`` index (good only in state 2) of the next
    block.  Block 0's receivers and block k-1's donors are frozen to zero.
    """

    N: int
    k: int
    shared: np.ndarray
    donors: np.ndarray
    receivers: np.ndarray

    def __post_init__(self):
        _check_length(self.N)
        if self.k < 1:
            raise ValueError("k must be positive")
        self.shared = np.sort(np.asarray(self.shared, dtype=np.int64))
        self.donors = np.asarray(self.donors, dtype=np.int64)
        self.receivers = np.asarray(self.receivers, dtype=np.int64)
        if self.donors.size != self.receivers.size:
            raise ValueError("donor and receiver sets must pair one-to-one")
        used = np.concatenate([self.shared, self.donors, self.receivers])
        if np.unique(used).size != used.size or (used.size and (used.min() < 0 or used.max() >= self.N)):
            raise ValueError("shared, donor and receiver indices must be distinct and within range")

    @classmethod
    def from_polar(cls, code: PolarCode, k: int = 1) -> "UniversalPolarCode":
        return cls(code.N, k, code.info_indices, np.zeros(0, np.int64), np.zeros(0, np.int64))

    @property
    def chain_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.donors.tolist(), self.receivers.tolist()))

    @property
    def base_frozen(self) -> np.ndarray:
        m = np.ones(self.N, dtype=bool)
        m[self.shared] = m[self.donors] = m[self.receivers] = False
        return m

    @property
    def n_info(self) -> int:
        return self.k * self.shared.size + (self.k - 1) * self.donors.size

    @property
    def rate(self) -> float:
        return self.n_info / (self.k * self.N)

    def block_info_slices(self):
        """(block, indices) pairs in the order information bits are laid out."""
        out = []
        for t in range(self.k):
            idx = self.shared if t == self.k - 1 else np.concatenate([self.shared, self.donors])
            out.append((t, idx))
        return out

    def u_blocks(self, info) -> np.ndarray:
        """Fill the (..., k, N) u-vectors from (..., n_info) information bits."""
        info = np.asarray(info, dtype=np.uint8)
        if info.shape[-1] != self.n_info:
            raise ValueError(f"expected {self.n_info} information bits, got {info.shape[-1]}")
        u = np.zeros(info.shape[:-1] + (self.k, self.N), dtype=np.uint8)
        pos = 0
        for t, idx in self.block_info_slices():
            u[..., t, idx] = info[..., pos : pos + idx.size]
            pos += idx.size
        for t in range(1, self.k):
            u[..., t, self.receivers] = u[..., t - 1, self.donors]
        return u

    def info_from_u(self, u: np.ndarray) -> np.ndarray:
        return np.concatenate([u[..., t, idx] for t, idx in self.block_info_slices()], axis=-1)

    def encode(self, info) -> np.ndarray:
        return polar_transform(self.u_blocks(info))

    # -- serialization ---------------------------------------------------

    def dumps(self) -> str:
        mask = np.zeros(self.N, dtype=bool)
        mask[self.shared] = True
        lines = [
            f"# polar-code v{FORMAT_VERSION}",
            f"N={self.N}",
            f"k={self.k}",
            f"shared={mask_to_hex(mask)}",
            "pairs=" + ",".join(f"{d}:{r}" for d, r in self.chain_pairs),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "UniversalPolarCode":
        fields = _parse_header(text, "polar-code")
        N = int(fields["N"])
        pairs = [p.split(":") for p in fields.get("pairs", "").split(",") if p]
        return cls(
            N,
            int(fields["k"]),
            np.flatnonzero(hex_to_mask(fields["shared"], N)),
            np.array([int(d) for d, _ in pairs], dtype=np.int64),
            np.array([int(r) for _, r in pairs], dtype=np.int64),
        )


def mask_to_hex(mask: np.ndarray) -> str:
    """Index 0 is the most significant bit of the first hex digit."""
    bits = np.asarray(mask, dtype=np.uint8)
    pad = (-bits.size) % 4
    bits = np.concatenate([bits, np.zeros(pad, np.uint8)]).reshape(-1, 4)
    return "".join(f"{v:x}" for v in bits @ np.array([8, 4, 2, 1]))


def hex_to_mask(text: str, N: int) -> np.ndarray:
    digits = np.array([int(c, 16) for c in text.strip()], dtype=np.uint8)
    bits = ((digits[:, None] >> np.array([3, 2, 1, 0])) & 1).ravel()
    if bits.size < N or bits[N:].any():
        raise ValueError("hex mask does not match the block length")
    return bits[:N].astype(bool)


def _parse_header(text: str, kind: str) -> dict[str, str]:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(f"# {kind} v"):
        raise ValueError(f"missing '# {kind} vN' header")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported {kind} format version {version}")
    out = {}
    for ln in lines[1:]:
        key, _, value = ln.partition("=")
        out[key.strip()] = value.strip()
    return out


def build_universal(
    frozen_1,
    frozen_2,
    k: int,
    reliability_1: np.ndarray | None = None,
    reliability_2: np.ndarray | None = None,
) -> UniversalPolarCode:
    """Chain the polar codes of two channel states into one universal code.

    Indices good for both states are shared.  The donor set (good only for
    state 1) and receiver set (good only for state 2) are equalized by
    freezing the surplus indices with the worst error bound in their own
    state; without reliabilities the largest-index surplus is kept.
    """
    f1 = np.asarray(frozen_1, dtype=bool)
    f2 = np.asarray(frozen_2, dtype=bool)
    if f1.shape != f2.shape:
        raise ValueError("the two codes have different block lengths")
    N = f1.size
    _check_length(N)
    if k < 2:
        raise ValueError("chaining needs k >= 2")
    g1, g2 = ~f1, ~f2
    shared = np.flatnonzero(g1 & g2)
    only1 = np.flatnonzero(g1 & f2)
    only2 = np.flatnonzero(g2 & f1)

    def keep_best(idx, rel, count):
        if rel is None:
            return np.sort(idx[idx.size - count :])
        order = np.lexsort((-idx, np.asarray(rel)[idx]))
        return np.sort(idx[order[:count]])

    c = min(only1.size, only2.size)
    donors = keep_best(only1, reliability_1, c)
    receivers = keep_best(only2, reliability_2, c)
    return UniversalPolarCode(N, k, shared, donors, receivers)


def _block_frozen(ucode: UniversalPolarCode, t: int, direction: str) -> np.ndarray:
    m = ucode.base_frozen.copy()
    if direction == "forward":
        m[ucode.receivers] = True
        if t == ucode.k - 1:
            m[ucode.donors] = True
    else:
        m[ucode.donors] = True
        if t == 0:
            m[ucode.receivers] = True
    return m


def _decode_direction(llr: np.ndarray, ucode: UniversalPolarCode, direction: str):
    B = llr.shape[0]
    u = np.zeros((B, ucode.k, ucode.N), dtype=np.uint8)
    metric = np.zeros(B)
    order = range(ucode.k) if direction == "forward" else range(ucode.k - 1, -1, -1)
    for t in order:
        values = np.zeros((B, ucode.N), dtype=np.uint8)
        if direction == "forward" and t > 0:
            values[:, ucode.receivers] = u[:, t - 1, ucode.donors]
        elif direction == "backward" and t < ucode.k - 1:
            values[:, ucode.donors] = u[:, t + 1, ucode.receivers]
        res = sc_decode_u(llr[:, t], _block_frozen(ucode, t, direction), values)
        u[:, t] = res.u
        metric += res.metric
    return u, metric


@dataclass
class UniversalDecodeResult:
    info: np.ndarray  # (B, n_info)
    u: np.ndarray  # (B, k, N)
    metric: np.ndarray  # (B,)
    direction: np.ndarray  # (B,) 0 = forward, 1 = backward


def decode_universal(llr, ucode: UniversalPolarCode, state_hint: int | None = None) -> UniversalDecodeResult:
    """Decode a chained frame from per-block LLRs of shape (B, k, N).

    State 1 decodes blocks forwards (receivers known from the previous
    block's donors), state 2 backwards (donors known from the next block's
    receivers).  Without a hint both orders are run and, per frame, the
    candidate with the smaller total path metric (higher posterior) is kept.
    """
    L = np.asarray(llr, dtype=float)
    if L.ndim == 2:
        L = L[None]
    if L.shape[1:] != (ucode.k, ucode.N):
        raise ValueError(f"expected LLRs of shape (B, {ucode.k}, {ucode.N})")
    if ucode.donors.size == 0 or state_hint == 1:
        u, m = _decode_direction(L, ucode, "forward")
        d = np.zeros(L.shape[0], dtype=np.int8)
    elif state_hint == 2:
        u, m = _decode_direction(L, ucode, "backward")
        d = np.ones(L.shape[0], dtype=np.int8)
    else:
        uf, mf = _decode_direction(L, ucode, "forward")
        ub, mb = _decode_direction(L, ucode, "backward")
        pick = mb < mf
        u = np.where(pick[:, None, None], ub, uf)
        m = np.where(pick, mb, mf)
        d = pick.astype(np.int8)
    return UniversalDecodeResult(ucode.info_from_u(u), u, m, d)


def chain_rate(n_shared: int, n_chained: int, k: int, N: int) -> float:
    return (k * n_shared + (k - 1) * n_chained) / (k * N)


def rate_upper_bound(epsilons: Sequence[float], k: int, N: int) -> float:
    """min(1 - eps_s) plus the 1/(kN) rounding slack."""
    return min(1.0 - e for e in epsilons) + 1.0 / (k * N)
