import math
from types import SimpleNamespace

import numpy as np
import pytest

from compound_lattice.algebra import SQRT2, FadingRealization, PartitionChain, extreme_channels, worst_case_min_distance
from compound_lattice.channelcap import sigma_from_db
from compound_lattice.lattice import TWO_PI_E
from compound_lattice.mlcodec import (
    MultilevelCode,
    block_errors,
    coset_bits,
    design_multilevel,
    encode,
    level_codewords,
    level_llr,
    multistage_decode,
    pack_message,
    prop1_error_bound,
    random_message,
    rate_accounting,
    state_for_fading,
    unpack_message,
)
from compound_lattice.polar import LLR_CLAMP, PolarCode, UniversalPolarCode, build_universal, construct_from_surrogate

from oracles import wide_box_log_density

H1, H2 = extreme_channels()
SIGMA = sigma_from_db(10.5)


def surrogate_code(eps, N=32, k=2, eta=0.5, target=1e-2):
    chain = PartitionChain(eta, len(eps))
    return MultilevelCode(chain, [UniversalPolarCode.from_polar(construct_from_surrogate(e, N, target), k) for e in eps])


def zero_rate_code(depth, N, k):
    return MultilevelCode(PartitionChain(0.5, depth), [UniversalPolarCode(N, k, [], [], []) for _ in range(depth)])


def test_encode_examples():
    code = surrogate_code([0.3, 0.1, 0.01], N=8, k=1)
    zeros = [np.zeros(n, np.uint8) for n in code.n_info]
    assert np.array_equal(encode(code, zeros), np.zeros((2, 8)))
    one = MultilevelCode(PartitionChain(0.5, 1), [PolarCode(4, np.zeros(4, bool))])
    # u = (0,0,0,1) encodes to the all-ones codeword
    X = encode(one, [np.array([0, 0, 0, 1], np.uint8)])
    assert np.allclose(X, 0.5)


def test_encode_reduce_roundtrip():
    code = surrogate_code([0.4, 0.2, 0.05], N=8, k=2)
    rng = np.random.default_rng(0)
    msgs = random_message(code, rng, 1000)
    X = encode(code, msgs)
    assert X.shape == (1000, 2, 16)
    for got, want in zip(coset_bits(code.chain, X), level_codewords(code, msgs)):
        assert np.array_equal(got, want)


def test_message_packing():
    code = surrogate_code([0.4, 0.1], N=16, k=2)
    msgs = random_message(code, np.random.default_rng(1), 3)
    flat = pack_message(msgs)
    assert flat.shape == (3, sum(code.n_info))
    for a, b in zip(unpack_message(code, flat), msgs):
        assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        unpack_message(code, flat[:, 1:])
    with pytest.raises(ValueError):
        level_codewords(code, msgs[:1])


def test_code_validation_and_serialization():
    code = surrogate_code([0.4, 0.2, 0.05], N=16, k=3)
    text = code.dumps()
    assert text.startswith("# multilevel-code v1\n")
    back = MultilevelCode.loads(text)
    assert back.chain.eta == 0.5 and back.depth == 3 and back.T == 16 and back.k == 3
    for a, b in zip(code.codes, back.codes):
        assert a.chain_pairs == b.chain_pairs and np.array_equal(a.shared, b.shared)
    with pytest.raises(ValueError):
        MultilevelCode(PartitionChain(0.5, 2), code.codes)
    with pytest.raises(ValueError):
        MultilevelCode(PartitionChain(0.5, 2), [code.codes[0], UniversalPolarCode(8, 3, [7], [], [])])


@pytest.mark.parametrize("level", [0, 1, 2])
def test_level_llr_matches_wide_box(level):
    chain = PartitionChain(0.5, 3)
    f = FadingRealization(1.37)
    rng = np.random.default_rng(level)
    y = rng.normal(scale=2.0, size=(2, 40))
    partial = rng.integers(0, 2, (2, 40)) * 0.5
    sigma = 0.35
    bottom = chain.faded_basis(level + 1, f).generator
    ytil = y - f.diagonal[:, None] * partial
    rep = f.diagonal * chain.coset_representative(level)
    ref = wide_box_log_density(bottom, sigma, ytil) - wide_box_log_density(bottom, sigma, ytil - rep[:, None])
    got = level_llr(y, f, sigma, chain, level, partial)
    assert np.all(np.abs(got - ref) <= 1e-8 * np.maximum(1.0, np.abs(ref)))


def test_level_llr_clamp_and_boundary():
    chain = PartitionChain(0.5, 2)
    assert level_llr(np.zeros(2), None, 1e-3, chain, 0) == LLR_CLAMP
    rep = chain.coset_representative(0)
    assert level_llr(rep, None, 1e-3, chain, 0) == -LLR_CLAMP
    # halfway between the two cosets the likelihoods coincide
    for f in (None, FadingRealization(H2)):
        d = np.ones(2) if f is None else f.diagonal
        assert level_llr(d * rep / 2, f, 0.3, chain, 0) == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(level_llr(np.array([1e6, -1e6]), None, 1e-4, chain, 1))


@pytest.mark.parametrize("h", [H1, H2, 0.37, 2.9])
@pytest.mark.parametrize("hint", [None, 1, 2])
def test_noiseless_decoding_recovers_everything(h, hint):
    f1 = construct_from_surrogate(0.3, 32, 1e-3).frozen_mask
    f2 = f1.copy()
    f2[np.flatnonzero(~f1)[:2]] = True
    f2[np.flatnonzero(f1)[-2:]] = False
    chain = PartitionChain(0.5, 3)
    code = MultilevelCode(chain, [build_universal(f1, f2, 3)] + [UniversalPolarCode.from_polar(construct_from_surrogate(e, 32, 1e-3), 3) for e in (0.2, 0.05)])
    msgs = random_message(code, np.random.default_rng(4), 5)
    X = encode(code, msgs)
    # add a coarse lattice point to every column; the final CVP must find it
    lam = chain.basis(3).generator @ np.random.default_rng(5).integers(-3, 4, (2, X.shape[-1]))
    X = X + lam
    f = FadingRealization(h)
    res = multistage_decode(f.diagonal[:, None] * X, f, 0.05, code, hint)
    for a, b in zip(res.bits, msgs):
        assert np.array_equal(a, b)
    assert np.allclose(res.x_hat, X)
    assert np.allclose(res.coarse, np.broadcast_to(lam, X.shape))
    single = multistage_decode(f.diagonal[:, None] * X[0], f, 0.05, code, hint)
    assert np.allclose(single.x_hat, X[0]) and single.bits[0].shape == msgs[0][0].shape
    with pytest.raises(ValueError):
        multistage_decode(X[..., :-1], f, 0.05, code)


def test_final_cvp_corrects_short_perturbation():
    depth = 3
    code = zero_rate_code(depth, 8, 2)
    d = worst_case_min_distance(depth, 0.5)
    rng = np.random.default_rng(6)
    for h in (H1, H2, 1.21):
        f = FadingRealization(h)
        X = code.chain.basis(depth).generator @ rng.integers(-2, 3, (2, 16))
        Y = f.diagonal[:, None] * X
        theta = rng.uniform(0, 2 * math.pi)
        Y[:, 5] += 0.999 * d / 2 * np.array([math.cos(theta), math.sin(theta)])
        res = multistage_decode(Y, f, 0.3, code)
        assert np.allclose(res.x_hat, X)


def test_prop1_bound_matches_gaussian_tail():
    bound = prop1_error_bound(3, 0.5, 1.0, SIGMA)
    d = worst_case_min_distance(3, 0.5)
    assert d == pytest.approx(2.0)
    w = np.random.default_rng(7).normal(0, SIGMA, (2, 10**6))
    p = (np.hypot(w[0], w[1]) >= d / 2).mean()
    assert abs(p - bound) <= 4 * math.sqrt(bound * (1 - bound) / 10**6)
    assert prop1_error_bound(3, 0.5, 4.0, SIGMA) < bound
    assert prop1_error_bound(3, 0.5, 1.0, 1e-3) == 0.0


def test_zero_rate_fer_within_factor_four_of_prop1():
    # worst-case fading for the bottom lattice of a depth-3 chain is h = 1
    depth, N, k = 3, 64, 2
    code = zero_rate_code(depth, N, k)
    sigma = 0.39  # column error rate close to 1e-2
    f = FadingRealization(H1)
    rng = np.random.default_rng(8)
    B = 1600
    W = rng.normal(0, sigma, (B, 2, N * k))
    res = multistage_decode(W, f, sigma, code)
    col_err = (np.abs(res.x_hat) > 1e-9).any(axis=1).mean()
    bound = prop1_error_bound(depth, 0.5, 1.0, sigma)
    assert col_err <= 1.2e-2
    assert col_err <= bound <= 4 * col_err


def test_block_errors():
    X = np.zeros((3, 2, 8))
    Xh = X.copy()
    Xh[1, 0, 5] = 0.5
    e = block_errors(X, Xh, 4)
    assert e.shape == (3, 2)
    assert e.tolist() == [[False, False], [False, True], [False, False]]


def test_unit_action_preserves_decisions():
    # diag(eps h, 1/(eps h)) psi(x) = R diag(h, 1/h) psi(eps x) with R = diag(1, -1);
    # since eps = 1 mod sqrt2, every multistage LLR at eps*h on H_{eps h} X + R W
    # equals the one at h on H_h X + W, as long as the levels below were
    # decoded correctly (the residual then lies in Lambda_i and eps - 1 maps
    # Lambda_i into Lambda_{i+1})
    code = surrogate_code([0.85, 0.5, 0.15], N=64, k=2, target=5e-2)
    rng = np.random.default_rng(9)
    msgs = random_message(code, rng, 120)
    X = encode(code, msgs)
    h = 1.13
    fa, fb = FadingRealization(h), FadingRealization(h * (1 + SQRT2))
    W = rng.normal(0, 0.33, X.shape)
    RW = W * np.array([1.0, -1.0])[:, None]
    ra = multistage_decode(fa.diagonal[:, None] * X + W, fa, 0.33, code)
    rb = multistage_decode(fb.diagonal[:, None] * X + RW, fb, 0.33, code)
    ea = block_errors(X, ra.x_hat, code.T)
    eb = block_errors(X, rb.x_hat, code.T)
    assert 0 < ea.mean() < 1
    assert np.array_equal(ea, eb)
    ok = ~ea.any(axis=1)
    for a, b in zip(ra.bits, rb.bits):
        assert np.array_equal(a[ok], b[ok])


def test_rate_accounting_examples():
    chain = PartitionChain(0.5, 3)
    stub = SimpleNamespace(chain=chain, depth=3, rates=[0.0, 0.0, 0.0])
    r0 = rate_accounting(stub, SIGMA)
    # uncoded Lambda_3 has volume 8 V(Lambda_0) = 8 * 0.25 * 2 sqrt2 = 4 sqrt2
    assert r0.logvol == pytest.approx(2.5)
    assert r0.gap_db == pytest.approx(10 * math.log10(4 * SQRT2 / (TWO_PI_E * SIGMA**2)))
    stub.rates = [0.2239, 0.6516, 0.9271]
    r = rate_accounting(stub, SIGMA)
    assert r.sum_rate == pytest.approx(1.8026)
    assert r.gap_db == pytest.approx(10 * math.log10(2 ** (2.5 - 1.8026) / (TWO_PI_E * SIGMA**2)))
    assert r.gap_db == pytest.approx(0.2746, abs=1e-3)
    assert any("gap_db" in line for line in r.lines())
    # at fixed noise, det H = D enlarges the received cell by D
    rD = rate_accounting(stub, SIGMA, D=4.0)
    assert rD.gap_db == pytest.approx(r.gap_db + 10 * math.log10(4.0))
    assert rD.logvol == pytest.approx(r.logvol + 2)


def test_state_for_fading():
    assert state_for_fading(None) == 1
    assert state_for_fading(FadingRealization(H1)) == 1
    assert state_for_fading(FadingRealization(H2)) == 2
    assert state_for_fading(FadingRealization(1 / H2)) == 2
    assert state_for_fading(FadingRealization(H1 * (1 + SQRT2) ** 3)) == 1


def test_design_identical_states_degenerates():
    chain = PartitionChain(0.5, 2)
    kw = dict(n_codewords=64, n_samples=20_000, seed=3)
    code, rep = design_multilevel(chain, SIGMA, 32, 2, 1e-2, states=(H1, H1), **kw)
    assert all(c.donors.size == 0 for c in code.codes)
    assert all(lv.k_state[0] == lv.k_state[1] for lv in rep.levels)
    assert max(rep.union_bound) <= 1e-2
    assert rep.certified
    bec, brep = design_multilevel(chain, SIGMA, 32, 2, 1e-2, variant="bec", **kw)
    for lv in brep.levels:
        assert lv.epsilon >= max(b.z for b in lv.bhattacharyya)
    again, _ = design_multilevel(chain, SIGMA, 32, 2, 1e-2, states=(H1, H1), **kw)
    assert again.dumps() == code.dumps()
    with pytest.raises(ValueError):
        design_multilevel(chain, SIGMA, 32, 2, 1e-2, variant="nope")
    with pytest.raises(ValueError):
        design_multilevel(chain, SIGMA, 32, 2, 1e-2, bound="nope")
    with pytest.raises(ValueError):
        design_multilevel(chain, SIGMA, 32, 2, 1.5)


def test_design_respects_rate_caps():
    chain = PartitionChain(0.5, 2)
    code, rep = design_multilevel(chain, SIGMA, 64, 2, 0.2, rate_caps=[0.05, 0.3], n_codewords=64, n_samples=20_000)
    for lv, cap in zip(rep.levels, [0.05, 0.3]):
        assert max(lv.k_state) <= math.floor(cap * 64)
