import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from compound_lattice.algebra import (
    FUNDAMENTAL_UNIT,
    LOG_EPSILON,
    SQRT2,
    FadingRealization,
    PartitionChain,
    QuadInt,
    chain_basis,
    embed,
    extreme_channels,
    log_unit_covering_radius,
    product_distance,
    reduce_fading,
    unit_group,
    worst_case_min_distance,
)
from compound_lattice.lattice import LatticeBasis

from oracles import min_distance_brute, product_distance_brute

ints = st.integers(-50, 50)
quads = st.builds(QuadInt, ints, ints)


@given(quads, quads)
def test_ring_operations_match_floats(x, y):
    assert float(x + y) == pytest.approx(float(x) + float(y), abs=1e-9)
    assert float(x * y) == pytest.approx(float(x) * float(y), rel=1e-12, abs=1e-9)
    assert float(x - y) == pytest.approx(float(x) - float(y), abs=1e-9)


@given(quads, quads)
def test_norm_is_multiplicative(x, y):
    assert (x * y).norm() == x.norm() * y.norm()


@given(quads)
def test_embedding_product_is_norm(x):
    e = embed(x)
    assert e[0] * e[1] == pytest.approx(x.norm(), abs=1e-8)
    assert x.conjugate().conjugate() == x


def test_fundamental_unit():
    assert FUNDAMENTAL_UNIT.is_unit()
    assert FUNDAMENTAL_UNIT.norm() == -1
    assert (FUNDAMENTAL_UNIT * QuadInt(-1, 1)) == QuadInt(1, 0)
    assert LOG_EPSILON == pytest.approx(math.log(1 + SQRT2))
    assert not QuadInt(2, 0).is_unit()


def test_sqrt2_powers():
    assert QuadInt.sqrt2_power(0) == QuadInt(1)
    assert QuadInt.sqrt2_power(1) == QuadInt(0, 1)
    assert QuadInt.sqrt2_power(5) == QuadInt(0, 1) ** 5 == QuadInt(0, 4)
    with pytest.raises(ValueError):
        QuadInt.sqrt2_power(-1)


def test_embed_examples():
    assert np.allclose(embed(QuadInt(1, 0)), [1, 1])
    assert np.allclose(embed(QuadInt(0, 1), 0.5), [SQRT2 / 2, -SQRT2 / 2])


@pytest.mark.parametrize("level", range(5))
def test_chain_is_nested_with_index_two(level):
    top, bottom = chain_basis(level), chain_basis(level + 1)
    M = np.linalg.solve(top.generator, bottom.generator)
    assert np.allclose(M, np.rint(M), atol=1e-9)
    assert bottom.volume / top.volume == pytest.approx(2.0)
    # period two: Lambda_{i+2} = 2 Lambda_i
    two = chain_basis(level + 2).generator
    assert np.allclose(np.linalg.solve(2 * top.generator, two), np.rint(np.linalg.solve(2 * top.generator, two)))
    assert chain_basis(level + 2).volume == pytest.approx(4 * top.volume)


def test_coset_representative_is_nontrivial():
    ch = PartitionChain(0.5, 4)
    for i in range(4):
        k = np.linalg.solve(ch.basis(i + 1).generator, ch.coset_representative(i))
        assert not np.allclose(k, np.rint(k))
        k = np.linalg.solve(ch.basis(i).generator, ch.coset_representative(i))
        assert np.allclose(k, np.rint(k))
    assert ch.quotient_order == 2


@pytest.mark.parametrize("level", range(4))
def test_product_distance_matches_brute_force(level):
    assert product_distance(level, 0.5) == pytest.approx(product_distance_brute(chain_basis(level, 0.5).generator))


@pytest.mark.parametrize("level", [0, 1, 3])
def test_worst_case_min_distance_matches_search_over_h(level):
    G = chain_basis(level, 0.5).generator

    def dmin(logh):
        h = math.exp(logh)
        return min_distance_brute(np.diag([h, 1 / h]) @ G, K=10)

    # one period of the unit action covers every h
    grid = np.linspace(0, LOG_EPSILON, 200)
    vals = [dmin(t) for t in grid]
    j = int(np.argmin(vals))
    res = minimize_scalar(dmin, bounds=(grid[max(j - 1, 0)], grid[min(j + 1, 199)]), method="bounded", options={"xatol": 1e-10})
    assert res.fun == pytest.approx(worst_case_min_distance(level, 0.5), rel=1e-6)


def test_worst_case_min_distance_grows_with_D():
    assert worst_case_min_distance(2, 0.5, 4.0) == pytest.approx(2 * worst_case_min_distance(2, 0.5, 1.0))
    with pytest.raises(ValueError):
        worst_case_min_distance(0, 1.0, 0.5)


def test_fading_has_target_determinant():
    f = FadingRealization(1.7, det_target=3.0)
    assert abs(np.linalg.det(f.matrix)) == pytest.approx(3.0)
    assert np.allclose(f.diagonal, [1.7 * math.sqrt(3), math.sqrt(3) / 1.7])
    with pytest.raises(ValueError):
        FadingRealization(-1.0)


@given(st.floats(-6.0, 6.0))
def test_reduce_fading_lands_in_fundamental_interval(logh):
    k, h = reduce_fading(math.exp(logh))
    assert abs(math.log(h)) <= 0.5 * LOG_EPSILON + 1e-12
    assert h * (1 + SQRT2) ** k == pytest.approx(math.exp(logh), rel=1e-9)


def test_unit_action_maps_faded_lattice_to_a_reflection():
    # diag(eps h, 1/(eps h)) psi(L) equals diag(1, -1) diag(h, 1/h) psi(L) as a set
    ch = PartitionChain(0.5, 3)
    h = 1.23
    a = FadingRealization(h * (1 + SQRT2)).apply(ch.basis(1)).generator
    b = np.diag([1.0, -1.0]) @ FadingRealization(h).apply(ch.basis(1)).generator
    M = np.linalg.solve(b, a)
    assert np.allclose(M, np.rint(M)) and abs(round(np.linalg.det(M))) == 1


def test_extreme_channels_and_unit_group():
    h1, h2 = extreme_channels()
    assert h1 == 1.0 and h2 == pytest.approx(math.sqrt(1 + SQRT2))
    # h2 makes the faded Z[sqrt2] lattice square
    G = FadingRealization(h2).apply(chain_basis(0)).reduced_generator
    assert np.linalg.norm(G[:, 0]) == pytest.approx(np.linalg.norm(G[:, 1]))
    assert abs(G[:, 0] @ G[:, 1]) < 1e-9
    ug = unit_group()
    assert ug.rho == pytest.approx(log_unit_covering_radius())
    assert ug.rho == pytest.approx(SQRT2 / 2 * LOG_EPSILON)


def test_partition_chain_validation_and_volume():
    with pytest.raises(ValueError):
        PartitionChain(0.0, 3)
    with pytest.raises(ValueError):
        PartitionChain(1.0, 0)
    ch = PartitionChain(0.5, 3)
    assert ch.volume(0) == pytest.approx(0.25 * 2 * SQRT2)
    assert ch.volume(3) == pytest.approx(8 * ch.volume(0))
    assert isinstance(ch.basis(7), LatticeBasis)
