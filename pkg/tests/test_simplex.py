import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rhomix.errors import DomainError
from rhomix.simplex import (
    WeightVector, count_weight_grid, covering_size, enumerate_weight_grid, project_to_floor,
    round_to_grid, weight_hellinger2,
)

import oracles


def _tuples(grid):
    return [w.numerators for w in grid]


def test_grid_k2_floor_quarter():
    g = enumerate_weight_grid(2, 4, Fraction(1, 4))
    assert [w.fractions for w in g] == [
        (Fraction(1, 4), Fraction(3, 4)), (Fraction(1, 2), Fraction(1, 2)), (Fraction(3, 4), Fraction(1, 4))]


def test_grid_k3_counts_and_order():
    g = enumerate_weight_grid(3, 4, 0)
    assert len(g) == 15 == covering_size(3, 4)
    assert _tuples(g) == oracles.compositions(4, 3)


def test_grid_point_simplex():
    assert _tuples(enumerate_weight_grid(1, 7, 1)) == [(7,)]


def test_grid_floor_above_one_over_k():
    with pytest.raises(DomainError):
        enumerate_weight_grid(3, 9, Fraction(1, 2))


def test_grid_infeasible_is_empty():
    assert enumerate_weight_grid(3, 4, Fraction(1, 3)) == []
    assert count_weight_grid(3, 4, Fraction(1, 3)) == 0


@pytest.mark.parametrize("K", [1, 2, 3, 4])
@pytest.mark.parametrize("N", [1, 3, 5, 8])
@pytest.mark.parametrize("delta", [0, Fraction(1, 10), Fraction(1, 8)])
def test_grid_matches_brute_force(K, N, delta):
    if delta > Fraction(1, K):
        return
    assert _tuples(enumerate_weight_grid(K, N, delta)) == oracles.weight_grid(K, N, delta)
    assert count_weight_grid(K, N, delta) == len(oracles.weight_grid(K, N, delta))
    assert all(sum(w.fractions) == 1 for w in enumerate_weight_grid(K, N, delta))


def test_covering_size_values_and_bounds():
    assert covering_size(3, 4) == 15
    assert covering_size(1, 7) == 1
    for K in range(1, 7):
        for N in range(0, 12):
            assert covering_size(K, N) <= (N + 1) ** K
    for K in range(2, 7):
        for eps in (0.5, 0.1, 0.01):
            assert math.log2(covering_size(K, math.ceil(1 / eps))) <= K * math.log2(3 / eps)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5).filter(lambda v: sum(v) > 1e-6),
       st.integers(2, 12))
def test_grid_approximates_every_point(v, N):
    w = np.array(v) / sum(v)
    best = min(np.abs(w - g.values).max() for g in enumerate_weight_grid(len(v), N, 0))
    assert best <= 1 / N + 1e-12


def test_projection_example():
    p = project_to_floor([0.0, 1.0], Fraction(1, 10))
    assert p.fractions == (Fraction(1, 10), Fraction(9, 10))
    h2 = weight_hellinger2([0.0, 1.0], p)
    assert h2 == pytest.approx(0.5 * (0.1 + (1 - math.sqrt(0.9)) ** 2), abs=1e-15)
    assert h2 <= 1 - math.sqrt(0.9) + 1e-15


def test_projection_fixed_point():
    w = WeightVector.from_fractions([Fraction(1, 5), Fraction(3, 10), Fraction(1, 2)])
    assert project_to_floor(w, Fraction(1, 5)).fractions == w.fractions


def test_projection_rejects_large_floor():
    with pytest.raises(DomainError):
        project_to_floor([0.5, 0.5], Fraction(2, 3))


def test_projection_bound_random_k4():
    rng = np.random.default_rng(11)
    delta = Fraction(1, 20)
    bound = 1 - math.sqrt(1 - 3 * 0.05)
    for _ in range(2000):
        w = rng.dirichlet(np.full(4, 0.5))
        p = project_to_floor(w, delta)
        assert min(p.fractions) >= delta
        assert weight_hellinger2(w, p) <= bound + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6).filter(lambda v: sum(v) > 1e-6),
       st.fractions(0, 1))
def test_projection_idempotent(v, d):
    d = min(d, Fraction(1, len(v)))
    p = project_to_floor(v, d)
    assert project_to_floor(p, d).fractions == p.fractions


def test_weight_hellinger_values():
    assert weight_hellinger2([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert weight_hellinger2([1, 0], [0, 1]) == 1.0
    want = 0.5 * ((math.sqrt(0.5) - 0.5) ** 2 + (math.sqrt(0.5) - math.sqrt(0.75)) ** 2)
    assert weight_hellinger2([0.5, 0.5], [0.25, 0.75]) == pytest.approx(want, abs=1e-15)
    assert want == pytest.approx(0.034074, abs=1e-6)
    with pytest.raises(DomainError):
        weight_hellinger2([1.0], [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(*[
    st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k) for _ in range(3)])))
def test_weight_hellinger_is_squared_metric(vs):
    a, b, c = (np.array(v) / sum(v) for v in vs)
    h = lambda x, y: math.sqrt(weight_hellinger2(x, y))
    assert weight_hellinger2(a, b) == pytest.approx(weight_hellinger2(b, a), abs=1e-15)
    assert h(a, c) <= h(a, b) + h(b, c) + 1e-12


def test_weight_vector_invariants():
    with pytest.raises(DomainError):
        WeightVector((1, 1), 3)
    with pytest.raises(DomainError):
        WeightVector((1, 3), 4, Fraction(1, 2))
    w = WeightVector.from_floats([0.1, 0.2, 0.7])
    assert w.fractions == (Fraction(1, 10), Fraction(1, 5), Fraction(7, 10))


def test_round_to_grid_respects_floor():
    w = round_to_grid([0.0, 0.33, 0.67], 20, Fraction(1, 10))
    assert sum(w.numerators) == 20 and min(w.fractions) >= Fraction(1, 10)
