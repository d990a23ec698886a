import math
from fractions import Fraction

import numpy as np
import pytest

from rhomix import emission as em
from rhomix.emission import EmissionParams as P
from rhomix.errors import DomainError
from rhomix.mixtures import MixtureCandidate, ModelDescriptor
from rhomix.rho import penalty_value
from rhomix.selection import (
    SelectionProblem, family_delta, family_problem, order_delta, order_problem, run_selection,
    select_emission_families, select_order,
)

G, C = em.gaussian(), em.cauchy()


def test_order_delta_values():
    assert order_delta(1, 5, 100) == 1
    assert order_delta(2, 5, 1000) == Fraction(1, 200)
    assert order_delta(3, 5, 10) == Fraction(1, 3)
    with pytest.raises(DomainError):
        order_delta(0, 5, 10)


def test_family_delta_values():
    assert family_delta(2, 5000) == Fraction(1, 1000)
    assert family_delta(2, 4) == Fraction(1, 2)


def test_order_problem_structure_and_penalties():
    pr = order_problem(G, [3, 1, 2, 2], 1000)
    assert [d.K for d in pr.descriptors] == [1, 2, 3]
    pens = pr.penalties(1000)
    for d in pr.descriptors:
        assert pens[d] == penalty_value(d, 1000, 470.0, float(d.K))
    assert pens[pr.descriptors[0]] < pens[pr.descriptors[1]] < pens[pr.descriptors[2]]
    with pytest.raises(DomainError):
        order_problem(G, [0, 1], 10)
    with pytest.raises(DomainError):
        order_problem(G, [1, 20], 10)


def test_family_problem_structure():
    pr = family_problem(2, 1000)
    assert [tuple(s.name for s in d.families) for d in pr.descriptors] == [
        ("gaussian", "gaussian"), ("gaussian", "cauchy"), ("cauchy", "cauchy")]
    assert all(v == 0 for v in pr.penalties(1000).values())
    assert sum(math.exp(-pr.delta_of(d)) for d in pr.descriptors) == pytest.approx(1.0)


def test_problem_validation():
    d = ModelDescriptor.homogeneous(G, 1, 1)
    with pytest.raises(DomainError):
        SelectionProblem((), lambda d: 1.0)
    with pytest.raises(DomainError):
        SelectionProblem((d, d), lambda d: 1.0)
    with pytest.raises(DomainError):
        SelectionProblem((d,), lambda d: -1.0)
    with pytest.raises(DomainError):
        SelectionProblem((d,), lambda d: 1.0, penalty="bic")


def test_single_gaussian_selects_one_component():
    x = np.random.default_rng(2).normal(size=1000)
    r = select_order(x, [1, 2, 3])
    assert r.K == 1
    assert r.table["K=1[gaussian]"] is not None
    assert r.lower_bounds["K=2[gaussian,gaussian]"] > r.fit.upsilon


def test_gaussian_cauchy_family_identified():
    truth = MixtureCandidate.build([0.5, 0.5], [(G, P(-3, 1)), (C, P(3, 1))])
    x = truth.sample(2000, np.random.default_rng(1))
    r = select_emission_families(x, 2)
    assert r.n_gaussian == 1
    assert r.to_dict()["selected"] == "K=2[gaussian,cauchy]"


def test_run_selection_with_null_penalty_is_plain_union_fit():
    x = np.random.default_rng(0).normal(size=300)
    ds = (ModelDescriptor.homogeneous(G, 1, 1), ModelDescriptor.homogeneous(C, 1, 1))
    r = run_selection(x, SelectionProblem(ds, lambda d: math.log(2), penalty="null"))
    assert r.descriptor.families == (G,)
    assert set(r.table) == {d.label for d in ds}


def test_empty_sample_rejected():
    with pytest.raises(DomainError):
        select_order([], [1])
