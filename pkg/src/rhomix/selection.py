"""Model selection with the penalised rho-criterion: number of components and
emission families."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import emission as em
from .emission import EmissionSpec
from .errors import DomainError
from .mixtures import CandidateSet, ModelDescriptor
from .rho import KAPPA_DEFAULT, RhoFit, SearchConfig, check_summability, penalty_value, rho_estimate
from .search import LatticeModel, lattice_model

Builder = Callable[[ModelDescriptor, np.ndarray], "CandidateSet | LatticeModel"]


def order_delta(K: int, V: int, n: int) -> Fraction:
    """Weight floor used for order selection: 1 for K = 1, else V/n capped at 1/K."""
    if K < 1 or n < 1:
        raise DomainError("order_delta needs K, n >= 1")
    return Fraction(1) if K == 1 else min(Fraction(V, n), Fraction(1, K))


def family_delta(K: int, n: int) -> Fraction:
    return min(Fraction(5, n), Fraction(1, K))


def default_builder(resolution: float | None = None, weight_denominator: int | None = None) -> Builder:
    def build(d: ModelDescriptor, x: np.ndarray) -> LatticeModel:
        return lattice_model(d, x, resolution, weight_denominator)
    return build


@dataclass
class SelectionProblem:
    """A collection of model descriptors with weights Delta (sum exp(-Delta) <= 1).

    ``penalty`` is "formula" (kappa (174.1 vbar [...] + Delta)) or "null".
    """

    descriptors: tuple[ModelDescriptor, ...]
    Delta: Mapping[ModelDescriptor, float] | Callable[[ModelDescriptor], float]
    builder: Builder = field(default_factory=default_builder)
    penalty: str = "formula"
    kappa: float = KAPPA_DEFAULT

    def __post_init__(self):
        self.descriptors = tuple(self.descriptors)
        if not self.descriptors:
            raise DomainError("empty model collection")
        if len(set(self.descriptors)) != len(self.descriptors):
            raise DomainError("model descriptors must be distinct")
        if self.penalty not in ("formula", "null"):
            raise DomainError(f"unknown penalty mode {self.penalty!r}")
        check_summability(self.descriptors, self.delta_of)

    def delta_of(self, d: ModelDescriptor) -> float:
        if isinstance(self.Delta, Mapping):
            return float(self.Delta[d])
        return float(self.Delta(d))

    def penalties(self, n: int) -> dict[ModelDescriptor, float]:
        if self.penalty == "null":
            return {d: 0.0 for d in self.descriptors}
        return {d: penalty_value(d, n, self.kappa, self.delta_of(d)) for d in self.descriptors}

    def models(self, x: np.ndarray) -> list:
        return [self.builder(d, x) for d in self.descriptors]


@dataclass
class SelectionResult:
    fit: RhoFit
    descriptor: ModelDescriptor
    table: dict[str, float | None]    # best penalised Upsilon found inside each model
    penalties: dict[str, float]
    lower_bounds: dict[str, float] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.descriptor.K

    @property
    def n_gaussian(self) -> int:
        return sum(s.shape_kind == "gaussian" for s in self.descriptor.families)

    def to_dict(self) -> dict:
        return {"selected": self.descriptor.label, "table": self.table,
                "lower_bounds": self.lower_bounds, "penalties": self.penalties,
                "fit": self.fit.to_dict()}


def _best_by_descriptor(fit: RhoFit, models: Sequence, pens: dict) -> dict[str, float | None]:
    labels = [m.descriptor.label for m in models]
    if fit.upsilon_table is not None:
        sizes = np.cumsum([0] + [len(m) for m in models])
        return {lab: float(np.min(fit.upsilon_table[a:b])) if np.isfinite(fit.upsilon_table[a:b]).any()
                else None for lab, a, b in zip(labels, sizes[:-1], sizes[1:])}
    found = fit.diagnostics.get("best_upsilon_by_model", {})
    return {lab: found.get(lab) for lab in labels}


def run_selection(X, problem: SelectionProblem, search: SearchConfig | None = None) -> SelectionResult:
    """A single penalised rho-fit over the union of all models of the problem."""
    x = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if x.size == 0:
        raise DomainError("empty sample")
    models = problem.models(x)
    pens = problem.penalties(x.size)
    fit = rho_estimate(x, models, {m.descriptor: pens[m.descriptor] for m in models}, search)
    return SelectionResult(
        fit=fit,
        descriptor=fit.descriptor,
        table=_best_by_descriptor(fit, models, pens),
        penalties={d.label: p for d, p in pens.items()},
        lower_bounds=fit.diagnostics.get("upsilon_lower_bound_by_model", {}),
    )


def order_problem(spec: EmissionSpec, K_range: Sequence[int], n: int, builder: Builder | None = None,
                  kappa: float = KAPPA_DEFAULT,
                  Delta: Callable[[ModelDescriptor], float] | None = None) -> SelectionProblem:
    Ks = sorted(set(int(k) for k in K_range))
    if not Ks or Ks[0] < 1 or Ks[-1] > n:
        raise DomainError(f"K range must be a nonempty subset of 1..{n}")
    V = em.vc_index_bound(spec)
    ds = [ModelDescriptor.homogeneous(spec, K, order_delta(K, V, n)) for K in Ks]
    return SelectionProblem(tuple(ds), Delta or (lambda d: float(d.K)),
                            builder or default_builder(), "formula", kappa)


def select_order(X, K_range: Sequence[int], spec: EmissionSpec | None = None,
                 kappa: float = KAPPA_DEFAULT, search: SearchConfig | None = None,
                 builder: Builder | None = None) -> SelectionResult:
    """Penalised choice of the number of components, Delta(K) = K by default."""
    x = np.asarray(X, dtype=np.float64)
    problem = order_problem(spec or em.gaussian(), K_range, x.size, builder, kappa)
    return run_selection(x, problem, search)


def family_problem(K: int, n: int, builder: Builder | None = None) -> SelectionProblem:
    """Models Q_j, j = 0..K: j Gaussian components followed by K - j Cauchy ones."""
    if K < 1:
        raise DomainError("K must be at least 1")
    g, c = em.gaussian(), em.cauchy()
    delta = family_delta(K, n)
    ds = tuple(ModelDescriptor((g,) * j + (c,) * (K - j), delta) for j in range(K, -1, -1))
    logL = math.log(len(ds))
    return SelectionProblem(ds, lambda d: logL, builder or default_builder(), "null")


def select_emission_families(X, K: int, search: SearchConfig | None = None,
                             builder: Builder | None = None) -> SelectionResult:
    """Null-penalty fit over the union of the Gaussian/Cauchy blocks; the result's
    ``n_gaussian`` is the selected number of Gaussian components."""
    x = np.asarray(X, dtype=np.float64)
    return run_selection(x, family_problem(K, x.size, builder), search)
