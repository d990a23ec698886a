"""Finite mixtures of emission densities and finite candidate sets of them."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import emission as em
from .emission import EmissionParams, EmissionSpec, SINGULAR
from .errors import BudgetError, DomainError
from .kernels import mixture_logpdf
from .simplex import WeightVector, as_fraction

DEFAULT_BUDGET = 2_000_000


@dataclass(frozen=True)
class MixtureCandidate:
    weights: WeightVector
    components: tuple[tuple[EmissionSpec, EmissionParams], ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple((s, p) for s, p in self.components))
        if len(self.components) != self.weights.K:
            raise DomainError(f"{len(self.components)} components for {self.weights.K} weights")
        for spec, params in self.components:
            spec.check(params)

    @classmethod
    def single(cls, spec: EmissionSpec, params: EmissionParams) -> "MixtureCandidate":
        return cls(WeightVector.uniform(1), ((spec, params),))

    @classmethod
    def build(cls, weights, components, floor=0) -> "MixtureCandidate":
        if not isinstance(weights, WeightVector):
            weights = WeightVector.from_floats(weights, floor)
        return cls(weights, tuple(components))

    @property
    def K(self) -> int:
        return self.weights.K

    @property
    def specs(self) -> tuple[EmissionSpec, ...]:
        return tuple(s for s, _ in self.components)

    @cached_property
    def packed(self):
        """(codes, shapes, log-weights, locations, scales) arrays for the kernels."""
        codes = np.array([s.code for s, _ in self.components], dtype=np.int64)
        shapes = np.array([s.shape_param for s, _ in self.components])
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights.values)
        zs = np.array([p.location for _, p in self.components])
        ss = np.array([p.scale for _, p in self.components])
        return codes, shapes, logw, zs, ss

    def logpdf(self, x) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
        out = np.empty_like(x)
        mixture_logpdf(*self.packed, x, out)
        return out

    def pdf(self, x):
        return mixture_density(self, x)

    def cdf(self, x):
        w = self.weights.values
        return sum(wk * em.cdf(s, p, x) for wk, (s, p) in zip(w, self.components))

    def tail_mass(self, lo: float, hi: float) -> tuple[float, float]:
        """Probability mass below ``lo`` and above ``hi``."""
        w = self.weights.values
        left = sum(wk * float(em.cdf(s, p, lo)) for wk, (s, p) in zip(w, self.components))
        right = sum(wk * (1.0 - float(em.cdf(s, p, hi))) for wk, (s, p) in zip(w, self.components))
        return max(left, 0.0), max(right, 0.0)

    def support(self) -> tuple[float, float]:
        sup = [em.support(s, p) for s, p in self.components]
        return min(a for a, _ in sup), max(b for _, b in sup)

    def breakpoints(self) -> list[float]:
        pts = set()
        for wk, (s, p) in zip(self.weights.numerators, self.components):
            if wk:
                pts.update(em.breakpoints(s, p))
        return sorted(pts)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_mixture(self, n, rng)

    def describe(self) -> dict:
        return {
            "weights": [str(f) for f in self.weights.fractions],
            "components": [
                {"kind": s.name, "alpha": s.alpha, "location": p.location, "scale": p.scale}
                for s, p in self.components
            ],
        }


def mixture_density(c: MixtureCandidate, x):
    scalar = np.ndim(x) == 0
    val = np.exp(c.logpdf(x))
    if scalar:
        v = float(val[0])
        return SINGULAR if math.isinf(v) else v
    return val


def sample_mixture(c: MixtureCandidate, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise DomainError("sample size must be at least 1")
    cum = np.cumsum(c.weights.values)
    labels = np.minimum(np.searchsorted(cum, rng.random(n) * cum[-1], side="right"), c.K - 1)
    out = np.empty(n)
    for k, (spec, params) in enumerate(c.components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            out[idx] = em.sample(spec, params, idx.size, rng)
    return out


@dataclass(frozen=True)
class ModelDescriptor:
    """theta = (K, families); ``delta`` is the weight floor of the model."""

    families: tuple[EmissionSpec, ...]
    delta: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "delta", as_fraction(self.delta))
        if not self.families:
            raise DomainError("a model needs at least one component")
        if not 0 <= self.delta <= Fraction(1, self.K):
            raise DomainError(f"weight floor {self.delta} must lie in [0, 1/K] with K={self.K}")

    @classmethod
    def homogeneous(cls, spec: EmissionSpec, K: int, delta=0) -> "ModelDescriptor":
        return cls((spec,) * K, delta)

    @property
    def K(self) -> int:
        return len(self.families)

    @property
    def vbar(self) -> int:
        return sum(em.vc_index_bound(s) for s in self.families)

    @property
    def exchangeable(self) -> bool:
        return all(s == self.families[0] for s in self.families)

    @property
    def label(self) -> str:
        return f"K={self.K}[{','.join(s.name for s in self.families)}]"

    def conforms(self, c: MixtureCandidate) -> bool:
        return (c.K == self.K and c.specs == self.families
                and all(f >= self.delta for f in c.weights.fractions))


@dataclass(frozen=True)
class CandidateSet:
    descriptor: ModelDescriptor
    candidates: tuple[MixtureCandidate, ...]
    resolution: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise DomainError("candidate sets must be nonempty")
        for c in self.candidates:
            if not self.descriptor.conforms(c):
                raise DomainError(f"candidate does not conform to {self.descriptor.label}")

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    def log_densities(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        L = np.empty((len(self.candidates), x.size))
        for r, c in enumerate(self.candidates):
            mixture_logpdf(*c.packed, x, L[r])
        return L


_KIND_RANK = {"gaussian": 0, "cauchy": 1}


def _kind_rank(spec: EmissionSpec):
    return (_KIND_RANK.get(spec.name, 2), spec.name, spec.shape_param)


def _component_key(item):
    spec, params = item
    return (_kind_rank(spec), -params.scale, -params.location)


def canonicalize(c: MixtureCandidate) -> MixtureCandidate:
    """Order components by kind block (Gaussian, then Cauchy, then others),
    then by decreasing scale, then decreasing location."""
    order = sorted(range(c.K), key=lambda k: _component_key(c.components[k]))
    return MixtureCandidate(c.weights.permuted(order), tuple(c.components[k] for k in order))


def predicted_size(descriptor: ModelDescriptor, net_sizes: Sequence[int], grid_size: int,
                   exchangeable: bool) -> int:
    if exchangeable:
        return grid_size * math.comb(net_sizes[0] + descriptor.K - 1, descriptor.K)
    return grid_size * math.prod(net_sizes)


def assemble_candidates(descriptor: ModelDescriptor, nets: Sequence[Sequence[EmissionParams]],
                        weight_grid: Sequence[WeightVector], exchangeable: bool | None = None,
                        budget: int = DEFAULT_BUDGET) -> CandidateSet:
    """Cross product of the weight grid with one parameter net per component.

    With ``exchangeable`` (default: whenever all families and nets coincide)
    only component tuples in canonical order are kept.
    """
    K = descriptor.K
    if len(nets) != K:
        raise DomainError(f"need {K} nets, got {len(nets)}")
    nets = [list(net) for net in nets]
    if any(not net for net in nets):
        raise DomainError("parameter nets must be nonempty")
    weight_grid = list(weight_grid)
    if not weight_grid:
        raise DomainError("the weight grid is empty")
    for w in weight_grid:
        if w.K != K or any(f < descriptor.delta for f in w.fractions):
            raise DomainError(f"weight grid does not respect the floor {descriptor.delta}")
    identical = descriptor.exchangeable and all(net == nets[0] for net in nets)
    if exchangeable is None:
        exchangeable = identical
    elif exchangeable and not identical:
        raise DomainError("exchangeable reduction needs identical families and nets")
    size = predicted_size(descriptor, [len(n) for n in nets], len(weight_grid), exchangeable)
    if size > budget:
        raise BudgetError(size, budget)

    specs = descriptor.families
    if exchangeable:
        spec = specs[0]
        net = sorted(nets[0], key=lambda p: _component_key((spec, p)))
        tuples = [tuple(net[i] for i in idx)
                  for idx in itertools.combinations_with_replacement(range(len(net)), K)]
    else:
        tuples = list(itertools.product(*nets))
    floor = descriptor.delta
    cands = []
    for w in weight_grid:
        w = w.with_floor(floor)
        for params in tuples:
            cands.append(MixtureCandidate(w, tuple(zip(specs, params))))
    return CandidateSet(descriptor, tuple(cands))


# ---------------------------------------------------------------------------
# text format: one candidate per line, weights then tab-separated components

def _spec_token(spec: EmissionSpec) -> str:
    return spec.name if spec.alpha is None else f"{spec.name}@{spec.alpha!r}"


def _parse_spec(token: str, families: dict[str, EmissionSpec]) -> EmissionSpec:
    if token in families:
        return families[token]
    name, _, alpha = token.partition("@")
    return em.spec_from_name(name, float(alpha) if alpha else None)


def format_candidate(c: MixtureCandidate) -> str:
    parts = [str(c.weights)]
    for spec, p in c.components:
        parts.append(f"{_spec_token(spec)} {p.location!r} {p.scale!r}")
    return "\t".join(parts)


def parse_candidate(line: str, families: Iterable[EmissionSpec] = (), floor=0) -> MixtureCandidate:
    known = {_spec_token(s): s for s in families}
    fields = line.rstrip("\n").split("\t")
    weights = WeightVector.from_fractions([Fraction(t) for t in fields[0].split()], floor)
    comps = []
    for f in fields[1:]:
        tok, loc, scale = f.split()
        comps.append((_parse_spec(tok, known), EmissionParams(float(loc), float(scale))))
    return MixtureCandidate(weights, tuple(comps))


def dumps_candidates(cset: CandidateSet) -> str:
    d = cset.descriptor
    head = f"# {d.label} delta={d.delta} vbar={d.vbar} size={len(cset)}\n"
    return head + "".join(format_candidate(c) + "\n" for c in cset)


def loads_candidates(text: str, descriptor: ModelDescriptor) -> CandidateSet:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    cands = [parse_candidate(ln, descriptor.families, descriptor.delta) for ln in lines]
    return CandidateSet(descriptor, tuple(cands))
