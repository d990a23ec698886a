"""Weight vectors on the K-simplex with exact rational arithmetic."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .errors import DomainError


def as_fraction(x) -> Fraction:
    """Exact rational view of ``x``; floats go through their shortest repr so
    that 0.1 becomes 1/10 rather than the binary neighbour."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"expected a finite number, got {x}")
    return Fraction(repr(x))


def _ceil_mul(f: Fraction, n: int) -> int:
    p = f * n
    return -((-p.numerator) // p.denominator)


@dataclass(frozen=True)
class WeightVector:
    """A point of the simplex stored as integer numerators over one denominator."""

    numerators: tuple[int, ...]
    denominator: int
    floor: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "numerators", tuple(int(d) for d in self.numerators))
        object.__setattr__(self, "floor", as_fraction(self.floor))
        K = len(self.numerators)
        if K < 1:
            raise DomainError("a weight vector needs at least one coordinate")
        if self.denominator < 1:
            raise DomainError("denominator must be positive")
        if any(d < 0 for d in self.numerators):
            raise DomainError("weights must be nonnegative")
        if sum(self.numerators) != self.denominator:
            raise DomainError("weights must sum to exactly one")
        if not 0 <= self.floor <= Fraction(1, K):
            raise DomainError(f"floor {self.floor} outside [0, 1/{K}]")
        if any(Fraction(d, self.denominator) < self.floor for d in self.numerators):
            raise DomainError(f"a weight is below the floor {self.floor}")

    @classmethod
    def from_fractions(cls, ws: Sequence, floor=0) -> "WeightVector":
        fr = [as_fraction(w) for w in ws]
        den = math.lcm(*(f.denominator for f in fr))
        return cls(tuple(int(f * den) for f in fr), den, as_fraction(floor))

    @classmethod
    def from_floats(cls, ws: Sequence[float], floor=0) -> "WeightVector":
        """Exactly normalise nonnegative reals onto the simplex."""
        fr = [as_fraction(w) for w in ws]
        if any(f < 0 for f in fr):
            raise DomainError("weights must be nonnegative")
        total = sum(fr)
        if total == 0:
            raise DomainError("weights sum to zero")
        return cls.from_fractions([f / total for f in fr], floor)

    @classmethod
    def uniform(cls, K: int) -> "WeightVector":
        return cls((1,) * K, K)

    @property
    def K(self) -> int:
        return len(self.numerators)

    @property
    def fractions(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(d, self.denominator) for d in self.numerators)

    @property
    def values(self) -> np.ndarray:
        return np.array(self.numerators, dtype=np.float64) / self.denominator

    def permuted(self, order: Sequence[int]) -> "WeightVector":
        return WeightVector(tuple(self.numerators[i] for i in order), self.denominator, self.floor)

    def with_floor(self, floor) -> "WeightVector":
        return WeightVector(self.numerators, self.denominator, floor)

    def __str__(self) -> str:
        return " ".join(str(f) for f in self.fractions)


def _check_floor(K: int, delta) -> Fraction:
    if K < 1:
        raise DomainError("K must be at least 1")
    d = as_fraction(delta)
    if d < 0:
        raise DomainError("the weight floor must be nonnegative")
    if d > Fraction(1, K):
        raise DomainError(f"weight floor {d} exceeds 1/K = 1/{K}")
    return d


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Compositions of ``total`` into ``parts`` nonnegative integers, in lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def weight_floor_numerator(N: int, delta) -> int:
    """Smallest integer d with d/N >= delta."""
    return _ceil_mul(as_fraction(delta), N)


def iter_weight_grid(K: int, N: int, delta=0) -> Iterator[WeightVector]:
    d = _check_floor(K, delta)
    if N < 1:
        raise DomainError("grid denominator must be positive")
    dmin = weight_floor_numerator(N, d)
    free = N - K * dmin
    if free < 0:
        return
    for comp in _compositions(free, K):
        yield WeightVector(tuple(c + dmin for c in comp), N, d)


def enumerate_weight_grid(K: int, N: int, delta=0) -> list[WeightVector]:
    """All vectors (d_1/N, ..., d_K/N) with d_i/N >= delta, lexicographically ordered."""
    return list(iter_weight_grid(K, N, delta))


def count_weight_grid(K: int, N: int, delta=0) -> int:
    d = _check_floor(K, delta)
    free = N - K * weight_floor_numerator(N, d)
    return math.comb(free + K - 1, K - 1) if free >= 0 else 0


def covering_size(K: int, N: int) -> int:
    """Number of points of the simplex grid with denominator N."""
    if K < 1 or N < 0:
        raise DomainError("covering_size needs K >= 1 and N >= 0")
    return math.comb(N + K - 1, N)


def _project(ws: list[Fraction], delta: Fraction) -> list[Fraction]:
    K = len(ws)
    if K == 1:
        return [Fraction(1)]
    i0 = min(range(K), key=lambda i: (ws[i], i))
    if ws[i0] >= delta:
        return list(ws)
    rest_mass = 1 - ws[i0]
    rest = [ws[i] / rest_mass for i in range(K) if i != i0]
    sub = iter(_project(rest, delta / (1 - delta)))
    return [delta if i == i0 else (1 - delta) * next(sub) for i in range(K)]


def project_to_floor(w, delta) -> WeightVector:
    """Move ``w`` into {v : v_k >= delta} by repeatedly lifting the smallest
    coordinate to the floor and rescaling the rest.

    The squared Hellinger distance to the input is at most
    1 - sqrt(1 - (K - 1) delta).
    """
    if not isinstance(w, WeightVector):
        w = WeightVector.from_floats(w)
    d = _check_floor(w.K, delta)
    return WeightVector.from_fractions(_project(list(w.fractions), d), d)


def _as_array(w) -> np.ndarray:
    return w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64)


def weight_hellinger2(w, v) -> float:
    a, b = _as_array(w), _as_array(v)
    if a.shape != b.shape:
        raise DomainError(f"weight vectors differ in length: {a.size} vs {b.size}")
    return float(min(1.0, 0.5 * np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)))


def round_to_grid(w: Sequence[float], N: int, delta=0) -> WeightVector:
    """Nearest grid vector by largest remainders, respecting the floor."""
    K = len(w)
    d = _check_floor(K, delta)
    dmin = weight_floor_numerator(N, d)
    free = N - K * dmin
    if free < 0:
        raise DomainError(f"no grid point with denominator {N} satisfies floor {d}")
    a = np.clip(np.asarray(w, dtype=np.float64), 0.0, None)
    a = a / a.sum()
    # distribute only the mass above the floor
    excess = np.clip(a * N - dmin, 0.0, None)
    if excess.sum() > 0:
        excess *= free / excess.sum()
    else:
        excess = np.full(K, free / K)
    base = np.floor(excess).astype(np.int64)
    short = free - int(base.sum())
    for k in np.argsort(-(excess - base), kind="stable")[:short]:
        base[k] += 1
    return WeightVector(tuple(int(b) + dmin for b in base), N, d)
