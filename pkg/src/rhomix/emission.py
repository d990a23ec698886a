"""Parametric emission families on the real line.

Every family is a location(-scale) family of densities with respect to the
Lebesgue measure.  Log-densities are evaluated by a single numba kernel that
the quadrature code and the estimator both use, so the two never disagree on
what a family means.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats

from .errors import DomainError
from .kernels import component_logpdf

KINDS = ("gaussian", "cauchy", "laplace", "skew_gaussian", "uniform", "spike")
KIND_CODES = {name: code for code, name in enumerate(KINDS)}

# VC-index bounds of the density classes (location-scale versions; location-only
# subfamilies inherit them by inclusion).
_VC_REGISTRY = {"gaussian": 5, "cauchy": 5, "laplace": 5, "skew_gaussian": 10, "spike": 10}
UNIFORM_VC_DEFAULT = 3

SCALE_FLOOR = 1e-12


class Singular(float):
    """A +inf density value that marks a point evaluation at a singularity."""

    def __repr__(self) -> str:
        return "SINGULAR"


SINGULAR = Singular("inf")


@dataclass(frozen=True)
class EmissionParams:
    location: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0.0) or not math.isfinite(self.scale):
            raise DomainError(f"scale must be a positive finite number, got {self.scale}")
        if not math.isfinite(self.location):
            raise DomainError(f"location must be finite, got {self.location}")


@dataclass(frozen=True)
class EmissionSpec:
    """A parametric emission family.

    ``kind`` is one of :data:`KINDS` or ``"known_shifted"``; the latter is the
    location family of ``base`` with the scale frozen at ``fixed_scale``.
    ``scale_domain`` is ``None`` for location-only families, whose components
    always carry ``scale == fixed_scale``.
    """

    kind: str
    alpha: float | None = None
    location_domain: tuple[float, float] = (-math.inf, math.inf)
    scale_domain: tuple[float, float] | None = (SCALE_FLOOR, math.inf)
    base: str | None = None
    fixed_scale: float = 1.0
    uniform_vc: int = UNIFORM_VC_DEFAULT

    def __post_init__(self):
        if self.kind == "known_shifted":
            if self.base not in KINDS:
                raise DomainError(f"known_shifted needs a base kind in {KINDS}, got {self.base!r}")
            if self.scale_domain is not None:
                raise DomainError("known_shifted families have a fixed scale")
        elif self.kind not in KINDS:
            raise DomainError(f"unknown emission kind {self.kind!r}")
        elif self.base is not None:
            raise DomainError("base is only meaningful for known_shifted")
        shape = self.shape_kind
        if shape == "spike":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise DomainError(f"spike exponent must lie in (0, 1), got {self.alpha}")
        elif shape == "skew_gaussian":
            if self.alpha is None or not math.isfinite(self.alpha):
                raise DomainError(f"skew-Gaussian shape must be finite, got {self.alpha}")
        elif self.alpha is not None:
            raise DomainError(f"{shape} takes no shape parameter")
        lo, hi = self.location_domain
        if not lo <= hi:
            raise DomainError(f"empty location domain {self.location_domain}")
        if self.scale_domain is not None:
            slo, shi = self.scale_domain
            if not 0.0 < slo <= shi:
                raise DomainError(f"scale domain must be a positive interval, got {self.scale_domain}")
        if not self.fixed_scale > 0.0:
            raise DomainError("fixed_scale must be positive")
        if self.uniform_vc != UNIFORM_VC_DEFAULT and shape != "uniform":
            raise DomainError("only the uniform family has a configurable VC bound")
        if self.uniform_vc < 1:
            raise DomainError("VC bounds are positive integers")

    @property
    def shape_kind(self) -> str:
        return self.base if self.kind == "known_shifted" else self.kind

    @property
    def code(self) -> int:
        return KIND_CODES[self.shape_kind]

    @property
    def has_scale(self) -> bool:
        return self.scale_domain is not None

    @property
    def name(self) -> str:
        return f"known_shifted:{self.base}" if self.kind == "known_shifted" else self.kind

    @property
    def vc_bound(self) -> int:
        return vc_index_bound(self)

    @property
    def shape_param(self) -> float:
        return 0.0 if self.alpha is None else float(self.alpha)

    def check(self, params: EmissionParams) -> None:
        lo, hi = self.location_domain
        if not lo <= params.location <= hi:
            raise DomainError(f"location {params.location} outside {self.location_domain}")
        if self.has_scale:
            slo, shi = self.scale_domain
            if not slo <= params.scale <= shi:
                raise DomainError(f"scale {params.scale} outside {self.scale_domain}")
        elif params.scale != self.fixed_scale:
            raise DomainError(f"{self.name} is location-only with scale {self.fixed_scale}")


def gaussian(location_domain=(-math.inf, math.inf), scale_domain=(SCALE_FLOOR, math.inf)):
    return EmissionSpec("gaussian", location_domain=location_domain, scale_domain=scale_domain)


def cauchy(location_domain=(-math.inf, math.inf), scale_domain=(SCALE_FLOOR, math.inf)):
    return EmissionSpec("cauchy", location_domain=location_domain, scale_domain=scale_domain)


def laplace(location_domain=(-math.inf, math.inf), scale_domain=None):
    return EmissionSpec("laplace", location_domain=location_domain, scale_domain=scale_domain)


def skew_gaussian(alpha: float, location_domain=(-math.inf, math.inf), scale_domain=None):
    return EmissionSpec("skew_gaussian", alpha=alpha, location_domain=location_domain,
                        scale_domain=scale_domain)


def uniform(location_domain=(-math.inf, math.inf), scale_domain=(SCALE_FLOOR, math.inf),
            vc_bound: int = UNIFORM_VC_DEFAULT):
    return EmissionSpec("uniform", location_domain=location_domain, scale_domain=scale_domain,
                        uniform_vc=vc_bound)


def spike(alpha: float, location_domain=(-math.inf, math.inf), scale_domain=None):
    return EmissionSpec("spike", alpha=alpha, location_domain=location_domain,
                        scale_domain=scale_domain)


def known_shifted(base: str, scale: float = 1.0, alpha: float | None = None,
                  location_domain=(-math.inf, math.inf)):
    """Location family of a fixed-shape ``base`` density, as in two-component
    models with one known component (fix the known one with a degenerate
    ``location_domain``)."""
    return EmissionSpec("known_shifted", alpha=alpha, location_domain=location_domain,
                        scale_domain=None, base=base, fixed_scale=scale)


def spec_from_name(name: str, alpha: float | None = None, **kw) -> EmissionSpec:
    """Build a spec from its stable config-file name."""
    if name.startswith("known_shifted:"):
        return known_shifted(name.split(":", 1)[1], alpha=alpha, **kw)
    factories = {"gaussian": gaussian, "cauchy": cauchy, "laplace": laplace, "uniform": uniform}
    if name in factories:
        if alpha is not None:
            raise DomainError(f"{name} takes no shape parameter")
        return factories[name](**kw)
    if name == "skew_gaussian":
        return skew_gaussian(0.0 if alpha is None else alpha, **kw)
    if name == "spike":
        return spike(0.5 if alpha is None else alpha, **kw)
    raise DomainError(f"unknown emission family {name!r}")


def vc_index_bound(spec: EmissionSpec) -> int:
    shape = spec.shape_kind
    if shape == "uniform":
        return spec.uniform_vc
    return _VC_REGISTRY[shape]


def log_density(spec: EmissionSpec, params: EmissionParams, x) -> np.ndarray:
    """Vectorised log-density; +inf at a spike singularity, -inf off the support."""
    x = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    out = np.empty_like(x)
    component_logpdf(spec.code, spec.shape_param, float(params.location), float(params.scale), x, out)
    return out


def density(spec: EmissionSpec, params: EmissionParams, x):
    """Density at ``x``.

    A scalar evaluation exactly at a spike singularity returns :data:`SINGULAR`;
    array evaluations carry ``inf`` there.
    """
    spec.check(params)
    scalar = np.ndim(x) == 0
    val = np.exp(log_density(spec, params, x))
    if scalar:
        v = float(val[0])
        return SINGULAR if math.isinf(v) else v
    return val


def cdf(spec: EmissionSpec, params: EmissionParams, x):
    u = (np.asarray(x, dtype=np.float64) - params.location) / params.scale
    shape = spec.shape_kind
    if shape == "gaussian":
        return special.ndtr(u)
    if shape == "cauchy":
        return 0.5 + np.arctan(u) / np.pi
    if shape == "laplace":
        return np.where(u < 0, 0.5 * np.exp(np.minimum(u, 0)), 1.0 - 0.5 * np.exp(-np.maximum(u, 0)))
    if shape == "skew_gaussian":
        return stats.skewnorm.cdf(u, spec.alpha)
    if shape == "uniform":
        return np.clip(u, 0.0, 1.0)
    return 0.5 + 0.5 * np.sign(u) * np.minimum(np.abs(u), 1.0) ** (1.0 - spec.alpha)


def support(spec: EmissionSpec, params: EmissionParams) -> tuple[float, float]:
    z, s = params.location, params.scale
    shape = spec.shape_kind
    if shape == "uniform":
        return z, z + s
    if shape == "spike":
        return z - s, z + s
    return -math.inf, math.inf


def breakpoints(spec: EmissionSpec, params: EmissionParams) -> list[float]:
    """Points where quadrature should split: kinks, support edges, singularities
    and, for smooth unbounded families, a ladder of scales around the mode."""
    z, s = params.location, params.scale
    shape = spec.shape_kind
    if shape == "uniform":
        return [z, z + s]
    if shape == "spike":
        return [z - s, z, z + s]
    ladder = [0.0, 1.0, 3.0, 8.0] if shape != "cauchy" else [0.0, 1.0, 4.0, 16.0, 64.0]
    pts = sorted({z + sign * k * s for k in ladder for sign in (-1.0, 1.0)})
    if shape == "skew_gaussian":
        # the mode drifts by O(s) for large |alpha|
        pts = sorted(set(pts) | {z + math.copysign(0.8, spec.alpha) * s})
    return pts


def sample(spec: EmissionSpec, params: EmissionParams, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise DomainError("sample size must be at least 1")
    spec.check(params)
    z, s = params.location, params.scale
    shape = spec.shape_kind
    if shape == "gaussian":
        u = rng.standard_normal(n)
    elif shape == "cauchy":
        u = rng.standard_cauchy(n)
    elif shape == "laplace":
        u = rng.laplace(0.0, 1.0, n)
    elif shape == "skew_gaussian":
        u = stats.skewnorm.rvs(spec.alpha, size=n, random_state=rng)
    elif shape == "uniform":
        u = rng.random(n)
    else:
        # |U| has cdf r^(1-alpha) on (0, 1]; 1 - U keeps draws off the singularity
        r = (1.0 - rng.random(n)) ** (1.0 / (1.0 - spec.alpha))
        u = np.where(rng.random(n) < 0.5, -r, r)
    return z + s * u


# ---------------------------------------------------------------------------
# finite parameter nets

@dataclass(frozen=True)
class ParamGrid:
    """Regular lattice of parameters: evenly spaced locations times log-uniform
    scales.  Index ``(i, j)`` maps to location ``i`` and scale ``j``; nothing is
    materialised, so lattices with 10^9 locations are fine."""

    spec: EmissionSpec
    loc_lo: float
    loc_step: float
    n_loc: int
    log_scale_lo: float
    log_scale_step: float
    n_scale: int

    def __post_init__(self):
        if self.n_loc < 1 or self.n_scale < 1:
            raise DomainError("grids need at least one location and one scale")
        if not self.spec.has_scale and self.n_scale != 1:
            raise DomainError(f"{self.spec.name} is location-only")

    @classmethod
    def from_bounds(cls, spec, loc_lo, loc_hi, n_loc, scale_lo=1.0, scale_hi=1.0, n_scale=1):
        step = (loc_hi - loc_lo) / (n_loc - 1) if n_loc > 1 else 0.0
        if not spec.has_scale:
            return cls(spec, float(loc_lo), step, int(n_loc), math.log(spec.fixed_scale), 0.0, 1)
        lstep = (math.log(scale_hi) - math.log(scale_lo)) / (n_scale - 1) if n_scale > 1 else 0.0
        return cls(spec, float(loc_lo), step, int(n_loc), math.log(scale_lo), lstep, int(n_scale))

    @property
    def size(self) -> int:
        return self.n_loc * self.n_scale

    def location(self, i: int) -> float:
        lo, hi = self.spec.location_domain
        return min(max(self.loc_lo + i * self.loc_step, lo), hi)

    def scale(self, j: int) -> float:
        if not self.spec.has_scale:
            return self.spec.fixed_scale
        lo, hi = self.spec.scale_domain
        return min(max(math.exp(self.log_scale_lo + j * self.log_scale_step), lo), hi)

    def param(self, i: int, j: int = 0) -> EmissionParams:
        return EmissionParams(self.location(i), self.scale(j))

    def params(self) -> list[EmissionParams]:
        return [self.param(i, j) for i in range(self.n_loc) for j in range(self.n_scale)]

    def nearest(self, params: EmissionParams) -> tuple[int, int]:
        return self.nearest_index(params.location, params.scale)

    def nearest_index(self, location: float, scale: float = 1.0) -> tuple[int, int]:
        i = 0 if self.loc_step == 0 else round((location - self.loc_lo) / self.loc_step)
        j = 0
        if self.spec.has_scale and self.log_scale_step != 0:
            j = round((math.log(max(scale, SCALE_FLOOR)) - self.log_scale_lo) / self.log_scale_step)
        return min(max(i, 0), self.n_loc - 1), min(max(j, 0), self.n_scale - 1)


def _iqr_scale(data: np.ndarray) -> float:
    q1, q3 = np.percentile(data, [25, 75])
    return max(1.5 * float(q3 - q1), SCALE_FLOOR)


def param_grid(spec: EmissionSpec, data: Sequence[float], locations: int, scales: int = 1) -> ParamGrid:
    """Data-driven grid: ``locations`` points spanning the data range widened
    by range/L on both sides, ``scales`` log-uniform values on [r/S, r] with
    r = 1.5 IQR."""
    x = np.asarray(data, dtype=np.float64)
    if x.size == 0:
        raise DomainError("cannot build a net from empty data")
    if locations < 1 or (spec.has_scale and scales < 1):
        raise DomainError("net sizes must be positive")
    lo, hi = float(x.min()), float(x.max())
    if locations == 1:
        loc_lo, step = float(np.median(x)), 0.0
    else:
        m = (hi - lo) / locations
        loc_lo, step = lo - m, (hi - lo + 2 * m) / (locations - 1)
    if not spec.has_scale:
        return ParamGrid(spec, loc_lo, step, locations, math.log(spec.fixed_scale), 0.0, 1)
    r = _iqr_scale(x)
    lstep = math.log(scales) / (scales - 1) if scales > 1 else 0.0
    return ParamGrid(spec, loc_lo, step, locations, math.log(r / scales) if scales > 1 else math.log(r),
                     lstep, scales)


def build_net(spec: EmissionSpec, data: Sequence[float], locations: int, scales: int = 1) -> list[EmissionParams]:
    return param_grid(spec, data, locations, scales).params()
