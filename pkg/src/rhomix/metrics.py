"""Distances between densities, parameter losses and Fisher information."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .emission import EmissionParams, EmissionSpec
from .errors import DomainError, NumericalError
from .mixtures import MixtureCandidate
from .simplex import weight_hellinger2


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-8
    max_subdivisions: int = 200
    split_points: tuple[float, ...] = ()
    tail_fraction: float = 0.1      # tail bound must fall below abs_tol * tail_fraction
    mc_samples: int = 200_000
    mc_max_stderr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise DomainError("quadrature tolerance must be positive")


DEFAULT_QUADRATURE = QuadratureConfig()


class _Wrapped:
    """Adapter giving a bare callable the interface of a candidate."""

    def __init__(self, f: Callable):
        self.f = f

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            x = np.atleast_1d(np.asarray(x, dtype=np.float64))
            return np.log(np.broadcast_to(np.asarray(self.f(x), dtype=np.float64), x.shape))

    def breakpoints(self):
        return []

    def support(self):
        return -math.inf, math.inf

    def tail_mass(self, lo, hi):
        return None


def _as_density(p):
    if isinstance(p, tuple) and len(p) == 2 and isinstance(p[0], EmissionSpec):
        return MixtureCandidate.single(*p)
    if hasattr(p, "logpdf"):
        return p
    if callable(p):
        return _Wrapped(p)
    raise DomainError(f"cannot integrate {p!r}")


def _tail_cutoffs(p, q, pts, cfg) -> tuple[float, float] | None:
    """Cutoffs beyond which sqrt(P(tail) Q(tail)) < tol * tail_fraction."""
    target = cfg.abs_tol * cfg.tail_fraction / 2
    lo0, hi0 = min(pts), max(pts)
    width = max(hi0 - lo0, 1.0)
    lo = hi = None
    step = width
    for _ in range(200):
        a, b = lo0 - step, hi0 + step
        tp, tq = p.tail_mass(a, b), q.tail_mass(a, b)
        if tp is None or tq is None:
            return None
        if lo is None and math.sqrt(tp[0] * tq[0]) < target:
            lo = a
        if hi is None and math.sqrt(tp[1] * tq[1]) < target:
            hi = b
        if lo is not None and hi is not None:
            return lo, hi
        step *= 2
    raise NumericalError("tail cutoff search did not terminate")


def _pieces(p, q, cfg) -> list[tuple[float, float]]:
    lo_p, hi_p = p.support()
    lo_q, hi_q = q.support()
    lo, hi = max(lo_p, lo_q), min(hi_p, hi_q)
    if lo >= hi:
        return []
    pts = set(p.breakpoints()) | set(q.breakpoints()) | set(cfg.split_points)
    pts = sorted(x for x in pts if math.isfinite(x))
    if not pts:
        pts = [0.0]
    if not (math.isfinite(lo) and math.isfinite(hi)):
        cut = _tail_cutoffs(p, q, pts, cfg)
        if cut is not None:
            lo = cut[0] if not math.isfinite(lo) else lo
            hi = cut[1] if not math.isfinite(hi) else hi
            # geometric ladder so each tail piece spans one octave of distance
            a, b = pts[0], pts[-1]
            step = max(b - a, 1.0)
            while a - step > lo or b + step < hi:
                pts += [a - step, b + step]
                step *= 2
    edges = sorted({lo, hi} | {x for x in pts if lo < x < hi})
    return list(zip(edges[:-1], edges[1:]))


def _integrate(fn: Callable[[float], float], pieces, cfg) -> tuple[float, float, bool]:
    total, err, ok = 0.0, 0.0, True
    eps = cfg.abs_tol / max(len(pieces), 1) / 4
    for a, b in pieces:
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                v, e = integrate.quad(fn, a, b, epsabs=eps, epsrel=1e-12, limit=cfg.max_subdivisions)
            except integrate.IntegrationWarning:
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                v, e = integrate.quad(fn, a, b, epsabs=eps, epsrel=1e-12, limit=cfg.max_subdivisions)
                ok = False
        if not math.isfinite(v):
            ok = False
        total += v
        err += e
    return total, err, ok and err <= cfg.abs_tol


def _bhattacharyya_mc(p, q, cfg) -> float:
    if not hasattr(p, "sample"):
        raise NumericalError("quadrature failed and no sampler is available for a Monte Carlo fallback")
    rng = np.random.default_rng(cfg.seed)
    x = p.sample(cfg.mc_samples, rng)
    with np.errstate(invalid="ignore"):
        r = np.exp(0.5 * (q.logpdf(x) - p.logpdf(x)))
    r = np.where(np.isfinite(r), r, 0.0)
    se = float(r.std(ddof=1) / math.sqrt(r.size))
    if se > cfg.mc_max_stderr:
        raise NumericalError(f"Monte Carlo fallback standard error {se:.2e} too large")
    warnings.warn(f"Hellinger quadrature fell back to Monte Carlo (standard error {se:.1e})",
                  RuntimeWarning, stacklevel=3)
    return float(r.mean())


def hellinger2_numeric(p, q, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Squared Hellinger distance 1 - int sqrt(p q), in [0, 1].

    ``p`` and ``q`` may be candidates, ``(spec, params)`` pairs, or density
    callables (integrated over the whole line without tail bounds).
    """
    p, q = _as_density(p), _as_density(q)
    pieces = _pieces(p, q, cfg)
    if not pieces:
        return 1.0

    def f(x):
        v = 0.5 * (p.logpdf(x)[0] + q.logpdf(x)[0])
        return math.exp(v) if v < 700 else math.inf

    bc, _, ok = _integrate(f, pieces, cfg)
    if not ok:
        bc = _bhattacharyya_mc(p, q, cfg)
    return min(1.0, max(0.0, 1.0 - bc))


def integrate_density(p, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Total mass of a density, splitting at its kinks and singularities."""
    p = _as_density(p)
    pieces = _pieces(p, p, cfg)
    val, _, ok = _integrate(lambda x: math.exp(p.logpdf(x)[0]), pieces, cfg)
    if not ok:
        raise NumericalError("density quadrature did not converge")
    # mass beyond the cutoffs is below the tail tolerance but is not ignored
    lo, hi = pieces[0][0], pieces[-1][1]
    tails = p.tail_mass(lo, hi)
    return val + (sum(tails) if tails is not None and math.isfinite(lo + hi) else 0.0)


def total_variation_numeric(p, q, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    p, q = _as_density(p), _as_density(q)
    pp, qq = _pieces(p, p, cfg), _pieces(q, q, cfg)
    edges = {a for a, _ in pp + qq} | {b for _, b in pp + qq}
    pieces = list(zip(sorted(edges)[:-1], sorted(edges)[1:]))
    val, _, ok = _integrate(lambda x: abs(math.exp(p.logpdf(x)[0]) - math.exp(q.logpdf(x)[0])),
                            pieces, cfg)
    if not ok:
        raise NumericalError("total variation quadrature did not converge")
    return min(1.0, 0.5 * val)


def hellinger2_gaussian(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    if not (sigma1 > 0 and sigma2 > 0):
        raise DomainError("Gaussian scales must be positive")
    v = sigma1 * sigma1 + sigma2 * sigma2
    log_bc = 0.5 * math.log(2.0 * sigma1 * sigma2 / v) - (mu1 - mu2) ** 2 / (4.0 * v)
    return -math.expm1(log_bc)


def product_hellinger2(values: Sequence[float]) -> float:
    """Squared Hellinger distance between product measures in the summed form."""
    vals = np.asarray(values, dtype=np.float64)
    if np.any((vals < 0) | (vals > 1)):
        raise DomainError("per-coordinate squared Hellinger values must lie in [0, 1]")
    return float(vals.sum())


def mixture_hellinger_upper_bound(w, v, component_h2: Sequence[float]) -> float:
    """(h(w, v) + max_k h(F_k, G_k))^2 for mixtures sharing the index set."""
    h2 = np.asarray(component_h2, dtype=np.float64)
    if h2.size != len(w if not hasattr(w, "K") else w.values):
        raise DomainError("need one component distance per weight")
    return (math.sqrt(weight_hellinger2(w, v)) + math.sqrt(float(h2.max(initial=0.0)))) ** 2


# ---------------------------------------------------------------------------
# parameter losses

@dataclass(frozen=True)
class ParamLossReport:
    weight_loss: float
    component_losses: tuple[float, ...]
    permutation: tuple[int, ...]     # permutation[k] = estimated index matched to true component k

    @property
    def total(self) -> float:
        return self.weight_loss + sum(self.component_losses)


def _coords(spec: EmissionSpec, p: EmissionParams) -> tuple[float, float]:
    if spec.shape_kind == "gaussian" and spec.has_scale:
        return p.location, p.scale * p.scale
    return p.location, p.scale


def _cost_matrix(true: MixtureCandidate, est: MixtureCandidate):
    K = true.K
    w, v = true.weights.values, est.weights.values
    wl = np.empty((K, K))
    cl = np.empty((K, K))
    for k, (sk, pk) in enumerate(true.components):
        for l, (sl, pl) in enumerate(est.components):
            wl[k, l] = (w[k] - v[l]) ** 2
            if sk.name != sl.name:
                cl[k, l] = math.inf
            else:
                a, b = _coords(sk, pk), _coords(sl, pl)
                cl[k, l] = min((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2, 1.0)
    return wl, cl


def match_components(true: MixtureCandidate, est: MixtureCandidate) -> ParamLossReport:
    """Permutation of ``est`` minimising weight loss plus clipped component losses."""
    if true.K != est.K:
        raise DomainError(f"component counts differ: {true.K} vs {est.K}")
    if sorted(s.name for s in true.specs) != sorted(s.name for s in est.specs):
        raise DomainError("the two mixtures use different family multisets")
    K = true.K
    wl, cl = _cost_matrix(true, est)
    cost = wl + cl
    if K <= 6:
        best, perm = math.inf, None
        for p in itertools.permutations(range(K)):
            c = sum(cost[k, p[k]] for k in range(K))
            if c < best:
                best, perm = c, p
    else:
        finite = np.where(np.isfinite(cost), cost, 1e6)
        rows, cols = optimize.linear_sum_assignment(finite)
        perm = tuple(int(c) for c in cols[np.argsort(rows)])
    return ParamLossReport(
        weight_loss=float(sum(wl[k, perm[k]] for k in range(K))),
        component_losses=tuple(float(cl[k, perm[k]]) for k in range(K)),
        permutation=tuple(perm),
    )


# ---------------------------------------------------------------------------
# Fisher information of Gaussian mixtures

@dataclass(frozen=True)
class FisherReport:
    matrix: np.ndarray = field(repr=False)
    min_eigenvalue: float
    names: tuple[str, ...]


def _gmm_theta(c: MixtureCandidate) -> np.ndarray:
    w = c.weights.values
    theta = list(w[:-1])
    for _, p in c.components:
        theta += [p.location, p.scale ** 2]
    return np.array(theta)


def _gmm_logpdf(theta: np.ndarray, K: int, x: np.ndarray) -> np.ndarray:
    w = np.append(theta[:K - 1], 1.0 - theta[:K - 1].sum())
    z = theta[K - 1::2][:K]
    v = theta[K::2][:K]
    comp = -0.5 * np.log(2 * np.pi * v)[:, None] - 0.5 * (x[None, :] - z[:, None]) ** 2 / v[:, None]
    with np.errstate(divide="ignore"):
        a = np.log(w)[:, None] + comp
    m = a.max(axis=0)
    return m + np.log(np.exp(a - m).sum(axis=0))


def fisher_information_numeric(c: MixtureCandidate, rel_step: float = 1e-5, panels: int = 400,
                               order: int = 20) -> FisherReport:
    """Fisher information of a Gaussian mixture in the coordinates
    (w_1..w_{K-1}, z_1, sigma_1^2, ..., z_K, sigma_K^2).

    Scores are central differences of the log-density; the expectation of
    their outer product uses composite Gauss-Legendre quadrature."""
    if any(s.shape_kind != "gaussian" for s in c.specs):
        raise DomainError("Fisher information is implemented for Gaussian mixtures")
    K = c.K
    theta = _gmm_theta(c)
    zs = np.array([p.location for _, p in c.components])
    ss = np.array([p.scale for _, p in c.components])
    lo, hi = zs.min() - 14 * ss.max(), zs.max() + 14 * ss.max()
    nodes, wts = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    qw = (half[:, None] * wts[None, :]).ravel()
    p = np.exp(_gmm_logpdf(theta, K, x))
    scores = np.empty((theta.size, x.size))
    for j in range(theta.size):
        h = rel_step * max(abs(theta[j]), 1.0) if theta[j] == 0 else rel_step * abs(theta[j])
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        scores[j] = (_gmm_logpdf(tp, K, x) - _gmm_logpdf(tm, K, x)) / (2 * h)
    info = (scores * (p * qw)[None, :]) @ scores.T
    if not np.all(np.isfinite(info)):
        raise NumericalError("Fisher information quadrature produced non-finite values")
    info = 0.5 * (info + info.T)
    names = tuple([f"w{k + 1}" for k in range(K - 1)]
                  + [f"{n}{k + 1}" for k in range(K) for n in ("z", "sigma2_")])
    return FisherReport(info, float(np.linalg.eigvalsh(info)[0]), names)
