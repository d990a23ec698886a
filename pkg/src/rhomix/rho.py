"""rho-estimation: the psi function, T statistics, Upsilon and the estimator."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .errors import DomainError, SearchError
from .kernels import t_against, t_matrix, t_row, t_sum
from .mixtures import CandidateSet, MixtureCandidate, ModelDescriptor

A0 = 4.0
A1 = 3.0 / 8.0
A2_SQ = 3.0 * math.sqrt(2.0)
SLACK = 8.24
KAPPA_DEFAULT = 470.0
# Upsilon values within TIE_TOL * n of the minimum count as tied (lowest index
# wins), so rounding from an affine change of units cannot flip the choice
TIE_TOL = 1e-9


@dataclass(frozen=True)
class PsiConstants:
    a0: float = A0
    a1: float = A1
    a2_sq: float = A2_SQ
    slack: float = SLACK
    kappa: float = KAPPA_DEFAULT


def configure_threads(n: int | None) -> int:
    """Cap the worker threads used by the compiled T-table kernel."""
    cap = numba.config.NUMBA_NUM_THREADS
    k = cap if n is None else max(1, min(int(n), cap))
    numba.set_num_threads(k)
    return k


def psi(x):
    """(x - 1)/(x + 1) on [0, +inf], with psi(+inf) = 1."""
    a = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(a)) or np.any(a < 0):
        raise DomainError("psi is defined on [0, +inf]")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(a), 1.0, (a - 1.0) / (a + 1.0))
    return float(out) if out.ndim == 0 else out


def _as_sample(X) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_1d(np.asarray(X, dtype=np.float64)))


def t_statistic(X, q: MixtureCandidate, qp: MixtureCandidate) -> float:
    """sum_i psi(sqrt(q'(X_i)/q(X_i))) with 0/0 = 1 and a/0 = +inf."""
    x = _as_sample(X)
    return float(t_sum(q.logpdf(x), qp.logpdf(x)))


# ---------------------------------------------------------------------------
# penalties and complexity

def log_plus(x: float) -> float:
    return max(math.log(x), 0.0) if x > 0 else 0.0


def _bracket(vbar: float, K: int, delta: float, n: float) -> float:
    if not delta > 0:
        raise DomainError("the weight floor must be positive for the complexity term")
    return 5.82 + math.log((K + 1) ** 2 / delta) + log_plus(n / vbar)


def delta_default_exact(K: int, vbar: int, n: int) -> Fraction:
    if K < 1 or vbar < 1 or n < 1:
        raise DomainError("delta_default needs K, vbar, n >= 1")
    if K == 1:
        return Fraction(1)
    return min(Fraction(vbar, n * (K - 1)), Fraction(1, K))


def delta_default(K: int, vbar: int, n: int) -> float:
    """1 for K = 1, otherwise vbar/(n(K-1)) capped at 1/K."""
    return float(delta_default_exact(K, vbar, n))


def penalty_value(descriptor: ModelDescriptor, n: int, kappa: float = KAPPA_DEFAULT,
                  Delta: float = 0.0) -> float:
    d = float(descriptor.delta)
    vbar = descriptor.vbar
    return kappa * (174.1 * vbar * _bracket(vbar, descriptor.K, d, n) + Delta)


def rho_dimension_bound(vbar: float, K: int, delta: float, n: int) -> float:
    return min(818.1 * vbar * _bracket(vbar, K, float(delta), n), n / 6.0)


def delta_by_order(d: ModelDescriptor) -> float:
    return float(d.K)


@dataclass(frozen=True)
class PenaltySpec:
    """pen(theta) = kappa (174.1 vbar [...] + Delta(theta))."""

    n: int
    kappa: float = KAPPA_DEFAULT
    Delta: Callable[[ModelDescriptor], float] = delta_by_order

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")

    def value(self, d: ModelDescriptor) -> float:
        return penalty_value(d, self.n, self.kappa, self.Delta(d))


def check_summability(descriptors: Sequence[ModelDescriptor], Delta: Callable) -> float:
    s = math.fsum(math.exp(-Delta(d)) for d in descriptors)
    if s > 1.0 + 1e-12:
        raise DomainError(f"sum of exp(-Delta) over the model collection is {s:.4f} > 1")
    return s


def resolve_penalties(descriptors: Sequence[ModelDescriptor], pen) -> np.ndarray:
    if pen is None:
        return np.zeros(len(descriptors))
    if isinstance(pen, (int, float)):
        return np.full(len(descriptors), float(pen))
    if isinstance(pen, PenaltySpec):
        return np.array([pen.value(d) for d in descriptors])
    if isinstance(pen, Mapping):
        return np.array([float(pen[d]) for d in descriptors])
    if callable(pen):
        return np.array([float(pen(d)) for d in descriptors])
    raise DomainError(f"unsupported penalty {pen!r}")


# ---------------------------------------------------------------------------
# search configuration and results

@dataclass(frozen=True)
class SearchConfig:
    mode: str = "auto"                  # exhaustive | heuristic | auto
    max_evaluations: int | None = None  # Upsilon rows (finite sets) or log-density evaluations (lattices)
    exhaustive_limit: int = 2500
    probe_size: int = 4
    seed: int = 0
    keep_table: bool = True
    max_cells: int = 60_000_000         # candidates x observations held in memory
    # lattice search
    rounds: int = 30
    patience: int = 4
    restarts: int = 2
    certify_limit: int = 20_000
    anchor_moves: bool | None = None
    anchor_window: int = 16

    def __post_init__(self):
        if self.mode not in ("auto", "exhaustive", "heuristic"):
            raise DomainError(f"unknown search mode {self.mode!r}")


@dataclass
class RhoFit:
    chosen: MixtureCandidate
    upsilon: float
    descriptor: ModelDescriptor
    mode: str
    penalty: float = 0.0
    index: int | None = None
    penalties: dict = field(default_factory=dict)
    upsilon_table: np.ndarray | None = None
    certified: bool = True
    evaluations: int = 0
    runtime_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def in_slack_set(self, slack: float = SLACK) -> bool:
        if self.upsilon_table is None:
            return True
        return self.upsilon < float(np.min(self.upsilon_table)) + slack

    def to_dict(self) -> dict:
        out = {
            "chosen": self.chosen.describe(),
            "descriptor": self.descriptor.label,
            "upsilon": self.upsilon,
            "penalty": self.penalty,
            "penalties": self.penalties,
            "mode": self.mode,
            "certified": self.certified,
            "index": self.index,
            "evaluations": self.evaluations,
            "runtime_s": self.runtime_s,
            "diagnostics": self.diagnostics,
        }
        if self.upsilon_table is not None:
            out["table"] = {"size": int(self.upsilon_table.size),
                            "min": float(np.min(self.upsilon_table))}
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# ---------------------------------------------------------------------------
# finite candidate sets

class _Union:
    """Several candidate sets viewed as one indexed family."""

    def __init__(self, sets: Sequence[CandidateSet], pen):
        self.sets = list(sets)
        if not self.sets or any(len(s) == 0 for s in self.sets):
            raise DomainError("empty candidate set")
        self.descs = [s.descriptor for s in self.sets]
        set_pen = resolve_penalties(self.descs, pen)
        self.owner = np.concatenate([np.full(len(s), i) for i, s in enumerate(self.sets)])
        self.pen = set_pen[self.owner]
        self.set_pen = set_pen
        self.offsets = np.cumsum([0] + [len(s) for s in self.sets])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def candidate(self, i: int) -> MixtureCandidate:
        s = int(self.owner[i])
        return self.sets[s][i - int(self.offsets[s])]

    def log_densities(self, x, max_cells: int) -> np.ndarray:
        if self.size * x.size > max_cells:
            raise DomainError(f"{self.size} candidates x {x.size} observations exceed the "
                              f"{max_cells}-cell memory budget; use a lattice model")
        return np.vstack([s.log_densities(x) for s in self.sets])


def _as_sets(cset) -> list:
    if isinstance(cset, (list, tuple)):
        return list(cset)
    return [cset]


def upsilon(X, q: MixtureCandidate, cset, pen=None) -> float:
    """sup_{q'} [T(X, q, q') - pen(q')] + pen(q) over a finite set (or union of sets)."""
    u = _Union(_as_sets(cset), pen)
    x = _as_sample(X)
    own = [i for i, d in enumerate(u.descs) if d.conforms(q)]
    if not own and np.any(u.set_pen != 0):
        raise DomainError("q does not belong to any model of the candidate family")
    pen_q = float(min(u.set_pen[i] for i in own)) if own else 0.0
    L = u.log_densities(x, 1 << 62)
    row = np.empty(u.size)
    t_against(q.logpdf(x), L, row)
    return float(np.max(row - u.pen) + pen_q)


def tie_tolerance(n: int) -> float:
    return TIE_TOL * max(1, n)


def first_minimizer(ups: np.ndarray, tol: float) -> int:
    """Lowest index whose value is within ``tol`` of the minimum."""
    return int(np.flatnonzero(ups <= np.min(ups) + tol)[0])


def _exhaustive(L: np.ndarray, pen: np.ndarray) -> np.ndarray:
    T = t_matrix(L)
    return (T - pen[None, :]).max(axis=1) + pen


def _probe_order(L: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    with np.errstate(invalid="ignore"):
        ll = np.where(np.isfinite(L), L, np.where(L > 0, 1e300, -1e300)).sum(axis=1)
    top = list(np.argsort(-ll, kind="stable")[:k])
    extra = rng.choice(L.shape[0], size=min(k, L.shape[0]), replace=False)
    return list(dict.fromkeys(int(i) for i in top + list(extra)))


def _branch_and_bound(L, pen, cfg: SearchConfig):
    """Exact minimiser of Upsilon without the full table.

    Evaluating the row of q gives Upsilon(q) and, by antisymmetry of T, the
    lower bound Upsilon(q') >= T(q', q) - pen(q) + pen(q') for every q'.
    Rows are evaluated in order of smallest lower bound until no unevaluated
    candidate can beat the minimum or tie with it at a smaller index."""
    m = L.shape[0]
    tol = tie_tolerance(L.shape[1])
    rng = np.random.default_rng(cfg.seed)
    lb = np.zeros(m)
    ups = np.full(m, np.inf)
    done = np.zeros(m, dtype=bool)
    idx = np.arange(m)
    row = np.empty(m)
    best, best_i, evals = np.inf, m, 0
    budget = cfg.max_evaluations if cfg.max_evaluations is not None else m

    def evaluate(e):
        nonlocal best, best_i, evals
        t_row(L, e, row)
        ups[e] = np.max(row - pen) + pen[e]
        np.maximum(lb, (-row - pen[e]) + pen, out=lb)
        done[e] = True
        evals += 1
        if ups[e] < best:
            best = ups[e]
        best_i = first_minimizer(ups, tol)

    for e in _probe_order(L, cfg.probe_size, rng):
        if evals >= budget:
            break
        evaluate(e)
    while True:
        viable = ~done & ((lb < best) | ((lb <= best + tol) & (idx < best_i)))
        if not viable.any():
            return best_i, ups, evals, True
        if evals >= budget:
            if best_i == m:
                raise SearchError("search budget exhausted before any Upsilon evaluation")
            return best_i, ups, evals, False
        cand = np.flatnonzero(viable)
        evaluate(int(cand[np.argmin(lb[cand])]))


def _fit_finite(x, sets, pen, cfg: SearchConfig) -> RhoFit:
    t0 = time.perf_counter()
    u = _Union(sets, pen)
    mode = cfg.mode
    if mode == "auto":
        mode = "exhaustive" if u.size <= cfg.exhaustive_limit else "heuristic"
    L = u.log_densities(x, cfg.max_cells)
    if mode == "exhaustive":
        if cfg.max_evaluations is not None and cfg.max_evaluations < u.size:
            raise SearchError(f"exhaustive search needs {u.size} evaluations, budget is {cfg.max_evaluations}")
        ups = _exhaustive(L, u.pen)
        i, evals, certified = first_minimizer(ups, tie_tolerance(x.size)), u.size, True
        table = ups
    else:
        i, ups, evals, certified = _branch_and_bound(L, u.pen, cfg)
        table = ups if cfg.keep_table else None
    s = int(u.owner[i])
    return RhoFit(
        chosen=u.candidate(i),
        upsilon=float(ups[i]),
        descriptor=u.descs[s],
        mode=mode,
        penalty=float(u.set_pen[s]),
        index=i,
        penalties={d.label: float(p) for d, p in zip(u.descs, u.set_pen)},
        upsilon_table=table if (cfg.keep_table or mode == "exhaustive") else None,
        certified=certified,
        evaluations=evals,
        runtime_s=time.perf_counter() - t0,
        diagnostics={"set_size": u.size, "n": int(x.size)},
    )


def rho_estimate(X, cset, pen=None, search: SearchConfig | None = None) -> RhoFit:
    """rho-estimator over a finite candidate set, a union of sets, or lattice models.

    Finite sets are solved exactly (full table, or branch and bound in
    heuristic mode); lattice models use the local search in :mod:`rhomix.search`.
    """
    cfg = search or SearchConfig()
    x = _as_sample(X)
    if x.size == 0:
        raise DomainError("empty sample")
    sets = _as_sets(cset)
    if not sets:
        raise DomainError("no candidates")
    if all(isinstance(s, CandidateSet) for s in sets):
        return _fit_finite(x, sets, pen, cfg)
    from .search import LatticeModel, fit_lattice
    if all(isinstance(s, LatticeModel) for s in sets):
        return fit_lattice(x, sets, pen, cfg)
    raise DomainError("mixing finite candidate sets and lattice models is not supported")
