"""Local search for rho-estimators over implicit parameter lattices.

A :class:`LatticeModel` is the candidate set

    {sum_k (d_k/N) F(.; z_{i_k}, s_{j_k}) : d_k >= ceil(delta N), sum d_k = N}

for regular location and log-scale grids, which is far too large to list.
The search keeps a pool of challengers and alternates two local searches:

* descent: minimise max_{p in pool} [T(q, p) - pen(p)] + pen(q) over q, and
* challenge: maximise T(q*, p) - pen(p) over p for the incumbent q*,

adding every challenger found to the pool until none beats the incumbent by
more than its pool value.  Both searches are compass searches on the integer
lattice coordinates with per-axis step halving.  The reported Upsilon is the
value against every challenger explored, so the result is certified against
the explored subset; small lattices are additionally enumerated in full.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .emission import ParamGrid, param_grid, SCALE_FLOOR
from .errors import DomainError, SearchError
from .kernels import mixture_logpdf, t_sum
from .mixtures import MixtureCandidate, ModelDescriptor, canonicalize
from .rho import RhoFit, SearchConfig, resolve_penalties
from .simplex import WeightVector, count_weight_grid, round_to_grid, weight_floor_numerator


@dataclass(frozen=True)
class LatticeModel:
    descriptor: ModelDescriptor
    grids: tuple[ParamGrid, ...]
    weight_denominator: int

    def __post_init__(self):
        object.__setattr__(self, "grids", tuple(self.grids))
        d = self.descriptor
        if len(self.grids) != d.K:
            raise DomainError(f"need {d.K} parameter grids, got {len(self.grids)}")
        for g, spec in zip(self.grids, d.families):
            if g.spec != spec:
                raise DomainError("grid family does not match the model descriptor")
        if self.weight_denominator < 1 or self.free_mass < 0:
            raise DomainError(f"no weight vector with denominator {self.weight_denominator} "
                              f"respects the floor {d.delta}")

    @property
    def K(self) -> int:
        return self.descriptor.K

    @cached_property
    def dmin(self) -> int:
        return weight_floor_numerator(self.weight_denominator, self.descriptor.delta)

    @property
    def free_mass(self) -> int:
        return self.weight_denominator - self.K * weight_floor_numerator(self.weight_denominator,
                                                                         self.descriptor.delta)

    @cached_property
    def runs(self) -> list[tuple[int, int]]:
        """Maximal runs of interchangeable slots (same family and grid)."""
        out, start = [], 0
        for k in range(1, self.K + 1):
            if k == self.K or self.grids[k] != self.grids[start]:
                out.append((start, k))
                start = k
        return out

    @property
    def size(self) -> int:
        """Upper bound on the number of lattice points (exact unless interchangeable
        slots share parameters, where weight swaps coincide)."""
        n = count_weight_grid(self.K, self.weight_denominator, self.descriptor.delta)
        for a, b in self.runs:
            m = self.grids[a].size
            n *= math.comb(m + b - a - 1, b - a)
        return n

    def canonical(self, point: tuple) -> tuple:
        K = self.K
        if all(b - a == 1 for a, b in self.runs):
            return point
        d, i, j = list(point[:K]), list(point[K:2 * K]), list(point[2 * K:])
        for a, b in self.runs:
            if b - a > 1:
                slots = sorted(range(a, b), key=lambda k: (-j[k], -i[k], -d[k]))
                d[a:b] = [d[k] for k in slots]
                i[a:b] = [i[k] for k in slots]
                j[a:b] = [j[k] for k in slots]
        return tuple(d + i + j)

    def arrays(self, point: tuple):
        K = self.K
        codes = np.array([g.spec.code for g in self.grids], dtype=np.int64)
        shapes = np.array([g.spec.shape_param for g in self.grids])
        d = np.array(point[:K], dtype=np.float64)
        with np.errstate(divide="ignore"):
            logw = np.log(d / self.weight_denominator)
        zs = np.array([g.location(i) for g, i in zip(self.grids, point[K:2 * K])])
        ss = np.array([g.scale(j) for g, j in zip(self.grids, point[2 * K:])])
        return codes, shapes, logw, zs, ss

    def candidate(self, point: tuple) -> MixtureCandidate:
        K = self.K
        w = WeightVector(tuple(point[:K]), self.weight_denominator, self.descriptor.delta)
        comps = tuple((g.spec, g.param(i, j))
                      for g, i, j in zip(self.grids, point[K:2 * K], point[2 * K:]))
        return MixtureCandidate(w, comps)

    def point_near(self, weights, locations, scales) -> tuple:
        w = round_to_grid(weights, self.weight_denominator, self.descriptor.delta)
        idx = [g.nearest_index(z, s) for g, z, s in zip(self.grids, locations, scales)]
        return self.canonical(tuple(w.numerators) + tuple(i for i, _ in idx) + tuple(j for _, j in idx))

    def iter_points(self):
        from .simplex import iter_weight_grid
        K = self.K
        per_slot = [list(itertools.product(range(g.n_loc), range(g.n_scale))) for g in self.grids]
        for w in iter_weight_grid(K, self.weight_denominator, self.descriptor.delta):
            for combo in itertools.product(*per_slot):
                p = tuple(w.numerators) + tuple(c[0] for c in combo) + tuple(c[1] for c in combo)
                if self.canonical(p) == p:
                    yield p

    def resolution(self) -> dict:
        return {
            "weight_step": 1.0 / self.weight_denominator,
            "location_steps": [g.loc_step for g in self.grids],
            "log_scale_steps": [g.log_scale_step for g in self.grids],
            "size": self.size,
        }


def _scales_for(step: float) -> int:
    """Smallest S whose log-uniform grid on [r/S, r] has log spacing <= step."""
    S = 2.0
    for _ in range(100):
        S = 1.0 + math.log(S) / step
    return max(2, int(math.ceil(S)))


def lattice_model(descriptor: ModelDescriptor, data, resolution: float | None = None,
                  weight_denominator: int | None = None) -> LatticeModel:
    """Data-driven lattice: location spacing ``resolution`` x (1.5 IQR), log-scale
    spacing ``resolution`` and weight spacing about ``resolution``.

    The grids follow the same construction as :func:`rhomix.emission.build_net`
    (range widened by range/L, scales on [r/S, r])."""
    x = np.asarray(data, dtype=np.float64)
    if x.size == 0:
        raise DomainError("cannot build a lattice from empty data")
    res = resolution if resolution is not None else 0.05 / math.sqrt(x.size)
    if not 0 < res < 1:
        raise DomainError("lattice resolution must lie in (0, 1)")
    q1, q3 = np.percentile(x, [25, 75])
    r = max(1.5 * float(q3 - q1), SCALE_FLOOR)
    span = float(x.max() - x.min())
    grids = []
    for spec in descriptor.families:
        lo, hi = spec.location_domain
        if lo == hi:
            g = ParamGrid.from_bounds(spec, lo, lo, 1)
        else:
            L = max(2, int(math.ceil(span / (res * r))) + 3)
            g = param_grid(spec, x, L, _scales_for(res) if spec.has_scale else 1)
        grids.append(g)
    N = weight_denominator or max(descriptor.K, int(math.ceil(1.0 / res)))
    dmin = weight_floor_numerator(N, descriptor.delta)
    while N - descriptor.K * dmin < 0:
        N *= 2
        dmin = weight_floor_numerator(N, descriptor.delta)
    return LatticeModel(descriptor, tuple(grids), N)


# ---------------------------------------------------------------------------

class _Budget(Exception):
    pass


class _Engine:
    def __init__(self, x, models, pens, cfg: SearchConfig):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.xs = np.sort(self.x)
        self.n = self.x.size
        self.models = models
        self.pens = pens
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        cap = max(64, cfg.max_cells // max(self.n, 1) // 4)
        self.cache_cap = min(cap, 4096)
        self.cache: OrderedDict = OrderedDict()
        self.evals = 0
        self.budget = cfg.max_evaluations
        self.inc = None
        self.inc_value = math.inf
        self.pool = []
        self.history = []
        self.incumbents = []
        self.best_trace = []
        self.pairs = {}
        self.certified_full = False
        self.by_model = {}
        pmin = float(np.min(pens))
        # a model can hold the minimiser only if pen - pen_min - n <= n, and its
        # members can matter as challengers only if pen - pen_min <= 3n
        self.home = [p <= pmin + 2 * self.n for p in pens]
        self.source = [p <= pmin + 3 * self.n for p in pens]
        self.anchor = []
        for m in models:
            auto = any(g.spec.shape_kind == "spike" for g in m.grids)
            self.anchor.append(auto if cfg.anchor_moves is None else cfg.anchor_moves)

    # -- evaluation -------------------------------------------------------
    def ll(self, key):
        v = self.cache.get(key)
        if v is not None:
            self.cache.move_to_end(key)
            return v
        if self.budget is not None and self.evals >= self.budget:
            raise _Budget()
        m, pt = key
        out = np.empty(self.n)
        mixture_logpdf(*self.models[m].arrays(pt), self.x, out)
        self.evals += 1
        self.cache[key] = out
        if len(self.cache) > self.cache_cap:
            self.cache.popitem(last=False)
        return out

    def T(self, q, p) -> float:
        if q == p:
            return 0.0
        v = self.pairs.get((q, p))
        if v is None:
            v = float(t_sum(self.ll(q), self.ll(p)))
            # T is exactly antisymmetric, so one sum serves both orders
            self.pairs[(q, p)] = v
            self.pairs[(p, q)] = -v
        return v

    def key(self, m, pt):
        return (m, self.models[m].canonical(pt))

    # -- lattice moves ----------------------------------------------------
    def axes(self, m):
        M = self.models[m]
        K = M.K
        out = [("w", a, b) for a in range(K) for b in range(a + 1, K)] if M.free_mass > 0 else []
        for k, g in enumerate(M.grids):
            if g.n_loc > 1:
                out.append(("z", k))
            if g.n_scale > 1:
                out.append(("s", k))
        return out

    def initial_steps(self, m, pt):
        M = self.models[m]
        K = M.K
        steps = {}
        for ax in self.axes(m):
            if ax[0] == "w":
                steps[ax] = max(1, M.free_mass // 8)
            elif ax[0] == "z":
                g = M.grids[ax[1]]
                s = g.scale(pt[2 * K + ax[1]])
                steps[ax] = int(min(max(1, round(0.5 * s / g.loc_step)), max(1, g.n_loc // 4)))
            else:
                g = M.grids[ax[1]]
                steps[ax] = int(min(max(1, round(0.5 / g.log_scale_step)), max(1, g.n_scale // 4)))
        return steps

    def move(self, m, pt, ax, t):
        M = self.models[m]
        K = M.K
        p = list(pt)
        if ax[0] == "w":
            a, b = ax[1], ax[2]
            if t > 0:
                t = min(t, p[b] - M.dmin)
            else:
                t = -min(-t, p[a] - M.dmin)
            if t == 0:
                return None
            p[a] += t
            p[b] -= t
        elif ax[0] == "z":
            k = K + ax[1]
            v = min(max(p[k] + t, 0), M.grids[ax[1]].n_loc - 1)
            if v == p[k]:
                return None
            p[k] = v
        else:
            k = 2 * K + ax[1]
            v = min(max(p[k] + t, 0), M.grids[ax[1]].n_scale - 1)
            if v == p[k]:
                return None
            p[k] = v
        return M.canonical(tuple(p))

    def anchor_points(self, m, pt):
        """Move one location onto (the lattice point nearest) a nearby
        observation or the midpoint of two neighbouring observations."""
        M = self.models[m]
        K = M.K
        W = self.cfg.anchor_window
        out = []
        for k, g in enumerate(M.grids):
            if g.n_loc <= 1:
                continue
            z = g.location(pt[K + k])
            pos = int(np.searchsorted(self.xs, z))
            win = self.xs[max(0, pos - W):pos + W]
            targets = np.concatenate([win, 0.5 * (win[1:] + win[:-1])])
            seen = set()
            for tz in targets:
                i, _ = g.nearest_index(tz, 1.0)
                if i == pt[K + k] or i in seen:
                    continue
                seen.add(i)
                p = list(pt)
                p[K + k] = i
                out.append(M.canonical(tuple(p)))
        return out

    def climb(self, m, start, f, f0=None):
        """Compass ascent of f on model m's lattice; f(pt, thr) returns a value
        or None when the value cannot exceed thr."""
        cur = start
        fc = f(cur, -math.inf) if f0 is None else f0
        steps = self.initial_steps(m, cur)
        axes = self.axes(m)
        seen = {cur}
        while True:
            improved = False
            for ax in axes:
                for sgn in (1, -1):
                    t = sgn * steps[ax]
                    moved = False
                    while True:
                        nxt = self.move(m, cur, ax, t)
                        if nxt is None or nxt in seen:
                            break
                        seen.add(nxt)
                        v = f(nxt, fc)
                        if v is None or v <= fc:
                            break
                        cur, fc, moved = nxt, v, True
                        t *= 2
                    if moved:
                        improved = True
                        break
            if self.anchor[m] and not improved and all(s <= 1 for s in steps.values()):
                best, bv = None, fc
                for nxt in self.anchor_points(m, cur):
                    if nxt in seen:
                        continue
                    seen.add(nxt)
                    v = f(nxt, bv)
                    if v is not None and v > bv:
                        best, bv = nxt, v
                if best is not None:
                    cur, fc, improved = best, bv, True
                    steps = self.initial_steps(m, cur)
                    continue
            if not improved:
                if all(s <= 1 for s in steps.values()):
                    return cur, fc
                steps = {ax: max(1, s // 2) for ax, s in steps.items()}

    # -- objectives -------------------------------------------------------
    def challenger_obj(self, qkey, m):
        lq = self.ll(qkey)
        pen_m = self.pens[m]

        def f(pt, thr):
            return float(t_sum(lq, self.ll((m, pt)))) - pen_m
        return f

    def descent_obj(self, pool, m):
        pen_m = self.pens[m]

        def f(pt, thr):
            q = (m, pt)
            worst = -math.inf
            for pk in pool:
                v = self.T(q, pk) - self.pens[pk[0]] + pen_m
                if v > worst:
                    worst = v
                    if -worst <= thr:
                        return None
            return -worst
        return f

    def pool_value(self, qkey, pool) -> float:
        """max over the pool of T(q, p) - pen(p) + pen(q), without the self term."""
        pq = self.pens[qkey[0]]
        return max(self.T(qkey, pk) - self.pens[pk[0]] + pq for pk in pool)

    # -- starting points --------------------------------------------------
    def starts(self, m) -> list[tuple]:
        M = self.models[m]
        K = M.K
        xs = self.xs
        out = []
        free = [k for k, g in enumerate(M.grids) if g.n_loc > 1]
        blocks = np.array_split(xs, len(free)) if free else []

        def scale_for(k, block):
            g = M.grids[k]
            if not g.spec.has_scale:
                return g.spec.fixed_scale
            q1, q3 = np.percentile(block, [25, 75])
            iqr = max(float(q3 - q1), 1e-9)
            return {"gaussian": iqr / 1.349, "cauchy": iqr / 2, "laplace": iqr / 1.386,
                    "uniform": float(block[-1] - block[0]) or iqr}.get(g.spec.shape_kind, iqr / 1.349)

        orders = list(itertools.islice(itertools.permutations(range(len(free))), 7))
        if len(orders) > 6 or all(b - a == len(free) for a, b in M.runs if b - a > 1):
            orders = orders[:1]
        for order in orders:
            locs = [M.grids[k].location(0) for k in range(K)]
            scales = [M.grids[k].scale(0) for k in range(K)]
            for slot, bi in zip(free, order):
                b = blocks[bi]
                locs[slot] = float(np.median(b))
                scales[slot] = scale_for(slot, b)
            out.append(M.point_near([1.0] * K, locs, scales))
        for _ in range(self.cfg.restarts):
            locs = [float(self.rng.choice(xs)) for _ in range(K)]
            spread = float(np.percentile(xs, 75) - np.percentile(xs, 25)) or 1.0
            scales = [spread * math.exp(self.rng.uniform(-1.5, 0.5)) for _ in range(K)]
            w = self.rng.dirichlet(np.full(K, 2.0))
            out.append(M.point_near(w, locs, scales))
        return list(dict.fromkeys(out))

    # -- driver -----------------------------------------------------------
    def run(self):
        cfg = self.cfg
        M = range(len(self.models))
        pool = self.pool = []

        def add(k):
            if k not in pool:
                pool.append(k)

        starts = [(m, s) for m in M if self.source[m] for s in self.starts(m)]
        for k in starts:
            add(k)
        # two best-response steps from every start seed the pool
        for k in starts:
            cur = k
            for _ in range(2):
                pt, _ = self.climb(cur[0], cur[1], self.challenger_obj(cur, cur[0]))
                cur = (cur[0], pt)
                add(cur)
        homes = [k for k in pool if self.home[k[0]]]
        self.inc = min(homes, key=lambda k: self.pool_value(k, pool))
        self.inc_value = max(0.0, self.pool_value(self.inc, pool))
        rounds = 0
        while rounds < cfg.rounds:
            rounds += 1
            inc = self.inc
            # descent within every admissible model
            pool.sort(key=lambda pk: -(self.T(inc, pk) - self.pens[pk[0]]))
            cands = []
            for m in M:
                if not self.home[m]:
                    continue
                s = inc[1] if inc[0] == m else self.best_in(m, pool, inc, descent=True)
                pt, fv = self.climb(m, s, self.descent_obj(pool, m))
                cands.append((-fv, m, pt))
            cands.sort(key=lambda c: (c[0], c[1]))
            inc = self.inc = (cands[0][1], cands[0][2])
            ups_pool = self.inc_value = max(0.0, cands[0][0])
            # challenge the incumbent
            found = -math.inf
            for m in M:
                if not self.source[m]:
                    continue
                seeds = [inc[1]] if inc[0] == m else []
                threats = sorted((pk for pk in pool if pk[0] == m),
                                 key=lambda pk: -(self.T(inc, pk) - self.pens[m]))
                seeds += [pk[1] for pk in threats[:cfg.restarts]]
                for s in dict.fromkeys(seeds):
                    pt, fv = self.climb(m, s, self.challenger_obj(inc, m))
                    add((m, pt))
                    found = max(found, fv + self.pens[inc[0]])
            self.history.append(ups_pool)
            if inc not in self.incumbents:
                self.incumbents.append(inc)
            if found <= ups_pool + 1e-9 and self.certify(inc, pool):
                break
            if self.stalled(pool):
                break
        self.finish(pool)
        return rounds

    def stalled(self, pool) -> bool:
        """True once the best challenged incumbent has not improved for
        ``patience`` rounds; happens when challengers form long chains."""
        vals = [self.pool_value(k, pool) for k in self.incumbents]
        self.best_trace.append(min(vals))
        p = self.cfg.patience
        return len(self.best_trace) > p and min(self.best_trace[-p:]) >= self.best_trace[-p - 1]

    def finish(self, pool):
        """Report the challenged incumbent with the smallest Upsilon against
        everything explored (earliest on ties)."""
        if not self.incumbents:
            self.incumbents.append(self.inc)
        vals = [self.pool_value(k, pool) for k in self.incumbents]
        i = int(np.argmin(vals))
        self.inc, self.inc_value = self.incumbents[i], max(0.0, vals[i])
        self.by_model = {}
        for k in dict.fromkeys(pool + self.incumbents):
            v = self.pool_value(k, pool)
            if v < self.by_model.get(k[0], math.inf):
                self.by_model[k[0]] = v

    def best_in(self, m, pool, ref, descent=False):
        members = [pk for pk in pool if pk[0] == m]
        if not members:
            return self.starts(m)[0]
        if descent:
            return min(members, key=lambda pk: self.pool_value(pk, pool))[1]
        return max(members, key=lambda pk: self.T(ref, pk) - self.pens[m])[1]

    def certify(self, inc, pool) -> bool:
        """Enumerate small lattices in full; returns False if a new challenger
        beats the pool value (it is then added to the pool)."""
        total = sum(self.models[m].size for m in range(len(self.models)) if self.source[m])
        if total > self.cfg.certify_limit:
            return True
        ups = self.pool_value(inc, pool)
        lq = self.ll(inc)
        pq = self.pens[inc[0]]
        best, bk = ups, None
        out = np.empty(self.n)
        for m, M in enumerate(self.models):
            if not self.source[m]:
                continue
            for pt in M.iter_points():
                mixture_logpdf(*M.arrays(pt), self.x, out)
                v = float(t_sum(lq, out)) - self.pens[m] + pq
                if v > best + 1e-9:
                    best, bk = v, (m, pt)
        self.certified_full = bk is None
        if bk is not None:
            pool.append(bk)
            return False
        return True


def fit_lattice(x, models, pen, cfg: SearchConfig) -> RhoFit:
    t0 = time.perf_counter()
    models = list(models)
    pens = resolve_penalties([m.descriptor for m in models], pen)
    eng = _Engine(x, models, pens, cfg)
    exhausted = False
    try:
        rounds = eng.run()
    except _Budget:
        if eng.inc is None:
            raise SearchError("search budget exhausted before the first Upsilon evaluation") from None
        exhausted, rounds = True, len(eng.history)
    m, pt = eng.inc
    chosen = models[m].candidate(pt)
    chosen = canonicalize(chosen) if models[m].descriptor.exchangeable else chosen
    return RhoFit(
        chosen=chosen,
        upsilon=float(eng.inc_value),
        descriptor=models[m].descriptor,
        mode="heuristic",
        penalty=float(pens[m]),
        penalties={M.descriptor.label: float(p) for M, p in zip(models, pens)},
        upsilon_table=None,
        certified=False,
        evaluations=eng.evals,
        runtime_s=time.perf_counter() - t0,
        diagnostics={
            "pool_size": len(eng.pool),
            "rounds": rounds,
            "upsilon_history": eng.history,
            "explored_exhaustively": bool(eng.certified_full),
            "resolution": [M.resolution() for M in models],
            "lattice_point": list(pt),
            "budget_exhausted": exhausted,
            "best_upsilon_by_model": {models[k].descriptor.label: float(v)
                                      for k, v in sorted(eng.by_model.items())},
            # Upsilon(q) >= T(q, q0) - pen(q0) + pen(q) >= pen(q) - pen_min - n
            "upsilon_lower_bound_by_model": {
                M.descriptor.label: float(max(0.0, p - np.min(pens) - eng.n))
                for M, p in zip(models, pens)},
        },
    )
