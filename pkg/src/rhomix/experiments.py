"""Seeded simulation studies, log-log rate fits and finite approximation of
continuous Gaussian mixtures."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, special

from . import emission as em
from .emission import EmissionParams
from .errors import BudgetError, DomainError, NumericalError, SearchError, StudyError
from .metrics import hellinger2_numeric, match_components
from .mixtures import MixtureCandidate, ModelDescriptor
from .rho import SearchConfig, delta_default, rho_estimate
from .search import lattice_model

STUDY_KINDS = ("rate", "parameter", "shifted", "contamination", "spike", "continuous")
MAX_FAILURE_RATE = 0.2
_RECOVERABLE = (SearchError, NumericalError, BudgetError, DomainError)


# ---------------------------------------------------------------------------
# log-log slopes

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    points: int


def fit_loglog_slope(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """Least squares of log(loss) on log(n); nonpositive losses are dropped."""
    pts = [(float(n), float(v)) for n, v in points]
    kept = [(n, v) for n, v in pts if v > 0 and n > 0 and math.isfinite(v)]
    if len(kept) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(kept)} nonpositive or non-finite losses",
                      RuntimeWarning, stacklevel=2)
    if len(kept) < 3:
        raise DomainError(f"need at least 3 positive points for a slope, got {len(kept)}")
    x = np.log([n for n, _ in kept])
    y = np.log([v for _, v in kept])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(kept) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    sxx = float(((x - x.mean()) ** 2).sum())
    return SlopeFit(float(coef[0]), math.sqrt(s2 / sxx), float(coef[1]), len(kept))


# ---------------------------------------------------------------------------
# continuous Gaussian mixtures

def k_for_continuous(R: float, n: float) -> int:
    """Number of components ceil(2 R^4 log(n)^2 / 27)."""
    if R < 1 or n < math.e:
        raise DomainError("k_for_continuous needs R >= 1 and n >= e")
    return max(1, math.ceil(2.0 * R ** 4 * math.log(n) ** 2 / 27.0))


def continuous_conditions(A: float, R: float, n: float, K: int | None = None) -> list[str]:
    """Violated preconditions of the finite approximation of a C(A, R) mixture."""
    out = []
    if R < 1:
        out.append(f"R = {R} < 1")
    if n < 3:
        out.append(f"n = {n} < 3")
    if n < math.exp(2 * (A / R) ** 2):
        out.append(f"n = {n} < exp(2 (A/R)^2) = {math.exp(2 * (A / R) ** 2):.4g}")
    if K is not None and K < (2.0 / 3.0) ** 3 * A ** 4:
        out.append(f"K = {K} < (2/3)^3 A^4 = {(2.0 / 3.0) ** 3 * A ** 4:.4g}")
    return out


def _ndtr(x):
    return special.ndtr(x)


@dataclass(frozen=True)
class MixingMeasure:
    """A distribution H of (location, scale) pairs: finitely many atoms, or the
    uniform distribution on the box [z_lo, z_hi] x [s_lo, s_hi]."""

    atoms: tuple[tuple[float, float, float], ...] = ()
    box: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(tuple(map(float, a)) for a in self.atoms))
        if (self.box is None) == (not self.atoms):
            raise DomainError("a mixing measure has either atoms or a box")
        if self.atoms:
            m = np.array([a[2] for a in self.atoms])
            if np.any(m < 0) or abs(m.sum() - 1) > 1e-12:
                raise DomainError("atom masses must be nonnegative and sum to 1")
            if any(a[1] <= 0 for a in self.atoms):
                raise DomainError("atom scales must be positive")
        else:
            zl, zh, sl, sh = self.box
            if not (zl <= zh and 0 < sl <= sh):
                raise DomainError(f"invalid box {self.box}")

    @classmethod
    def uniform_box(cls, z_lo, z_hi, s_lo, s_hi) -> "MixingMeasure":
        return cls(box=(float(z_lo), float(z_hi), float(s_lo), float(s_hi)))

    @property
    def discrete(self) -> bool:
        return bool(self.atoms)

    def bounds(self) -> tuple[float, float, float, float]:
        if self.box is not None:
            return self.box
        z = [a[0] for a in self.atoms]
        s = [a[1] for a in self.atoms]
        return min(z), max(z), min(s), max(s)

    def moment(self, l: int, p: float) -> float:
        """E_H[z^l sigma^-p]."""
        if self.atoms:
            return math.fsum(m * z ** l * s ** (-p) for z, s, m in self.atoms)
        zl, zh, sl, sh = self.box
        if zh > zl:
            mz = (zh ** (l + 1) - zl ** (l + 1)) / ((l + 1) * (zh - zl))
        else:
            mz = zl ** l
        if sh > sl:
            if p == 1:
                ms = math.log(sh / sl) / (sh - sl)
            else:
                ms = (sl ** (1 - p) - sh ** (1 - p)) / ((p - 1) * (sh - sl))
        else:
            ms = sl ** (-p)
        return mz * ms

    # density of the Gaussian mixture p_H
    def _sigma_nodes(self, order=48):
        _, _, sl, sh = self.box
        if sh == sl:
            return np.array([sl]), np.array([1.0])
        t, w = np.polynomial.legendre.leggauss(order)
        return 0.5 * (sh - sl) * t + 0.5 * (sh + sl), 0.5 * w

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.atoms:
            out = np.zeros_like(x)
            for z, s, m in self.atoms:
                out += m * np.exp(-0.5 * ((x - z) / s) ** 2) / (s * math.sqrt(2 * math.pi))
            return out
        zl, zh, _, _ = self.box
        sig, w = self._sigma_nodes()
        out = np.zeros_like(x)
        for s, ws in zip(sig, w):
            if zh > zl:
                out += ws * (_ndtr((x - zl) / s) - _ndtr((x - zh) / s)) / (zh - zl)
            else:
                out += ws * np.exp(-0.5 * ((x - zl) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return out

    def logpdf(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def breakpoints(self) -> list[float]:
        zl, zh, sl, sh = self.bounds()
        return sorted({zl, zh, zl - 3 * sh, zh + 3 * sh})

    def support(self):
        return -math.inf, math.inf

    def tail_mass(self, lo: float, hi: float):
        zl, zh, _, sh = self.bounds()
        left = float(_ndtr((lo - zl) / sh)) if lo < zl else 1.0
        right = float(_ndtr((zh - hi) / sh)) if hi > zh else 1.0
        return left, right

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.atoms:
            m = np.array([a[2] for a in self.atoms])
            idx = rng.choice(len(self.atoms), size=n, p=m / m.sum())
            z = np.array([a[0] for a in self.atoms])[idx]
            s = np.array([a[1] for a in self.atoms])[idx]
        else:
            zl, zh, sl, sh = self.box
            z = zl + (zh - zl) * rng.random(n)
            s = sl + (sh - sl) * rng.random(n)
        return z + s * rng.standard_normal(n)


def _moment_rows(k: int):
    return [(l, 2 * j + 1) for j in range(k) for l in range(2 * k - 1)]


def max_atoms(k: int) -> int:
    return k * (2 * k - 1) + 1


def discretize_mixing_measure(H: MixingMeasure, k: int, grid: tuple[int, int] = (64, 16),
                              refinements: int = 4, tol: float = 1e-8) -> MixingMeasure:
    """Atomic measure matching E[z^l sigma^-(2j+1)], l <= 2k-2, j <= k-1, and
    the total mass, with at most k(2k-1)+1 atoms (a basic solution of the
    moment system on a grid of the support)."""
    if k < 1:
        raise DomainError("k must be at least 1")
    if H.discrete and len(H.atoms) <= max_atoms(k):
        return H
    rows = _moment_rows(k)
    target = np.array([H.moment(l, p) for l, p in rows] + [1.0])
    nz, ns = grid
    for _ in range(refinements + 1):
        if H.discrete:
            pts = np.array([(z, s) for z, s, _ in H.atoms])
        else:
            zl, zh, sl, sh = H.box
            zs = np.linspace(zl, zh, nz) if zh > zl else np.array([zl])
            ss = np.linspace(sl, sh, ns) if sh > sl else np.array([sl])
            pts = np.array([(z, s) for z in zs for s in ss])
        A = np.array([pts[:, 0] ** l * pts[:, 1] ** (-p) for l, p in rows] + [np.ones(len(pts))])
        res = optimize.linprog(np.zeros(len(pts)), A_eq=A, b_eq=target, bounds=(0, None),
                               method="highs-ds")
        if res.status == 0:
            w = _polish(A, target, res.x)
            resid = np.abs(A @ w - target)
            if np.all(resid <= tol * np.maximum(1.0, np.abs(target))):
                keep = w > 0
                m = w[keep] / w[keep].sum()
                atoms = tuple((float(z), float(s), float(v)) for (z, s), v in zip(pts[keep], m))
                return MixingMeasure(atoms=atoms)
        if H.discrete:
            break
        nz, ns = 2 * nz, 2 * ns
    raise NumericalError(f"moment system for k={k} not solved at grid resolution {nz}x{ns}")


def _polish(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Re-solve the equations on the support of the basic solution ``x``."""
    x = np.where(x > 1e-14, x, 0.0)
    S = np.flatnonzero(x)
    w, *_ = np.linalg.lstsq(A[:, S], b, rcond=None)
    if np.all(w >= 0):
        out = np.zeros_like(x)
        out[S] = w
        return out
    return x


# ---------------------------------------------------------------------------
# study configuration

def _gmm_truth(weights, comps) -> dict:
    return {"weights": list(weights),
            "components": [{"kind": k, "location": z, "scale": s} for k, z, s in comps]}


DEFAULT_GMM = _gmm_truth([0.4, 0.6], [("gaussian", -2.0, 1.0), ("gaussian", 3.0, 1.5)])


@dataclass(frozen=True)
class StudyConfig:
    kind: str
    n_grid: tuple[int, ...]
    replications: int = 20
    seed: int = 0
    truth: dict = field(default_factory=lambda: dict(DEFAULT_GMM))
    epsilons: tuple[float, ...] = (0.0, 0.02, 0.05, 0.1)
    outlier_distance: float = 50.0        # in units of the IQR of the uncontaminated law
    outlier_width: float = 0.01
    alpha: float = 0.5                    # spike exponent
    lam: float = 0.4                      # weight of the shifted component (spike, shifted)
    z: float = 0.7                        # location of the shifted component (spike, shifted)
    location_resolution: float = 1e-9     # absolute location step for the spike lattice
    resolution: float | None = None       # lattice resolution, default 0.05/sqrt(n)
    box: tuple[float, float, float, float] = (-1.0, 1.0, 1.0, 1.5)
    max_components: int | None = None
    xi: float = 1.0
    search: dict = field(default_factory=dict)
    bands: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "box", tuple(float(b) for b in self.box))
        if self.kind not in STUDY_KINDS:
            raise DomainError(f"unknown study {self.kind!r}; expected one of {STUDY_KINDS}")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise DomainError("the n grid must be nonempty and strictly increasing")
        if self.n_grid[0] < 1:
            raise DomainError("sample sizes must be positive")
        if self.replications < 1:
            raise DomainError("need at least one replication")
        if any(not 0 <= e < 0.5 for e in self.epsilons):
            raise DomainError("contamination levels must lie in [0, 0.5)")
        if not 0 < self.alpha < 1:
            raise DomainError(f"spike exponent must lie in (0, 1), got {self.alpha}")
        if not 0 < self.lam < 1:
            raise DomainError("the shifted weight must lie in (0, 1)")
        if self.workers < 1:
            raise DomainError("workers must be positive")
        unknown = set(self.search) - {f.name for f in fields(SearchConfig)}
        if unknown:
            raise DomainError(f"unknown search settings {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown study settings {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "StudyConfig":
        text = Path(path).read_text(encoding="utf-8")
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise DomainError(f"{path}: not valid JSON ({e})") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_grid"], d["epsilons"], d["box"] = list(self.n_grid), list(self.epsilons), list(self.box)
        return d

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


PRESETS = {
    "rate-gmm": StudyConfig("rate", (250, 500, 1000, 2000, 4000, 8000, 16000), replications=50),
    "rate-gmm-smoke": StudyConfig("rate", (250, 500, 1000, 2000), replications=5),
    "parameter-gmm": StudyConfig("parameter", (250, 500, 1000, 2000, 4000, 8000, 16000),
                                 replications=50),
    "shifted": StudyConfig("shifted", (250, 1000, 4000, 16000), replications=20),
    "contamination": StudyConfig("contamination", (4000,), replications=20),
    "spike": StudyConfig("spike", (250, 1000, 4000, 16000), replications=30),
    "continuous": StudyConfig("continuous", (1000, 4000, 16000), replications=5, max_components=6),
}


def _truth(cfg: StudyConfig) -> MixtureCandidate:
    t = cfg.truth
    comps = []
    for c in t["components"]:
        spec = em.spec_from_name(c["kind"], c.get("alpha"))
        comps.append((spec, EmissionParams(float(c["location"]), float(c.get("scale", 1.0)))))
    return MixtureCandidate.build([float(w) for w in t["weights"]], comps)


def stream(master: int, i: int) -> tuple[np.random.Generator, int]:
    """Independent generator for replication ``i`` and a 64-bit label for it."""
    ss = np.random.SeedSequence([int(master), int(i)])
    label = int(ss.generate_state(1, np.uint64)[0])
    return np.random.default_rng(ss), label


def _search(cfg: StudyConfig, label: int) -> SearchConfig:
    return SearchConfig(**{"seed": label % (1 << 32), **cfg.search})


# ---------------------------------------------------------------------------
# one replication per study kind; each returns the loss fields of a record

_FIT_CACHE: dict = {}


def clear_cache() -> None:
    """Forget the GMM fits shared between rate and parameter studies."""
    _FIT_CACHE.clear()


def _gmm_fit_key(cfg: StudyConfig) -> str:
    d = {"truth": cfg.truth, "seed": cfg.seed, "resolution": cfg.resolution, "search": cfg.search}
    return json.dumps(d, sort_keys=True)


def _gmm_losses(cfg: StudyConfig, n: int, rep: int) -> dict:
    """Density and parameter losses of one GMM fit, shared by the rate and
    parameter studies."""
    key = (_gmm_fit_key(cfg), n, rep)
    if key in _FIT_CACHE:
        return dict(_FIT_CACHE[key])
    true = _truth(cfg)
    rng, label = stream(cfg.seed, rep)
    x = true.sample(n, rng)
    t0 = time.perf_counter()
    spec = true.specs[0]
    d = ModelDescriptor.homogeneous(spec, true.K, delta_default(true.K, true.K * spec.vc_bound, n))
    fit = rho_estimate(x, [lattice_model(d, x, cfg.resolution)], search=_search(cfg, label))
    rep_ = match_components(true, fit.chosen)
    out = {"h2": hellinger2_numeric(true, fit.chosen), "param_loss": rep_.total,
           "weight_loss": rep_.weight_loss, "upsilon": fit.upsilon,
           "runtime_ms": 1e3 * (time.perf_counter() - t0)}
    _FIT_CACHE[key] = out
    return dict(out)


def _shifted_losses(cfg: StudyConfig, n: int, rep: int) -> dict:
    rng, label = stream(cfg.seed, rep)
    known = em.known_shifted("gaussian", location_domain=(0.0, 0.0))
    free = em.known_shifted("gaussian")
    true = MixtureCandidate.build([1 - cfg.lam, cfg.lam],
                                  [(known, EmissionParams(0.0)), (free, EmissionParams(cfg.z))])
    x = true.sample(n, rng)
    d = ModelDescriptor((known, free), delta_default(2, known.vc_bound + free.vc_bound, n))
    fit = rho_estimate(x, [lattice_model(d, x, cfg.resolution)], search=_search(cfg, label))
    lam = float(fit.chosen.weights.values[1])
    z = fit.chosen.components[1][1].location
    return {"lam_sq": (lam - cfg.lam) ** 2, "z_sq": min((z - cfg.z) ** 2, 1.0),
            "h2": hellinger2_numeric(true, fit.chosen), "upsilon": fit.upsilon}


def _quantile(c: MixtureCandidate, u: float) -> float:
    lo, hi = -1.0, 1.0
    while float(c.cdf(lo)) > u:
        lo *= 2
    while float(c.cdf(hi)) < u:
        hi *= 2
    return optimize.brentq(lambda t: float(c.cdf(t)) - u, lo, hi, xtol=1e-12)


def outlier_law(cfg: StudyConfig) -> tuple[float, float]:
    """Centre and width of the uniform contaminant: median + distance x IQR."""
    true = _truth(cfg)
    med = _quantile(true, 0.5)
    iqr = _quantile(true, 0.75) - _quantile(true, 0.25)
    return med + cfg.outlier_distance * iqr, cfg.outlier_width * iqr


def contaminated_sample(cfg: StudyConfig, n: int, eps: float, rep: int):
    """Common random numbers: the same stream for every eps."""
    rng, label = stream(cfg.seed, rep)
    clean = _truth(cfg).sample(n, rng)
    u = rng.random(n)
    c, w = outlier_law(cfg)
    out = c + w * (rng.random(n) - 0.5)
    return np.where(u < eps, out, clean), label


def _contamination_losses(cfg: StudyConfig, n: int, rep: int, eps: float) -> dict:
    true = _truth(cfg)
    x, label = contaminated_sample(cfg, n, eps, rep)
    spec = true.specs[0]
    d = ModelDescriptor.homogeneous(spec, true.K, delta_default(true.K, true.K * spec.vc_bound, n))
    fit = rho_estimate(x, [lattice_model(d, x, cfg.resolution)], search=_search(cfg, label))
    return {"h2": hellinger2_numeric(true, fit.chosen), "upsilon": fit.upsilon}


def spike_model(alpha: float, n: int):
    """(1 - lam) s_alpha + lam s_alpha(. - z): first component pinned at 0."""
    s0 = em.spike(alpha, location_domain=(0.0, 0.0))
    s1 = em.spike(alpha)
    return s0, s1, ModelDescriptor((s0, s1), min(Fraction(10, n), Fraction(1, 2)))


def _spike_losses(cfg: StudyConfig, n: int, rep: int) -> dict:
    rng, label = stream(cfg.seed, rep)
    s0, s1, d = spike_model(cfg.alpha, n)
    true = MixtureCandidate.build([1 - cfg.lam, cfg.lam],
                                  [(s0, EmissionParams(0.0)), (s1, EmissionParams(cfg.z))])
    x = true.sample(n, rng)
    q1, q3 = np.percentile(x, [25, 75])
    r = 1.5 * float(q3 - q1)
    lm = lattice_model(d, x, resolution=cfg.location_resolution / r, weight_denominator=20 * n)
    fit = rho_estimate(x, [lm], search=_search(cfg, label))
    z = fit.chosen.components[1][1].location
    lam = float(fit.chosen.weights.values[1])
    return {"z_err": abs(z - cfg.z), "lam_err": abs(lam - cfg.lam), "upsilon": fit.upsilon}


def _continuous_losses(cfg: StudyConfig, n: int, rep: int) -> dict:
    rng, label = stream(cfg.seed, rep)
    H = MixingMeasure.uniform_box(*cfg.box)
    zl, zh, sl, sh = cfg.box
    K = k_for_continuous(sh / sl, n)
    if cfg.max_components is not None:
        K = min(K, cfg.max_components)
    x = H.sample(n, rng)
    g = em.gaussian()
    d = ModelDescriptor.homogeneous(g, K, delta_default(K, K * g.vc_bound, n))
    fit = rho_estimate(x, [lattice_model(d, x, cfg.resolution)], search=_search(cfg, label))
    return {"h2": hellinger2_numeric(H, fit.chosen), "K": float(K), "upsilon": fit.upsilon}


_LOSS_FIELDS = {
    "rate": ("h2", "param_loss", "weight_loss", "upsilon"),
    "parameter": ("h2", "param_loss", "weight_loss", "upsilon"),
    "shifted": ("lam_sq", "z_sq", "h2", "upsilon"),
    "contamination": ("eps", "h2", "upsilon"),
    "spike": ("z_err", "lam_err", "upsilon"),
    "continuous": ("K", "h2", "upsilon"),
}


def _tasks(cfg: StudyConfig) -> list[tuple]:
    if cfg.kind == "contamination":
        return [(n, r, e) for n in cfg.n_grid for e in cfg.epsilons for r in range(cfg.replications)]
    return [(n, r, None) for n in cfg.n_grid for r in range(cfg.replications)]


def _replicate(cfg: StudyConfig, task) -> dict:
    n, rep, eps = task
    _, label = stream(cfg.seed, rep)
    rec = {"study": cfg.kind, "n": n, "rep": rep, "seed": label}
    t0 = time.perf_counter()
    try:
        if cfg.kind in ("rate", "parameter"):
            vals = _gmm_losses(cfg, n, rep)
            runtime = vals.pop("runtime_ms")
        else:
            if cfg.kind == "contamination":
                vals = {"eps": eps, **_contamination_losses(cfg, n, rep, eps)}
            else:
                vals = {"shifted": _shifted_losses, "spike": _spike_losses,
                        "continuous": _continuous_losses}[cfg.kind](cfg, n, rep)
            runtime = 1e3 * (time.perf_counter() - t0)
        rec.update(vals)
        rec["status"] = "ok"
    except _RECOVERABLE as e:
        rec.update({f: (eps if f == "eps" else math.nan) for f in _LOSS_FIELDS[cfg.kind]})
        rec["status"] = f"error:{type(e).__name__}"
        runtime = 1e3 * (time.perf_counter() - t0)
    rec["runtime_ms"] = runtime
    return rec


# ---------------------------------------------------------------------------
# reports

@dataclass
class StudyReport:
    config: StudyConfig
    records: list[dict]
    summary: dict

    @property
    def passed(self) -> bool | None:
        return self.summary.get("passed")

    @property
    def columns(self) -> list[str]:
        return ["study", "n", "rep", "seed", *_LOSS_FIELDS[self.config.kind], "status"]

    def per_n(self, field_: str, stat: str = "mean", eps: float | None = None) -> list[tuple[int, float]]:
        f = np.median if stat == "median" else np.mean
        out = []
        for n in self.config.n_grid:
            v = [r[field_] for r in self.records
                 if r["n"] == n and r["status"] == "ok" and (eps is None or r["eps"] == eps)]
            out.append((n, float(f(v)) if v else math.nan))
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.records:
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def runtime_text(self) -> str:
        lines = ["study,n,rep,eps,runtime_ms"]
        for r in self.records:
            lines.append(f"{r['study']},{r['n']},{r['rep']},{_fmt(r.get('eps', ''))},{r['runtime_ms']:.3f}")
        return "\n".join(lines) + "\n"

    def plot_text(self) -> str:
        key = {"rate": ("h2", "mean"), "parameter": ("param_loss", "mean"), "shifted": ("z_sq", "mean"),
               "spike": ("z_err", "median"), "continuous": ("h2", "mean")}
        if self.config.kind == "contamination":
            pts = [(e, self.per_n("h2", eps=e)[0][1]) for e in self.config.epsilons]
        else:
            pts = self.per_n(*key[self.config.kind])
        return "".join(f"{_fmt(a)} {_fmt(b)}\n" for a, b in pts)

    def write(self, out_dir, stem: str | None = None) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.config.kind
        paths = {"csv": out / f"{stem}.csv", "runtime": out / f"{stem}_runtime.csv",
                 "summary": out / f"{stem}_summary.json", "plot": out / f"{stem}_plot.dat"}
        paths["csv"].write_text(self.csv_text(), encoding="utf-8")
        paths["runtime"].write_text(self.runtime_text(), encoding="utf-8")
        paths["summary"].write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
        paths["plot"].write_text(self.plot_text(), encoding="utf-8")
        return paths


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _slope_or_none(points) -> SlopeFit | None:
    pts = [(n, v) for n, v in points if math.isfinite(v)]
    if len(pts) < 3:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return fit_loglog_slope(pts)
        except DomainError:
            return None


def _band_check(name: str, fit: SlopeFit | None, band) -> dict:
    lo, hi = band
    ok = None if fit is None else bool(lo <= fit.slope <= hi)
    return {"name": name, "slope": None if fit is None else fit.slope,
            "stderr": None if fit is None else fit.stderr, "band": [lo, hi], "passed": ok}


def spike_band(alpha: float) -> tuple[float, float]:
    target = -1.0 / (1.0 - alpha)
    half = 0.5 if alpha >= 0.5 else 0.4
    return target - half, target + half


DEFAULT_BANDS = {"rate": (-1.15, -0.80), "parameter": (-1.2, -0.75), "spike_lambda": (-0.75, -0.35)}


def _summarize(cfg: StudyConfig, records: list[dict]) -> dict:
    rep = StudyReport(cfg, records, {})
    bands = {**DEFAULT_BANDS, **{k: tuple(v) for k, v in cfg.bands.items()}}
    s = {"study": cfg.kind, "config_hash": cfg.hash, "config": cfg.to_dict(),
         "failures": sum(r["status"] != "ok" for r in records), "records": len(records)}
    checks = []
    if cfg.kind in ("rate", "parameter"):
        f = "h2" if cfg.kind == "rate" else "param_loss"
        pts = rep.per_n(f)
        s["per_n"] = {str(n): {"mean": v, "median": m} for (n, v), (_, m)
                      in zip(pts, rep.per_n(f, "median"))}
        checks.append(_band_check(f"{f}_slope", _slope_or_none(pts), bands[cfg.kind]))
    elif cfg.kind == "shifted":
        for f in ("lam_sq", "z_sq"):
            pts = rep.per_n(f)
            s[f"per_n_{f}"] = dict((str(n), v) for n, v in pts)
            fit = _slope_or_none(pts)
            checks.append({"name": f"{f}_decay", "slope": None if fit is None else fit.slope,
                           "passed": None if fit is None else fit.slope < 0})
    elif cfg.kind == "spike":
        zpts, lpts = rep.per_n("z_err", "median"), rep.per_n("lam_err", "median")
        s["per_n"] = {str(n): {"median_z_err": z, "median_lam_err": l}
                      for (n, z), (_, l) in zip(zpts, lpts)}
        s["target_z_slope"] = -1.0 / (1.0 - cfg.alpha)
        checks.append(_band_check("z_err_slope", _slope_or_none(zpts),
                                  bands.get("spike_z", spike_band(cfg.alpha))))
        checks.append(_band_check("lam_err_slope", _slope_or_none(lpts), bands["spike_lambda"]))
    elif cfg.kind == "contamination":
        n0 = cfg.n_grid[0]
        means = [rep.per_n("h2", eps=e)[0][1] for e in cfg.epsilons]
        s["mean_h2"] = {repr(e): m for e, m in zip(cfg.epsilons, means)}
        base = means[cfg.epsilons.index(0.0)] if 0.0 in cfg.epsilons else means[0]
        finite = all(math.isfinite(m) for m in means)
        mono = finite and all(b >= a for a, b in zip(means, means[1:]))
        ceiling = finite and all(m <= 3 * e + base for e, m in zip(cfg.epsilons, means))
        if len(cfg.epsilons) >= 2 and finite:
            a, b = np.polyfit(cfg.epsilons, means, 1)
            s["affine_fit"] = {"slope": float(a), "intercept": float(b)}
        s["n"] = n0
        checks.append({"name": "monotone_in_eps", "passed": mono})
        checks.append({"name": "below_3eps_plus_level", "passed": ceiling})
    elif cfg.kind == "continuous":
        pts = rep.per_n("h2")
        R = cfg.box[3] / cfg.box[2]
        s["per_n"] = {str(n): v for n, v in pts}
        env = [v * n / (R ** 4 * math.log(n) ** 3) for n, v in pts]
        s["envelope_constant"] = max(env) if all(math.isfinite(e) for e in env) else None
        dec = all(b <= a for (_, a), (_, b) in zip(pts, pts[1:]))
        checks.append({"name": "h2_decreasing", "passed": dec})
        checks.append({"name": "envelope_constant_below_100",
                       "passed": s["envelope_constant"] is not None and s["envelope_constant"] < 100})
        A = (cfg.box[1] - cfg.box[0]) / (2 * cfg.box[2])
        s["violations"] = {str(n): continuous_conditions(A, R, n) for n in cfg.n_grid}
    s["checks"] = checks
    verdicts = [c["passed"] for c in checks if c["passed"] is not None]
    s["passed"] = all(verdicts) if verdicts else None
    return s


def run_study(cfg: StudyConfig) -> StudyReport:
    tasks = _tasks(cfg)
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            records = list(ex.map(_replicate, [cfg] * len(tasks), tasks))
    else:
        records = [_replicate(cfg, t) for t in tasks]
    failed = sum(r["status"] != "ok" for r in records)
    if failed > MAX_FAILURE_RATE * len(records):
        raise StudyError(f"{failed} of {len(records)} replications failed")
    return StudyReport(cfg, records, _summarize(cfg, records))


def _as_kind(cfg: StudyConfig, kind: str) -> StudyConfig:
    return cfg if cfg.kind == kind else replace(cfg, kind=kind)


def run_rate_study(cfg: StudyConfig) -> StudyReport:
    return run_study(_as_kind(cfg, "rate"))


def run_parameter_study(cfg: StudyConfig) -> StudyReport:
    """GMM parameter losses (kind "parameter") or the known-phi two-component
    model (kind "shifted")."""
    return run_study(cfg if cfg.kind == "shifted" else _as_kind(cfg, "parameter"))


def run_contamination_study(cfg: StudyConfig) -> StudyReport:
    return run_study(_as_kind(cfg, "contamination"))


def run_spike_study(alpha: float, cfg: StudyConfig) -> StudyReport:
    return run_study(replace(cfg, kind="spike", alpha=alpha))


def run_continuous_approx_study(A: float, R: float, cfg: StudyConfig) -> StudyReport:
    """Uniform mixing measure on [-A, A] x [1, R]."""
    return run_study(replace(cfg, kind="continuous", box=(-A, A, 1.0, R)))
