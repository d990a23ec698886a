"""Command line: rhomix fit | select-k | select-family | study."""
from __future__ import annotations

import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import emission as em
from .errors import BudgetError, DomainError, NumericalError, SearchError, StudyError
from .mixtures import MixtureCandidate, ModelDescriptor
from .rho import SearchConfig, configure_threads, delta_default_exact, rho_estimate
from .search import lattice_model

EXIT_OK, EXIT_SEARCH, EXIT_CONFIG, EXIT_BANDS = 0, 2, 3, 4


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


class RunError(click.ClickException):
    exit_code = EXIT_SEARCH


class BandsFailed(click.ClickException):
    exit_code = EXIT_BANDS


class _Group(click.Group):
    """Usage errors (unknown flags, bad values) are config errors: exit 3."""

    def main(self, args=None, prog_name=None, **kw):
        kw.pop("standalone_mode", None)
        try:
            rv = super().main(args, prog_name, standalone_mode=False, **kw)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_CONFIG)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def read_data(path) -> np.ndarray:
    """One real per line; blank lines and '#' comments are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read data file {path}: {e}") from None
    vals = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            v = float(line)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: not a number: {line!r}") from None
        if not np.isfinite(v):
            raise ConfigError(f"{path}:{lineno}: observations must be finite")
        vals.append(v)
    if not vals:
        raise ConfigError(f"{path}: no observations")
    return np.array(vals)


def parse_generator(spec: str) -> MixtureCandidate:
    """``w*kind:location:scale+...``, e.g. ``0.4*gaussian:-2:1+0.6*gaussian:3:1.5``;
    the weight defaults to 1 and spike exponents go in ``spike@0.5``."""
    ws, comps = [], []
    for part in spec.split("+"):
        w, _, comp = part.strip().rpartition("*")
        fields = comp.split(":")
        if len(fields) not in (2, 3):
            raise DomainError(f"bad generator component {part!r}")
        name, _, alpha = fields[0].partition("@")
        s = em.spec_from_name(name, float(alpha) if alpha else None)
        scale = float(fields[2]) if len(fields) == 3 else 1.0
        if not s.has_scale:
            s = replace(s, fixed_scale=scale)
        ws.append(float(w) if w else 1.0)
        comps.append((s, em.EmissionParams(float(fields[1]), scale)))
    total = sum(ws)
    return MixtureCandidate.build([w / total for w in ws], comps)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: the config must be a JSON object")
    return d


def _merge(config: dict, **flags) -> dict:
    """Command-line flags override config-file values."""
    out = dict(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _sample(opts: dict, seed: int) -> np.ndarray:
    data, gen = opts.get("data"), opts.get("generate")
    if (data is None) == (gen is None):
        raise ConfigError("give exactly one of --data and --generate")
    if data is not None:
        return read_data(data)
    n = int(opts.get("n", 1000))
    if n < 1:
        raise ConfigError("--n must be positive")
    return parse_generator(gen).sample(n, np.random.default_rng(seed))


def _threads(threads):
    if threads is None and os.environ.get("RHOMIX_THREADS"):
        try:
            threads = int(os.environ["RHOMIX_THREADS"])
        except ValueError:
            raise ConfigError("RHOMIX_THREADS must be an integer") from None
    if threads is not None and threads < 1:
        raise ConfigError("--threads must be positive")
    configure_threads(threads)


def _search_config(opts: dict, seed: int) -> SearchConfig:
    kw = {"seed": seed % (1 << 32)}
    if opts.get("budget") is not None:
        kw["max_evaluations"] = int(opts["budget"])
    return SearchConfig(**kw)


def _write(out, name: str, payload: dict):
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    if out is not None:
        d = Path(out)
        try:
            d.mkdir(parents=True, exist_ok=True)
            (d / name).write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot write to {out}: {e}") from None
    click.echo(text)


def _guard(fn):
    """Translate library errors into the documented exit codes."""
    try:
        return fn()
    except click.ClickException:
        raise
    except (DomainError, BudgetError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    except (SearchError, NumericalError, StudyError) as e:
        raise RunError(str(e)) from None


common = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file."),
    click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Master seed (u64)."),
    click.option("--threads", type=int, default=None,
                 help="Worker threads; falls back to RHOMIX_THREADS, then all cores."),
    click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
]

data_opts = [
    click.option("--data", type=click.Path(dir_okay=False), default=None,
                 help="Observations, one per line, '#' comments allowed."),
    click.option("--generate", default=None,
                 help="Mixture to sample from, e.g. '0.4*gaussian:-2:1+0.6*gaussian:3:1.5'."),
    click.option("--n", type=int, default=None, help="Sample size for --generate (default 1000)."),
    click.option("--resolution", type=float, default=None,
                 help="Lattice resolution (default 0.05/sqrt(n))."),
    click.option("--budget", type=int, default=None, help="Maximum log-density evaluations."),
]


def _apply(opts):
    def deco(f):
        for o in reversed(opts):
            f = o(f)
        return f
    return deco


@click.group(cls=_Group, context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="artifact")
def main():
    """Robust rho-estimation for finite mixtures."""


@main.command()
@_apply(common + data_opts)
@click.option("--K", "K", type=int, default=None, help="Number of components (default 1).")
@click.option("--family", default=None, help="Emission family, e.g. gaussian, cauchy, spike@0.5.")
@click.option("--delta", default=None, help="Weight floor, a fraction in (0, 1/K].")
def fit(config_path, seed, threads, out, **flags):
    """Fit one mixture model by rho-estimation."""
    opts = _merge(_load_config(config_path), **flags)
    seed = int(seed if seed is not None else opts.get("seed", 0))
    _threads(threads)

    def run():
        x = _sample(opts, seed)
        K = int(opts.get("K", 1))
        if K < 1:
            raise DomainError("K must be at least 1")
        name, _, alpha = str(opts.get("family", "gaussian")).partition("@")
        spec = em.spec_from_name(name, float(alpha) if alpha else None)
        delta = opts.get("delta")
        if delta is None:
            delta = delta_default_exact(K, K * spec.vc_bound, x.size)
        else:
            from fractions import Fraction
            delta = Fraction(str(delta))
            if not 0 < delta <= Fraction(1, K):
                raise DomainError(f"--delta must lie in (0, 1/K] = (0, 1/{K}], got {delta}")
        d = ModelDescriptor.homogeneous(spec, K, delta)
        f = rho_estimate(x, [lattice_model(d, x, opts.get("resolution"))],
                         search=_search_config(opts, seed))
        _write(out, "fit.json", {"n": int(x.size), "seed": seed, **f.to_dict()})
    _guard(run)


@main.command("select-k")
@_apply(common + data_opts)
@click.option("--k-max", type=int, default=None, help="Largest K tried (range 1..k-max, default 3).")
@click.option("--family", default=None, help="Emission family (default gaussian).")
@click.option("--kappa", type=float, default=None, help="Penalty constant (default 470).")
def select_k(config_path, seed, threads, out, **flags):
    """Penalised choice of the number of components."""
    from .selection import default_builder, select_order
    opts = _merge(_load_config(config_path), **flags)
    seed = int(seed if seed is not None else opts.get("seed", 0))
    _threads(threads)

    def run():
        x = _sample(opts, seed)
        kmax = int(opts.get("k_max", 3))
        if kmax < 1:
            raise DomainError("--k-max must be at least 1")
        name, _, alpha = str(opts.get("family", "gaussian")).partition("@")
        spec = em.spec_from_name(name, float(alpha) if alpha else None)
        kw = {} if opts.get("kappa") is None else {"kappa": float(opts["kappa"])}
        r = select_order(x, range(1, kmax + 1), spec, search=_search_config(opts, seed),
                         builder=default_builder(opts.get("resolution")), **kw)
        _write(out, "select_k.json", {"n": int(x.size), "seed": seed, "K_hat": r.K, **r.to_dict()})
    _guard(run)


@main.command("select-family")
@_apply(common + data_opts)
@click.option("--K", "K", type=int, default=None, help="Number of components (default 2).")
def select_family(config_path, seed, threads, out, **flags):
    """Choose how many components are Gaussian (the rest Cauchy)."""
    from .selection import default_builder, select_emission_families
    opts = _merge(_load_config(config_path), **flags)
    seed = int(seed if seed is not None else opts.get("seed", 0))
    _threads(threads)

    def run():
        x = _sample(opts, seed)
        r = select_emission_families(x, int(opts.get("K", 2)), search=_search_config(opts, seed),
                                     builder=default_builder(opts.get("resolution")))
        _write(out, "select_family.json",
               {"n": int(x.size), "seed": seed, "j_hat": r.n_gaussian, **r.to_dict()})
    _guard(run)


@main.command()
@_apply(common)
@click.argument("kind", required=False)
@click.option("--replications", type=int, default=None, help="Override the replication count.")
@click.option("--alpha", type=float, default=None, help="Spike exponent in (0, 1).")
@click.option("--n-grid", default=None, help="Comma-separated sample sizes.")
def study(config_path, seed, threads, out, kind, replications, alpha, n_grid):
    """Run a simulation study.  KIND is a preset name or a study kind; with
    --config the JSON file gives the full study configuration."""
    from .experiments import PRESETS, STUDY_KINDS, StudyConfig, run_study
    _threads(threads)

    def run():
        if config_path is not None:
            cfg = StudyConfig.from_dict(_load_config(config_path))
            if kind is not None and kind not in (cfg.kind, *PRESETS):
                raise DomainError(f"unknown study {kind!r}")
        elif kind in PRESETS:
            cfg = PRESETS[kind]
        elif kind in STUDY_KINDS:
            cfg = StudyConfig(kind, PRESETS["rate-gmm-smoke"].n_grid)
        else:
            raise DomainError(f"unknown study {kind!r}; presets: {', '.join(PRESETS)}")
        over = {}
        if seed is not None:
            over["seed"] = seed
        if replications is not None:
            over["replications"] = replications
        if alpha is not None:
            over["alpha"] = alpha
        if n_grid is not None:
            over["n_grid"] = tuple(int(v) for v in n_grid.split(","))
        cfg = StudyConfig.from_dict({**cfg.to_dict(), **over})
        report = run_study(cfg)
        paths = report.write(out or ".", stem=cfg.kind)
        click.echo(json.dumps({"summary": str(paths["summary"]), "csv": str(paths["csv"]),
                               "passed": report.passed}))
        if report.passed is False:
            raise BandsFailed("acceptance bands failed; see the summary file")
    _guard(run)


if __name__ == "__main__":
    sys.exit(main())
