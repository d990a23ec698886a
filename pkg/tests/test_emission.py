import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rhomix import emission as em
from rhomix.emission import EmissionParams, SINGULAR
from rhomix.errors import DomainError
from rhomix.metrics import integrate_density

import oracles

FAMILIES = [
    (em.gaussian(), EmissionParams(0.3, 1.7)),
    (em.cauchy(), EmissionParams(-1.0, 0.5)),
    (em.laplace(), EmissionParams(2.0)),
    (em.skew_gaussian(5.0), EmissionParams(0.0)),
    (em.uniform(), EmissionParams(-1.0, 3.0)),
    (em.spike(0.5), EmissionParams(0.0)),
    (em.spike(0.25), EmissionParams(1.0)),
    (em.known_shifted("laplace", scale=2.0), EmissionParams(0.5, 2.0)),
]


def test_point_densities():
    assert em.density(em.gaussian(), EmissionParams(0, 1), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)
    assert em.density(em.cauchy(), EmissionParams(0, 1), 0.0) == pytest.approx(1 / math.pi, abs=1e-15)
    assert em.density(em.spike(0.5), EmissionParams(0), 0.25) == pytest.approx(0.5, abs=1e-15)
    assert em.density(em.spike(0.5), EmissionParams(0), 1.5) == 0.0


def test_spike_singularity_is_tagged():
    v = em.density(em.spike(0.5), EmissionParams(0), 0.0)
    assert v is SINGULAR
    arr = em.density(em.spike(0.5), EmissionParams(0), np.array([0.0, 0.5]))
    assert math.isinf(arr[0]) and arr[1] > 0


@pytest.mark.parametrize("spec,params", FAMILIES)
def test_density_matches_reference(spec, params):
    xs = np.linspace(params.location - 3, params.location + 3, 41) + 1e-3
    got = em.density(spec, params, xs)
    want = [oracles.density(spec.shape_kind, params.location, params.scale, x, spec.alpha) for x in xs]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("spec,params", FAMILIES)
def test_densities_integrate_to_one(spec, params):
    assert integrate_density((spec, params)) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("spec,params", FAMILIES)
def test_sampler_matches_cdf(spec, params):
    x = em.sample(spec, params, 100_000, np.random.default_rng(7))
    ks = stats.kstest(x, lambda t: em.cdf(spec, params, t)).statistic
    assert ks < 0.01


def test_sampler_moments_and_support():
    rng = np.random.default_rng(1)
    assert abs(em.sample(em.gaussian(), EmissionParams(0, 1), 100_000, rng).mean()) < 0.02
    x = em.sample(em.spike(0.5), EmissionParams(0), 100_000, rng)
    assert np.all(np.abs(x) <= 1) and np.all(x != 0)


def test_sampler_reproducible():
    a = em.sample(em.uniform(), EmissionParams(0, 1), 4, np.random.default_rng(3))
    b = em.sample(em.uniform(), EmissionParams(0, 1), 4, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_vc_registry():
    assert em.vc_index_bound(em.gaussian()) == 5
    assert em.vc_index_bound(em.cauchy()) == 5
    assert em.vc_index_bound(em.laplace()) == 5
    assert em.vc_index_bound(em.skew_gaussian(2.0)) == 10
    assert em.vc_index_bound(em.spike(0.3)) == 10
    assert em.vc_index_bound(em.uniform()) == 3
    assert em.vc_index_bound(em.uniform(vc_bound=4)) == 4
    assert em.vc_index_bound(em.known_shifted("cauchy")) == 5


@pytest.mark.parametrize("bad", [
    lambda: em.spike(1.0), lambda: em.spike(0.0), lambda: em.skew_gaussian(math.inf),
    lambda: em.gaussian(scale_domain=(0.0, 1.0)), lambda: em.EmissionSpec("weibull"),
    lambda: EmissionParams(0.0, 0.0), lambda: EmissionParams(0.0, -1.0),
    lambda: em.EmissionSpec("laplace", uniform_vc=7),
])
def test_invalid_specs_rejected(bad):
    with pytest.raises(DomainError):
        bad()


def test_out_of_domain_params_rejected():
    spec = em.gaussian(location_domain=(0.0, 1.0))
    with pytest.raises(DomainError):
        em.density(spec, EmissionParams(2.0, 1.0), 0.0)
    with pytest.raises(DomainError):
        em.density(em.laplace(), EmissionParams(0.0, 2.0), 0.0)


def test_build_net_geometry():
    data = np.linspace(0, 10, 101)
    net = em.build_net(em.gaussian(), data, 3, 1)
    locs = [p.location for p in net]
    assert len(net) == 3
    assert locs[1] - locs[0] == pytest.approx(locs[2] - locs[1])
    assert locs[0] == pytest.approx(0 - 10 / 3) and locs[-1] == pytest.approx(10 + 10 / 3)


def test_build_net_degenerate():
    data = np.random.default_rng(0).normal(size=101)
    (p,) = em.build_net(em.gaussian(), data, 1, 1)
    q1, q3 = np.percentile(data, [25, 75])
    assert p.location == pytest.approx(np.median(data))
    assert p.scale == pytest.approx(1.5 * (q3 - q1))


def test_build_net_covers_truth():
    data = np.random.default_rng(2).normal(size=1000)
    net = em.build_net(em.gaussian(), data, 20, 10)
    assert len(net) == 200
    g = em.param_grid(em.gaussian(), data, 20, 10)
    close = [p for p in net if abs(p.location) <= g.loc_step / 2 + 1e-12
             and abs(math.log(p.scale)) <= g.log_scale_step / 2 + 1e-12]
    assert close


def test_build_net_respects_domains():
    spec = em.gaussian(location_domain=(-0.5, 0.5), scale_domain=(0.5, 2.0))
    data = np.random.default_rng(3).normal(size=200) * 4
    for p in em.build_net(spec, data, 7, 4):
        spec.check(p)


def test_build_net_empty_data():
    with pytest.raises(DomainError):
        em.build_net(em.gaussian(), [], 3, 1)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-20, 20))
def test_cauchy_cdf_against_scipy(z, s, x):
    assert float(em.cdf(em.cauchy(), EmissionParams(z, s), x)) == pytest.approx(
        stats.cauchy.cdf(x, z, s), abs=1e-12)


def test_param_grid_nearest_roundtrip():
    g = em.ParamGrid.from_bounds(em.gaussian(), -1.0, 1.0, 21, 0.5, 2.0, 5)
    for i in (0, 7, 20):
        for j in (0, 2, 4):
            assert g.nearest(g.param(i, j)) == (i, j)
