import math

import numpy as np
import pytest

from isinglab.glauber import RateFamily, exact_generator_gap
from isinglab.ising import BETA_C, encode, gibbs_exact
from isinglab.lattice import build_box
from isinglab.lowerbound import (
    FitWindowError,
    antiferro_map,
    antiferro_transport_error,
    autocorr_exponent,
    default_lags,
    dual_disconnect_magnetization,
    estimate_variance,
    exact_variance_ratio,
    fit_autocorrelation,
    lambda_star,
    lambda_star_sites,
    spin_autocorrelation,
    variance_scaling,
)

HB = RateFamily("heat-bath")


# ----------------------------------------------------------------------
# central square
# ----------------------------------------------------------------------
def test_lambda_star_bounds():
    assert lambda_star(8) == (2, 6)
    assert lambda_star(16) == (4, 12)
    assert lambda_star(10) == (3, 7)
    lat, _ = build_box(8, 8, "free")
    assert len(lambda_star_sites(lat)) == 25


def test_lambda_star_area_grows_like_quarter_box():
    ns = np.arange(8, 65)
    area = np.array([(hi - lo + 1) ** 2 for lo, hi in map(lambda_star, ns)])
    # the side is within one site of n/2, so the relative excess vanishes like 1/n
    assert np.all(np.abs(np.sqrt(area) - ns / 2) <= 1)
    rel = area / (ns / 2) ** 2
    assert np.abs(rel[-8:] - 1).max() < 0.07


# ----------------------------------------------------------------------
# variance and Dirichlet form
# ----------------------------------------------------------------------
@pytest.mark.parametrize("n", [4, 8, 13])
def test_beta_zero_variance_is_area(n):
    e = estimate_variance(n, samples=200, rng=1, beta=0.0, burnin=5)
    k = len(lambda_star_sites(build_box(n, n, "free")[0]))
    assert e.var == pytest.approx(k, abs=1e-12)
    assert e.dirichlet == pytest.approx(k, abs=1e-12)
    assert e.ratio == pytest.approx(1.0, abs=1e-12)


def test_beta_zero_slopes():
    rep = variance_scaling([8, 16, 32], samples=100, rng=2, beta=0.0, burnin=5)
    # inclusive rounding makes the side n/2 + 1, so the slope is below 2 at these sizes
    sides = np.array([hi - lo + 1 for lo, hi in map(lambda_star, (8, 16, 32))], float)
    expected = np.polyfit(np.log([8, 16, 32]), np.log(sides ** 2), 1)[0]
    assert rep.var_fit.exponent == pytest.approx(expected, abs=1e-6)
    assert abs(rep.ratio_fit.exponent) < 1e-6


def test_lipschitz_bound_on_dirichlet_form():
    e = estimate_variance(8, samples=300, rng=3)
    assert e.lipschitz_ok
    assert e.dirichlet <= 4 * 8 * 8


def test_gap_upper_bound_shrinks_from_8_to_16():
    e8 = estimate_variance(8, samples=4000, rng=2)
    e16 = estimate_variance(16, samples=4000, rng=2)
    d8, d16 = 1 / e8.ratio, 1 / e16.ratio
    s8, s16 = e8.ratio_err / e8.ratio ** 2, e16.ratio_err / e16.ratio ** 2
    assert d16 + 3 * math.hypot(s8, s16) < d8


@pytest.mark.parametrize("n", [2, 3])
def test_ratio_is_a_valid_relaxation_time_lower_bound(n):
    lat, bc = build_box(n, n, "free")
    dist = gibbs_exact(lat, bc)
    exact = exact_variance_ratio(dist, HB)
    relax = 1 / exact_generator_gap(lat, bc, HB)
    assert exact <= relax + 1e-12
    e = estimate_variance(n, samples=20000, rng=1)
    assert abs(e.ratio - exact) < 4 * e.ratio_err
    assert e.ratio <= relax * (1 + 3 * e.ratio_err / e.ratio)


def test_exact_ratio_matches_direct_formula_2x2():
    lat, bc = build_box(2, 2, "free")
    dist = gibbs_exact(lat, bc)
    # Lambda* of a 2-box is the single site (1, 1)
    f = dist.configs()[:, 0].astype(float)
    var = dist.expectation(f ** 2) - dist.expectation(f) ** 2
    # E(f) = 1/2 sum mu(s) c(x, s) (2 s_x)^2 summed over flips of the site
    nb = bc.ising_neighbors[0]
    cfg = dist.configs()
    S = cfg[:, nb[nb >= 0]].sum(axis=1) + bc.field[0]
    c = 1 / (1 + np.exp(2 * BETA_C * cfg[:, 0] * S))
    E = 0.5 * dist.expectation(c * 4)
    assert exact_variance_ratio(dist, HB) == pytest.approx(var / E, rel=1e-12)


def test_scaling_needs_three_sizes():
    with pytest.raises(ValueError):
        variance_scaling([8, 16], samples=10)


# ----------------------------------------------------------------------
# autocorrelation
# ----------------------------------------------------------------------
def test_default_lags():
    lg = default_lags(64)
    assert lg[0] == 4 and lg[-1] == 256
    assert len(lg) == 12 and np.all(np.diff(lg) > 0)


def test_beta_zero_decay_is_exponential():
    lg, C, err = spin_autocorrelation(16, sweeps=20000, rng=1, beta=0.0, lags=np.arange(1, 9))
    assert np.allclose(C[:3], np.exp(-lg[:3]), atol=5 * err[:3].max() + 1e-3)
    fit = fit_autocorrelation(lg, C, err)
    assert fit.model == "exponential" and fit.power_law_rejected
    assert fit.exp_rate == pytest.approx(1.0, abs=0.05)


def test_doubling_sweeps_shrinks_stderr():
    a = autocorr_exponent(16, sweeps=20000, rng=1)
    b = autocorr_exponent(16, sweeps=40000, rng=1)
    assert b.stderr < a.stderr


def test_autocorrelation_reproducible():
    a = spin_autocorrelation(8, sweeps=2000, rng=5)
    b = spin_autocorrelation(8, sweeps=2000, rng=5)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_fit_window_error():
    lg = np.arange(1, 9)
    with pytest.raises(FitWindowError):
        fit_autocorrelation(lg, np.zeros(8), np.full(8, 0.1))


def test_power_law_recovered_from_synthetic_series():
    lg = default_lags(64).astype(float)
    C = 0.8 * lg ** -0.25
    err = 0.01 * C
    fit = fit_autocorrelation(lg, C, err)
    assert fit.model == "power"
    assert fit.exponent == pytest.approx(0.25, abs=1e-10)


# ----------------------------------------------------------------------
# antiferromagnetic reduction
# ----------------------------------------------------------------------
def test_antiferro_map_all_plus_is_checkerboard():
    lat, bc = build_box(2, 2, "all:+")
    s, mbc = antiferro_map(np.ones(4, np.int8), bc)
    xy = lat.coords[:4]
    assert np.array_equal(s, np.where((xy[:, 0] + xy[:, 1]) % 2, -1, 1))
    ring_xy = lat.coords[4:]
    fixed = mbc.values != 0
    assert np.array_equal(mbc.values[fixed], np.where((ring_xy[fixed].sum(axis=1)) % 2, -1, 1))


@pytest.mark.parametrize("spec", ["all:+", "bottom:-,else:+", "free"])
def test_antiferro_map_is_an_involution(spec):
    lat, bc = build_box(3, 4, spec)
    s = np.random.default_rng(1).choice(np.array([-1, 1], np.int8), lat.n_sites)
    s1, b1 = antiferro_map(s, bc)
    s2, b2 = antiferro_map(s1, b1)
    assert np.array_equal(s2, s) and np.array_equal(b2.values, bc.values)


def test_antiferro_transport_1x2():
    lat, bc = build_box(1, 2, "free")
    neg = gibbs_exact(lat, bc, -BETA_C)
    pos = gibbs_exact(lat, bc, BETA_C)
    assert neg.prob([1, -1]) == pytest.approx(0.3535534, abs=1e-7)
    m, _ = antiferro_map(np.array([1, -1], np.int8), bc)
    assert np.array_equal(m, [1, 1]) or np.array_equal(m, [-1, -1])
    assert neg.prob([1, -1]) == pytest.approx(pos.prob(m), abs=1e-12)


@pytest.mark.parametrize("dims", [(1, 2), (2, 2), (2, 3)])
@pytest.mark.parametrize("spec", ["free", "all:+", "bottom:-,else:+"])
def test_antiferro_transport_identity(dims, spec):
    lat, bc = build_box(*dims, spec)
    assert antiferro_transport_error(lat, bc) < 1e-12


# ----------------------------------------------------------------------
# conditioning on a cut-off centre
# ----------------------------------------------------------------------
@pytest.mark.parametrize("spec", ["all:+", "bottom:-,else:+"])
def test_disconnected_centre_has_zero_magnetization(spec):
    mean, se, count = dual_disconnect_magnetization(8, spec, samples=3000, rng=7, inner_side=2)
    assert count > 100
    assert abs(mean) < 3 * se
