import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from nnd import oracle
from nnd.errors import ValidationError


def test_gaussian_posterior_mean_closed_form():
    g = oracle.Grid1D.around(0.5, 2.0)
    dens = oracle.gaussian_density(g, 0.5, 2.0)
    r = np.linspace(-6, 6, 25)
    for sigma in (0.1, 1.0, 10.0):
        closed = (4.0 * r + sigma ** 2 * 0.5) / (4.0 + sigma ** 2)
        np.testing.assert_allclose(oracle.oracle_posterior_mean(g, dens, r, sigma), closed, atol=1e-8)


def test_symmetric_mixture_at_zero():
    g = oracle.Grid1D(-20, 20)
    dens = oracle.mixture_density(g, (0.5, 0.5), (-2, 2), (0.3, 0.3))
    assert abs(oracle.oracle_posterior_mean(g, dens, 0.0, 0.5)) < 1e-12


def test_small_sigma_limit():
    g = oracle.Grid1D(-12, 12, n=200_001)
    dens = oracle.gaussian_density(g, 0.0, 1.0)
    assert oracle.oracle_posterior_mean(g, dens, 0.7, 1e-4) == pytest.approx(0.7, abs=1e-3)


def test_unnormalized_prior_rejected():
    g = oracle.Grid1D(-5, 5)
    with pytest.raises(ValidationError):
        oracle.oracle_posterior_mean(g, 2 * oracle.gaussian_density(g, 0, 1), 0.0, 1.0)


def test_normalizer_underflow():
    g = oracle.Grid1D(-1, 1)
    dens = np.full(g.n, 0.5)
    with pytest.raises(ValidationError):
        # every grid point sits > 40 sigma away from the query
        oracle.oracle_posterior_mean(g, dens, 1e6, 1e-3)


def test_grid_too_coarse():
    with pytest.raises(ValidationError):
        oracle.Grid1D(0, 1, n=100)


def test_bayes_posterior_normalized_and_mode():
    g = oracle.Grid1D.around(np.log(50.0), 1.0)
    dens = oracle.gaussian_density(g, np.log(50.0), 1.0)
    post = oracle.oracle_bayes_posterior(g, dens, lambda v: v, 50.0, 50.0)

    assert trapezoid(post, g.points) == pytest.approx(1.0, abs=1e-9)
    assert g.points[np.argmax(post)] == pytest.approx(np.log(50.0), abs=2 * (g.hi - g.lo) / g.n)


def test_bayes_posterior_flat_prior_change_of_variables():
    # flat prior in rho, identity fm: p(rho | y) is N(e^rho; y, v) times the Jacobian-free flat prior
    g = oracle.Grid1D(math.log(20), math.log(200))
    flat = np.full(g.n, 1.0 / (g.hi - g.lo))
    y, v = 100.0, 100.0
    post = oracle.oracle_bayes_posterior(g, flat, lambda u: u, y, v)
    expected = np.exp(-(np.exp(g.points) - y) ** 2 / (2 * v))

    expected /= trapezoid(expected, g.points)
    np.testing.assert_allclose(post, expected, rtol=1e-9, atol=1e-12)


def test_finite_difference_polynomial():
    assert oracle.finite_diff_grad(lambda x: float(x ** 2), 3.0, 1e-5) == pytest.approx(6.0, abs=1e-8)


def test_finite_difference_step_sweep_v_shape():
    f, x0, exact = np.sin, 1.0, math.cos(1.0)
    errs = [abs(oracle.finite_diff_grad(lambda x: float(f(x)), x0, h) - exact) for h in (1e-3, 1e-5, 1e-7)]
    assert errs[1] < errs[0] and errs[1] < errs[2]


def test_finite_difference_bad_step():
    with pytest.raises(ValidationError):
        oracle.finite_diff_grad(lambda x: x, 1.0, 0.0)


def test_ks_identical_sets():
    s = np.random.default_rng(0).normal(size=500)
    assert oracle.ks_distance(s, s) == 0.0


def test_ks_same_distribution():
    gen = np.random.default_rng(1)
    assert oracle.ks_distance(gen.normal(size=5000), stats.norm.cdf) <= 0.04


def test_w1_shifted_gaussians():
    gen = np.random.default_rng(2)
    assert oracle.wasserstein1(gen.normal(size=5000), gen.normal(1.0, 1.0, size=5000)) == \
        pytest.approx(1.0, abs=0.05)


def test_w1_against_grid_density():
    gen = np.random.default_rng(3)
    g = oracle.Grid1D(-3, 9, n=20_000)
    dens = oracle.gaussian_density(g, 3.0, 1.0)
    assert oracle.wasserstein1(gen.normal(size=5000), dens, grid=g) == pytest.approx(3.0, abs=0.05)
    samples = gen.normal(3.0, 1.0, size=5000)
    assert oracle.wasserstein1(samples, dens, grid=g) == pytest.approx(
        stats.wasserstein_distance(samples, gen.normal(3.0, 1.0, size=200_000)), abs=0.01)


def test_empty_samples():
    with pytest.raises(ValidationError):
        oracle.ks_distance([], [1.0])
