import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from anovarkhs import noise
from anovarkhs.noise import NoiseSpec
from oracles import gamma_identity_constants, gg_moment_quad, gg_normalizer_quad

GRID = [2.0, 2.5, 3.0, 4.0, 6.0]


@pytest.mark.parametrize("alpha", GRID)
def test_constants_match_quadrature(alpha):
    a, var = gamma_identity_constants(alpha)
    assert noise.normalizing_constant(alpha) == pytest.approx(gg_normalizer_quad(alpha), rel=1e-8)
    assert noise.variance(alpha) == pytest.approx(gg_moment_quad(alpha, 2), rel=1e-8)
    assert noise.normalizing_constant(alpha) == pytest.approx(a, rel=1e-14)
    assert noise.variance(alpha) == pytest.approx(var, rel=1e-12)
    assert noise.abs_first_moment(alpha) == pytest.approx(gg_moment_quad(alpha, 1), rel=1e-8)
    assert noise.fourth_moment(alpha) == pytest.approx(gg_moment_quad(alpha, 4), rel=1e-8)


@pytest.mark.parametrize("alpha", GRID)
def test_internal_quadrature_integrates_density_to_one(alpha):
    total = 2 * noise.normalizing_constant(alpha) * noise.quadrature_integral(lambda x: np.ones_like(x), alpha)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_normalizer_values():
    assert noise.normalizing_constant(2) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-7)
    assert noise.normalizing_constant(4) == pytest.approx(0.5516, abs=1e-4)
    assert noise.normalizing_constant(200) == pytest.approx(0.5, abs=1e-2)


def test_variance_values():
    assert noise.variance(2) == pytest.approx(0.5, rel=1e-12)
    assert noise.variance(4) == pytest.approx(0.33799, abs=1e-4)
    assert noise.variance(200) == pytest.approx(1 / 3, abs=1e-2)


def test_abs_moment_values():
    assert noise.abs_first_moment(2) == pytest.approx(0.5641896, abs=1e-7)
    assert noise.abs_first_moment(4) == pytest.approx(0.48887, abs=1e-4)


@pytest.mark.parametrize("alpha", GRID)
def test_mean_zero_by_symmetry(alpha):
    x = np.arange(-4000, 4001) / 500.0
    vals = x * noise.density(alpha, x)
    assert np.array_equal(vals, -vals[::-1])


def test_estimation_spec_rejects_alpha_two():
    with pytest.raises(ValueError):
        NoiseSpec(2.0)
    with pytest.raises(ValueError):
        NoiseSpec(1.5, probe=True)
    assert NoiseSpec(2.0, probe=True).sigma_alpha == pytest.approx(math.sqrt(0.5))


def test_sampler_deterministic():
    spec = NoiseSpec(3.0)
    a = noise.sample_errors(spec, 1000, seed=11, stream=4)
    b = noise.sample_errors(spec, 1000, seed=11, stream=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, noise.sample_errors(spec, 1000, seed=11, stream=5))


def test_sampler_moments():
    spec = NoiseSpec(3.0)
    n = 100_000
    e = noise.sample_errors(spec, n, seed=1)
    assert abs(e.mean()) < 3 / math.sqrt(n)
    kurt = gg_moment_quad(3.0, 4) / gg_moment_quad(3.0, 2) ** 2
    se = math.sqrt((kurt - 1) / n)
    assert abs(e.var() - 1.0) < 3 * se


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0])
def test_sampler_ks(alpha):
    rng = np.random.default_rng(5)
    z = noise.sample_raw(alpha, 100_000, rng)
    a = noise.normalizing_constant(alpha)

    def cdf(x):
        x = np.asarray(x, float)
        tail = 0.5 * stats.gamma.sf(np.abs(x) ** alpha, 1 / alpha)
        return np.where(x >= 0, 1 - tail, tail)

    assert a > 0
    assert stats.kstest(z, cdf).statistic < 0.01


@given(st.floats(2.0, 12.0), st.floats(-5, 5))
def test_density_even(alpha, x):
    assert noise.density(alpha, x) == noise.density(alpha, -x)


@given(st.floats(2.0, 20.0))
def test_jensen_chain(alpha):
    assert noise.abs_first_moment(alpha) <= math.sqrt(noise.variance(alpha)) + 1e-15


def test_hazard_examples():
    assert noise.hazard_threshold(4, 1) == pytest.approx(0.5)
    _, analytic = noise.tail_log_derivative(4, 0.5)
    assert analytic == -0.5
    assert noise.tail_log_derivative(4, 1.0)[1] == -4.0
    _, low = noise.tail_log_derivative(4, 0.3)
    assert low == pytest.approx(-0.108)
    assert low > -0.3


@pytest.mark.parametrize("alpha", [3.0, 4.0])
def test_hazard_condition_above_threshold(alpha):
    m = noise.hazard_threshold(alpha, 1.0)
    for t in np.linspace(m, m + 6, 60):
        exact, _ = noise.tail_log_derivative(alpha, t)
        assert exact <= -t + 1e-12


def test_tail_log_derivative_matches_finite_difference():
    alpha, t, h = 3.0, 0.8, 1e-6

    def logsf(x):
        return math.log(0.5 * stats.gamma.sf(x ** alpha, 1 / alpha))

    fd = (logsf(t + h) - logsf(t - h)) / (2 * h)
    assert noise.tail_log_derivative(alpha, t)[0] == pytest.approx(fd, rel=1e-6)


def test_tail_far_out_is_finite():
    exact, analytic = noise.tail_log_derivative(3.0, 40.0)
    assert math.isfinite(exact)
    assert exact == pytest.approx(analytic, rel=1e-3)
