import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats
from scipy.special import roots_jacobi

from oracles import gaussian_moment_oracle, mp_shifted_moment
from spherekhin.errors import DomainError, SingularIntegrandError
from spherekhin.kernel import (
    RadialLaw,
    check_dimension,
    gaussian_abs_moment,
    gaussian_moment_excess,
    jacobi_rule,
    make_rng,
    product_radius_density,
    product_radius_moment,
    sample_radial,
    sample_sphere,
    sample_theta,
    sphere_average,
    theta_average,
    theta_density,
    theta_moment,
    theta_norm_constant,
)


@pytest.mark.parametrize("d", [2, 3, 4, 7, 20])
def test_theta_density_is_normalized(d):
    total, _ = integrate.quad(lambda x: theta_density(x, d), -1, 1)
    assert total == pytest.approx(1.0, rel=1e-9)


def test_theta_norm_constant_closed_values():
    assert theta_norm_constant(2) == pytest.approx(math.pi)
    assert theta_norm_constant(3) == pytest.approx(2.0)


def test_theta_density_rejects_boundary():
    with pytest.raises(DomainError):
        theta_density(1.0, 3)


@pytest.mark.parametrize("d", [2, 3, 5, 10])
def test_theta_low_moments(d):
    assert theta_moment(1, d) == 0.0
    assert theta_moment(2, d) == pytest.approx(1 / d, rel=1e-14)
    assert theta_moment(4, d) == pytest.approx(3 / (d * (d + 2)), rel=1e-14)


@pytest.mark.parametrize("d", [3, 4, 6, 11])
@pytest.mark.parametrize("K", [1, 4, 16, 64])
def test_jacobi_rule_matches_scipy_nodes(d, K):
    rule = jacobi_rule(d, K)
    alpha = (d - 3) / 2
    x, w = roots_jacobi(K, alpha, alpha)
    np.testing.assert_allclose(rule.nodes, np.sort(x), atol=1e-13)
    np.testing.assert_allclose(rule.weights, w / w.sum(), rtol=1e-10, atol=1e-15)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("d", [2, 3, 5, 9])
def test_jacobi_rule_integrates_polynomials_exactly(d):
    K = 6
    rule = jacobi_rule(d, K)
    for m in range(0, 2 * K):
        assert rule.integrate(lambda x: x**m) == pytest.approx(theta_moment(m, d), abs=1e-14)


def test_jacobi_rule_arrays_are_read_only():
    rule = jacobi_rule(4, 8)
    with pytest.raises(ValueError):
        rule.nodes[0] = 0.0


def test_theta_average_with_cut_handles_a_kink():
    d = 4
    val, err = theta_average(lambda x: np.abs(x - 0.3) * np.exp(x), d, 32, cuts=[0.3])
    ref, _ = integrate.quad(lambda x: abs(x - 0.3) * math.exp(x) * theta_density(x, d), -1, 1, points=[0.3],
                            epsabs=0, epsrel=1e-13)
    assert val == pytest.approx(ref, rel=1e-12)
    assert err < 1e-10


@pytest.mark.parametrize("r,s,q,d", [
    (1.0, 0.5, 3.0, 2), (0.3, 1.2, 2.5, 3), (1.0, 1.0, -0.5, 2), (2.0, 0.7, -1.5, 5),
    (0.9, 1.0, -2.5, 4), (1.0, 1.0, 7.0, 10), (0.2, 0.1, 0.5, 6),
])
def test_sphere_average_against_angular_quadrature(r, s, q, d):
    ref = float(mp_shifted_moment(r, s, q, d))
    assert sphere_average(r, s, q, d) == pytest.approx(ref, rel=1e-12)


def test_sphere_average_near_singular_uses_high_precision():
    # q < 0 and r, s equal to 13 digits: the hypergeometric argument is within 1e-13 of one
    r, s = 1.0, 1.0 - 3e-14
    ref = float(mp_shifted_moment(r, s, -1.5, 3, dps=40))
    assert sphere_average(r, s, -1.5, 3) == pytest.approx(ref, rel=1e-9)


def test_sphere_average_divergent_case():
    assert sphere_average(1.0, 1.0, -2.0, 3) == math.inf


@given(r=st.floats(0, 3), s=st.floats(0, 3), q=st.floats(0, 8), d=st.integers(2, 12))
def test_sphere_average_symmetric(r, s, q, d):
    assert sphere_average(r, s, q, d) == pytest.approx(sphere_average(s, r, q, d), rel=1e-12, abs=1e-300)


@given(r=st.floats(0.01, 3), s=st.floats(0.01, 3), q=st.floats(-0.9, 6))
def test_sphere_average_three_dimensional_closed_form(r, s, q):
    # theta is uniform when d = 3
    ref = ((r + s) ** (q + 2) - abs(r - s) ** (q + 2)) / (2 * r * s * (q + 2))
    assert sphere_average(r, s, q, 3) == pytest.approx(ref, rel=1e-9)


def test_sphere_average_broadcasts():
    out = sphere_average(np.array([0.5, 1.0, 2.0]), 1.0, 3.0, 4)
    assert out.shape == (3,)
    assert out[1] == pytest.approx(sphere_average(1.0, 1.0, 3.0, 4))


@pytest.mark.parametrize("p", [2, 4, 6, 8])
@pytest.mark.parametrize("d", range(2, 11))
def test_gaussian_even_moments_match_chi_squared(p, d):
    ref = stats.chi2(d).moment(p // 2) / d ** (p // 2)
    assert gaussian_abs_moment(p, d) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("p,d", [(0.5, 2), (1.0, 3), (2.5, 5), (3.7, 10), (11.0, 2)])
def test_gaussian_moment_against_quadrature(p, d):
    assert gaussian_abs_moment(p, d) == pytest.approx(float(gaussian_moment_oracle(p, d)), rel=1e-12)


@pytest.mark.parametrize("p,d", [
    (3.0, 1000), (2.5, 200), (6.0, 4096), (3.3, 100_000),
    # close to p = 0 and p = 2, where the excess vanishes
    (1e-9, 7), (0.09, 1024), (1.93, 41), (2.0000000000000004, 41), (2.05, 100_000), (2.1001, 1024),
])
def test_gaussian_excess_is_accurate_in_high_dimension(p, d):
    with mp.workdps(60):
        ref = mp.expm1(mp.loggamma((mp.mpf(p) + d) / 2) - mp.loggamma(d / mp.mpf(2))
                       - (p / mp.mpf(2)) * mp.log(d / mp.mpf(2)))
    assert gaussian_moment_excess(p, d) == pytest.approx(float(ref), rel=1e-13)


def test_check_dimension():
    assert check_dimension(3.0) == 3
    for bad in (1, 0, 2.5, True):
        with pytest.raises(DomainError):
            check_dimension(bad)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(5, 1, 2).random(4)
    b = make_rng(5, 1, 2).random(4)
    c = make_rng(5, 1, 3).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    with pytest.raises(DomainError):
        make_rng(None)


@pytest.mark.parametrize("d", [2, 3, 6])
def test_theta_sampler_law(d):
    x = sample_theta(d, make_rng(1), 20000)
    cdf = lambda t: stats.beta((d - 1) / 2, (d - 1) / 2).cdf((t + 1) / 2)
    assert stats.kstest(x, cdf).pvalue > 1e-4


def test_sphere_sampler_unit_norm_and_marginal():
    pts = sample_sphere(5, make_rng(2), 50000)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    assert np.mean(pts[:, 0] ** 2) == pytest.approx(1 / 5, abs=0.01)


@pytest.mark.parametrize("d", [2, 3, 7])
def test_product_radius(d):
    total, _ = integrate.quad(lambda r: product_radius_density(r, d), 0, 1)
    assert total == pytest.approx(1.0, rel=1e-12)
    for m in (-1.5, 0.5, 3.0):
        if m <= -d:
            continue
        ref, _ = integrate.quad(lambda r: r**m * product_radius_density(r, d), 0, 1)
        assert product_radius_moment(m, d) == pytest.approx(ref, rel=1e-9)
    x = sample_radial(RadialLaw("product", d), make_rng(3), 200000)
    assert np.mean(x**2) == pytest.approx(product_radius_moment(2, d), abs=5e-3)
    with pytest.raises(SingularIntegrandError):
        product_radius_moment(-d, d)


def test_gaussian_radius_sampler():
    x = sample_radial(RadialLaw("gaussian", 4), make_rng(4), 200000)
    assert np.mean(x**2) == pytest.approx(1.0, abs=0.01)
    assert np.mean(x**3) == pytest.approx(gaussian_abs_moment(3, 4), abs=0.02)
