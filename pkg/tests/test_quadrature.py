import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit, factorial2

from rrnn.quadrature import (GaussHermite, GaussianTrapezoid, rule_for_scale, MCEstimate, MonteCarlo, NonFiniteIntegrand,
                             QuadratureDomainError, gaussian_pair_expectation, integrate1,
                             integrate2, pair_expectation_batch)

GH = GaussHermite(64)


def gaussian_moment(k):
    return 0.0 if k % 2 else float(factorial2(k - 1)) if k else 1.0


@pytest.mark.parametrize("n", [4, 10, 20])
def test_polynomial_exactness(n):
    rule = GaussHermite(n)
    for k in range(2 * n):
        exact = gaussian_moment(k)
        got = integrate1(rule, lambda x: x ** k)
        # odd moments vanish; measure them against the size of the summands
        scale = exact if k % 2 == 0 else integrate1(rule, lambda x: np.abs(x) ** k)
        assert abs(got - exact) <= 1e-10 * scale


def test_weights_positive_and_normalized():
    for n in (8, 64, 400):
        w = GaussHermite(n).weights
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_integrate1_examples():
    assert integrate1(GH, lambda x: np.ones_like(x)) == pytest.approx(1.0, abs=1e-14)
    assert integrate1(GH, lambda x: x ** 2) == pytest.approx(1.0, abs=1e-12)
    assert integrate1(GH, expit) == pytest.approx(0.5, abs=1e-14)


def test_integrate2_examples():
    assert integrate2(GH, lambda a, b: a * b) == pytest.approx(0.0, abs=1e-14)
    assert integrate2(GH, lambda a, b: expit(a) * expit(b)) == pytest.approx(0.25, abs=1e-14)
    a, b = 1.7, -0.4
    assert integrate2(GH, lambda x, y: (a * x + b * y) ** 2) == pytest.approx(a * a + b * b)


@pytest.mark.parametrize("phi", [np.tanh, lambda x: expit(2 * x - 0.3),
                                 lambda x: np.cos(x), lambda x: np.exp(-x * x)])
def test_gauss_hermite_agrees_with_monte_carlo(phi):
    mc = integrate1(MonteCarlo(10 ** 6, np.random.default_rng(1)), phi)
    assert isinstance(mc, MCEstimate)
    assert abs(integrate1(GH, phi) - mc.value) < 4 * mc.stderr


def test_integrate2_monte_carlo_agrees():
    phi = lambda a, b: np.tanh(a + 0.5 * b) * expit(b)  # noqa: E731
    mc = integrate2(MonteCarlo(10 ** 6, np.random.default_rng(2)), phi)
    assert abs(integrate2(GH, phi) - mc.value) < 4 * mc.stderr


def test_perfect_correlation_identity():
    mx, my, vx, vy = 0.3, -1.2, 2.0, 0.5
    cov = np.sqrt(vx * vy)
    got = gaussian_pair_expectation(mx, my, vx, vy, cov, lambda x: x, lambda y: y)
    assert got == pytest.approx(mx * my + cov, rel=1e-8)


def test_independence_factorizes():
    mx, my, vx, vy = 0.3, -1.2, 2.0, 0.5
    got = gaussian_pair_expectation(mx, my, vx, vy, 0.0, expit, np.tanh)
    a = integrate1(GH, lambda x: expit(np.sqrt(vx) * x + mx))
    b = integrate1(GH, lambda x: np.tanh(np.sqrt(vy) * x + my))
    assert got == pytest.approx(a * b, rel=1e-12)


def test_pair_expectation_against_monte_carlo():
    rng = np.random.default_rng(3)
    n = 10 ** 6
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    xy = rng.multivariate_normal([0, 0], cov, size=n)
    vals = expit(xy[:, 0]) * expit(xy[:, 1])
    mc, se = vals.mean(), vals.std(ddof=1) / np.sqrt(n)
    got = gaussian_pair_expectation(0, 0, 1, 1, 0.5, expit, expit)
    assert abs(got - mc) < 3 * se


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 4), st.floats(0.05, 4),
       st.floats(-0.99, 0.99))
def test_pair_expectation_swap_symmetry(mx, my, vx, vy, rho):
    cov = rho * np.sqrt(vx * vy)
    g1 = expit
    g2 = lambda y: np.tanh(y) ** 2  # noqa: E731
    rule = rule_for_scale(2 * np.sqrt(max(vx, vy)))  # tanh(y) = 2 f(2y) - 1
    a = gaussian_pair_expectation(mx, my, vx, vy, cov, g1, g2, rule)
    b = gaussian_pair_expectation(my, mx, vy, vx, cov, g2, g1, rule)
    assert abs(a - b) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2))
def test_monotonicity(shift, gap):
    lo = integrate1(GH, lambda x: expit(x + shift))
    hi = integrate1(GH, lambda x: expit(x + shift) + gap * np.exp(-x * x))
    assert lo <= hi


def test_batch_matches_scalar():
    args = (np.array([0.1, -0.5]), np.array([0.0, 0.7]), np.array([1.0, 2.0]),
            np.array([0.5, 3.0]), np.array([0.3, -1.0]))
    batch = pair_expectation_batch(*args, expit)
    for k in range(2):
        one = gaussian_pair_expectation(*(a[k] for a in args), expit, expit)
        assert batch[k] == pytest.approx(one, rel=1e-12)


def test_degenerate_variance_collapses_to_mean():
    got = gaussian_pair_expectation(0.2, 1.5, 1.0, 0.0, 0.0, expit, np.tanh)
    assert got == pytest.approx(np.tanh(1.5) * integrate1(GH, lambda x: expit(x + 0.2)))
    batch = pair_expectation_batch(0.2, 1.5, 1.0, 0.0, 0.0, lambda v: v)
    assert batch == pytest.approx(0.2 * 1.5)


def test_covariance_roundoff_is_clamped():
    bound = np.sqrt(2.0 * 3.0)
    got = gaussian_pair_expectation(0, 0, 2.0, 3.0, bound * (1 + 1e-13), lambda x: x, lambda y: y)
    assert got == pytest.approx(bound, rel=1e-8)


def test_covariance_violation_is_domain_error():
    with pytest.raises(QuadratureDomainError):
        gaussian_pair_expectation(0, 0, 1.0, 1.0, 1.5, expit, expit)
    with pytest.raises(QuadratureDomainError):
        pair_expectation_batch(0, 0, 1.0, 1.0, -1.5, expit)
    with pytest.raises(QuadratureDomainError):
        gaussian_pair_expectation(0, 0, -1.0, 1.0, 0.0, expit, expit)


def test_non_finite_integrand_reports_node():
    with pytest.raises(NonFiniteIntegrand, match="node"):
        integrate1(GH, lambda x: np.where(x > 3, np.inf, x))


@pytest.mark.parametrize("scale", [0.5, 2.0, 6.0, 12.0, 30.0])
def test_scaled_rule_resolves_steep_logistic(scale):
    from scipy.integrate import quad
    phi = lambda x: expit(scale * x - 0.3) ** 2 * np.exp(-x * x / 2) / np.sqrt(2 * np.pi)  # noqa: E731
    ref = quad(phi, -40, 40, points=[0.3 / scale], limit=1000, epsabs=1e-15)[0]
    got = integrate1(rule_for_scale(scale), lambda x: expit(scale * x - 0.3) ** 2)
    assert abs(got - ref) < 1e-12


def test_trapezoid_rule_low_moments():
    rule = GaussianTrapezoid(0.1)
    assert np.all(rule.weights > 0)
    assert integrate1(rule, lambda x: x ** 2) == pytest.approx(1.0, abs=1e-13)
    assert integrate1(rule, lambda x: x ** 4) == pytest.approx(3.0, abs=1e-12)
