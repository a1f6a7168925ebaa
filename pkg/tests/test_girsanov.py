import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrnn.core import InitialLaw, ModelKind, NetworkConfig, NeuronModel, WeightLaw
from rrnn.girsanov import (CovarianceError, FreeLaw, GaussianFieldLaw, PropagatedLaw,
                           TrajectoryLaw, UnsupportedLaw, gamma_functional, girsanov_log_density,
                           gmu_from_sample, log_density_L, meanfield_law, network_log_density,
                           network_log_density_batch, rate_function_estimate,
                           relative_entropy_estimate)
from rrnn.netsim import simulate

LAW = TrajectoryLaw(init=InitialLaw(0.0, 1.0), theta=0.0, sigma=1.0, T=3)


def _within(a, b, se, k=3.0):
    return abs(a - b) < k * se


def test_gmu_constant_sample():
    g = gmu_from_sample(np.zeros((7, 4)), 1.2, 0.8)
    np.testing.assert_allclose(g.mean, 0.6)
    np.testing.assert_allclose(g.cov, 0.2)


def test_gmu_zero_coupling_and_symmetric_pair():
    eta = np.random.default_rng(0).normal(size=(1, 4))
    g0 = gmu_from_sample(np.vstack([eta, -eta]), 0.0, 0.0)
    assert np.all(g0.mean == 0) and np.all(g0.cov == 0)
    g = gmu_from_sample(np.vstack([eta, -eta]), 2.0, 1.0)
    np.testing.assert_allclose(g.mean, 1.0, rtol=1e-15)


def test_gmu_needs_a_trajectory():
    with pytest.raises(ValueError):
        gmu_from_sample(np.zeros((0, 4)), 1.0, 1.0)


def test_degenerate_field_gives_free_law():
    eta = FreeLaw(LAW).sample(100, np.random.default_rng(1))
    g = GaussianFieldLaw(np.zeros(3), np.zeros((3, 3)))
    np.testing.assert_allclose(log_density_L(g, LAW, eta), 0.0, atol=1e-8)
    assert gamma_functional(eta, LAW, 0.0, 0.0) == pytest.approx(0.0, abs=1e-8)
    assert network_log_density(eta[:5], LAW, 0.0, 0.0) == pytest.approx(0.0, abs=1e-8)


def test_bad_covariance_reports_eigenvalues():
    g = GaussianFieldLaw(np.zeros(3), np.diag([1.0, -0.5, 1.0]))
    with pytest.raises(CovarianceError) as exc:
        log_density_L(g, LAW, np.zeros((2, 4)))
    assert exc.value.eigenvalues.min() < 0


def test_density_needs_noise():
    with pytest.raises(ValueError):
        TrajectoryLaw(sigma=0.0)


def test_propagator_density_normalized_and_reweights():
    rng = np.random.default_rng(2)
    g = GaussianFieldLaw(np.array([0.3, -0.2, 0.5]),
                         np.array([[0.5, 0.2, 0.1], [0.2, 0.6, 0.2], [0.1, 0.2, 0.4]]))
    target = PropagatedLaw(LAW, g)
    eta = FreeLaw(LAW).sample(10_000, rng)
    w = np.exp(target.log_density(eta))
    assert _within(w.mean(), 1.0, w.std(ddof=1) / np.sqrt(w.size))
    direct = target.sample(10_000, rng)
    for stat in (lambda e: e[:, -1], lambda e: e[:, 2] ** 2, lambda e: e[:, 1] * e[:, 3]):
        a, b = w * stat(eta), stat(direct)
        se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(a.size)
        assert _within(a.mean(), b.mean(), se)


def test_network_density_normalized_and_matches_simulation():
    N, T, R = 5, 3, 10_000
    Jbar = J2 = 0.3
    rng = np.random.default_rng(7)
    U = FreeLaw(LAW).sample(R * N, rng).reshape(R, N, T + 1)
    w = np.exp(network_log_density_batch(U, LAW, Jbar, J2))
    assert _within(w.mean(), 1.0, w.std(ddof=1) / np.sqrt(R))
    assert network_log_density(U[0], LAW, Jbar, J2) == pytest.approx(
        np.log(w[0]), rel=1e-10)
    cfg = NetworkConfig(N=N, T=T, theta=0.0, sigma=1.0, weights=WeightLaw(mean=Jbar, var=J2),
                        init=InitialLaw(0.0, 1.0), seed=7)
    direct = np.array([simulate(cfg, r).u for r in range(R)])
    for stat in (lambda u: u[:, :, -1].mean(axis=1), lambda u: (u[:, :, 2] ** 2).mean(axis=1),
                 lambda u: u[:, 0, 3] * u[:, 1, 3]):
        a, b = w * stat(U), stat(direct)
        se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(R)
        assert _within(a.mean(), b.mean(), se)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_gamma_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    eta = FreeLaw(LAW).sample(30, rng)
    perm = rng.permutation(30)
    assert gamma_functional(eta[perm], LAW, 0.7, 1.3) == pytest.approx(
        gamma_functional(eta, LAW, 0.7, 1.3), rel=1e-12, abs=1e-12)


def test_relative_entropy_of_free_law_vanishes():
    eta = FreeLaw(LAW).sample(1000, np.random.default_rng(3))
    est = relative_entropy_estimate(eta, FreeLaw(LAW))
    assert est.value == 0.0


def test_relative_entropy_nonnegative_over_random_laws():
    rng = np.random.default_rng(4)
    for _ in range(20):
        ref = FreeLaw(LAW).sample(50, rng) * rng.uniform(0.5, 2) + rng.normal()
        g = gmu_from_sample(ref, rng.normal(0, 1.5), rng.uniform(0.05, 2))
        target = PropagatedLaw(LAW, g)
        est = relative_entropy_estimate(target.sample(4000, rng), target)
        assert est.value > -3 * est.stderr
        assert est.value > 0  # coupled laws differ from P


def test_rate_function_vanishes_at_mean_field_law():
    rng = np.random.default_rng(5)
    target = meanfield_law(LAW, 0.3, 0.3)
    est = rate_function_estimate(target.sample(10_000, rng), target, 0.3, 0.3)
    assert abs(est.value) < 3 * est.stderr


def test_rate_function_positive_away_from_fixed_point():
    rng = np.random.default_rng(6)
    mf = meanfield_law(LAW, 0.3, 0.3)
    far = PropagatedLaw(LAW, GaussianFieldLaw(mf.g.mean + 1.5, mf.g.cov))
    est = rate_function_estimate(far.sample(10_000, rng), far, 0.3, 0.3)
    assert est.value > 3 * est.stderr


def test_unsupported_laws():
    with pytest.raises(UnsupportedLaw):
        relative_entropy_estimate(np.zeros((3, 4)), object())
    if_law = TrajectoryLaw(model=NeuronModel(ModelKind.INTEGRATE_FIRE), theta=1.0)
    with pytest.raises(UnsupportedLaw):
        meanfield_law(if_law, 0.3, 0.3)


def test_if_trajectory_law_inverts_dynamics():
    law = TrajectoryLaw(model=NeuronModel(ModelKind.INTEGRATE_FIRE, 0.5, -1.0), theta=1.0,
                        sigma=0.5, T=4, init=InitialLaw(0, 1))
    rng = np.random.default_rng(8)
    fields = rng.normal(size=(50, 4))
    noise = 0.5 * rng.normal(size=(50, 4))
    eta = law.run(rng.normal(size=50), fields, noise)
    np.testing.assert_allclose(law.phi(eta), fields + noise, atol=1e-12)


def test_finite_time_girsanov_identity():
    rng = np.random.default_rng(9)
    T, M = 3, 200_000
    alpha, K = 0.2, 0.5
    phi = lambda x: 0.5 * x  # noqa: E731
    psi = lambda x: np.tanh(2 * x) + 0.3  # noqa: E731

    def run(drift):
        x = np.empty((M, T + 1))
        x[:, 0] = rng.normal(size=M)
        for t in range(T):
            x[:, t + 1] = drift(x[:, t]) + alpha + np.sqrt(K) * rng.normal(size=M)
        return x

    p_paths, q_paths = run(phi), run(psi)
    w = np.exp(girsanov_log_density(p_paths[..., None], phi, psi, alpha, K))
    assert _within(w.mean(), 1.0, w.std(ddof=1) / np.sqrt(M))
    for stat in (lambda x: x[:, -1], lambda x: x[:, 2] ** 2, lambda x: x[:, 1] * x[:, 3]):
        a, b = w * stat(p_paths), stat(q_paths)
        se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(M)
        assert _within(a.mean(), b.mean(), se)


def test_girsanov_identity_trivial_when_drifts_agree():
    path = np.random.default_rng(0).normal(size=(10, 4))
    np.testing.assert_array_equal(
        girsanov_log_density(path[..., None], np.sin, np.sin, 0.0, 1.0), 0.0)
