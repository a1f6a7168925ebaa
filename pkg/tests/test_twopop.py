import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrnn.core import InitialLaw
from rrnn.meanfield import MeanFieldParams, MomentSeries, propagate_moments
from rrnn.core import rng_stream
from rrnn.twopop import (EPS_Q, GDPoint, Regime, TwoPopParams, bifurcation_map,
                         block_order_parameters, classify_regime, gd_to_params,
                         propagate_two_pop, sample_block_weights, simulate_two_pop,
                         twin_two_pop)


def test_gd_table_at_zero_split():
    p = gd_to_params(GDPoint(1.0, 0.0))
    assert np.all(p.Jbar == 0.0)
    np.testing.assert_allclose(np.sqrt(p.J2).ravel(), [1.0, np.sqrt(2), 1.0, 0.0])
    np.testing.assert_array_equal(p.theta, [0.0, 0.3])


def test_gd_inhibitory_mean():
    assert gd_to_params(GDPoint(2.0, 1.0)).Jbar[0, 1] == -4.0


@given(st.floats(0.1, 10), st.floats(0, 3), st.floats(0, 3))
def test_gd_linear_in_split_constant_variance(g, d1, d2):
    a, b = gd_to_params(GDPoint(g, d1)), gd_to_params(GDPoint(g, d2))
    unit = gd_to_params(GDPoint(g, 1.0)).Jbar
    np.testing.assert_allclose(a.Jbar, d1 * unit, rtol=1e-14, atol=0)
    np.testing.assert_allclose(a.Jbar + b.Jbar, (d1 + d2) * unit, rtol=1e-14, atol=1e-300)
    np.testing.assert_array_equal(a.J2, b.J2)
    assert a.theta[1] == 0.3 and b.theta[1] == 0.3


def test_gd_point_validation():
    with pytest.raises(ValueError):
        GDPoint(0.0, 1.0)
    with pytest.raises(ValueError):
        GDPoint(1.0, -0.1)
    with pytest.raises(ValueError):
        TwoPopParams(lam=1.0)
    with pytest.raises(ValueError):
        TwoPopParams(J2=-np.ones((2, 2)))


def test_zero_coupling_gives_free_values():
    p = TwoPopParams(np.zeros((2, 2)), np.zeros((2, 2)), np.array([0.2, 0.7]), T=5)
    s = propagate_two_pop(p, InitialLaw(0.4, 1.0))
    for k, th in enumerate(p.theta):
        assert np.all(s[k].m == 0.0) and np.all(s[k].q == 0.0)
        assert np.all(s[k].pot_mean[1:] == -th)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 9), st.floats(-1, 1), st.floats(0, 1), st.floats(0.1, 0.9))
def test_symmetric_populations_coincide(jbar, j2, theta, sigma, lam):
    half = lambda v: np.full((2, 2), v / 2)  # noqa: E731
    p = TwoPopParams(half(jbar), half(j2), np.array([theta, theta]), sigma, T=15, lam=lam)
    a, b = propagate_two_pop(p, InitialLaw(0.1, 0.8), full_covariance=True)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.m, b.m)
    np.testing.assert_array_equal(a.c, b.c)
    one = propagate_moments(MeanFieldParams(jbar, j2, theta, sigma, T=15), InitialLaw(0.1, 0.8))
    np.testing.assert_allclose(a.q, one.q, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(a.c, one.c, rtol=1e-10, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 10), st.floats(0, 3), st.floats(0, 0.5))
def test_per_population_cauchy_schwarz(g, d, sigma):
    p = gd_to_params(GDPoint(g, d), sigma=sigma, T=12)
    for s in propagate_two_pop(p, InitialLaw(0, 1), full_covariance=True):
        assert np.all(s.q >= 0)
        assert np.all(np.abs(s.c) <= np.sqrt(np.outer(s.q, s.q)) + 1e-8)


@pytest.mark.parametrize("g,d", [(2.0, 1.0), (4.0, 0.5)])
def test_block_network_matches_mean_field(g, d):
    p = gd_to_params(GDPoint(g, d), sigma=0.1, T=20)
    q_mf = np.array([s.q for s in propagate_two_pop(p, InitialLaw(0, 1))])
    q_net = np.mean([block_order_parameters(p, *simulate_two_pop(p, 1000, InitialLaw(0, 1),
                                                                 seed=5, realization=r))
                     for r in range(10)], axis=0)
    assert np.all(np.abs(q_net[:, 1:] / q_mf[:, 1:] - 1) < 0.05)


def test_block_weights_scale_with_source_population():
    p = TwoPopParams(np.array([[1.0, -2.0], [3.0, 0.0]]), np.array([[1.0, 2.0], [0.5, 0.0]]),
                     np.zeros(2), lam=0.25)
    W, sizes = sample_block_weights(p, 2000, rng_stream(0))
    assert sizes == (500, 1500)
    b = np.cumsum((0,) + sizes)
    for k in range(2):
        for j in range(2):
            row_sums = W[b[k]:b[k + 1], b[j]:b[j + 1]].sum(axis=1)
            assert abs(row_sums.mean() - p.Jbar[k, j]) < 4 * np.sqrt(p.J2[k, j] / row_sums.size) + 1e-12
            assert row_sums.var() == pytest.approx(p.J2[k, j], rel=0.2, abs=1e-12)


def _series(q):
    q = np.asarray(q, dtype=float)
    z = np.zeros_like(q)
    return [MomentSeries(z, q, None, z, q), MomentSeries(z, q, None, z, q)]


T = 300
t = np.arange(T + 1)
STEADY = 0.4 * np.ones(T + 1)
WAVE = 0.4 + 0.1 * np.sin(2 * np.pi * t / 12.0)


@pytest.mark.parametrize("q,plateau,label", [
    (STEADY, 0.0, Regime.FIXED_POINT),
    (STEADY, 0.05, Regime.STATIONARY_CHAOS),
    (WAVE, 0.0, Regime.SYNC_OSCILLATION),
    (WAVE, 0.05, Regime.CYCLO_STATIONARY_CHAOS),
])
def test_classifier_on_synthetic_series(q, plateau, label):
    d12 = np.full((2, T + 1), plateau)
    r = classify_regime(_series(q), d12)
    assert r.label is label
    assert (r.osc_amplitude < EPS_Q) == (label in (Regime.FIXED_POINT, Regime.STATIONARY_CHAOS))


def test_classifier_refuses_to_guess():
    q = 0.4 + 0.05 * np.random.default_rng(0).standard_normal(T + 1)
    r = classify_regime(_series(q), np.zeros((2, T + 1)))
    assert r.label is Regime.UNCLASSIFIED
    assert r.peak_ratio < 10 and r.osc_amplitude > EPS_Q


def test_classifier_needs_long_series():
    with pytest.raises(ValueError):
        classify_regime(_series(STEADY[:150]), np.zeros((2, 150)))


def test_small_gain_is_fixed_point():
    p = gd_to_params(GDPoint(1.0, 1.0))
    tw = twin_two_pop(p, InitialLaw(0, 1))
    assert classify_regime(tw.first, tw.d12).label is Regime.FIXED_POINT


def test_map_records_cell_failures():
    cells = bifurcation_map([0.0, 1.0], [0.5], T=200)
    assert cells[0].regime is None and "g > 0" in cells[0].error
    assert cells[1].regime is not None and cells[1].error == ""


def test_zero_split_slice_is_monotone():
    cells = bifurcation_map(np.linspace(1, 10, 10), [0.0])
    labels = [c.regime.label for c in cells]
    assert labels[0] is Regime.FIXED_POINT and labels[-1] is Regime.STATIONARY_CHAOS
    first_chaos = labels.index(Regime.STATIONARY_CHAOS)
    assert all(lb is Regime.FIXED_POINT for lb in labels[:first_chaos])
    assert all(lb is Regime.STATIONARY_CHAOS for lb in labels[first_chaos:])
