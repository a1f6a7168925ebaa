"""One-population dynamic mean-field recursions and chaos diagnostics.

Field moments follow the convention that the synaptic field vanishes at t = 0,
so ``m[0] = q[0] = 0``.  For t >= 1 the membrane potential under the
mean-field law is Gaussian with mean ``m(t) - theta`` and variance
``q(t) + sigma**2``; at t = 0 it follows the initial law.

The scaled one-dimensional maps (``q_map``, ``covariance_map``) work in units
of ``J2``: q_scaled = q / J2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import InitialLaw, TransferFunction, TransferKind
from .quadrature import (QuadratureDomainError, integrate1, pair_expectation_batch,
                         rule_for_scale)

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, last):
        super().__init__(f"{msg} (last iterate {last!r})")
        self.last = last


@dataclass(frozen=True)
class MeanFieldParams:
    Jbar: float = 0.0
    J2: float = 1.0
    theta: float = 0.0
    sigma: float = 0.0
    gain: float = 1.0
    T: int = 20
    transfer: TransferKind = TransferKind.LOGISTIC

    def __post_init__(self):
        if self.J2 < 0 or self.sigma < 0:
            raise ValueError("J2 and sigma must be non-negative")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def f(self) -> TransferFunction:
        return TransferFunction(self.transfer, self.gain)


@dataclass
class MomentSeries:
    m: np.ndarray          # (T+1,) field mean
    q: np.ndarray          # (T+1,) field variance
    c: np.ndarray | None   # (T+1, T+1) field covariance, or None if not requested
    pot_mean: np.ndarray   # (T+1,) potential mean
    pot_var: np.ndarray    # (T+1,) potential variance

    @property
    def T(self):
        return self.m.size - 1


def _potential_cov(series_c, s_idx, t, sigma2, shared_noise=False):
    """Potential covariance between times s (array) and t under the mean-field law."""
    cov = np.where(s_idx >= 1, series_c[s_idx, t], 0.0) if t >= 1 else np.zeros(s_idx.shape)
    if shared_noise:
        cov = cov + np.where(s_idx >= 1, sigma2, 0.0)
    return cov


def default_rule(params: MeanFieldParams, init: InitialLaw = InitialLaw()):
    """Rule resolving the widest potential law the recursion can reach."""
    f_max = params.gain * np.sqrt(max(params.J2, 0.0) + params.sigma ** 2 + init.std ** 2)
    return rule_for_scale(f_max)


def propagate_moments(params: MeanFieldParams, init: InitialLaw = InitialLaw(),
                      rule=None, full_covariance=True) -> MomentSeries:
    T, f = params.T, params.f
    rule = rule or default_rule(params, init)
    s2 = params.sigma ** 2
    m = np.zeros(T + 1)
    q = np.zeros(T + 1)
    c = np.zeros((T + 1, T + 1)) if full_covariance else None
    pmean = np.empty(T + 1)
    pvar = np.empty(T + 1)
    pmean[0], pvar[0] = init.mean, init.std ** 2
    x, w = rule.nodes, rule.weights
    for t in range(T):
        fx = f(np.sqrt(pvar[t]) * x + pmean[t])
        m[t + 1] = params.Jbar * (w @ fx)
        q[t + 1] = params.J2 * (w @ fx ** 2)
        pmean[t + 1] = m[t + 1] - params.theta
        pvar[t + 1] = q[t + 1] + s2
        if c is None:
            continue
        c[t + 1, t + 1] = q[t + 1]
        if t == 0:
            continue
        s = np.arange(t)
        cov = _potential_cov(c, s, t, s2)
        try:
            e = pair_expectation_batch(pmean[s], pmean[t], pvar[s], pvar[t], cov, f, rule)
        except QuadratureDomainError as exc:
            raise QuadratureDomainError(f"covariance recursion at t={t}: {exc}") from exc
        c[s + 1, t + 1] = params.J2 * e
        c[t + 1, s + 1] = c[s + 1, t + 1]
    return MomentSeries(m, q, c, pmean, pvar)


def map_rule(J2, gain, q):
    """Rule for the scaled maps, where the logistic argument has spread J sqrt(q)."""
    return rule_for_scale(gain * np.sqrt(J2 * q))


def q_map(J2, theta, gain, q, rule=None):
    """Low-noise balanced recursion h(q) = E f(J sqrt(q) xi - theta)^2, scaled units."""
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    f = TransferFunction(TransferKind.LOGISTIC, gain)
    scale = np.sqrt(J2 * q)
    rule = rule or map_rule(J2, gain, q)
    return integrate1(rule, lambda xi: f(scale * xi - theta) ** 2)


class FixedPoint(NamedTuple):
    value: float
    converged: bool
    iterations: int
    residual: float


def fixed_point_q(J2, theta, gain=1.0, tol=1e-10, damping=0.5, max_iter=2000,
                  rule=None) -> FixedPoint:
    """Fixed point q* of the scaled map by damped Picard iteration.

    Falls back to bisection on [0, max(1, J2/2)] when Picard stalls.
    """
    if J2 <= 0:
        raise ValueError(f"J2 must be positive, got {J2}")
    rule = rule or map_rule(J2, gain, 1.0)  # h <= 1 bounds every iterate

    def h(v):
        return q_map(J2, theta, gain, v, rule)

    qv = h(0.0)
    for it in range(1, max_iter + 1):
        res = h(qv) - qv
        if abs(res) < tol:
            return FixedPoint(qv, True, it, abs(res))
        qv = max(qv + (1.0 - damping) * res, 0.0)

    log.debug("Picard stalled for J2=%g theta=%g; bisecting", J2, theta)
    lo, hi = 0.0, max(1.0, J2 / 2.0)
    g_lo, g_hi = h(lo) - lo, h(hi) - hi
    if g_lo * g_hi > 0:
        raise ConvergenceError("fixed point not bracketed", qv)
    for it in range(200):
        mid = 0.5 * (lo + hi)
        g_mid = h(mid) - mid
        if abs(g_mid) < tol:
            return FixedPoint(mid, True, max_iter + it + 1, abs(g_mid))
        if (g_mid > 0) == (g_lo > 0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    raise ConvergenceError("fixed point iteration did not converge", mid)


def covariance_map(J2, theta, gain, q, c, rule=None):
    """One step of the stationary scaled covariance recursion H(c) at fixed point q."""
    if abs(c) > q * (1 + 1e-12) + 1e-300:
        raise QuadratureDomainError(f"|c|={abs(c)!r} exceeds q={q!r}")
    c = float(np.clip(c, -q, q))
    rule = rule or map_rule(J2, gain, q)
    f = TransferFunction(TransferKind.LOGISTIC, gain)
    v = J2 * q
    return float(pair_expectation_batch(-theta, -theta, v, v, J2 * c, f, rule))


class Multiplier(NamedTuple):
    finite_difference: float
    analytic: float


def stability_multiplier(J2, theta, gain, q_star, rule=None, rel_step=1e-4) -> Multiplier:
    """Slope of H at c = q*.

    The primary value is a second-order one-sided difference (H is only
    defined for |c| <= q*). The analytic companion is J2 * E f'(X)^2 with
    X ~ N(-theta, J2 q*), which is the covariance derivative of E[f(X) f(Y)].
    """
    step = rel_step * q_star
    if not step > np.finfo(float).tiny or q_star - 2 * step == q_star:
        raise FloatingPointError(f"finite-difference step underflow at q*={q_star!r}")
    rule = rule or map_rule(J2, gain, q_star)
    H = lambda c: covariance_map(J2, theta, gain, q_star, c, rule)  # noqa: E731
    fd = (3 * H(q_star) - 4 * H(q_star - step) + H(q_star - 2 * step)) / (2 * step)
    f = TransferFunction(TransferKind.LOGISTIC, gain)
    scale = np.sqrt(J2 * q_star)
    analytic = J2 * integrate1(rule, lambda xi: f.derivative(scale * xi - theta) ** 2)
    return Multiplier(float(fd), float(analytic))


class StationaryCovariance(NamedTuple):
    value: float
    converged: bool
    iterations: int


def stationary_covariance(J2, theta, gain, q_star, tol=1e-12, damping=0.5,
                          max_iter=50000, rule=None) -> StationaryCovariance:
    """Limit c* of the damped H iteration started just below q*."""
    rule = rule or map_rule(J2, gain, q_star)
    cv = q_star * (1 - 1e-6)
    for it in range(1, max_iter + 1):
        new = damping * cv + (1 - damping) * covariance_map(J2, theta, gain, q_star, cv, rule)
        new = min(new, q_star)  # H(q*) exceeds q* by the fixed-point residual
        if abs(new - cv) < tol:
            return StationaryCovariance(new, True, it)
        cv = new
    return StationaryCovariance(cv, False, max_iter)


@dataclass
class TwinSeries:
    c12: np.ndarray   # field cross-covariance
    d12: np.ndarray   # mean quadratic distance of potentials
    first: MomentSeries
    second: MomentSeries


def cross_covariance_series(params: MeanFieldParams, init: InitialLaw = InitialLaw(),
                            delta=0.0, shared_noise=False, rule=None) -> TwinSeries:
    """Mean-field prediction for two replicas on the same couplings.

    Replica 2 starts from u(0) + delta * xi with xi independent standard
    normal; ``shared_noise`` toggles whether both replicas see the same
    synaptic noise.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    T, f = params.T, params.f
    s2 = params.sigma ** 2
    rule = rule or default_rule(params, InitialLaw(init.mean, float(np.hypot(init.std, delta))))
    one = propagate_moments(params, init, rule, full_covariance=False)
    init2 = InitialLaw(init.mean, float(np.hypot(init.std, delta)))
    two = propagate_moments(params, init2, rule, full_covariance=False) if delta > 0 else one
    c12 = np.zeros(T + 1)
    d12 = np.zeros(T + 1)
    pcov = init.std ** 2
    for t in range(T + 1):
        if t >= 1:
            pcov = c12[t] + (s2 if shared_noise else 0.0)
        d12[t] = (one.pot_var[t] + two.pot_var[t] - 2 * pcov
                  + (one.pot_mean[t] - two.pot_mean[t]) ** 2)
        if t == T:
            break
        try:
            e = pair_expectation_batch(one.pot_mean[t], two.pot_mean[t], one.pot_var[t],
                                       two.pot_var[t], pcov, f, rule)
        except QuadratureDomainError as exc:
            raise QuadratureDomainError(f"cross-covariance recursion at t={t}: {exc}") from exc
        c12[t + 1] = params.J2 * float(e)
    return TwinSeries(c12, np.maximum(d12, 0.0), one, two)


@dataclass
class SurfaceCell:
    J2: float
    theta: float
    q_star: float
    c_star: float
    qc_gap: float
    multiplier: float
    converged: bool


def _surface_cell(args):
    J2, theta, gain = args
    try:
        fp = fixed_point_q(J2, theta, gain)
    except ConvergenceError as exc:
        return SurfaceCell(J2, theta, exc.last, np.nan, np.nan, np.nan, False)
    mult = stability_multiplier(J2, theta, gain, fp.value)
    cs = stationary_covariance(J2, theta, gain, fp.value)
    return SurfaceCell(J2, theta, fp.value, cs.value, fp.value - cs.value,
                       mult.finite_difference, fp.converged and cs.converged)


def chaos_surface(J2_grid, theta_grid, gain=1.0, workers=1):
    """Fixed point, stationary covariance and multiplier over a (J2, theta) grid.

    Rows are ordered J2-major. Non-convergence is recorded per cell.
    """
    cells = [(float(a), float(b), gain) for a in J2_grid for b in theta_grid]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_surface_cell, cells, chunksize=4))
    return [_surface_cell(c) for c in cells]
