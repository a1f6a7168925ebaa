"""Integration against the standard Gaussian measure in one and two dimensions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import roots_hermitenorm


class QuadratureDomainError(ValueError):
    pass


class NonFiniteIntegrand(FloatingPointError):
    pass


class MCEstimate(NamedTuple):
    value: float
    stderr: float


@lru_cache(maxsize=None)
def _gh_table(n: int):
    x, w = roots_hermitenorm(n)
    keep = w > 0  # tail weights underflow for large n
    x, w = x[keep], w[keep] / w[keep].sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class GaussHermite:
    """Probabilists' Gauss-Hermite rule with weights normalized to one."""

    order: int = 64

    @property
    def nodes(self):
        return _gh_table(self.order)[0]

    @property
    def weights(self):
        return _gh_table(self.order)[1]


@lru_cache(maxsize=None)
def _trapezoid_table(step: float, half_width: float):
    n = int(np.ceil(half_width / step))
    x = step * np.arange(-n, n + 1)
    w = np.exp(-0.5 * x * x)
    w /= w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class GaussianTrapezoid:
    """Uniform-grid trapezoid rule for the Gaussian weight on [-half_width, half_width].

    For integrands analytic in a strip of half-width d (the logistic f(s x)
    has d = pi / s) the error decays like exp(-2 pi d / step), so the node
    count grows linearly with the steepness s. Gauss-Hermite needs roughly
    quadratic growth for the same accuracy.
    """

    step: float = 0.5
    half_width: float = 9.0

    @property
    def nodes(self):
        return _trapezoid_table(self.step, self.half_width)[0]

    @property
    def weights(self):
        return _trapezoid_table(self.step, self.half_width)[1]


@dataclass
class MonteCarlo:
    samples: int
    rng: np.random.Generator


NODE_RULES = (GaussHermite, GaussianTrapezoid)
DEFAULT_RULE = GaussHermite(64)


def rule_for_scale(scale):
    """Deterministic rule accurate to ~1e-13 for bounded f(scale * xi + b), f a unit-width sigmoid."""
    if scale <= 1.0:
        return DEFAULT_RULE
    return GaussianTrapezoid(0.5 / np.ceil(scale))


def _check_finite(vals, where):
    bad = ~np.isfinite(vals)
    if bad.any():
        i = np.flatnonzero(bad.ravel())[0]
        raise NonFiniteIntegrand(f"non-finite integrand value at node {np.ravel(where)[i]!r}")


def integrate1(rule, phi):
    """Approximate the expectation of phi(xi), xi standard normal.

    ``phi`` must be vectorized. Gauss-Hermite returns a float; Monte Carlo
    returns an ``MCEstimate``.
    """
    if isinstance(rule, NODE_RULES):
        x = rule.nodes
        vals = np.asarray(phi(x), dtype=float)
        _check_finite(vals, x)
        return float(rule.weights @ vals)
    xi = rule.rng.standard_normal(rule.samples)
    vals = np.asarray(phi(xi), dtype=float)
    _check_finite(vals, xi)
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)))


def integrate2(rule, phi):
    """Approximate E[phi(xi1, xi2)] for independent standard normals."""
    if isinstance(rule, NODE_RULES):
        x, w = rule.nodes, rule.weights
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        vals = np.asarray(phi(x1, x2), dtype=float)
        _check_finite(vals, x1)
        return float(w @ vals @ w)
    xi = rule.rng.standard_normal((2, rule.samples))
    vals = np.asarray(phi(xi[0], xi[1]), dtype=float)
    _check_finite(vals, xi[0])
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)))


_CLAMP_EPS = 1e-12
_ROUNDOFF = 1e-9


def _conditional_scale(var_x, var_y, cov):
    """Return (a, b) with X - E[X] = a xi1 + b xi2 for a standardized Y-part xi2."""
    bound = np.sqrt(var_x * var_y)
    if abs(cov) > bound:
        if abs(cov) - bound > _ROUNDOFF * max(bound, 1.0):
            raise QuadratureDomainError(
                f"covariance {cov!r} violates Cauchy-Schwarz for variances {var_x!r}, {var_y!r}")
        cov = np.sign(cov) * max(bound - _CLAMP_EPS, 0.0)
    disc = max(var_x * var_y - cov * cov, 0.0)
    return np.sqrt(disc / var_y), cov / np.sqrt(var_y)


def gaussian_pair_expectation(mean_x, mean_y, var_x, var_y, cov, g1, g2, rule=DEFAULT_RULE):
    """E[g1(X) g2(Y)] for a jointly Gaussian pair with the given moments.

    X is decomposed onto an independent part and the standardized Y. A
    vanishing variance on either side collapses that variable to its mean.
    """
    if var_x < 0 or var_y < 0:
        raise QuadratureDomainError(f"negative variance ({var_x!r}, {var_y!r})")
    if var_y <= 0.0:
        c_y = float(np.asarray(g2(np.float64(mean_y))))
        return c_y * integrate1(rule, lambda xi: g1(np.sqrt(var_x) * xi + mean_x))
    if var_x <= 0.0:
        c_x = float(np.asarray(g1(np.float64(mean_x))))
        return c_x * integrate1(rule, lambda xi: g2(np.sqrt(var_y) * xi + mean_y))
    a, b = _conditional_scale(var_x, var_y, cov)
    sy = np.sqrt(var_y)
    if isinstance(rule, NODE_RULES):
        x, w = rule.nodes, rule.weights
        gy = np.asarray(g2(sy * x + mean_y), dtype=float)
        gx = np.asarray(g1(a * x[:, None] + b * x[None, :] + mean_x), dtype=float)
        _check_finite(gx, x)
        _check_finite(gy, x)
        return float(w @ gx @ (w * gy))
    return integrate2(rule, lambda x1, x2: g1(a * x1 + b * x2 + mean_x) * g2(sy * x2 + mean_y))


def pair_expectation_batch(mean_x, mean_y, var_x, var_y, cov, g, rule=DEFAULT_RULE):
    """Vectorized E[g(X) g(Y)] over arrays of moment tuples (Gauss-Hermite only).

    Used by the moment recursions, where many (s, t) pairs share one transfer
    function. Degenerate variances are handled like the scalar version.
    """
    mean_x, mean_y, var_x, var_y, cov = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean_x, mean_y, var_x, var_y, cov)))
    bound = np.sqrt(var_x * var_y)
    over = np.abs(cov) - bound
    if np.any(over > _ROUNDOFF * np.maximum(bound, 1.0)):
        k = int(np.argmax(over))
        raise QuadratureDomainError(
            f"covariance {cov.flat[k]!r} violates Cauchy-Schwarz for variances "
            f"{var_x.flat[k]!r}, {var_y.flat[k]!r}")
    cov = np.clip(cov, -np.maximum(bound - _CLAMP_EPS, 0), np.maximum(bound - _CLAMP_EPS, 0))
    safe_vy = np.where(var_y > 0, var_y, 1.0)
    b = np.where(var_y > 0, cov / np.sqrt(safe_vy), 0.0)
    a = np.where(var_y > 0, np.sqrt(np.maximum(var_x * var_y - cov * cov, 0.0) / safe_vy),
                 np.sqrt(var_x))
    sy = np.sqrt(var_y)
    x, w = rule.nodes, rule.weights
    gy = g(sy[..., None] * x + mean_y[..., None])                       # (..., n)
    arg = (a[..., None, None] * x[:, None] + b[..., None, None] * x[None, :]
           + mean_x[..., None, None])                                  # (..., n1, n2)
    gx = g(arg)
    inner = np.einsum("...ij,i->...j", gx, w)
    out = np.einsum("...j,...j,j->...", inner, gy, w)
    if not np.all(np.isfinite(out)):
        raise NonFiniteIntegrand("non-finite pair expectation")
    return out
