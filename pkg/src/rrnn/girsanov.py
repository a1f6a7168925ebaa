"""Trajectory-law densities for small networks.

A law on trajectories is always represented by a finite sample of shape
(M, T+1). The free law P runs every neuron on noise alone; L(mu) adds a
Gaussian field drawn from g_mu. All densities are taken with respect to P.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import InitialLaw, ModelKind, NeuronModel, TransferFunction
from .meanfield import MeanFieldParams, propagate_moments
from .netsim import leak_map
from .quadrature import MCEstimate

EIG_FLOOR = -1e-10


class CovarianceError(np.linalg.LinAlgError):
    def __init__(self, msg, eigenvalues):
        super().__init__(f"{msg}; eigenvalues {np.array2string(eigenvalues, precision=3)}")
        self.eigenvalues = eigenvalues


class UnsupportedLaw(TypeError):
    pass


@dataclass(frozen=True)
class TrajectoryLaw:
    """Everything needed to turn a trajectory into its driving noise."""

    model: NeuronModel = field(default_factory=NeuronModel)
    init: InitialLaw = field(default_factory=InitialLaw)
    theta: float = 0.0
    sigma: float = 1.0
    T: int = 3
    gain: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("trajectory densities need sigma > 0")

    @property
    def transfer(self) -> TransferFunction:
        return TransferFunction(self.model.default_transfer.kind, self.gain)

    def drift(self, prev):
        """Deterministic part of u(t+1) given u(t), without field or noise."""
        if self.model.kind is ModelKind.INTEGRATE_FIRE:
            return leak_map(self.model, self.theta, prev + self.theta) - self.theta
        return np.full_like(prev, -self.theta)

    def phi(self, eta):
        """Noise plus field, Phi_{t+1}(eta) for t = 0..T-1; shape (..., T)."""
        eta = np.asarray(eta, dtype=float)
        return eta[..., 1:] - self.drift(eta[..., :-1])

    def run(self, u0, fields, noise):
        u = np.empty(u0.shape + (self.T + 1,))
        u[..., 0] = u0
        for t in range(self.T):
            u[..., t + 1] = self.drift(u[..., t]) + fields[..., t] + noise[..., t]
        return u


@dataclass
class GaussianFieldLaw:
    mean: np.ndarray   # (T,) field mean at t = 1..T
    cov: np.ndarray    # (T, T)

    def check(self):
        ev = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        if ev.min() < EIG_FLOOR * max(1.0, ev.max()):
            raise CovarianceError("field covariance is not positive semidefinite", ev)
        return ev

    def sample(self, M, rng):
        ev, vec = np.linalg.eigh(0.5 * (self.cov + self.cov.T))
        root = vec * np.sqrt(np.clip(ev, 0.0, None))
        return self.mean + rng.standard_normal((M, self.mean.size)) @ root.T


def gmu_from_sample(sample, Jbar, J2, transfer: TransferFunction = TransferFunction()):
    """Plug-in g_mu: m(t+1) = Jbar E f(eta(t)), c(s+1, t+1) = J2 E f(eta(s)) f(eta(t))."""
    x = transfer(np.atleast_2d(sample)[:, :-1])
    M = x.shape[0]
    if M < 1:
        raise ValueError("empty sample")
    return GaussianFieldLaw(Jbar * x.mean(axis=0), J2 * (x.T @ x) / M)


def log_density_L(g: GaussianFieldLaw, law: TrajectoryLaw, eta):
    """log dL(mu)/dP at each trajectory in ``eta``.

    The Gaussian integral over the field equals the ratio of the densities of
    Phi under N(m, sigma^2 I + C) and N(0, sigma^2 I).
    """
    g.check()
    phi = law.phi(eta)
    s2 = law.sigma ** 2
    T = phi.shape[-1]
    S = s2 * np.eye(T) + 0.5 * (g.cov + g.cov.T) + 1e-10 * np.eye(T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("sigma^2 I + C not positive definite", np.linalg.eigvalsh(S)) from exc
    r = np.linalg.solve(L, (phi - g.mean).reshape(-1, T).T)
    quad_coupled = np.sum(r * r, axis=0)
    logdet = 2 * np.sum(np.log(np.diag(L)))
    quad_free = np.sum(phi.reshape(-1, T) ** 2, axis=1) / s2
    out = -0.5 * quad_coupled - 0.5 * logdet + 0.5 * quad_free + 0.5 * T * np.log(s2)
    return out.reshape(phi.shape[:-1])


def gamma_functional(sample, law: TrajectoryLaw, Jbar, J2):
    """Gamma(mu) = mean over the sample of log dL(mu)/dP, with g_mu from the same sample."""
    sample = np.atleast_2d(sample)
    g = gmu_from_sample(sample, Jbar, J2, law.transfer)
    return float(log_density_L(g, law, sample).mean())


def network_log_density(u, law: TrajectoryLaw, Jbar, J2):
    """log dQ_N / dP^{(x)N}(u) = N Gamma(mu_u) for u of shape (N, T+1)."""
    u = np.asarray(getattr(u, "u", u))
    return u.shape[0] * gamma_functional(u, law, Jbar, J2)


def network_log_density_batch(U, law: TrajectoryLaw, Jbar, J2):
    """Vectorized N Gamma(mu_u) over replicas U of shape (R, N, T+1)."""
    U = np.asarray(U, dtype=float)
    R, N, T1 = U.shape
    T = T1 - 1
    x = law.transfer(U[:, :, :-1])
    mean = Jbar * x.mean(axis=1)                               # (R, T)
    cov = J2 * np.einsum("rns,rnt->rst", x, x) / N             # (R, T, T)
    s2 = law.sigma ** 2
    S = cov + (s2 + 1e-10) * np.eye(T)
    L = np.linalg.cholesky(S)
    phi = law.phi(U)                                           # (R, N, T)
    r = np.linalg.solve(L[:, None], (phi - mean[:, None])[..., None])[..., 0]
    logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    per = (-0.5 * np.sum(r * r, axis=-1) - 0.5 * logdet[:, None]
           + 0.5 * np.sum(phi * phi, axis=-1) / s2 + 0.5 * T * np.log(s2))
    return per.sum(axis=1)


class FreeLaw:
    """P itself: noise-driven trajectories, log-density zero."""

    def __init__(self, law: TrajectoryLaw):
        self.law = law

    def sample(self, M, rng):
        lw = self.law
        u0 = lw.init.sample(M, rng)
        noise = lw.sigma * rng.standard_normal((M, lw.T))
        return lw.run(u0, np.zeros((M, lw.T)), noise)

    def log_density(self, eta):
        return np.zeros(np.asarray(eta).shape[:-1])


class PropagatedLaw(FreeLaw):
    """L(mu) for a given field law g_mu."""

    def __init__(self, law: TrajectoryLaw, g: GaussianFieldLaw):
        super().__init__(law)
        self.g = g
        g.check()

    def sample(self, M, rng):
        lw = self.law
        u0 = lw.init.sample(M, rng)
        fields = self.g.sample(M, rng)
        noise = lw.sigma * rng.standard_normal((M, lw.T))
        return lw.run(u0, fields, noise)

    def log_density(self, eta):
        return log_density_L(self.g, self.law, eta)


def meanfield_law(law: TrajectoryLaw, Jbar, J2) -> PropagatedLaw:
    """The mean-field fixed point mu_T = L(mu_T) for formal (AF/BF) neurons."""
    if law.model.kind is ModelKind.INTEGRATE_FIRE:
        raise UnsupportedLaw("the Gaussian moment recursion covers formal neurons only")
    params = MeanFieldParams(Jbar, J2, law.theta, law.sigma, law.gain, law.T,
                             law.transfer.kind)
    ser = propagate_moments(params, law.init)
    return PropagatedLaw(law, GaussianFieldLaw(ser.m[1:].copy(), ser.c[1:, 1:].copy()))


def _mc(vals):
    vals = np.asarray(vals, dtype=float)
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)))


def relative_entropy_estimate(sample, target) -> MCEstimate:
    """I(nu, P) = E_nu log dnu/dP, for a sample drawn from ``target``."""
    if not isinstance(target, FreeLaw):
        raise UnsupportedLaw(f"no density against P for {type(target).__name__}")
    return _mc(target.log_density(sample))


def rate_function_estimate(sample, target: PropagatedLaw, Jbar, J2) -> MCEstimate:
    """H = I - Gamma on one sample, with its paired standard error.

    I uses the target's own field law, Gamma the plug-in field of the sample.
    """
    sample = np.atleast_2d(sample)
    g = gmu_from_sample(sample, Jbar, J2, target.law.transfer)
    diff = target.log_density(sample) - log_density_L(g, target.law, sample)
    return _mc(diff)


def girsanov_log_density(path, phi, psi, alpha, K):
    """log dQ/dP for x(t+1) = phi(x(t)) + w vs y(t+1) = psi(y(t)) + w, w ~ N(alpha, K).

    ``path`` has shape (..., T+1, d); ``phi`` and ``psi`` act on (..., d) arrays.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    Kinv = np.linalg.inv(np.atleast_2d(np.asarray(K, dtype=float)))
    prev, nxt = path[..., :-1, :], path[..., 1:, :]
    base = phi(prev)
    delta = psi(prev) - base
    resid = nxt - alpha - base
    term = (-0.5 * np.einsum("...i,ij,...j->...", delta, Kinv, delta)
            + np.einsum("...i,ij,...j->...", delta, Kinv, resid))
    return term.sum(axis=-1)
