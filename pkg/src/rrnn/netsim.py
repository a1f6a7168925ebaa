"""Finite-size discrete-time simulation of AF, BF and IF random networks."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ModelKind, NetworkConfig, NeuronModel, rng_stream, sample_weights


class SimulationError(FloatingPointError):
    def __init__(self, msg, step):
        super().__init__(f"{msg} at step {step}")
        self.step = step


def leak_map(model: NeuronModel, theta, v):
    """gamma * v inside (reset/gamma, theta), reset elsewhere."""
    v = np.asarray(v, dtype=float)
    inside = (v > model.reset / model.leak) & (v < theta)
    return np.where(inside, model.leak * v, model.reset)


def step_potentials(config: NetworkConfig, weights, u, noise, theta=None):
    """One update u(t) -> u(t+1) given the noise vector w(t+1).

    ``theta`` overrides the configured threshold; it may be a per-neuron array
    (used for block-structured networks).
    """
    th = config.theta if theta is None else theta
    field = weights @ config.transfer(u)
    out = field + noise - th
    if config.model.kind is ModelKind.INTEGRATE_FIRE:
        out += leak_map(config.model, th, u + th)
    return out


def run_dynamics(config: NetworkConfig, weights, u0, noise, theta=None):
    """Iterate the network from u0 with noise of shape (T, N); returns (N, T+1)."""
    T = noise.shape[0]
    u = np.empty((u0.size, T + 1))
    u[:, 0] = u0
    for t in range(T):
        nxt = step_potentials(config, weights, u[:, t], noise[t], theta)
        if not np.all(np.isfinite(nxt)):
            raise SimulationError("non-finite membrane potential", t + 1)
        u[:, t + 1] = nxt
    return u


@dataclass
class TrajectoryEnsemble:
    u: np.ndarray              # (N, T+1) membrane potentials
    config: NetworkConfig
    weights_id: tuple
    noise_id: tuple

    @property
    def activations(self):
        return self.config.transfer(self.u)


def draw_realization(config: NetworkConfig, realization=0):
    """Weights, initial condition and noise for one realization, each on its own stream."""
    N, T = config.N, config.T
    wid = ("weights", realization)
    nid = ("noise", realization)
    weights = sample_weights(config.weights, N, rng_stream(config.seed, *wid))
    u0 = config.init.sample(N, rng_stream(config.seed, "init", realization))
    noise = config.sigma * rng_stream(config.seed, *nid).standard_normal((T, N))
    return weights, u0, noise, wid, nid


def simulate(config: NetworkConfig, realization=0) -> TrajectoryEnsemble:
    weights, u0, noise, wid, nid = draw_realization(config, realization)
    u = run_dynamics(config, weights, u0, noise)
    return TrajectoryEnsemble(u, config, wid, nid)


@dataclass
class EmpiricalMoments:
    """Order parameters of one network trajectory.

    ``m``, ``q``, ``c`` are the activation-based field moments (index 0 is
    zero because the synaptic field starts at zero); ``pot_*`` are plain
    statistics of the potentials across neurons.
    """

    m: np.ndarray
    q: np.ndarray
    c: np.ndarray
    pot_mean: np.ndarray
    pot_var: np.ndarray
    pot_cov: np.ndarray


def empirical_moments(ensemble: TrajectoryEnsemble, Jbar=None, J2=None) -> EmpiricalMoments:
    cfg = ensemble.config
    Jbar = cfg.weights.mean if Jbar is None else Jbar
    J2 = cfg.weights.var if J2 is None else J2
    u = ensemble.u
    N, T1 = u.shape
    x = cfg.transfer(u)
    m = np.zeros(T1)
    m[1:] = Jbar * x[:, :-1].mean(axis=0)
    c = np.zeros((T1, T1))
    c[1:, 1:] = J2 * (x[:, :-1].T @ x[:, :-1]) / N
    du = u - u[0]  # shift first so that identical potentials give an exact zero
    du -= du.mean(axis=0)
    pot_cov = du.T @ du / N
    return EmpiricalMoments(m, np.diag(c).copy(), c, u.mean(axis=0), np.diag(pot_cov).copy(),
                            pot_cov)


class NoiseCoupling(str, enum.Enum):
    SAME = "same"
    INDEPENDENT = "independent"


@dataclass
class TwinRunResult:
    d12: np.ndarray   # mean squared gap between the replicas' potentials
    c12: np.ndarray   # field cross-covariance J2/N sum_j f(u1_j(t-1)) f(u2_j(t-1))
    first: np.ndarray
    second: np.ndarray


def twin_run(config: NetworkConfig, coupling=NoiseCoupling.INDEPENDENT, delta=0.0,
             realization=0) -> TwinRunResult:
    """Two replicas on one weight matrix, the second started delta-perturbed."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    coupling = NoiseCoupling(coupling)
    weights, u0, noise, _, _ = draw_realization(config, realization)
    gap = delta * rng_stream(config.seed, "gap", realization).standard_normal(config.N)
    if coupling is NoiseCoupling.SAME:
        noise2 = noise
    else:
        noise2 = config.sigma * rng_stream(config.seed, "noise2", realization).standard_normal(
            noise.shape)
    u1 = run_dynamics(config, weights, u0, noise)
    u2 = run_dynamics(config, weights, u0 + gap, noise2)
    d12 = ((u1 - u2) ** 2).mean(axis=0)
    f = config.transfer
    c12 = np.zeros(config.T + 1)
    c12[1:] = config.weights.var * (f(u1[:, :-1]) * f(u2[:, :-1])).mean(axis=0)
    return TwinRunResult(d12, c12, u1, u2)
