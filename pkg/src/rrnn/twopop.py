"""Two-population mean-field dynamics, (g, d) parameterization and regime labels.

Block statistics ``Jbar[k, j]``, ``J2[k, j]`` describe couplings from
population j onto population k. The mean-field maps carry no population
fractions; the finite-size block simulator reproduces them by drawing block
(k, j) entries from N(Jbar[k, j] / N_j, J2[k, j] / N_j).

Population k's potential is its field minus ``theta_scale * theta[k]``.
The (g, d) family keeps the thresholds inside the gain, f(g (h - theta)),
so it sets ``theta_scale = g`` next to its g-scaled couplings.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import InitialLaw, NetworkConfig, TransferFunction, TransferKind, rng_stream
from .meanfield import MomentSeries
from .netsim import run_dynamics
from .quadrature import QuadratureDomainError, pair_expectation_batch, rule_for_scale

INHIBITORY_THRESHOLD = 0.3


@dataclass(frozen=True)
class TwoPopParams:
    Jbar: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    J2: np.ndarray = field(default_factory=lambda: np.ones((2, 2)))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sigma: float = 0.0
    gain: float = 1.0
    T: int = 300
    lam: float = 0.5
    theta_scale: float = 1.0

    def __post_init__(self):
        for name in ("Jbar", "J2", "theta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.Jbar.shape != (2, 2) or self.J2.shape != (2, 2) or self.theta.shape != (2,):
            raise ValueError("two-population parameters need 2x2 blocks and 2 thresholds")
        if np.any(self.J2 < 0):
            raise ValueError("block variances must be non-negative")
        if not self.theta_scale > 0:
            raise ValueError(f"theta_scale must be positive, got {self.theta_scale}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"population fraction must lie in (0, 1), got {self.lam}")

    @property
    def f(self):
        return TransferFunction(TransferKind.LOGISTIC, self.gain)

    @property
    def offsets(self):
        return self.theta_scale * self.theta


@dataclass(frozen=True)
class GDPoint:
    g: float
    d: float

    def __post_init__(self):
        if not self.g > 0 or self.d < 0:
            raise ValueError(f"need g > 0 and d >= 0, got {self}")


def gd_to_params(point: GDPoint, sigma=0.0, T=300, gain=1.0, lam=0.5) -> TwoPopParams:
    """Excitatory (1) / inhibitory (2) blocks scaled by nonlinearity g and split d."""
    g, d = point.g, point.d
    Jbar = np.array([[g * d, -2 * g * d], [g * d, 0.0]])
    J = np.array([[g, np.sqrt(2) * g], [g, 0.0]])
    return TwoPopParams(Jbar, J ** 2, np.array([0.0, INHIBITORY_THRESHOLD]), sigma, gain, T, lam,
                        theta_scale=g)


def _default_rule(params, inits):
    spread = np.sqrt(params.J2.sum(axis=1).max() + params.sigma ** 2
                     + max(i.std for i in inits) ** 2)
    return rule_for_scale(params.gain * spread)


def _as_inits(init):
    if isinstance(init, InitialLaw):
        return (init, init)
    return tuple(init)


def propagate_two_pop(params: TwoPopParams, init=InitialLaw(), rule=None,
                      full_covariance=False) -> list[MomentSeries]:
    """Forward recursion of (m_k, q_k[, c_k]) for both populations."""
    inits = _as_inits(init)
    rule = rule or _default_rule(params, inits)
    T, f = params.T, params.f
    s2 = params.sigma ** 2
    x, w = rule.nodes, rule.weights
    m = np.zeros((2, T + 1))
    q = np.zeros((2, T + 1))
    c = np.zeros((2, T + 1, T + 1)) if full_covariance else None
    pm = np.empty((2, T + 1))
    pv = np.empty((2, T + 1))
    for k in range(2):
        pm[k, 0], pv[k, 0] = inits[k].mean, inits[k].std ** 2
    for t in range(T):
        fx = f(np.sqrt(pv[:, t, None]) * x + pm[:, t, None])   # (2, n)
        ef, ef2 = fx @ w, fx ** 2 @ w
        m[:, t + 1] = params.Jbar @ ef
        q[:, t + 1] = params.J2 @ ef2
        pm[:, t + 1] = m[:, t + 1] - params.offsets
        pv[:, t + 1] = q[:, t + 1] + s2
        if c is None:
            continue
        c[:, t + 1, t + 1] = q[:, t + 1]
        if t == 0:
            continue
        s = np.arange(t)
        src = np.empty((2, t))
        for j in range(2):
            cov = np.where(s >= 1, c[j, s, t], 0.0)
            try:
                src[j] = pair_expectation_batch(pm[j, s], pm[j, t], pv[j, s], pv[j, t], cov, f, rule)
            except QuadratureDomainError as exc:
                raise QuadratureDomainError(f"population {j + 1} at t={t}: {exc}") from exc
        c[:, s + 1, t + 1] = params.J2 @ src
        c[:, t + 1, s + 1] = c[:, s + 1, t + 1]
    return [MomentSeries(m[k], q[k], None if c is None else c[k], pm[k], pv[k]) for k in range(2)]


@dataclass
class TwoPopTwin:
    c12: np.ndarray   # (2, T+1)
    d12: np.ndarray   # (2, T+1)
    first: list
    second: list


def twin_two_pop(params: TwoPopParams, init=InitialLaw(), delta=1e-3, shared_noise=False,
                 rule=None) -> TwoPopTwin:
    """Replica cross-covariance recursion applied per population."""
    inits = _as_inits(init)
    inits2 = tuple(InitialLaw(i.mean, float(np.hypot(i.std, delta))) for i in inits)
    rule = rule or _default_rule(params, inits2)
    one = propagate_two_pop(params, inits, rule)
    two = propagate_two_pop(params, inits2, rule) if delta > 0 else one
    T, f = params.T, params.f
    s2 = params.sigma ** 2
    c12 = np.zeros((2, T + 1))
    d12 = np.zeros((2, T + 1))
    pcov = np.array([i.std ** 2 for i in inits])
    for t in range(T + 1):
        if t >= 1:
            pcov = c12[:, t] + (s2 if shared_noise else 0.0)
        for k in range(2):
            d12[k, t] = (one[k].pot_var[t] + two[k].pot_var[t] - 2 * pcov[k]
                         + (one[k].pot_mean[t] - two[k].pot_mean[t]) ** 2)
        if t == T:
            break
        e = pair_expectation_batch(np.array([one[0].pot_mean[t], one[1].pot_mean[t]]),
                                   np.array([two[0].pot_mean[t], two[1].pot_mean[t]]),
                                   np.array([one[0].pot_var[t], one[1].pot_var[t]]),
                                   np.array([two[0].pot_var[t], two[1].pot_var[t]]),
                                   pcov, f, rule)
        c12[:, t + 1] = params.J2 @ e
    return TwoPopTwin(c12, np.maximum(d12, 0.0), one, two)


class Regime(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    SYNC_OSCILLATION = "SynchronousOscillation"
    STATIONARY_CHAOS = "StationaryChaos"
    CYCLO_STATIONARY_CHAOS = "CycloStationaryChaos"
    UNCLASSIFIED = "Unclassified"


@dataclass
class RegimeLabel:
    label: Regime
    osc_amplitude: float     # max over populations of (max - min) / mean of q_k on the window
    d12_plateau: float       # max over populations of the window mean of d12_k
    peak_ratio: float        # dominant spectral peak over median background power
    q_star: tuple            # window means of q_1, q_2


EPS_Q = 1e-4
EPS_D_REL = 1e-3
PEAK_RATIO = 10.0


def _peak_ratio(series):
    x = series - series.mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    power = power[1:]
    if power.size < 3 or not np.any(power > 0):
        return 0.0
    k = int(np.argmax(power))
    background = np.median(np.delete(power, k))
    if background <= 0:
        return np.inf
    return float(power[k] / background)


def classify_regime(series, d12, burn_in=100, window=100) -> RegimeLabel:
    """Label a two-population run from its q_k(t) and replica distance d12_k(t).

    ``series`` is the per-population MomentSeries list, ``d12`` an array of
    shape (2, T+1). Needs T >= burn_in + window. The last ``window`` steps
    give the amplitude and the distance plateau; everything after burn-in
    feeds the spectrum.
    """
    q = np.array([s.q for s in series])
    T = q.shape[1] - 1
    if T < burn_in + window:
        raise ValueError(f"series too short: T={T} < burn_in + window = {burn_in + window}")
    tail = q[:, -window:]
    qmean = tail.mean(axis=1)
    amp = float(np.max((tail.max(axis=1) - tail.min(axis=1)) / np.maximum(qmean, 1e-300)))
    plateau = float(np.max(np.asarray(d12)[:, -window:].mean(axis=1)))
    ratio = max(_peak_ratio(q[k, burn_in:]) for k in range(2))
    chaotic = plateau > EPS_D_REL * float(qmean.max())
    settled = amp < EPS_Q
    periodic = (not settled) and ratio > PEAK_RATIO
    if settled:
        label = Regime.STATIONARY_CHAOS if chaotic else Regime.FIXED_POINT
    elif periodic:
        label = Regime.CYCLO_STATIONARY_CHAOS if chaotic else Regime.SYNC_OSCILLATION
    else:
        label = Regime.UNCLASSIFIED
    return RegimeLabel(label, amp, plateau, ratio, tuple(float(v) for v in qmean))


@dataclass
class MapCell:
    g: float
    d: float
    regime: RegimeLabel | None
    error: str = ""


DEFAULT_INIT = InitialLaw(0.0, 1.0)


def _map_cell(args):
    g, d, T, sigma, delta = args
    try:
        params = gd_to_params(GDPoint(g, d), sigma=sigma, T=T)
        twin = twin_two_pop(params, DEFAULT_INIT, delta=delta)
        return MapCell(g, d, classify_regime(twin.first, twin.d12))
    except (ValueError, FloatingPointError) as exc:
        return MapCell(g, d, None, str(exc))


def bifurcation_map(g_grid, d_grid, T=300, sigma=0.0, delta=1e-3, workers=1):
    """Regime label per (g, d) cell, g-major order; failures are recorded per cell."""
    cells = [(float(g), float(d), T, sigma, delta) for g in g_grid for d in d_grid]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_map_cell, cells, chunksize=2))
    return [_map_cell(c) for c in cells]


def sample_block_weights(params: TwoPopParams, N, rng):
    """Dense N x N matrix whose (k, j) block has entries N(Jbar/N_j, J2/N_j)."""
    N1 = int(round(params.lam * N))
    sizes = (N1, N - N1)
    if min(sizes) < 1:
        raise ValueError(f"population sizes {sizes} must both be >= 1")
    bounds = np.cumsum((0,) + sizes)
    W = np.empty((N, N))
    for k in range(2):
        for j in range(2):
            rows = slice(bounds[k], bounds[k + 1])
            cols = slice(bounds[j], bounds[j + 1])
            nj = sizes[j]
            W[rows, cols] = (params.Jbar[k, j] / nj
                             + np.sqrt(params.J2[k, j] / nj) * rng.standard_normal((sizes[k], nj)))
    return W, sizes


def simulate_two_pop(params: TwoPopParams, N, init=InitialLaw(), seed=0, realization=0):
    """Finite-size block network; returns (u, sizes) with u of shape (N, T+1)."""
    W, sizes = sample_block_weights(params, N, rng_stream(seed, "block-weights", realization))
    theta = np.repeat(params.offsets, sizes)
    cfg = NetworkConfig(N=N, T=params.T, theta=0.0, sigma=params.sigma, gain=params.gain,
                        seed=seed)
    inits = _as_inits(init)
    u0 = np.concatenate([inits[k].sample(sizes[k], rng_stream(seed, "block-init", realization, k))
                         for k in range(2)])
    noise = params.sigma * rng_stream(seed, "block-noise", realization).standard_normal(
        (params.T, N))
    return run_dynamics(cfg, W, u0, noise, theta=theta), sizes


def block_order_parameters(params: TwoPopParams, u, sizes):
    """Empirical q_k(t) = sum_j J2[k, j] mean_{i in j} f(u_i(t-1))^2."""
    f = params.f
    x2 = f(u[:, :-1]) ** 2
    split = np.split(x2, [sizes[0]])
    ef2 = np.array([s.mean(axis=0) for s in split])    # (2, T)
    q = np.zeros((2, u.shape[1]))
    q[:, 1:] = params.J2 @ ef2
    return q
