"""Sparse inhibitory integrate-and-fire network in continuous time.

Membrane equation below threshold:

    tau du = (mu - u) dt + sigma sqrt(tau) dB

with mu = mu_ext - C J nu(t - D) tau and sigma^2 = sigma_ext^2 + C J^2 nu(t - D) tau.
Crossing theta resets to the reset potential instantly. The probability flux
is F = (mu - u) p / tau - sigma^2 / (2 tau) dp/du, so the firing rate is the
flux at threshold, nu = -sigma^2 / (2 tau) dp/du(theta).

Times and rates share one unit (rates are per unit time, not per tau).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad, solve_ivp, trapezoid
from scipy.linalg import solve_banded
from scipy.special import erfcx

from .core import ConfigError, dilute_presynaptic

log = logging.getLogger(__name__)

SMALL_Y = 1e-6


class NoSolution(RuntimeError):
    def __init__(self, msg, scan):
        super().__init__(msg)
        self.scan = scan


class DegenerateNoise(ValueError):
    pass


class GridTooCoarse(ValueError):
    pass


@dataclass(frozen=True)
class IFContinuousParams:
    tau: float = 20.0
    theta: float = 20.0
    reset: float = 10.0
    J: float = 0.1
    C: int = 1000
    D: float = 2.0
    mu_ext: float = 25.0
    sigma_ext: float = 1.0

    def __post_init__(self):
        if not 0 < self.reset < self.theta:
            raise ConfigError(f"need 0 < reset < theta, got {self.reset}, {self.theta}")
        if not (self.tau > 0 and self.D > 0):
            raise ConfigError("tau and D must be positive")
        if self.J < 0 or self.C < 0 or self.sigma_ext < 0:
            raise ConfigError("J, C and sigma_ext must be non-negative")

    def drive(self, nu):
        """(mu, sigma) seen by a neuron when the network fires at rate nu."""
        mu = self.mu_ext - self.C * self.J * nu * self.tau
        sigma = np.sqrt(self.C * self.J ** 2 * nu * self.tau + self.sigma_ext ** 2)
        return mu, sigma


def external_input_moments(J_ext, C_ext, nu_ext, tau=1.0):
    """Diffusion moments (mu_ext, sigma_ext) of C_ext Poisson inputs of size J_ext.

    ``tau`` converts rate-per-time into potential units; leave it at 1 to get
    the bare products J C nu and J sqrt(C nu).
    """
    if min(J_ext, C_ext, nu_ext, tau) < 0:
        raise ValueError("external input parameters must be non-negative")
    return J_ext * C_ext * nu_ext * tau, J_ext * np.sqrt(C_ext * nu_ext * tau)


def _integrand(y, y_theta, y_reset):
    # e^{-(y - a)^2} (1 - e^{-2 (y_theta - y_reset) y}) / y, scaled by e^{-a^2}, a = max(y_theta, 0)
    a = max(y_theta, 0.0)
    gap = y_theta - y_reset
    if y < SMALL_Y:
        return 2.0 * gap * np.exp(-a * a)
    return np.exp(-y * y + 2 * y_theta * y - a * a) * -np.expm1(-2 * gap * y) / y


def rate_integral(y_theta, y_reset):
    """Return (log I, I) for I = int_0^inf e^{-y^2} (e^{2 y_theta y} - e^{2 y_reset y}) / y dy."""
    if not y_theta > y_reset:
        raise ValueError("need y_theta > y_reset")
    a = max(y_theta, 0.0)
    width = 8.0 + a
    points = [a] if a > 0 else None
    val, _ = quad(_integrand, 0.0, a + width, args=(y_theta, y_reset), points=points,
                  epsabs=0.0, epsrel=1e-13, limit=400)
    log_i = np.log(val) + a * a
    return log_i, float(np.exp(log_i)) if log_i < 700 else np.inf


def rate_integral_erfcx(y_theta, y_reset):
    """Same integral as sqrt(pi) * int_{y_reset}^{y_theta} erfcx(-x) dx."""
    val, _ = quad(lambda x: erfcx(-x), y_reset, y_theta, epsabs=0.0, epsrel=1e-13, limit=400)
    return np.sqrt(np.pi) * val


def weak_noise_rate(y_theta, tau):
    """Large-y_theta approximation nu tau ~ y_theta e^{-y_theta^2} / sqrt(pi)."""
    return y_theta * np.exp(-y_theta ** 2) / np.sqrt(np.pi) / tau


class ReducedVariables(NamedTuple):
    mu: float
    sigma: float
    y_theta: float
    y_reset: float


def reduced_variables(params: IFContinuousParams, nu) -> ReducedVariables:
    mu, sigma = params.drive(nu)
    if not sigma > 0:
        raise DegenerateNoise(f"sigma_0 vanishes at nu={nu!r}; need sigma_ext > 0 or C J nu > 0")
    return ReducedVariables(mu, sigma, (params.theta - mu) / sigma, (params.reset - mu) / sigma)


def rate_residual(params: IFContinuousParams, nu):
    """log(nu tau) + log I(nu); zero exactly at the self-consistent rate."""
    rv = reduced_variables(params, nu)
    return np.log(nu * params.tau) + rate_integral(rv.y_theta, rv.y_reset)[0]


@dataclass
class StationaryFPResult:
    nu0: float
    mu0: float
    sigma0: float
    y_theta: float
    y_reset: float
    residual: float            # |1/(nu tau) - I| * nu tau
    iterations: int
    brackets: list             # (lo, hi) after each bisection step
    u: np.ndarray | None = None
    p: np.ndarray | None = None


def selfconsistent_rate(params: IFContinuousParams, nu_lo=1e-280, nu_hi=None, rtol=1e-10,
                        max_iter=400, with_density=True) -> StationaryFPResult:
    """Stationary rate nu0 by bisection on log(nu)."""
    if nu_hi is None:
        nu_hi = 10.0 / params.tau
    lo, hi = np.log(nu_lo), np.log(nu_hi)
    r_lo, r_hi = rate_residual(params, nu_lo), rate_residual(params, nu_hi)
    if r_lo * r_hi > 0:
        grid = np.geomspace(nu_lo, nu_hi, 25)
        scan = [(float(v), float(rate_residual(params, v))) for v in grid]
        raise NoSolution(f"residual keeps one sign on [{nu_lo}, {nu_hi}]", scan)
    brackets = []
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        r_mid = rate_residual(params, np.exp(mid))
        if (r_mid > 0) == (r_lo > 0):
            lo, r_lo = mid, r_mid
        else:
            hi = mid
        brackets.append((float(np.exp(lo)), float(np.exp(hi))))
        if hi - lo < rtol or mid in (lo, hi) and hi - lo < 1e-14:
            break
    nu0 = float(np.exp(0.5 * (lo + hi)))
    rv = reduced_variables(params, nu0)
    residual = abs(np.expm1(rate_residual(params, nu0)))
    res = StationaryFPResult(nu0, rv.mu, rv.sigma, rv.y_theta, rv.y_reset, float(residual), it,
                             brackets)
    if with_density:
        res.u, res.p = stationary_density(rv.mu, rv.sigma, nu0, params.tau, params.theta,
                                          params.reset)
    return res


def default_grid(mu0, sigma0, theta, reset, n=4000):
    lo = min(mu0 - 8 * sigma0, reset - 8 * sigma0)
    return np.linspace(lo, theta, n)


def stationary_density(mu0, sigma0, nu0, tau, theta, reset, grid=None, check=True):
    """Stationary density on ``grid`` (ascending, ending at theta) and the grid.

    Integrates the once-integrated stationary equation
    sigma^2/2 p' + (u - mu) p = -nu tau 1{u > reset} downward from p(theta) = 0,
    then normalizes. The jump of the flux at the reset potential is the
    reinjection condition.
    """
    if not sigma0 > 0:
        raise DegenerateNoise("sigma0 must be positive")
    u = default_grid(mu0, sigma0, theta, reset) if grid is None else np.asarray(grid, float)
    if u[-1] != theta or np.any(np.diff(u) <= 0):
        raise ValueError("grid must be ascending and end at theta")
    # scaled units: y = (u - mu) / sigma, p = nu tau / sigma * P(y)
    y = (u - mu0) / sigma0
    y_reset = (reset - mu0) / sigma0

    def solve(src, y0, y1, p0, ts):
        sol = solve_ivp(lambda yy, P: -2 * yy * P - src, (y0, y1), [p0], t_eval=ts,
                        rtol=1e-12, atol=1e-14, method="DOP853")
        if not sol.success:
            raise GridTooCoarse(f"stationary ODE failed: {sol.message}")
        return sol.y[0]

    P = np.zeros_like(y)
    above = y >= y_reset
    ya = y[above][::-1]
    on_grid = ya[-1] == y_reset
    if not on_grid:
        ya = np.append(ya, y_reset)
    pa = solve(2.0, ya[0], y_reset, 0.0, ya)
    P[above] = (pa if on_grid else pa[:-1])[::-1]
    if (~above).any():
        yb = y[~above][::-1]
        P[~above] = solve(0.0, y_reset, yb[-1], pa[-1], yb)[::-1]
    p = nu0 * tau / sigma0 * P
    mass = trapezoid(p, u)
    if not mass > 0:
        raise GridTooCoarse("density has no mass on the grid")
    p = p / mass
    if check:
        r = density_residual(u, p, mu0, sigma0, nu0 / mass, tau, reset)
        if r > 1e-6:
            raise GridTooCoarse(f"stationary equation residual {r:.2e} > 1e-6; refine the grid")
    return u, np.maximum(p, 0.0)


def dawson_density(u, mu0, sigma0, nu0, tau, reset, theta):
    """Closed form (2 nu tau / sigma) e^{-y^2} int_{max(y, y_reset)}^{y_theta} e^{s^2} ds."""
    y = (np.asarray(u, float) - mu0) / sigma0
    y_t = (theta - mu0) / sigma0
    y_r = (reset - mu0) / sigma0
    lower = np.maximum(y, y_r)
    out = np.empty_like(y)
    for i, (yy, lo) in enumerate(zip(y, lower)):
        val, _ = quad(lambda s: np.exp(s * s - yy * yy), lo, y_t, epsabs=0, epsrel=1e-12)
        out[i] = val
    return 2 * nu0 * tau / sigma0 * out


def density_residual(u, p, mu0, sigma0, nu0, tau, reset):
    """Max interior residual of sigma^2/2 p' + (u - mu) p + nu tau 1{u > reset}, over nu tau.

    Fourth-order central differences; points within two cells of the reset
    potential or the boundaries are skipped.
    """
    h = np.diff(u)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("residual check needs a uniform grid")
    h = h[0]
    dp = (p[:-4] - 8 * p[1:-3] + 8 * p[3:-1] - p[4:]) / (12 * h)
    ui = u[2:-2]
    r = 0.5 * sigma0 ** 2 * dp + (ui - mu0) * p[2:-2] + nu0 * tau * (ui > reset)
    keep = np.abs(ui - reset) > 2.5 * h
    return float(np.max(np.abs(r[keep])) / (nu0 * tau))


def threshold_flux(u, p, sigma0, tau):
    """Outgoing flux -sigma^2/(2 tau) p'(theta) by a one-sided second-order difference."""
    h = u[-1] - u[-2]
    dp = (3 * p[-1] - 4 * p[-2] + p[-3]) / (2 * h)
    return -0.5 * sigma0 ** 2 * dp / tau


# ---------------------------------------------------------------------------
# Time-dependent Fokker-Planck evolution


def _bernoulli(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2, safe / np.expm1(safe))


@dataclass
class FPTrajectory:
    t: np.ndarray
    rate: np.ndarray           # nu(t), outgoing flux at theta
    mass: np.ndarray           # total mass at each recorded time
    u: np.ndarray              # cell centres
    p: np.ndarray              # final density


class FPGrid(NamedTuple):
    edges: np.ndarray
    centres: np.ndarray
    reset_cell: int


def fp_lower_bound(params: IFContinuousParams, res: StationaryFPResult):
    """Lower grid edge leaving room for rate excursions that pull mu down."""
    return (min(res.mu0, params.reset) - 6 * res.sigma0
            - 2 * params.C * params.J * res.nu0 * params.tau)


def fp_grid(params: IFContinuousParams, lower, n=400) -> FPGrid:
    edges = np.linspace(lower, params.theta, n + 1)
    centres = 0.5 * (edges[1:] + edges[:-1])
    k = int(np.searchsorted(edges, params.reset, side="right") - 1)
    return FPGrid(edges, centres, k)


def _fp_operator(mu, sigma, tau, faces, h, n):
    """Banded (3, n) generator A with dp/dt = A p before reinjection, and the out-flux stencil."""
    diff = sigma ** 2 / (2 * tau)
    z = (mu - faces) / tau * h / diff
    right = diff / h ** 2 * _bernoulli(-z)      # cell i -> i+1 across face i+1/2
    left = diff / h ** 2 * _bernoulli(z)        # cell i+1 -> i
    ab = np.zeros((3, n))
    ab[0, 1:] = left
    ab[2, :-1] = right
    ab[1, :-1] -= right
    ab[1, 1:] -= left
    # Dirichlet p(theta) = 0 through the quadratic through the last two cells
    ab[1, -1] -= 3 * diff / h ** 2
    ab[2, -2] += diff / (3 * h ** 2)
    out = np.array([-diff / (3 * h), 3 * diff / h])   # weights on p[-2], p[-1]
    return ab, out


def _banded_apply(ab, p):
    y = ab[1] * p
    y[:-1] += ab[0, 1:] * p[1:]
    y[1:] += ab[2, :-1] * p[:-1]
    return y


def fp_time_stepper(params: IFContinuousParams, p0, duration, grid: FPGrid, dt=0.02,
                    nu_history=None, record_every=1, mass_tol=1e-4) -> FPTrajectory:
    """Crank-Nicolson finite-volume evolution with reinjection at the reset potential.

    Face fluxes use the exponentially fitted (Scharfetter-Gummel) form, the
    threshold face a second-order one-sided Dirichlet stencil for p(theta) = 0,
    and the lower face is reflecting. The mass leaving through theta during a
    step is put back into the reset cell, so total mass is conserved to
    round-off. The drive uses nu(t - D); before t = D it reads ``nu_history``
    (default: the initial outgoing flux).
    """
    x, h = grid.centres, grid.edges[1] - grid.edges[0]
    n = x.size
    tau = params.tau
    p = np.asarray(p0, dtype=float).copy()
    if p.shape != x.shape:
        raise ValueError("p0 must live on the grid cell centres")
    faces = grid.edges[1:-1]
    steps = int(round(duration / dt))
    delay = max(int(round(params.D / dt)), 1)
    _, out_w = _fp_operator(*params.drive(0.0), tau, faces, h, n)
    nu_now = float(out_w @ p[-2:]) if nu_history is None else float(nu_history)
    ring = np.full(delay, nu_now)
    n_rec = steps // record_every + 1
    t_out = np.empty(n_rec)
    r_out = np.empty(n_rec)
    m_out = np.empty(n_rec)
    m0 = p.sum() * h
    t_out[0], r_out[0], m_out[0] = 0.0, nu_now, m0
    j = 1
    for step in range(1, steps + 1):
        slot = step % delay
        mu, sigma = params.drive(max(ring[slot], 0.0))
        ab, out_w = _fp_operator(mu, sigma, tau, faces, h, n)
        out_old = out_w @ p[-2:]
        rhs = p + 0.5 * dt * _banded_apply(ab, p)
        lhs = -0.5 * dt * ab
        lhs[1] += 1.0
        p = solve_banded((1, 1), lhs, rhs, overwrite_ab=True, overwrite_b=True,
                         check_finite=False)
        out_new = out_w @ p[-2:]
        p[grid.reset_cell] += 0.5 * dt * (out_old + out_new) / h
        ring[slot] = out_new
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite density at step {step}")
        if step % record_every == 0:
            mass = p.sum() * h
            if abs(mass - m0) > mass_tol:
                raise FloatingPointError(f"mass drift {mass - m0:.3e} at step {step}")
            t_out[j], r_out[j], m_out[j] = step * dt, out_new, mass
            j += 1
    return FPTrajectory(t_out[:j], r_out[:j], m_out[:j], x, p)


def stationary_cells(params: IFContinuousParams, res: StationaryFPResult, grid: FPGrid):
    """Cell averages of the stationary density on an FP grid."""
    fine = np.linspace(grid.edges[0], params.theta, 20 * (grid.centres.size) + 1)
    _, pf = stationary_density(res.mu0, res.sigma0, res.nu0, params.tau, params.theta,
                               params.reset, fine, check=False)
    cells = pf[:-1].reshape(grid.centres.size, 20)
    cells = np.concatenate([cells, pf[20::20, None]], axis=1)
    w = np.full(21, 1.0)
    w[0] = w[-1] = 0.5
    return cells @ w / 20.0


class RateLabel(NamedTuple):
    label: str              # "SS", "OS", or "NA" when the cell failed
    nu0: float
    mean_rate: float
    rel_amplitude: float
    error: str = ""


def classify_rate(traj: FPTrajectory, window, threshold=0.05) -> RateLabel:
    """OS when the peak-to-peak swing of nu(t) over the final window exceeds threshold * mean."""
    tail = traj.rate[traj.t >= traj.t[-1] - window]
    mean = float(tail.mean())
    amp = float((tail.max() - tail.min()) / (2 * mean)) if mean > 0 else 0.0
    return RateLabel("OS" if amp > threshold else "SS", np.nan, mean, amp)


def _scan_cell(args):
    base, mu_ext, sigma_ext, duration, n = args
    params = IFContinuousParams(**{**base, "mu_ext": mu_ext, "sigma_ext": sigma_ext})
    try:
        res = selfconsistent_rate(params, with_density=False)
    except (NoSolution, DegenerateNoise) as exc:
        return RateLabel("NA", np.nan, np.nan, np.nan, str(exc))
    lower = fp_lower_bound(params, res)
    grid = fp_grid(params, lower, n)
    p0 = stationary_cells(params, res, grid)
    # a small asymmetric kick exposes an unstable stationary state
    p0 = p0 * (1 + 0.05 * np.sin(np.pi * (grid.centres - lower) / (params.theta - lower)))
    p0 /= p0.sum() * (grid.edges[1] - grid.edges[0])
    traj = fp_time_stepper(params, p0, duration, grid, nu_history=res.nu0, record_every=10)
    lab = classify_rate(traj, window=duration / 4)
    return lab._replace(nu0=res.nu0)


def oscillation_scan(mu_grid, sigma_grid, base: IFContinuousParams = IFContinuousParams(),
                     duration=None, n=300, workers=1):
    """SS/OS labels over (mu_ext, sigma_ext), mu-major. Returns (mu, sigma, RateLabel) triples."""
    duration = 40 * base.tau if duration is None else duration
    fields = {k: getattr(base, k) for k in ("tau", "theta", "reset", "J", "C", "D")}
    cells = [(fields, float(m), float(s), duration, n) for m in mu_grid for s in sigma_grid]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            labels = list(ex.map(_scan_cell, cells))
    else:
        labels = [_scan_cell(c) for c in cells]
    return [(c[1], c[2], lab) for c, lab in zip(cells, labels)]


# ---------------------------------------------------------------------------
# Spiking network


@dataclass
class SpikingRunResult:
    spike_neuron: np.ndarray
    spike_time: np.ndarray
    bin_edges: np.ndarray
    rate: np.ndarray           # population rate per bin (per neuron per unit time)
    mean_rate: float           # over the stationary window
    rate_stderr: float         # from block means over the stationary window

    def spike_times(self, i):
        return self.spike_time[self.spike_neuron == i]


def postsynaptic_targets(pre, N):
    """CSR (indptr, targets) of the fan-out lists from an (N, C) presynaptic table."""
    C = pre.shape[1]
    src = pre.ravel()
    post = np.repeat(np.arange(N, dtype=np.int32), C)
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=N), out=indptr[1:])
    return indptr, post[order]


def simulate_spiking(params: IFContinuousParams, N, duration, rng, dt=0.1, u0=None,
                     skip=None, bin_width=None, blocks=10, bound=1e3) -> SpikingRunResult:
    """Euler-Maruyama network of N neurons, each with C inhibitory inputs of size J.

    Spikes reach their targets D later (rounded to the step). A crossing
    between grid points is detected with the Brownian-bridge probability
    so the rate error is first order in dt.
    """
    if not (dt > 0 and dt <= params.D):
        raise ConfigError(f"need 0 < dt <= D, got dt={dt}")
    if params.C >= N:
        raise ConfigError(f"need C < N, got C={params.C}, N={N}")
    tau, th, vr = params.tau, params.theta, params.reset
    steps = int(round(duration / dt))
    delay = max(int(round(params.D / dt)), 1)
    pre = dilute_presynaptic(N, params.C, rng)
    indptr, targets = postsynaptic_targets(pre, N)
    del pre
    u = rng.uniform(vr, th, N) if u0 is None else np.array(u0, dtype=float)
    pending = np.zeros((delay, N))
    a = dt / tau
    noise_sd = params.sigma_ext * np.sqrt(a)
    bridge_var = params.sigma_ext ** 2 * a
    spk_n, spk_t = [], []
    for step in range(steps):
        slot = step % delay
        inh = pending[slot]
        u_prev = u
        u = u + a * (params.mu_ext - u) + noise_sd * rng.standard_normal(N) - params.J * inh
        inh[:] = 0.0
        fired = u >= th
        if bridge_var > 0:
            below = ~fired
            gap = (th - u_prev[below]) * (th - u[below])
            prob = np.exp(-2 * np.maximum(gap, 0) / bridge_var)
            hit = np.zeros(N, dtype=bool)
            hit[below] = rng.random(prob.size) < prob
            fired |= hit
        idx = np.flatnonzero(fired)
        if idx.size:
            u[idx] = vr
            spk_n.append(idx.astype(np.int32))
            spk_t.append(np.full(idx.size, (step + 1) * dt))
            tg = np.concatenate([targets[indptr[i]:indptr[i + 1]] for i in idx])
            pending[slot] += np.bincount(tg, minlength=N)
        if np.abs(u).max() > bound:
            raise FloatingPointError(f"membrane potential beyond {bound} at step {step + 1}")
    neurons = np.concatenate(spk_n) if spk_n else np.zeros(0, np.int32)
    times = np.concatenate(spk_t) if spk_t else np.zeros(0)
    skip = 0.1 * duration if skip is None else skip
    bin_width = params.tau / 10 if bin_width is None else bin_width
    edges = np.arange(0.0, duration + 0.5 * bin_width, bin_width)
    counts, _ = np.histogram(times, edges)
    rate = counts / (N * np.diff(edges))
    win = times > skip
    mean_rate = win.sum() / (N * (duration - skip))
    block_edges = np.linspace(skip, duration, blocks + 1)
    block_rates = np.histogram(times[win], block_edges)[0] / (N * np.diff(block_edges))
    stderr = float(block_rates.std(ddof=1) / np.sqrt(blocks))
    return SpikingRunResult(neurons, times, edges, rate, float(mean_rate), stderr)


def tonic_period(mu_ext, theta, reset, tau):
    """Deterministic interspike interval of a lone suprathreshold neuron."""
    if not mu_ext > theta:
        return np.inf
    return tau * np.log((mu_ext - reset) / (mu_ext - theta))
