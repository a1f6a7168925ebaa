"""Shared domain types, transfer functions, weight sampling and RNG streams."""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class ModelKind(str, enum.Enum):
    ANALOG_FORMAL = "AF"
    BINARY_FORMAL = "BF"
    INTEGRATE_FIRE = "IF"


class WeightKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    DILUTE = "dilute"


class TransferKind(str, enum.Enum):
    HEAVISIDE = "heaviside"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class TransferFunction:
    kind: TransferKind = TransferKind.LOGISTIC
    gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TransferKind(self.kind))
        if self.gain <= 0:
            raise ConfigError(f"transfer gain must be positive, got {self.gain}")

    def __call__(self, x):
        return transfer(self, x)

    def derivative(self, x):
        if self.kind is TransferKind.HEAVISIDE:
            raise ValueError("Heaviside transfer has no pointwise derivative")
        y = expit(self.gain * np.asarray(x, dtype=float))
        return self.gain * y * (1.0 - y)


def transfer(f: TransferFunction, x):
    """Activation f(x) in [0, 1]; Heaviside is 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    if f.kind is TransferKind.HEAVISIDE:
        return (x >= 0).astype(float)
    return expit(f.gain * x)


@dataclass(frozen=True)
class NeuronModel:
    """Discrete-time neuron update rule.

    ``leak`` and ``reset`` only matter for integrate-and-fire units, where the
    reset must sit strictly below zero (the threshold-shifted origin).
    """

    kind: ModelKind = ModelKind.ANALOG_FORMAL
    leak: float = 0.5
    reset: float = -1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.kind is ModelKind.INTEGRATE_FIRE:
            if not 0.0 < self.leak < 1.0:
                raise ConfigError(f"IF leak must lie in (0, 1), got {self.leak}")
            if not self.reset < 0.0:
                raise ConfigError(f"IF reset must be negative, got {self.reset}")

    @property
    def default_transfer(self) -> TransferFunction:
        if self.kind is ModelKind.ANALOG_FORMAL:
            return TransferFunction(TransferKind.LOGISTIC)
        return TransferFunction(TransferKind.HEAVISIDE)


@dataclass(frozen=True)
class WeightLaw:
    """Law of the quenched couplings.

    Gaussian entries are N(mean/N, var/N). The dilute law puts exactly
    ``count`` entries equal to ``-value`` in each row.
    """

    kind: WeightKind = WeightKind.GAUSSIAN
    mean: float = 0.0
    var: float = 1.0
    value: float = 0.0
    count: int = 0
    exclude_diagonal: bool = True  # dilute law only

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if self.var < 0:
            raise ConfigError(f"weight variance must be >= 0, got {self.var}")
        if self.count < 0:
            raise ConfigError(f"connection count must be >= 0, got {self.count}")


@dataclass(frozen=True)
class InitialLaw:
    """Gaussian law of u(0); std = 0 gives a point mass."""

    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ConfigError(f"initial std must be >= 0, got {self.std}")

    def sample(self, n, rng):
        if self.std == 0:
            return np.full(n, float(self.mean))
        return self.mean + self.std * rng.standard_normal(n)


@dataclass(frozen=True)
class NetworkConfig:
    model: NeuronModel = field(default_factory=NeuronModel)
    N: int = 100
    T: int = 20
    theta: float = 0.0
    sigma: float = 0.1
    weights: WeightLaw = field(default_factory=WeightLaw)
    init: InitialLaw = field(default_factory=InitialLaw)
    gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.model.kind is ModelKind.INTEGRATE_FIRE and not self.theta > 0:
            raise ConfigError("IF model requires reset < 0 < theta")

    @property
    def transfer(self) -> TransferFunction:
        kind = self.model.default_transfer.kind
        return TransferFunction(kind, self.gain)


def _stream_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def rng_stream(seed: int, *stream_id) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream_id)``.

    Ids may mix strings (purpose tags) and non-negative integers. The same key
    always yields the same sequence, independent of creation order.
    """
    key = tuple(_stream_key(p) for p in stream_id)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def sample_weights(law: WeightLaw, N: int, rng: np.random.Generator) -> np.ndarray:
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if law.kind is WeightKind.GAUSSIAN:
        J = rng.standard_normal((N, N))
        J *= np.sqrt(law.var / N)
        J += law.mean / N
        return J
    C = law.count
    available = N - 1 if law.exclude_diagonal else N
    if C > available:
        raise ConfigError(f"dilute law needs C <= {available} for N={N}, got C={C}")
    J = np.zeros((N, N))
    cols = dilute_presynaptic(N, C, rng, exclude_diagonal=law.exclude_diagonal)
    J[np.repeat(np.arange(N), C), cols.ravel()] = -law.value
    return J


def dilute_presynaptic(N, C, rng, exclude_diagonal=True, chunk=256):
    """(N, C) array of presynaptic indices drawn without replacement per row."""
    out = np.empty((N, C), dtype=np.int64)
    if C == 0:
        return out
    for start in range(0, N, chunk):
        rows = np.arange(start, min(start + chunk, N))
        keys = rng.random((rows.size, N))
        if exclude_diagonal:
            keys[np.arange(rows.size), rows] = np.inf
        idx = np.argpartition(keys, C - 1, axis=1)[:, :C]
        out[rows] = np.sort(idx, axis=1)
    return out
