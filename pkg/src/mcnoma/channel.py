"""Diffusion channel physics for a passive spherical receiver.

Point transmitters emit instantaneous molecule pulses into unbounded free
space; the receiver counts molecules inside its volume under the uniform
concentration assumption. Received counts are Poisson with mean
``N_TX * P(t, d)``.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

#: r / d ratio above which the uniform concentration assumption degrades.
UCA_RATIO = 0.15


class ChannelDomainError(ValueError):
    """Raised for arguments outside the physical domain (t <= 0, d <= 0, ...)."""


class UCAWarning(UserWarning):
    """Receiver radius is too large relative to a link distance."""


class RedrawPolicy(str, enum.Enum):
    """When the jittered sampling instant of each link is re-drawn."""

    PER_SYMBOL = "per_symbol"
    PER_ITERATION = "per_iteration"
    FIXED = "fixed"


@dataclass(frozen=True)
class PhysicalParams:
    distances: tuple[float, ...]
    rx_radius: float = 1e-6
    diffusion: float = 1e-9
    symbol_period: float = 1.0
    isi_length: int = 1
    noise_mean: float = 0.0

    def __post_init__(self) -> None:
        if len(self.distances) < 1:
            raise ChannelDomainError("at least one transmitter distance is required")
        if any(d <= 0 for d in self.distances):
            raise ChannelDomainError(f"distances must be positive, got {self.distances}")
        if self.rx_radius <= 0 or self.diffusion <= 0 or self.symbol_period <= 0:
            raise ChannelDomainError("rx_radius, diffusion and symbol_period must be positive")
        if self.isi_length < 0:
            raise ChannelDomainError("isi_length must be >= 0")
        if not self.noise_mean >= 0:
            raise ChannelDomainError("noise_mean must be >= 0")
        bad = [i for i, d in enumerate(self.distances) if self.rx_radius >= UCA_RATIO * d]
        if bad:
            warnings.warn(
                f"r={self.rx_radius:g} m violates r < {UCA_RATIO}*d for TX {bad}; "
                "uniform concentration assumption is inaccurate",
                UCAWarning,
                stacklevel=3,
            )

    @property
    def num_tx(self) -> int:
        return len(self.distances)

    @property
    def rx_volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.rx_radius**3

    @property
    def uca_valid(self) -> bool:
        return all(self.rx_radius < UCA_RATIO * d for d in self.distances)


@dataclass(frozen=True)
class TxConfig:
    offsets: tuple[float, ...]
    emitted: tuple[float, ...]
    budget: float

    def validate(self, symbol_period: float) -> None:
        if len(self.offsets) != len(self.emitted):
            raise ChannelDomainError("offsets and emitted molecule counts differ in length")
        for t in self.offsets:
            if not 0.0 <= t < symbol_period:
                raise ChannelDomainError(f"offset {t} outside [0, {symbol_period})")
        for n in self.emitted:
            if not 0.0 <= n <= self.budget:
                raise ChannelDomainError(f"emitted molecules {n} outside [0, {self.budget}]")


@dataclass(frozen=True)
class SamplingModel:
    jitter: float = 0.0
    policy: RedrawPolicy = RedrawPolicy.PER_SYMBOL

    def __post_init__(self) -> None:
        if not self.jitter >= 0:
            raise ChannelDomainError("jitter width must be >= 0")
        object.__setattr__(self, "policy", RedrawPolicy(self.policy))


def hit_probability(t: float, d: float, params: PhysicalParams) -> float:
    """Probability that one molecule released at time 0 is inside the RX at ``t``."""
    if not (t > 0 and d > 0):
        raise ChannelDomainError(f"hit probability needs t > 0 and d > 0 (t={t}, d={d})")
    D = params.diffusion
    return params.rx_volume / (4.0 * math.pi * D * t) ** 1.5 * math.exp(-(d * d) / (4.0 * D * t))


def hit_probability_array(t, d, rx_radius: float, diffusion: float) -> np.ndarray:
    """Vectorised hit probability that is 0 wherever ``t <= 0`` (pulse not emitted yet)."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    t, d = np.broadcast_arrays(t, d)
    out = np.zeros(t.shape)
    pos = t > 0
    tp = t[pos]
    dp = d[pos]
    vol = 4.0 / 3.0 * math.pi * rx_radius**3
    out[pos] = vol / (4.0 * math.pi * diffusion * tp) ** 1.5 * np.exp(-(dp * dp) / (4.0 * diffusion * tp))
    return out


def mean_signal(n_tx: float, t: float, d: float, params: PhysicalParams) -> float:
    if n_tx < 0:
        raise ChannelDomainError("n_tx must be >= 0")
    p = hit_probability(t, d, params)
    return n_tx * p


def peak_time(d: float, diffusion: float, t_off: float = 0.0) -> float:
    """Time of the maximum of the hit probability, shifted by the emission offset."""
    if not (d > 0 and diffusion > 0):
        raise ChannelDomainError("peak time needs d > 0 and D > 0")
    return d * d / (6.0 * diffusion) + t_off


def peak_times(distances: Sequence[float], diffusion: float, offsets: Sequence[float]) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    return d * d / (6.0 * diffusion) + np.asarray(offsets, dtype=float)


def draw_sampling_time(t_p, jitter: float, rng: np.random.Generator, size=None):
    """Uniform sampling instant in ``[t_p - jitter/2, t_p + jitter/2]``.

    Returns ``t_p`` unchanged (no random draw consumed) when ``jitter == 0``.
    """
    if jitter < 0:
        raise ChannelDomainError("jitter width must be >= 0")
    if jitter == 0:
        if size is None:
            return t_p
        return np.broadcast_to(np.asarray(t_p, dtype=float), size).copy()
    return t_p + rng.uniform(-0.5 * jitter, 0.5 * jitter, size=size)


def draw_poisson(mean, rng: np.random.Generator, size=None):
    """Exact Poisson draw (numpy's PTRS sampler for large means, no normal approximation)."""
    m = np.asarray(mean, dtype=float)
    if np.any(m < 0) or np.any(np.isnan(m)):
        raise ChannelDomainError("Poisson mean must be >= 0")
    return rng.poisson(m, size=size)
