"""Full physical and communication parameterisation of one network snapshot."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import (
    ChannelDomainError,
    PhysicalParams,
    RedrawPolicy,
    SamplingModel,
    TxConfig,
    hit_probability,
    peak_time,
)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """All SI units. ``None`` per-TX fields take their documented default.

    Defaults: K=2, d=10 um, r=1 um, D=1e-9 m^2/s, T=1 s, L=1, SNR=inf,
    N_TX = N_TX,max = 1e6, synchronised offsets, no sampling jitter.
    """

    num_tx: int = 2
    distances: Optional[tuple[float, ...]] = None
    rx_radius: float = 1e-6
    diffusion: float = 1e-9
    symbol_period: float = 1.0
    isi_length: int = 1
    snr_db: float = math.inf
    n_tx_max: float = 1e6
    n_tx: Optional[tuple[float, ...]] = None
    offsets: Optional[tuple[float, ...]] = None
    jitter: float = 0.0
    jitter_policy: str = RedrawPolicy.PER_SYMBOL.value
    noise_ref: int = 0

    def __post_init__(self) -> None:
        if int(self.num_tx) != self.num_tx or self.num_tx < 1:
            raise ScenarioError(f"num_tx must be an integer >= 1, got {self.num_tx}")
        k = self.num_tx
        for name, default in (
            ("distances", 10e-6),
            ("n_tx", self.n_tx_max),
            ("offsets", 0.0),
        ):
            val = getattr(self, name)
            if val is None:
                val = (default,) * k
            else:
                val = tuple(float(v) for v in np.atleast_1d(val))
                if len(val) == 1 and k > 1:
                    val = val * k
            if len(val) != k:
                raise ScenarioError(f"{name} has {len(val)} entries, expected num_tx={k}")
            object.__setattr__(self, name, val)
        object.__setattr__(self, "jitter_policy", RedrawPolicy(self.jitter_policy).value)
        if int(self.isi_length) != self.isi_length or self.isi_length < 0:
            raise ScenarioError("isi_length must be an integer >= 0")
        if not 0 <= self.noise_ref < k:
            raise ScenarioError("noise_ref must index an existing TX")
        if not self.n_tx_max >= 0:
            raise ScenarioError("n_tx_max must be >= 0")
        if math.isnan(self.snr_db):
            raise ScenarioError("snr_db must not be NaN")
        try:
            self.tx.validate(self.symbol_period)
            SamplingModel(self.jitter, self.jitter_policy)
            self.physical  # noqa: B018 - validates and emits UCA warnings
        except ChannelDomainError as exc:
            raise ScenarioError(str(exc)) from exc

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def physical(self) -> PhysicalParams:
        return PhysicalParams(
            distances=self.distances,
            rx_radius=self.rx_radius,
            diffusion=self.diffusion,
            symbol_period=self.symbol_period,
            isi_length=self.isi_length,
            noise_mean=self.noise_mean,
        )

    @property
    def tx(self) -> TxConfig:
        return TxConfig(offsets=self.offsets, emitted=self.n_tx, budget=self.n_tx_max)

    @property
    def sampling(self) -> SamplingModel:
        return SamplingModel(self.jitter, self.jitter_policy)

    @property
    def peak_times(self) -> np.ndarray:
        return np.array(
            [peak_time(d, self.diffusion, o) for d, o in zip(self.distances, self.offsets)]
        )

    def desired_sample(self, j: int) -> float:
        """Mean contribution of TX j's own pulse at its jitter-free peak."""
        d = self.distances[j]
        t = peak_time(d, self.diffusion)
        p = hit_probability(t, d, _params_without_noise(self))
        return self.n_tx[j] * p

    @property
    def noise_mean(self) -> float:
        """Additive noise mean from SNR = 20 log10(lambda_ref / lambda_n)."""
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        ref = self.desired_sample(self.noise_ref)
        return ref / 10.0 ** (self.snr_db / 20.0)


def _params_without_noise(s: ScenarioConfig) -> PhysicalParams:
    return PhysicalParams(
        distances=s.distances,
        rx_radius=s.rx_radius,
        diffusion=s.diffusion,
        symbol_period=s.symbol_period,
        isi_length=s.isi_length,
    )


def even_offsets(num_tx: int, symbol_period: float = 1.0) -> tuple[float, ...]:
    return tuple(i * symbol_period / num_tx for i in range(num_tx))
