"""Exact bit-error probability and mutual information by enumeration.

For NOMA every joint symbol frame S (K TXs x L+1 slots) and every decoded
prefix of the SIC tree is enumerated; the per-frame received mean at TX j's
sampling point is ``S . Lambda_j + lambda_n``. MDMA and TDMA reuse the same
machinery restricted to one link's 2**(L+1) symbol histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammainc, gammaincc

from .channel import hit_probability_array
from .ma_schemes import SCHEMES, SymbolFrame, ThresholdTree, tdma_owner
from .scenario import ScenarioConfig

#: Maximum number of enumerated symbol bits K*(L+1) for the NOMA engine.
ENUMERATION_CAP = 24
_CHUNK_FRAMES = 1 << 15


class EnumerationCapError(RuntimeError):
    """Configuration needs more enumeration bits than the configured cap."""


@dataclass(frozen=True)
class GainMatrix:
    """``values[i, j, l]``: mean sample at TX j's sampling instant from a bit-1 of TX i in slot l."""

    values: np.ndarray

    @property
    def num_tx(self) -> int:
        return self.values.shape[0]

    @property
    def isi_length(self) -> int:
        return self.values.shape[2] - 1

    @property
    def desired(self) -> np.ndarray:
        """lambda-tilde_j = values[j, j, 0]."""
        return np.diagonal(self.values[:, :, 0]).copy()

    def lambda_vector(self, j: int) -> np.ndarray:
        """Lambda_j ordered like :attr:`SymbolFrame.vector` (slot-major, TX-minor)."""
        return self.values[:, j, :].T.ravel()


def gain_values(
    distances: Sequence[float],
    n_tx: Sequence[float],
    offsets: Sequence[float],
    sampling_times,
    rx_radius: float,
    diffusion: float,
    symbol_period: float,
    isi_length: int,
) -> np.ndarray:
    """Raw gain array. ``sampling_times`` may be (K,) or (n, K) for per-slot jitter.

    A pulse emitted after the sampling instant (non-positive age) contributes 0.
    """
    d = np.asarray(distances, dtype=float)
    n = np.asarray(n_tx, dtype=float)
    off = np.asarray(offsets, dtype=float)
    ts = np.asarray(sampling_times, dtype=float)
    lags = np.arange(isi_length + 1) * symbol_period
    # age[..., i, j, l] = t_s,j + l T - t_off,i
    age = ts[..., None, :, None] + lags - off[:, None, None]
    p = hit_probability_array(age, d[:, None, None], rx_radius, diffusion)
    return p * n[:, None, None]


def build_gain_matrix(
    scenario: ScenarioConfig, sampling_times=None, scheme: str = "noma"
) -> GainMatrix:
    """Gain matrix at the jitter-free peak sampling instants unless times are given.

    TDMA is slot-synchronised by construction, so per-TX offsets are ignored for it.
    """
    offsets = np.zeros(scenario.num_tx) if scheme == "tdma" else np.asarray(scenario.offsets)
    if sampling_times is None:
        d = np.asarray(scenario.distances)
        sampling_times = d * d / (6.0 * scenario.diffusion) + offsets
    vals = gain_values(
        scenario.distances,
        scenario.n_tx,
        offsets,
        sampling_times,
        scenario.rx_radius,
        scenario.diffusion,
        scenario.symbol_period,
        scenario.isi_length,
    )
    return GainMatrix(vals)


# Poisson CDF via the regularised incomplete gamma functions:
#   P(X <= m) = Q(m+1, lam),  P(X > m) = P(m+1, lam).


def poisson_cdf(m, lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("Poisson mean must be >= 0")
    m = np.floor(np.asarray(m, dtype=float))
    out = np.where(m < 0, 0.0, gammaincc(np.maximum(m + 1, 1.0), lam))
    return out[()] if out.ndim == 0 else out


def poisson_sf(m, lam):
    """P(X > m), computed directly so small upper tails keep full relative precision."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("Poisson mean must be >= 0")
    m = np.floor(np.asarray(m, dtype=float))
    out = np.where(m < 0, 1.0, gammainc(np.maximum(m + 1, 1.0), lam))
    return out[()] if out.ndim == 0 else out


def prob_below(tau, lam):
    """P(X < tau) for integer thresholds (decision 0)."""
    return poisson_cdf(np.asarray(tau) - 1, lam)


def prob_at_least(tau, lam):
    """P(X >= tau) (decision 1)."""
    return poisson_sf(np.asarray(tau) - 1, lam)


# Single-frame building blocks.


def _frame_mean(j: int, frame: SymbolFrame, gains: GainMatrix, noise: float) -> float:
    return float(frame.vector @ gains.lambda_vector(j) + noise)


def p_prev(j: int, frame: SymbolFrame, prefix: Sequence[int], tree: ThresholdTree, gains: GainMatrix, noise: float) -> float:
    """Probability that TX j's sample falls below the threshold selected by ``prefix``."""
    if frame.num_tx != gains.num_tx or frame.isi_length != gains.isi_length:
        raise ValueError("frame and gain matrix dimensions differ")
    tau = tree.threshold(j, prefix)
    return float(prob_below(tau, _frame_mean(j, frame, gains, noise)))


def prefix_probability(
    j: int, prefix: Sequence[int], frame: SymbolFrame, tree: ThresholdTree, gains: GainMatrix, noise: float
) -> float:
    """Probability that TX 0..j-1 were decoded as ``prefix`` given the transmitted frame."""
    if len(prefix) != j:
        raise ValueError(f"prefix for TX {j} must have length {j}")
    prob = 1.0
    for i in range(j):
        if prefix[i] == 0:
            prob *= p_prev(i, frame, prefix[:i], tree, gains, noise)
        else:
            tau = tree.threshold(i, prefix[:i])
            prob *= float(prob_at_least(tau, _frame_mean(i, frame, gains, noise)))
    return prob


# Vectorised enumeration engine.


def _check_cap(bits: int, cap: int) -> None:
    if bits > cap:
        raise EnumerationCapError(
            f"analytic enumeration needs K*(L+1) = {bits} bits, above the cap of {cap}; "
            "use the Monte-Carlo simulator for this configuration"
        )


def frame_bits(num_bits: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Rows are frames ``start..stop-1`` as bit vectors, most significant bit first."""
    stop = 2**num_bits if stop is None else stop
    f = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(num_bits - 1, -1, -1, dtype=np.int64)
    return ((f[:, None] >> shifts) & 1).astype(np.int8)


@dataclass
class _LinkErrors:
    miss: np.ndarray  # P(decode 0 | sent 1) per TX
    false_alarm: np.ndarray  # P(decode 1 | sent 0) per TX


def _noma_errors(gains: GainMatrix, tree: ThresholdTree, noise: float, cap: int) -> _LinkErrors:
    k = gains.num_tx
    if tree.num_tx != k:
        raise ValueError("threshold tree and gain matrix disagree on K")
    nbits = k * (gains.isi_length + 1)
    _check_cap(nbits, cap)
    lam = np.stack([gains.lambda_vector(j) for j in range(k)], axis=1)  # (nbits, K)
    miss_parts: list[list[float]] = [[] for _ in range(k)]
    fa_parts: list[list[float]] = [[] for _ in range(k)]
    total = 2**nbits
    for start in range(0, total, _CHUNK_FRAMES):
        s = frame_bits(nbits, start, min(total, start + _CHUNK_FRAMES))
        means = s @ lam + noise  # (c, K)
        w = np.ones((s.shape[0], 1))
        for j in range(k):
            taus = tree.levels[j][None, :]
            lo = prob_below(taus, means[:, j : j + 1])
            hi = prob_at_least(taus, means[:, j : j + 1])
            sent = s[:, j].astype(bool)
            miss_parts[j].append(float(np.sum(w[sent] * lo[sent])))
            fa_parts[j].append(float(np.sum(w[~sent] * hi[~sent])))
            if j + 1 < k:
                w = np.stack([w * lo, w * hi], axis=2).reshape(s.shape[0], -1)
    half = total / 2
    miss = np.array([math.fsum(p) / half for p in miss_parts])
    fa = np.array([math.fsum(p) / half for p in fa_parts])
    return _LinkErrors(miss, fa)


def _link_errors(gain_vec: np.ndarray, noise: float, tau: int, cap: int) -> tuple[float, float]:
    """Single threshold link whose mean is ``noise + h . gain_vec`` over all bit histories h."""
    _check_cap(len(gain_vec), cap)
    h = frame_bits(len(gain_vec))
    means = h @ gain_vec + noise
    sent = h[:, 0].astype(bool)
    half = len(h) / 2
    miss = math.fsum(prob_below(tau, means[sent])) / half
    fa = math.fsum(prob_at_least(tau, means[~sent])) / half
    return miss, fa


def tdma_gain_vector(gains: GainMatrix, j: int) -> np.ndarray:
    k = gains.num_tx
    return np.array([gains.values[tdma_owner(j, l, k), j, l] for l in range(gains.isi_length + 1)])


def _scalar_thresholds(thresholds, k: int) -> np.ndarray:
    if isinstance(thresholds, ThresholdTree):
        thresholds = [lv[0] for lv in thresholds.levels]
    t = np.asarray(thresholds, dtype=np.int64).ravel()
    if t.shape != (k,):
        raise ValueError(f"expected {k} scalar thresholds")
    return t


# Results.


def binary_entropy(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1 - p) * np.log2(1 - p)
    return np.nan_to_num(h, nan=0.0)


def binary_mi(eps0, eps1) -> np.ndarray:
    """MI (bits) of a binary channel with equiprobable input.

    ``eps0`` = P(decode 1 | sent 0), ``eps1`` = P(decode 0 | sent 1).
    """
    eps0 = np.asarray(eps0, dtype=float)
    eps1 = np.asarray(eps1, dtype=float)
    p_one = 0.5 * (eps0 + 1.0 - eps1)
    mi = binary_entropy(p_one) - 0.5 * (binary_entropy(eps0) + binary_entropy(eps1))
    return np.clip(mi, 0.0, 1.0)


@dataclass
class BepResult:
    scheme: str
    p_e: np.ndarray
    p_e_sys: float
    p_j0: np.ndarray  # P(decode 0 | sent 0)
    p_j1: np.ndarray  # P(decode 0 | sent 1)
    mi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mi_sys: float = 0.0

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "p_e_sys": float(self.p_e_sys),
            "p_e": [float(v) for v in self.p_e],
            "mi_sys": float(self.mi_sys),
            "mi": [float(v) for v in self.mi],
        }


def _result(scheme: str, miss: np.ndarray, fa: np.ndarray) -> BepResult:
    p_e = 0.5 * (miss + fa)
    mi = binary_mi(fa, miss)
    mi_sys = float(np.mean(mi)) if scheme == "tdma" else float(math.fsum(mi))
    return BepResult(
        scheme=scheme,
        p_e=p_e,
        p_e_sys=math.fsum(p_e) / len(p_e),
        p_j0=1.0 - fa,
        p_j1=miss,
        mi=mi,
        mi_sys=mi_sys,
    )


def bep_system(
    scenario: ScenarioConfig,
    tree: ThresholdTree,
    gains: Optional[GainMatrix] = None,
    cap: int = ENUMERATION_CAP,
) -> BepResult:
    """DBMC-NOMA per-TX and system BEP (plus per-TX binary-channel MI)."""
    gains = build_gain_matrix(scenario) if gains is None else gains
    err = _noma_errors(gains, tree, scenario.noise_mean, cap)
    return _result("noma", err.miss, err.false_alarm)


def p_j_x(j: int, x: int, scenario: ScenarioConfig, tree: ThresholdTree, gains: Optional[GainMatrix] = None, cap: int = ENUMERATION_CAP) -> float:
    """P(TX j's sample falls below its selected threshold | s_j[0] = x)."""
    res = bep_system(scenario, tree, gains, cap)
    return float(res.p_j0[j] if x == 0 else res.p_j1[j])


def bep_tx(j: int, scenario: ScenarioConfig, tree: ThresholdTree, gains: Optional[GainMatrix] = None, cap: int = ENUMERATION_CAP) -> float:
    return float(bep_system(scenario, tree, gains, cap).p_e[j])


def bep_mdma(scenario: ScenarioConfig, thresholds, gains: Optional[GainMatrix] = None, cap: int = ENUMERATION_CAP) -> BepResult:
    gains = build_gain_matrix(scenario, scheme="mdma") if gains is None else gains
    taus = _scalar_thresholds(thresholds, gains.num_tx)
    noise = scenario.noise_mean
    miss, fa = zip(*(_link_errors(gains.values[j, j, :], noise, int(taus[j]), cap) for j in range(gains.num_tx)))
    return _result("mdma", np.array(miss), np.array(fa))


def bep_tdma(scenario: ScenarioConfig, thresholds, gains: Optional[GainMatrix] = None, cap: int = ENUMERATION_CAP) -> BepResult:
    gains = build_gain_matrix(scenario, scheme="tdma") if gains is None else gains
    taus = _scalar_thresholds(thresholds, gains.num_tx)
    noise = scenario.noise_mean
    miss, fa = zip(*(_link_errors(tdma_gain_vector(gains, j), noise, int(taus[j]), cap) for j in range(gains.num_tx)))
    return _result("tdma", np.array(miss), np.array(fa))


def evaluate(scenario: ScenarioConfig, scheme: str, thresholds, gains: Optional[GainMatrix] = None, cap: int = ENUMERATION_CAP) -> BepResult:
    if scheme == "noma":
        tree = thresholds if isinstance(thresholds, ThresholdTree) else ThresholdTree.from_scalar(thresholds)
        return bep_system(scenario, tree, gains, cap)
    if scheme == "mdma":
        return bep_mdma(scenario, thresholds, gains, cap)
    if scheme == "tdma":
        return bep_tdma(scenario, thresholds, gains, cap)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def mutual_information(scenario: ScenarioConfig, scheme: str, thresholds, gains: Optional[GainMatrix] = None, cap: int = ENUMERATION_CAP) -> BepResult:
    """Per-TX and system MI (bit per symbol period). TDMA averages over TXs."""
    return evaluate(scenario, scheme, thresholds, gains, cap)
