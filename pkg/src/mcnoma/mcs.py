"""Monte-Carlo link-level simulation of the three multiple-access schemes.

Slots are simulated in fixed-size batches. Each batch owns its random streams
(keyed by seed, purpose and batch index), and the ISI history at the start of
batch ``b`` is the tail of batch ``b - 1``'s bit stream, so any batch can be
regenerated independently and tallies merge by plain addition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analytic_bep import binary_entropy, build_gain_matrix, gain_values
from .channel import RedrawPolicy, draw_poisson, draw_sampling_time
from .ma_schemes import SCHEMES, ThresholdTree, compose_means, compose_means_tdma, sic_detect_batch
from .parallel import ordered_map
from .scenario import ScenarioConfig
from .streams import Purpose, stream

logger = logging.getLogger(__name__)

DEFAULT_BATCH = 1 << 16
MIN_ERRORS = 100
SYMBOL_CAP = 10**8


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class RunPlan:
    """How many symbols to simulate and how to seed them.

    ``n_symbols`` counts tallied symbols (slots). In adaptive mode the run stops
    once every TX has ``min_errors`` errors or ``max_symbols`` were tallied.
    ``warmup`` slots (default L) are simulated first and not tallied.
    """

    scheme: str = "noma"
    n_symbols: int = 10**5
    adaptive: bool = False
    min_errors: int = MIN_ERRORS
    max_symbols: int = SYMBOL_CAP
    warmup: Optional[int] = None
    seed: int = 0
    batch_size: int = DEFAULT_BATCH
    workers: int = 1

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise PlanError(f"unknown scheme {self.scheme!r}")
        if not self.adaptive and self.n_symbols < 1:
            raise PlanError("n_symbols must be >= 1")
        if self.adaptive and (self.min_errors < 1 or self.max_symbols < 1):
            raise PlanError("adaptive mode needs min_errors >= 1 and max_symbols >= 1")
        if self.batch_size < 1 or self.workers < 1:
            raise PlanError("batch_size and workers must be >= 1")
        if self.warmup is not None and self.warmup < 0:
            raise PlanError("warmup must be >= 0")
        if self.seed < 0:
            raise PlanError("seed must be non-negative")

    def warmup_for(self, isi_length: int) -> int:
        w = isi_length if self.warmup is None else self.warmup
        if w < isi_length:
            raise PlanError(f"warmup {w} shorter than the ISI memory L={isi_length}")
        return w

    @property
    def target(self) -> int:
        return self.max_symbols if self.adaptive else self.n_symbols


def wilson_interval(errors, trials, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    k = np.asarray(errors, dtype=float)
    n = np.asarray(trials, dtype=float)
    p = np.divide(k, n, out=np.zeros_like(k), where=n > 0)
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.clip(centre - half, 0, 1), np.clip(centre + half, 0, 1)


@dataclass
class EmpiricalResult:
    scheme: str
    errors: np.ndarray  # (K,)
    trials: np.ndarray  # (K,)
    joint: np.ndarray  # (K, 2, 2) counts of (sent, decoded)
    slots: int = 0

    @property
    def p_hat(self) -> np.ndarray:
        return np.divide(self.errors, self.trials, out=np.zeros(len(self.errors)), where=self.trials > 0)

    @property
    def p_hat_sys(self) -> float:
        return float(np.mean(self.p_hat))

    @property
    def total_trials(self) -> int:
        return int(self.trials.sum())

    def wilson95(self):
        return wilson_interval(self.errors, self.trials)

    def sigma_sys(self, p_ref: float) -> float:
        """Binomial standard deviation of the pooled system estimate at ``p_ref``."""
        return math.sqrt(max(p_ref * (1 - p_ref), 0.0) / max(self.total_trials, 1))

    def three_sigma(self, p_ref: float) -> tuple[float, float]:
        s = 3 * self.sigma_sys(p_ref)
        return p_ref - s, p_ref + s

    def within_3sigma(self, p_ref: float) -> bool:
        lo, hi = self.three_sigma(p_ref)
        return lo <= self.p_hat_sys <= hi

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "errors": self.errors.tolist(),
            "trials": self.trials.tolist(),
            "p_hat": self.p_hat.tolist(),
            "p_hat_sys": self.p_hat_sys,
            "slots": self.slots,
        }


def empirical_mi(result: EmpiricalResult) -> np.ndarray:
    """Plug-in MI (bits) per TX from the (sent, decoded) histogram."""
    out = np.zeros(len(result.trials))
    for j, h in enumerate(result.joint):
        n = h.sum()
        if n == 0:
            raise PlanError(f"TX {j} has no trials")
        p = h / n
        hy = binary_entropy(p[:, 1].sum())
        hx = binary_entropy(p[1, :].sum())
        hxy = -sum(v * math.log2(v) for v in p.ravel() if v > 0)
        out[j] = max(0.0, float(hx + hy - hxy))
    return out


# Batch simulation.


@dataclass(frozen=True)
class _Job:
    scenario: ScenarioConfig
    scheme: str
    thresholds: object
    seed: int
    batch: int
    batch_size: int
    tally_from: int  # first global slot that is tallied
    tally_to: int  # one past the last tallied slot
    fixed_times: Optional[np.ndarray] = None


def _bits(seed: int, batch: int, n: int, width: int) -> np.ndarray:
    # Batch b uses key b + 1 so that key 0 supplies the history before batch 0.
    rng = stream(seed, Purpose.BITS, batch + 1)
    return rng.integers(0, 2, size=(n, width), dtype=np.int8)


def _sampling_times(scen: ScenarioConfig, scheme: str, seed: int, batch: int, n: int, fixed):
    offsets = np.zeros(scen.num_tx) if scheme == "tdma" else np.asarray(scen.offsets)
    d = np.asarray(scen.distances)
    t_p = d * d / (6.0 * scen.diffusion) + offsets
    if scen.jitter == 0:
        return None, offsets
    policy = RedrawPolicy(scen.jitter_policy)
    if policy is RedrawPolicy.FIXED:
        return fixed, offsets
    rng = stream(seed, Purpose.JITTER, batch)
    if policy is RedrawPolicy.PER_SYMBOL:
        return draw_sampling_time(t_p, scen.jitter, rng, size=(n, scen.num_tx)), offsets
    return draw_sampling_time(t_p, scen.jitter, rng, size=(scen.num_tx,)), offsets


def _run_batch(job: _Job):
    scen, b, n = job.scenario, job.batch, job.batch_size
    k, L = scen.num_tx, scen.isi_length
    start = b * n
    lo = max(job.tally_from - start, 0)
    hi = min(job.tally_to - start, n)
    errors = np.zeros(k, dtype=np.int64)
    trials = np.zeros(k, dtype=np.int64)
    joint = np.zeros((k, 2, 2), dtype=np.int64)
    if hi <= lo:
        return errors, trials, joint
    width = 1 if job.scheme == "tdma" else k
    cur = _bits(job.seed, b, n, width)
    hist = _bits(job.seed, b - 1, n, width)[n - L :] if L else np.zeros((0, width), dtype=np.int8)
    bits = np.concatenate([hist, cur])

    times, offsets = _sampling_times(scen, job.scheme, job.seed, b, n, job.fixed_times)
    if times is None:
        gains = build_gain_matrix(scen, scheme=job.scheme).values
    else:
        gains = gain_values(scen.distances, scen.n_tx, offsets, times, scen.rx_radius,
                            scen.diffusion, scen.symbol_period, L)
    noise = scen.noise_mean
    rng = stream(job.seed, Purpose.COUNTS, b)
    if job.scheme == "tdma":
        slots = np.arange(start - L, start + n)
        owners = slots % k
        means = compose_means_tdma(bits[:, 0], owners, gains, noise)
        counts = draw_poisson(means, rng)
        taus = np.asarray(job.thresholds, dtype=np.int64)
        own = owners[L:]
        dec = (counts >= taus[own]).astype(np.int8)
        sent = cur[:, 0]
        sl = slice(lo, hi)
        np.add.at(joint, (own[sl], sent[sl], dec[sl]), 1)
    else:
        means = compose_means(bits, gains, noise, job.scheme)
        counts = draw_poisson(means, rng)
        if job.scheme == "noma":
            dec = sic_detect_batch(counts, job.thresholds)
        else:
            dec = (counts >= np.asarray(job.thresholds)[None, :]).astype(np.int8)
        for j in range(k):
            np.add.at(joint[j], (cur[lo:hi, j], dec[lo:hi, j]), 1)
    trials = joint.sum(axis=(1, 2))
    errors = joint[:, 0, 1] + joint[:, 1, 0]
    return errors, trials, joint


def _normalise_thresholds(scheme: str, thresholds, k: int):
    if scheme == "noma":
        tree = thresholds if isinstance(thresholds, ThresholdTree) else ThresholdTree.from_scalar(thresholds)
        if tree.num_tx != k:
            raise PlanError("threshold tree does not match K")
        return tree
    if isinstance(thresholds, ThresholdTree):
        thresholds = [lv[0] for lv in thresholds.levels]
    t = np.asarray(thresholds, dtype=np.int64).ravel()
    if t.shape != (k,):
        raise PlanError(f"expected {k} thresholds")
    return t


def run_mcs(scenario: ScenarioConfig, thresholds, plan: RunPlan) -> EmpiricalResult:
    """Simulate ``plan`` and tally per-TX decision errors.

    The result depends only on (scenario, thresholds, plan minus workers).
    """
    k = scenario.num_tx
    taus = _normalise_thresholds(plan.scheme, thresholds, k)
    warm = plan.warmup_for(scenario.isi_length)
    bs = plan.batch_size
    fixed = None
    if scenario.jitter > 0 and RedrawPolicy(scenario.jitter_policy) is RedrawPolicy.FIXED:
        offs = np.zeros(k) if plan.scheme == "tdma" else np.asarray(scenario.offsets)
        d = np.asarray(scenario.distances)
        fixed = draw_sampling_time(d * d / (6 * scenario.diffusion) + offs, scenario.jitter,
                                   stream(plan.seed, Purpose.JITTER, 0, 0), size=(k,))

    def job(b, tally_to):
        return _Job(scenario, plan.scheme, taus, plan.seed, b, bs, warm, tally_to, fixed)

    errors = np.zeros(k, dtype=np.int64)
    trials = np.zeros(k, dtype=np.int64)
    joint = np.zeros((k, 2, 2), dtype=np.int64)
    end = warm + plan.target
    n_batches = -(-end // bs)
    b = 0
    while b < n_batches:
        group = list(range(b, min(n_batches, b + plan.workers)))
        for e, t, jn in ordered_map(_run_batch, [job(i, end) for i in group], plan.workers):
            errors += e
            trials += t
            joint += jn
            b += 1
            if plan.adaptive and np.all(errors >= plan.min_errors):
                n_batches = b
                break
    slots = min(n_batches * bs, end)
    logger.debug("mcs %s: %d slots, errors=%s", plan.scheme, slots, errors.tolist())
    return EmpiricalResult(plan.scheme, errors, trials, joint, slots)


# Agreement suite.


@dataclass
class AgreementCell:
    num_tx: int
    isi_length: int
    snr_db: float
    p_analytic: float
    p_hat: float
    lo: float
    hi: float
    trials: int
    agree: bool

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def agreement_cell(scenario: ScenarioConfig, plan: RunPlan, threshold_shift: int = 0) -> AgreementCell:
    """Optimise thresholds, evaluate them analytically, simulate, and compare.

    ``threshold_shift`` perturbs the simulator's thresholds only (negative control).
    """
    from .optimizer import optimal_result

    res, taus = optimal_result(scenario, plan.scheme)
    sim_taus = taus
    if threshold_shift:
        if isinstance(taus, ThresholdTree):
            sim_taus = ThresholdTree([np.maximum(lv + threshold_shift, 0) for lv in taus.levels])
        else:
            sim_taus = np.maximum(taus + threshold_shift, 0)
    emp = run_mcs(scenario, sim_taus, plan)
    lo, hi = emp.three_sigma(res.p_e_sys)
    return AgreementCell(scenario.num_tx, scenario.isi_length, scenario.snr_db, res.p_e_sys,
                         emp.p_hat_sys, lo, hi, emp.total_trials, lo <= emp.p_hat_sys <= hi)


def default_matrix() -> list[tuple[int, int, float]]:
    return [(k, L, snr) for k in (2, 3, 4) for L in (0, 1) for snr in (math.inf, 10.0)]
