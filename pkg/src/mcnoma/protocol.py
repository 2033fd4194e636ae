"""Pilot-driven parameter adaptation: thresholds, worst-case-offset avoidance, molecule budgets.

One run is a sequential loop over iterations. Every iteration executes the
threshold block, the WCAM block and (optionally) the molecule-budget block,
each on its own pilot symbols, then freezes the parameters and measures the
system BEP on a block of random data symbols with real SIC detection.

Random streams (all keyed by the run seed, see :mod:`mcnoma.streams`):
pilot bits and the WCAM offset sequence model the shared pseudorandom
sequence; channel counts, jitter, data bits, feedback erasures and beacon
losses each have their own purpose key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analytic_bep import gain_values
from .channel import RedrawPolicy, draw_poisson, draw_sampling_time
from .ma_schemes import ThresholdTree, compose_means, sic_detect_batch
from .parallel import ordered_map
from .scenario import ScenarioConfig
from .streams import Purpose, stream

logger = logging.getLogger(__name__)

SCHEDULE_FIELDS = ("snr_db", "distance", "jitter", "n_tx_max")


class ProtocolConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    """Adaptation parameters. Times in seconds, molecule counts as reals.

    ``tau_wcam`` defaults to ``n_pilot / 10``. ``init_offsets`` is ``"random"``
    (i.i.d. uniform per seed), ``"sync"`` (all zero) or ``"scenario"`` (use the
    scenario's offsets).
    """

    n_pilot: int = 100
    n_iter: int = 1000
    delta_tau: int = 1
    alpha_n: float = 0.1
    delta_s_max: float = 1.0
    tau_wcam: Optional[float] = None
    p_ef: float = 0.0
    enable_wcam: bool = True
    enable_ntx_opt: bool = False
    n_eval: int = 1000
    tau_init: int = 1
    n_tx_init: float = 1e6
    beacon_reliability: float = 1.0
    shared_block: bool = False
    init_offsets: str = "random"

    def __post_init__(self) -> None:
        checks = [
            (self.n_pilot >= 1, "n_pilot must be >= 1"),
            (self.n_iter >= 0, "n_iter must be >= 0"),
            (self.delta_tau >= 1 and int(self.delta_tau) == self.delta_tau, "delta_tau must be an integer >= 1"),
            (0 < self.alpha_n < 1 or (self.alpha_n == 0), "alpha_n must lie in [0, 1)"),
            (self.delta_s_max >= 0, "delta_s_max must be >= 0"),
            (0 <= self.p_ef <= 1, "p_ef must lie in [0, 1]"),
            (self.n_eval >= 1, "n_eval must be >= 1"),
            (self.tau_init >= 0, "tau_init must be >= 0"),
            (self.n_tx_init >= 0, "n_tx_init must be >= 0"),
            (0 <= self.beacon_reliability <= 1, "beacon_reliability must lie in [0, 1]"),
            (self.init_offsets in ("random", "sync", "scenario"), "init_offsets must be random, sync or scenario"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ProtocolConfigError(msg)

    @property
    def wcam_threshold(self) -> float:
        return self.n_pilot / 10.0 if self.tau_wcam is None else float(self.tau_wcam)

    def replace(self, **changes) -> "ProtocolConfig":
        return dataclasses.replace(self, **changes)

    def check_scenario(self, scenario: ScenarioConfig) -> None:
        if self.enable_wcam and scenario.num_tx < 2:
            raise ProtocolConfigError("WCAM needs K >= 2 (its increment divides by 2**(K-1) - 1)")
        if self.enable_ntx_opt and scenario.num_tx != 2:
            raise ProtocolConfigError("molecule-budget adaptation is defined for K = 2 only")
        if self.n_tx_init > scenario.n_tx_max:
            raise ProtocolConfigError("n_tx_init exceeds the molecule budget")
        if self.delta_s_max > scenario.symbol_period:
            logger.info("delta_s_max exceeds T; offsets still wrap modulo T")


@dataclass(frozen=True)
class ScheduleChange:
    """Parameter change applied once iteration ``iteration`` has been evaluated."""

    iteration: int
    parameter: str
    value: float
    tx: int = 0

    def __post_init__(self) -> None:
        if self.parameter not in SCHEDULE_FIELDS:
            raise ProtocolConfigError(f"unknown schedule parameter {self.parameter!r}")
        if int(self.iteration) != self.iteration or self.iteration < 0:
            raise ProtocolConfigError("schedule breakpoints must be non-negative integers")

    def apply(self, scenario: ScenarioConfig) -> ScenarioConfig:
        if self.parameter == "distance":
            d = list(scenario.distances)
            d[self.tx] = float(self.value)
            return scenario.replace(distances=tuple(d))
        return scenario.replace(**{self.parameter: float(self.value)})


def validate_schedule(schedule: Sequence[ScheduleChange], n_iter: int, num_tx: int) -> list[ScheduleChange]:
    out = sorted(schedule or [], key=lambda c: c.iteration)
    for c in out:
        if c.iteration >= max(n_iter, 1):
            raise ProtocolConfigError(f"breakpoint {c.iteration} outside the run of {n_iter} iterations")
        if c.parameter == "distance" and not 0 <= c.tx < num_tx:
            raise ProtocolConfigError(f"schedule targets TX {c.tx} but K = {num_tx}")
    return out


@dataclass
class ProtocolState:
    tree: ThresholdTree
    offsets: np.ndarray
    n_tx: np.ndarray
    history: np.ndarray  # (L, K) bits of the most recent slots, oldest first
    i_wcam: float = 0.0
    beacons: list = field(default_factory=list)
    block: int = 0  # running pilot/data block counter (stream position)
    offset_pos: int = 0  # position in the shared offset sequence

    def copy(self) -> "ProtocolState":
        return ProtocolState(self.tree.copy(), self.offsets.copy(), self.n_tx.copy(), self.history.copy(),
                             self.i_wcam, list(self.beacons), self.block, self.offset_pos)


def initial_state(scenario: ScenarioConfig, config: ProtocolConfig, seed: int) -> ProtocolState:
    k = scenario.num_tx
    if config.init_offsets == "random":
        offsets = stream(seed, Purpose.INIT, 0).uniform(0.0, scenario.symbol_period, size=k)
    elif config.init_offsets == "sync":
        offsets = np.zeros(k)
    else:
        offsets = np.asarray(scenario.offsets, dtype=float)
    n_tx = np.full(k, float(config.n_tx_init))
    if config.enable_ntx_opt:
        n_tx[0] = scenario.n_tx_max
    hist = stream(seed, Purpose.INIT, 1).integers(0, 2, size=(scenario.isi_length, k), dtype=np.int8)
    return ProtocolState(ThresholdTree.constant(k, config.tau_init), offsets, n_tx, hist)


# Channel plumbing.


class _Channel:
    """Mean composition for the live parameters of one block."""

    def __init__(self, scenario: ScenarioConfig, state: ProtocolState, seed: int, iteration: int):
        self.scenario = scenario
        self.state = state
        self.seed = seed
        self.iteration = iteration

    def _times(self, n: int, key: int) -> Optional[np.ndarray]:
        sc = self.scenario
        if sc.jitter == 0:
            return None
        d = np.asarray(sc.distances)
        t_p = d * d / (6.0 * sc.diffusion) + self.state.offsets
        policy = RedrawPolicy(sc.jitter_policy)
        if policy is RedrawPolicy.PER_SYMBOL:
            return draw_sampling_time(t_p, sc.jitter, stream(self.seed, Purpose.JITTER, key), size=(n, sc.num_tx))
        if policy is RedrawPolicy.PER_ITERATION:
            rng = stream(self.seed, Purpose.JITTER, 0, self.iteration)
        else:
            rng = stream(self.seed, Purpose.JITTER, 0, 0)
        return t_p + rng.uniform(-0.5 * sc.jitter, 0.5 * sc.jitter, size=sc.num_tx)

    def unit_gains(self, n: int, key: int) -> np.ndarray:
        """Per-molecule gains (N_TX = 1); shape (K, K, L+1) or (n, K, K, L+1)."""
        sc = self.scenario
        d = np.asarray(sc.distances)
        times = self._times(n, key)
        if times is None:
            times = d * d / (6.0 * sc.diffusion) + self.state.offsets
        return gain_values(d, np.ones(sc.num_tx), self.state.offsets, times, sc.rx_radius,
                           sc.diffusion, sc.symbol_period, sc.isi_length)

    def transmit(self, bits: np.ndarray, key: int) -> np.ndarray:
        """Counts for a block of bits with fixed parameters; advances the ISI history."""
        n = bits.shape[0]
        g = self.unit_gains(n, key) * self.state.n_tx[:, None, None]
        seq = np.concatenate([self.state.history, bits])
        means = compose_means(seq, g, self.scenario.noise_mean, "noma")
        counts = draw_poisson(means, stream(self.seed, Purpose.COUNTS, key))
        self._advance(seq)
        return counts

    def _advance(self, seq: np.ndarray) -> None:
        L = self.scenario.isi_length
        self.state.history = seq[len(seq) - L :].copy() if L else seq[:0].copy()


def _pilots(seed: int, block: int, n: int, k: int) -> np.ndarray:
    return stream(seed, Purpose.PILOT, block).integers(0, 2, size=(n, k), dtype=np.int8)


def _truth_prefix_decisions(counts, bits, levels):
    """Decisions per TX using the threshold selected by the pilot truth prefix."""
    out = []
    for c_row, s_row in zip(counts, bits):
        idx = 0
        row = []
        for j, (c, s) in enumerate(zip(c_row, s_row)):
            row.append((idx, int(c >= levels[j][idx])))
            idx = 2 * idx + s
        out.append(row)
    return out


# Algorithm blocks.


def _threshold_updates(levels, counts_row, bits_row, step: int) -> list:
    """Apply one pilot's threshold updates in place; returns per-TX (decision, error)."""
    idx = 0
    res = []
    for j, (c, s) in enumerate(zip(counts_row, bits_row)):
        tau = levels[j][idx]
        dec = int(c >= tau)
        if dec != s:
            levels[j][idx] = tau + step if s == 0 else max(0, tau - step)
        res.append(dec)
        idx = 2 * idx + s
    return res


def _wcam_increment(dec_row, bits_row, k: int) -> float:
    inc = 0.0
    equal = all(b == bits_row[0] for b in bits_row)
    for d, s in zip(dec_row, bits_row):
        if d != s:
            inc += -1.0 if equal else 1.0 / (2 ** (k - 1) - 1)
    return inc


def _ntx_factor(dec_row, bits_row) -> int:
    """+1 increase, -1 decrease, 0 keep (only pilots with s_2 = 1 count)."""
    s1, s2 = bits_row[0], bits_row[1]
    d1, d2 = dec_row[0], dec_row[1]
    if s2 != 1:
        return 0
    if s1 == 0 and d1 != s1 and d2 == s2:
        return -1
    if d2 != s2 and (s1 == 1 or d1 == s1):
        return 1
    return 0


def run_pilot_block_thresholds(state: ProtocolState, config: ProtocolConfig, scenario: ScenarioConfig,
                               seed: int, iteration: int = 0) -> ProtocolState:
    """Threshold adaptation over one block of pilots (updates ``state`` in place)."""
    k = scenario.num_tx
    key = state.block
    bits = _pilots(seed, key, config.n_pilot, k)
    counts = _Channel(scenario, state, seed, iteration).transmit(bits, key)
    levels = [lv.tolist() for lv in state.tree.levels]
    for c_row, s_row in zip(counts.tolist(), bits.tolist()):
        _threshold_updates(levels, c_row, s_row, config.delta_tau)
    state.tree = ThresholdTree(levels)
    state.block += 1
    return state


def _fire_beacon(state: ProtocolState, config: ProtocolConfig, scenario: ScenarioConfig, seed: int,
                 iteration: int) -> bool:
    if state.i_wcam <= config.wcam_threshold:
        return False
    if config.beacon_reliability < 1.0:
        if stream(seed, Purpose.BEACON, iteration).random() >= config.beacon_reliability:
            return False
    shift = stream(seed, Purpose.OFFSET, state.offset_pos).uniform(0.0, config.delta_s_max, size=scenario.num_tx)
    state.offset_pos += 1
    state.offsets = np.mod(state.offsets + shift, scenario.symbol_period)
    # Guard against fmod rounding up to T itself.
    state.offsets[state.offsets >= scenario.symbol_period] = 0.0
    state.beacons.append(iteration)
    return True


def run_pilot_block_wcam(state: ProtocolState, config: ProtocolConfig, scenario: ScenarioConfig,
                         seed: int, iteration: int = 0) -> tuple[ProtocolState, bool]:
    """Worst-case-offset indicator over one pilot block; beacon and offset shift if triggered."""
    k = scenario.num_tx
    if k < 2:
        raise ProtocolConfigError("WCAM needs K >= 2")
    key = state.block
    bits = _pilots(seed, key, config.n_pilot, k)
    counts = _Channel(scenario, state, seed, iteration).transmit(bits, key)
    levels = [lv.tolist() for lv in state.tree.levels]
    state.i_wcam = 0.0
    for row, s_row in zip(_truth_prefix_decisions(counts.tolist(), bits.tolist(), levels), bits.tolist()):
        state.i_wcam += _wcam_increment([d for _, d in row], s_row, k)
    state.block += 1
    return state, _fire_beacon(state, config, scenario, seed, iteration)


def run_pilot_block_ntx(state: ProtocolState, config: ProtocolConfig, scenario: ScenarioConfig,
                        seed: int, iteration: int = 0) -> ProtocolState:
    """Multiplicative N_TX,2 adaptation with erasure feedback; N_TX,1 stays at the budget."""
    if scenario.num_tx != 2:
        raise ProtocolConfigError("molecule-budget adaptation is defined for K = 2 only")
    key = state.block
    bits = _pilots(seed, key, config.n_pilot, 2)
    erasure = stream(seed, Purpose.FEEDBACK, key).random(config.n_pilot)
    state.n_tx[0] = scenario.n_tx_max
    chan = _Channel(scenario, state, seed, iteration)
    unit = chan.unit_gains(config.n_pilot, key)
    rng = stream(seed, Purpose.COUNTS, key)
    seq = np.concatenate([state.history, bits])
    L = scenario.isi_length
    levels = [lv.tolist() for lv in state.tree.levels]
    n2 = float(state.n_tx[1])
    for n in range(config.n_pilot):
        g = unit[n] if unit.ndim == 4 else unit
        window = seq[n : n + L + 1][::-1].astype(float)  # row l = slot l before current
        scale = np.array([scenario.n_tx_max, n2])
        mean = scenario.noise_mean + np.einsum("li,ijl->j", window, g * scale[:, None, None])
        counts = draw_poisson(mean, rng)
        s_row = bits[n].tolist()
        dec = [d for _, d in _truth_prefix_decisions([counts.tolist()], [s_row], levels)[0]]
        f = _ntx_factor(dec, s_row)
        if f and erasure[n] >= config.p_ef:
            n2 = min(max(n2 * (1.0 + f * config.alpha_n), 1.0), scenario.n_tx_max)
    state.n_tx[1] = n2
    chan._advance(seq)
    state.block += 1
    return state


def _run_shared_block(state, config, scenario, seed, iteration) -> bool:
    """Ablation: one pilot block drives all enabled algorithms."""
    k = scenario.num_tx
    key = state.block
    bits = _pilots(seed, key, config.n_pilot, k)
    counts = _Channel(scenario, state, seed, iteration).transmit(bits, key)
    levels = [lv.tolist() for lv in state.tree.levels]
    erasure = stream(seed, Purpose.FEEDBACK, key).random(config.n_pilot)
    state.i_wcam = 0.0
    for n, (c_row, s_row) in enumerate(zip(counts.tolist(), bits.tolist())):
        dec = _threshold_updates(levels, c_row, s_row, config.delta_tau)
        if config.enable_wcam:
            state.i_wcam += _wcam_increment(dec, s_row, k)
        if config.enable_ntx_opt:
            f = _ntx_factor(dec, s_row)
            if f and erasure[n] >= config.p_ef:
                state.n_tx[1] = min(max(state.n_tx[1] * (1.0 + f * config.alpha_n), 1.0), scenario.n_tx_max)
    state.tree = ThresholdTree(levels)
    state.block += 1
    return config.enable_wcam and _fire_beacon(state, config, scenario, seed, iteration)


def evaluate_block(state: ProtocolState, config: ProtocolConfig, scenario: ScenarioConfig, seed: int,
                   iteration: int = 0) -> np.ndarray:
    """Per-TX error rate on ``n_eval`` random data symbols with frozen parameters."""
    key = state.block
    bits = stream(seed, Purpose.DATA, key).integers(0, 2, size=(config.n_eval, scenario.num_tx), dtype=np.int8)
    counts = _Channel(scenario, state, seed, iteration).transmit(bits, key)
    dec = sic_detect_batch(counts, state.tree)
    state.block += 1
    return np.mean(dec != bits, axis=0)


# Full runs.


@dataclass
class Trajectory:
    p_e_sys: np.ndarray  # (N_iter,)
    p_e: np.ndarray  # (N_iter, K)
    beacon: np.ndarray  # (N_iter,) bool
    offsets: np.ndarray  # (N_iter, K) after the iteration's adaptation
    n_tx: np.ndarray  # (N_iter, K)
    thresholds: np.ndarray  # (N_iter, 2**K - 1)
    i_wcam: np.ndarray  # (N_iter,)

    def __len__(self) -> int:
        return len(self.p_e_sys)

    @property
    def offset_diff(self) -> np.ndarray:
        """|t_off,1 - t_off,2| per iteration (K >= 2)."""
        return np.abs(self.offsets[:, 0] - self.offsets[:, 1])

    def digest(self, it: int) -> str:
        return hashlib.sha1(self.thresholds[it].astype(np.int64).tobytes()).hexdigest()[:12]


def run_protocol(scenario: ScenarioConfig, config: ProtocolConfig, schedule: Sequence[ScheduleChange] = (),
                 seed: int = 0) -> Trajectory:
    """Run the joint adaptation loop; the result depends only on the arguments."""
    config.check_scenario(scenario)
    sched = validate_schedule(schedule, config.n_iter, scenario.num_tx)
    k = scenario.num_tx
    n = config.n_iter
    traj = Trajectory(np.zeros(n), np.zeros((n, k)), np.zeros(n, dtype=bool), np.zeros((n, k)),
                      np.zeros((n, k)), np.zeros((n, 2**k - 1), dtype=np.int64), np.zeros(n))
    state = initial_state(scenario, config, seed)
    pending = list(sched)
    for it in range(n):
        if config.shared_block:
            beacon = _run_shared_block(state, config, scenario, seed, it)
        else:
            run_pilot_block_thresholds(state, config, scenario, seed, it)
            beacon = False
            if config.enable_wcam:
                _, beacon = run_pilot_block_wcam(state, config, scenario, seed, it)
            if config.enable_ntx_opt:
                run_pilot_block_ntx(state, config, scenario, seed, it)
        p = evaluate_block(state, config, scenario, seed, it)
        traj.p_e[it] = p
        traj.p_e_sys[it] = float(p.mean())
        traj.beacon[it] = beacon
        traj.offsets[it] = state.offsets
        traj.n_tx[it] = state.n_tx
        traj.thresholds[it] = state.tree.flat()
        traj.i_wcam[it] = state.i_wcam
        while pending and pending[0].iteration == it:
            scenario = pending.pop(0).apply(scenario)
    return traj


# Seed ensembles.


@dataclass
class EnsembleStats:
    seeds: list
    mean: np.ndarray
    median: np.ndarray
    percentiles: dict  # {5: arr, 25: arr, 75: arr, 95: arr}
    beacon_rate: np.ndarray
    offset_diff_mean: Optional[np.ndarray] = None
    offset_diff_p5: Optional[np.ndarray] = None
    offset_diff_p95: Optional[np.ndarray] = None
    trajectories: list = field(default_factory=list, repr=False)

    def window_mean(self, start: int, stop: Optional[int] = None) -> float:
        return float(np.mean(self.mean[start:stop]))


def _run_one(args):
    scenario, config, schedule, seed = args
    return run_protocol(scenario, config, schedule, seed)


def run_seed_ensemble(scenario: ScenarioConfig, config: ProtocolConfig, schedule: Sequence[ScheduleChange] = (),
                      seeds: Sequence[int] = (0,), workers: int = 1, keep: bool = True) -> EnsembleStats:
    seeds = list(seeds)
    if not seeds:
        raise ProtocolConfigError("at least one seed is required")
    trajs = ordered_map(_run_one, [(scenario, config, list(schedule), s) for s in seeds], workers)
    pe = np.array([t.p_e_sys for t in trajs])
    pct = {q: np.percentile(pe, q, axis=0) for q in (5, 25, 75, 95)}
    stats = EnsembleStats(seeds, pe.mean(axis=0), np.median(pe, axis=0), pct,
                          np.array([t.beacon for t in trajs]).mean(axis=0))
    if scenario.num_tx >= 2:
        od = np.array([t.offset_diff for t in trajs])
        stats.offset_diff_mean = od.mean(axis=0)
        stats.offset_diff_p5 = np.percentile(od, 5, axis=0)
        stats.offset_diff_p95 = np.percentile(od, 95, axis=0)
    if keep:
        stats.trajectories = trajs
    return stats
