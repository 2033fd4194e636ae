"""Exhaustive-search threshold optimisation and the analytic parameter sweeps.

Threshold search is separable: the objective of TX j under decoded prefix b
only involves the frames weighted by the probability of that prefix, so each
``(j, b)`` entry is a one-dimensional integer grid search once the upstream
levels are fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammainc, gammaincc

from .analytic_bep import (
    ENUMERATION_CAP,
    BepResult,
    GainMatrix,
    _check_cap,
    bep_system,
    build_gain_matrix,
    evaluate,
    frame_bits,
    prob_at_least,
    prob_below,
    tdma_gain_vector,
)
from .ma_schemes import SCHEMES, ThresholdTree
from .parallel import ordered_map
from .scenario import ScenarioConfig, even_offsets
from .streams import Purpose, stream

logger = logging.getLogger(__name__)

OFFSET_CASES = ("s", "s-o", "r", "e")
CASE_ALIASES = {
    "synchronized": "s",
    "synchronized-optimized": "s-o",
    "random": "r",
    "even": "e",
}
#: Half-width of the threshold window in standard deviations.
SIGMA_SPAN = 10.0
#: Geometric ratio of the molecule-budget search grid.
NTX_RATIO = 1.05
NTX_FLOOR = 1e-3
_MAX_CELLS = 1 << 22


class SweepError(ValueError):
    pass


# Threshold search.


def threshold_window(lam_min: float, lam_max: float) -> np.ndarray:
    """Candidate thresholds: 0 plus every integer within 10 sigma of the reachable means."""
    lo = max(0, math.floor(lam_min - SIGMA_SPAN * math.sqrt(lam_min)))
    hi = max(1, math.ceil(lam_max + SIGMA_SPAN * math.sqrt(lam_max)))
    grid = np.arange(lo, hi + 1, dtype=np.int64)
    if lo > 0:
        grid = np.concatenate(([0], grid))
    return grid


def _error_parts(taus, m1, w1, m0, w0) -> tuple[np.ndarray, np.ndarray]:
    """Miss mass (nondecreasing in tau) and false-alarm mass (nonincreasing) per threshold."""
    taus = np.asarray(taus, dtype=np.int64)
    miss = np.empty(len(taus))
    fa = np.empty(len(taus))
    step = max(1, _MAX_CELLS // max(1, len(m1) + len(m0)))
    for start in range(0, len(taus), step):
        t = taus[start : start + step][None, :].astype(float)
        pos = t >= 1
        tt = np.maximum(t, 1.0)
        miss[start : start + step] = np.sum(w1 * np.where(pos, gammaincc(tt, m1), 0.0), axis=0)
        fa[start : start + step] = np.sum(w0 * np.where(pos, gammainc(tt, m0), 1.0), axis=0)
    return miss, fa


def _split(means, sent, weights):
    keep = weights > 0
    means, sent, weights = means[keep], sent[keep], weights[keep]
    return means[sent][:, None], weights[sent][:, None], means[~sent][:, None], weights[~sent][:, None]


def error_mass(taus, means: np.ndarray, sent: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted decision-error mass for every candidate threshold.

    Frames with ``sent`` contribute ``w * P(X < tau)``, the others ``w * P(X >= tau)``.
    """
    miss, fa = _error_parts(taus, *_split(means, sent, weights))
    return miss + fa


def _first_true(pred, n: int) -> int:
    """Smallest index in [0, n) where the monotone predicate holds (n if none)."""
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


#: Relative objective perturbation tolerated when negligible frames are dropped.
PRUNE_REL = 1e-13


def _scan(grid, means, sent, weights) -> tuple[int, float]:
    parts = _split(means, sent, weights)
    if len(grid) > 64:
        coarse = np.unique(np.append(grid[::16], grid[-1]))
        miss, fa = _error_parts(coarse, *parts)
        bound = float(np.min(miss + fa)) * (1.0 + 1e-9)
        one = lambda i: _error_parts(grid[i : i + 1], *parts)
        hi = _first_true(lambda i: one(i)[0][0] > bound, len(grid))
        lo = _first_true(lambda i: one(i)[1][0] <= bound, len(grid))
        grid = grid[lo:hi]
    miss, fa = _error_parts(grid, *parts)
    obj = miss + fa
    k = int(np.argmin(obj))
    return int(grid[k]), float(obj[k])


def _merge_frames(means, sent, weights):
    """Frames with identical (sent bit, mean) act as one frame carrying the summed weight."""
    keys = np.column_stack([sent.astype(float), means])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    if len(uniq) == len(means):
        return means, sent, weights
    w = np.bincount(inv.ravel(), weights=weights, minlength=len(uniq))
    return uniq[:, 1], uniq[:, 0].astype(bool), w


def best_threshold(means: np.ndarray, sent: np.ndarray, weights: np.ndarray, lam_max: float) -> tuple[int, float]:
    """Grid argmin of :func:`error_mass`; ties resolve to the smallest threshold.

    Two exact-in-effect reductions keep this cheap:

    * frames whose total weight cannot move the objective by more than
      ``PRUNE_REL`` of its minimum are dropped (checked after the fact, with
      a second pass on a lower cut when the first guess was too coarse);
    * a coarse pass bounds the minimum, and since the miss mass only grows and
      the false-alarm mass only shrinks with tau, thresholds where either part
      alone exceeds that bound are cut off by bisection before the full scan.
    """
    means, sent, weights = _merge_frames(means, sent, weights)
    live = weights > 0
    lam_min = float(means[live].min()) if np.any(live) else 0.0
    grid = threshold_window(lam_min, lam_max)
    wmax = float(weights.max()) if len(weights) else 0.0
    if wmax <= 0.0:
        return int(grid[0]), 0.0
    cut = 1e-30 * wmax
    for _ in range(2):
        keep = weights >= cut
        dropped = math.fsum(weights[~keep])
        tau, m = _scan(grid, means, sent, np.where(keep, weights, 0.0))
        if dropped <= PRUNE_REL * m:
            return tau, m
        cut = PRUNE_REL * m / len(weights)
    return _scan(grid, means, sent, weights)


def _optimize_noma(gains: GainMatrix, noise: float, cap: int) -> ThresholdTree:
    k = gains.num_tx
    nbits = k * (gains.isi_length + 1)
    _check_cap(nbits, cap)
    s = frame_bits(nbits)
    lam = np.stack([gains.lambda_vector(j) for j in range(k)], axis=1)
    means = s @ lam + noise
    w = np.ones((s.shape[0], 1))
    levels = []
    for j in range(k):
        mj = means[:, j]
        sent = s[:, j].astype(bool)
        lam_max = float(mj.max())
        lv = np.array([best_threshold(mj, sent, w[:, b], lam_max)[0] for b in range(2**j)], dtype=np.int64)
        levels.append(lv)
        if j + 1 < k:
            lo = prob_below(lv[None, :], mj[:, None])
            hi = prob_at_least(lv[None, :], mj[:, None])
            w = np.stack([w * lo, w * hi], axis=2).reshape(s.shape[0], -1)
    return ThresholdTree(levels)


def _scalar_link_threshold(gain_vec: np.ndarray, noise: float, cap: int) -> int:
    _check_cap(len(gain_vec), cap)
    h = frame_bits(len(gain_vec))
    means = h @ gain_vec + noise
    tau, _ = best_threshold(means, h[:, 0].astype(bool), np.ones(len(h)), float(means.max()))
    return tau


def optimize_thresholds(
    scenario: ScenarioConfig,
    scheme: str = "noma",
    gains: Optional[GainMatrix] = None,
    cap: int = ENUMERATION_CAP,
):
    """BEP-optimal thresholds: a :class:`ThresholdTree` for NOMA, a (K,) array otherwise."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    gains = build_gain_matrix(scenario, scheme=scheme) if gains is None else gains
    noise = scenario.noise_mean
    if scheme == "noma":
        return _optimize_noma(gains, noise, cap)
    if scheme == "mdma":
        vecs = [gains.values[j, j, :] for j in range(gains.num_tx)]
    else:
        vecs = [tdma_gain_vector(gains, j) for j in range(gains.num_tx)]
    return np.array([_scalar_link_threshold(v, noise, cap) for v in vecs], dtype=np.int64)


def optimal_result(scenario: ScenarioConfig, scheme: str = "noma", cap: int = ENUMERATION_CAP) -> tuple[BepResult, object]:
    """Optimise thresholds, then evaluate BEP and MI with them."""
    gains = build_gain_matrix(scenario, scheme=scheme)
    taus = optimize_thresholds(scenario, scheme, gains, cap)
    return evaluate(scenario, scheme, taus, gains, cap), taus


# Threshold scan.


@dataclass
class ThresholdSweep:
    tau1: np.ndarray
    p_e1: np.ndarray
    tau1_star: int
    tau2_0: np.ndarray
    p_e2: np.ndarray
    shift: int  # tau_2^1 - tau_2^0


def threshold_sweep(
    scenario: ScenarioConfig,
    tau1_grid: Optional[Sequence[int]] = None,
    tau2_grid: Optional[Sequence[int]] = None,
) -> ThresholdSweep:
    """P_e,1 over tau_1, then P_e,2 over tau_2^0 at tau_1* with tau_2^1 = tau_2^0 + round(lambda~_1)."""
    if scenario.num_tx != 2:
        raise SweepError("threshold sweep is defined for K = 2")
    gains = build_gain_matrix(scenario)
    shift = int(round(gains.desired[0]))
    top = int(math.ceil(gains.values[:, :, :].sum(axis=(0, 2)).max() + scenario.noise_mean))
    tau1_grid = np.arange(0, top + 1) if tau1_grid is None else np.asarray(tau1_grid, dtype=np.int64)
    tau2_grid = np.arange(0, top + 1) if tau2_grid is None else np.asarray(tau2_grid, dtype=np.int64)
    if len(tau1_grid) == 0 or len(tau2_grid) == 0:
        raise SweepError("threshold grids must be non-empty")

    def pe(t1, t20):
        tree = ThresholdTree([[t1], [t20, t20 + shift]])
        return bep_system(scenario, tree, gains).p_e

    p_e1 = np.array([pe(int(t), 0)[0] for t in tau1_grid])
    tau1_star = int(tau1_grid[int(np.argmin(p_e1))])
    p_e2 = np.array([pe(tau1_star, int(t))[1] for t in tau2_grid])
    return ThresholdSweep(tau1_grid, p_e1, tau1_star, tau2_grid, p_e2, shift)


# Molecule-budget heatmap.


@dataclass
class NtxHeatmap:
    n_tx2: np.ndarray
    delta_n: np.ndarray
    p_e_sys: np.ndarray  # (len(delta_n), len(n_tx2)); NaN where the budget is exceeded
    trees: dict = field(default_factory=dict)  # (row, col) -> flat tree

    @property
    def argmin_delta(self) -> np.ndarray:
        """Best delta_n per N_TX,2 column (NaN for all-infeasible columns)."""
        out = np.full(len(self.n_tx2), np.nan)
        for c in range(len(self.n_tx2)):
            col = self.p_e_sys[:, c]
            if np.any(np.isfinite(col)):
                out[c] = self.delta_n[int(np.nanargmin(col))]
        return out

    @property
    def argmin_p_e(self) -> np.ndarray:
        return np.array(
            [np.nanmin(c) if np.any(np.isfinite(c)) else np.nan for c in self.p_e_sys.T]
        )


def _ntx_cell(args):
    scenario, n1, n2 = args
    res, tree = optimal_result(scenario.replace(n_tx=(n1, n2)))
    return res.p_e_sys, tree.flat()


def optimize_ntx_pair(
    scenario: ScenarioConfig,
    n_tx2_grid: Sequence[float],
    delta_grid: Sequence[float],
    workers: int = 1,
) -> NtxHeatmap:
    """P_e,sys with per-cell optimal thresholds over (N_TX,2, N_TX,1 - N_TX,2).

    Cells whose N_TX,1 would exceed the budget are left as NaN.
    """
    if scenario.num_tx != 2:
        raise SweepError("N_TX pair optimisation needs K = 2")
    n2 = np.asarray(n_tx2_grid, dtype=float)
    dn = np.asarray(delta_grid, dtype=float)
    if len(n2) == 0 or len(dn) == 0:
        raise SweepError("grids must be non-empty")
    if np.any(n2 < 0) or np.any(dn < 0):
        raise SweepError("molecule counts must be non-negative")
    cells = [(r, c) for r in range(len(dn)) for c in range(len(n2)) if n2[c] + dn[r] <= scenario.n_tx_max]
    out = ordered_map(_ntx_cell, [(scenario, n2[c] + dn[r], n2[c]) for r, c in cells], workers)
    pe = np.full((len(dn), len(n2)), np.nan)
    trees = {}
    for (r, c), (p, flat) in zip(cells, out):
        pe[r, c] = p
        trees[(r, c)] = flat
    return NtxHeatmap(n2, dn, pe, trees)


# Offset heatmap.


def offset_grid(symbol_period: float = 1.0, points: int = 33) -> np.ndarray:
    """``points`` equally spaced offsets over [0, T]; the endpoint T is pulled just inside [0, T)."""
    if points < 2:
        raise SweepError("offset grid needs at least two points")
    g = np.linspace(0.0, symbol_period, points)
    g[-1] = np.nextafter(symbol_period, 0.0)
    return g


@dataclass
class OffsetHeatmap:
    offsets: np.ndarray
    p_e_sys: np.ndarray  # [i1, i2] -> t_off,1 = offsets[i1], t_off,2 = offsets[i2]
    trees: np.ndarray  # [i1, i2, :] flat optimal tree


def _offset_cell(args):
    scenario, o1, o2 = args
    res, tree = optimal_result(scenario.replace(offsets=(o1, o2)))
    return res.p_e_sys, tree.flat()


def offset_heatmap(
    scenario: ScenarioConfig, offsets: Optional[Sequence[float]] = None, workers: int = 1
) -> OffsetHeatmap:
    if scenario.num_tx != 2:
        raise SweepError("offset heatmap needs K = 2")
    grid = offset_grid(scenario.symbol_period) if offsets is None else np.asarray(offsets, dtype=float)
    if len(grid) == 0:
        raise SweepError("offset grid must be non-empty")
    n = len(grid)
    out = ordered_map(_offset_cell, [(scenario, grid[a], grid[b]) for a in range(n) for b in range(n)], workers)
    pe = np.array([p for p, _ in out]).reshape(n, n)
    trees = np.array([t for _, t in out]).reshape(n, n, -1)
    return OffsetHeatmap(grid, pe, trees)


# Molecule budget search for the (s-o) case.


def ntx_search_grid(n_max: float, ratio: float = NTX_RATIO, floor: float = NTX_FLOOR) -> np.ndarray:
    """Descending geometric grid from ``n_max`` to ``floor * n_max``, plus 0."""
    if n_max <= 0:
        return np.array([0.0])
    steps = int(math.floor(math.log(1.0 / floor) / math.log(ratio)))
    return np.append(n_max / ratio ** np.arange(steps + 1), 0.0)


def optimize_budgets(scenario: ScenarioConfig, grid: Optional[np.ndarray] = None) -> tuple[tuple[float, ...], BepResult]:
    """Greedy budget allocation maximising NOMA I_sys with synchronised offsets.

    TX 0 is pinned at the budget; TX 1, 2, ... are searched one at a time in
    index order while later TXs stay silent. For K = 2 this is the exhaustive
    single-parameter search.
    """
    k = scenario.num_tx
    n_max = scenario.n_tx_max
    grid = ntx_search_grid(n_max) if grid is None else np.asarray(grid, dtype=float)
    n_tx = [n_max] + [0.0] * (k - 1)
    best: Optional[BepResult] = None
    if k == 1:
        best, _ = optimal_result(scenario.replace(n_tx=tuple(n_tx)))
    for i in range(1, k):
        best_i, best_val = None, -1.0
        for n in grid:
            trial = list(n_tx)
            trial[i] = float(n)
            res, _ = optimal_result(scenario.replace(n_tx=tuple(trial)))
            if res.mi_sys > best_val + 1e-15:
                best_i, best_val, best = float(n), res.mi_sys, res
        n_tx[i] = best_i
    return tuple(n_tx), best


# MA comparison.


@dataclass(frozen=True)
class SweepSpec:
    """One swept scenario field plus the NOMA offset cases to evaluate."""

    parameter: str
    grid: tuple
    cases: tuple = OFFSET_CASES
    random_samples: int = 200

    def __post_init__(self) -> None:
        g = tuple(float(v) for v in self.grid)
        if not g:
            raise SweepError("sweep grid must be non-empty")
        d = np.diff(g)
        if len(g) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise SweepError("sweep grid must be strictly monotone")
        cases = tuple(CASE_ALIASES.get(c, c) for c in self.cases)
        bad = [c for c in cases if c not in OFFSET_CASES]
        if bad:
            raise SweepError(f"unknown offset cases {bad}")
        if self.random_samples < 1:
            raise SweepError("random_samples must be >= 1")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "cases", cases)

    @classmethod
    def from_range(cls, parameter: str, start: float, step: float, stop: float, **kw) -> "SweepSpec":
        if step == 0:
            raise SweepError("step must be non-zero")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return cls(parameter, tuple(start + i * step for i in range(max(n, 0))), **kw)


def apply_parameter(scenario: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    if parameter == "num_tx":
        k = int(value)
        return scenario.replace(num_tx=k, distances=(scenario.distances[0],) * k, n_tx=None, offsets=None,
                                noise_ref=min(scenario.noise_ref, k - 1))
    if parameter == "isi_length":
        return scenario.replace(isi_length=int(value))
    if parameter == "n_tx_max":
        return scenario.replace(n_tx_max=float(value), n_tx=None)
    if parameter in ("snr_db", "diffusion", "rx_radius", "symbol_period"):
        return scenario.replace(**{parameter: float(value)})
    raise SweepError(f"parameter {parameter!r} cannot be swept")


def random_offsets(num_tx: int, samples: int, symbol_period: float, seed: int) -> np.ndarray:
    """(samples, K) i.i.d. uniform offsets, reproducible from the campaign seed and K."""
    return stream(seed, Purpose.SWEEP, num_tx).uniform(0.0, symbol_period, size=(samples, num_tx))


@dataclass
class CompareRow:
    parameter: str
    value: float
    scheme: str
    case: str
    mi_sys: float
    p_e_sys: float
    samples: int = 1


def _case_task(args):
    scenario, scheme, case, offsets, seed_samples = args
    if scheme != "noma":
        res, _ = optimal_result(scenario, scheme)
        return res.mi_sys, res.p_e_sys, 1
    if case == "s":
        res, _ = optimal_result(scenario.replace(offsets=None))
        return res.mi_sys, res.p_e_sys, 1
    if case == "e":
        res, _ = optimal_result(scenario.replace(offsets=even_offsets(scenario.num_tx, scenario.symbol_period)))
        return res.mi_sys, res.p_e_sys, 1
    if case == "s-o":
        _, res = optimize_budgets(scenario.replace(offsets=None))
        return res.mi_sys, res.p_e_sys, 1
    mi, pe = [], []
    for row in offsets:
        res, _ = optimal_result(scenario.replace(offsets=tuple(row)))
        mi.append(res.mi_sys)
        pe.append(res.p_e_sys)
    return math.fsum(mi) / len(mi), math.fsum(pe) / len(pe), len(mi)


def compare_ma(scenario: ScenarioConfig, spec: SweepSpec, seed: int = 0, workers: int = 1) -> list[CompareRow]:
    """I_sys for MDMA, TDMA and each NOMA offset case at every sweep point.

    MDMA and TDMA use all-equal budgets; their values do not depend on the offsets.
    """
    tasks, keys = [], []
    for value in spec.grid:
        scen = apply_parameter(scenario, spec.parameter, value).replace(n_tx=None)
        k = scen.num_tx
        offs = random_offsets(k, spec.random_samples, scen.symbol_period, seed) if "r" in spec.cases else None
        for scheme in ("mdma", "tdma"):
            tasks.append((scen, scheme, "-", None, 0))
            keys.append((value, scheme, "-"))
        for case in spec.cases:
            tasks.append((scen, "noma", case, offs, 0))
            keys.append((value, "noma", case))
    results = ordered_map(_case_task, tasks, workers)
    return [
        CompareRow(spec.parameter, v, scheme, case, mi, pe, n)
        for (v, scheme, case), (mi, pe, n) in zip(keys, results)
    ]
