"""Named recipes: default sweep grids and runtime schedules.

Column-to-axis mapping for plotting:

* ``compare_ma_fig7.csv``: x = ``value`` (SNR in dB), y = ``mi_sys``, one line per (scheme, case).
* ``compare_ma_fig8.csv``: x = ``value`` (K), y = ``mi_sys``, one line per (scheme, case).
* ``offset_heatmap.csv``: x = ``t_off_1``, y = ``t_off_2``, colour = ``p_e_sys``.
* ``ntx_heatmap.csv``: x = ``n_tx_2``, y = ``delta_n``, colour = ``p_e_sys``.
* ``threshold_sweep.csv``: x = ``tau``, y = ``p_e``, one line per ``stage``.
* ``ensemble.csv``: x = ``iteration``, y = ``mean`` / ``median`` with bands ``p5``-``p95`` and ``p25``-``p75``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..protocol import ScheduleChange
from ..scenario import ScenarioConfig


@dataclass(frozen=True)
class CompareRecipe:
    parameter: str
    grid: tuple
    axes: str


COMPARE = {
    "fig7": CompareRecipe("snr_db", tuple(range(-50, 31, 10)), "x=value (SNR dB), y=mi_sys"),
    "fig8": CompareRecipe("num_tx", (2, 3, 4, 5, 6), "x=value (K), y=mi_sys"),
}


def _no_schedule(n_iter: int, scenario: ScenarioConfig) -> list[ScheduleChange]:
    return []


def _breakpoints(n_iter: int, changes: int) -> list[int]:
    """``changes`` equidistant interior breakpoints over ``n_iter`` iterations."""
    return [round(n_iter * (i + 1) / (changes + 1)) for i in range(changes)]


def _distance_schedule(n_iter: int, scenario: ScenarioConfig) -> list[ScheduleChange]:
    return [ScheduleChange(b, "distance", d, tx=0) for b, d in zip(_breakpoints(n_iter, 2), (10e-6, 12e-6))]


def _snr_schedule(n_iter: int, scenario: ScenarioConfig) -> list[ScheduleChange]:
    return [ScheduleChange(b, "snr_db", v) for b, v in zip(_breakpoints(n_iter, 3), (100 / 3, 200 / 3, 100.0))]


def _first_distance(scenario: ScenarioConfig) -> ScenarioConfig:
    return scenario.replace(distances=(8e-6, *scenario.distances[1:]))


def _zero_snr(scenario: ScenarioConfig) -> ScenarioConfig:
    return scenario.replace(snr_db=0.0)


@dataclass(frozen=True)
class ProtocolRecipe:
    schedule: Callable[[int, ScenarioConfig], list]
    prepare: Callable[[ScenarioConfig], ScenarioConfig] = lambda s: s


PROTOCOL = {
    "default": ProtocolRecipe(_no_schedule),
    "fig13a": ProtocolRecipe(_distance_schedule, _first_distance),
    "fig13b": ProtocolRecipe(_snr_schedule, _zero_snr),
}
