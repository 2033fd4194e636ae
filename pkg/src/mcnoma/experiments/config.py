"""Campaign configuration: YAML schema, defaults and conversion to SI objects.

Schema (every key optional; distances and the RX radius are in micrometres,
times in seconds, diffusion in m^2/s)::

    seed: 0
    workers: 1
    out: results
    scenario:
      num_tx: 2            # protocol runs default to 4
      distances_um: 10     # scalar or one value per TX
      rx_radius_um: 1
      diffusion: 1.0e-9
      symbol_period: 1.0
      isi_length: 1
      snr_db: inf
      n_tx_max: 1.0e6
      n_tx: null           # per-TX emitted molecules, default = budget
      offsets: null        # per-TX offsets in seconds, default 0
      jitter: 0.0
      jitter_policy: per_symbol
    protocol:              # ProtocolConfig fields plus n_seeds
      n_seeds: 100
      n_pilot: 100
      ...
    sweep:
      parameter: snr_db
      grid: [-50, -40, ...]   # or start / step / stop
      cases: [s, s-o, r, e]
      random_samples: 200
      offset_points: 33
      ntx2_grid: [...]
      delta_grid: [...]
    schedule:
      - {iteration: 250, parameter: snr_db, value: 33.3}
      - {iteration: 333, parameter: distance_um, value: 8, tx: 0}
    mcs:
      n_symbols: 200000
      adaptive: false
      min_errors: 100
      max_symbols: 100000000
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..mcs import PlanError, RunPlan
from ..optimizer import SweepError, SweepSpec
from ..protocol import ProtocolConfig, ProtocolConfigError, ScheduleChange
from ..scenario import ScenarioConfig, ScenarioError

UM = 1e-6


class ConfigError(ValueError):
    """Invalid campaign configuration; the message names the offending field."""


def _num(value, where: str) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity", ".inf"):
        return math.inf
    if isinstance(value, str) and value.strip().lower() in ("-inf", "-infinity", "-.inf"):
        return -math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None


def _tuple(value, where: str, scale: float = 1.0) -> Optional[tuple]:
    if value is None:
        return None
    seq = value if isinstance(value, (list, tuple)) else [value]
    return tuple(_num(v, where) * scale for v in seq)


def _only(block: dict, allowed, where: str) -> None:
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


SCENARIO_KEYS = ("num_tx", "distances_um", "rx_radius_um", "diffusion", "symbol_period", "isi_length",
                 "snr_db", "n_tx_max", "n_tx", "offsets", "jitter", "jitter_policy", "noise_ref")
PROTOCOL_KEYS = tuple(f.name for f in dataclasses.fields(ProtocolConfig)) + ("n_seeds",)
SWEEP_KEYS = ("parameter", "grid", "start", "step", "stop", "cases", "random_samples", "offset_points",
              "ntx2_grid", "delta_grid", "tau1_grid", "tau2_grid")
MCS_KEYS = ("scheme", "n_symbols", "adaptive", "min_errors", "max_symbols", "warmup", "batch_size")
TOP_KEYS = ("seed", "workers", "out", "scenario", "protocol", "sweep", "schedule", "mcs")


@dataclass
class CampaignConfig:
    """Raw (unit-bearing) campaign blocks plus run-level settings."""

    scenario: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    schedule: list = field(default_factory=list)
    mcs: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    out: str = "results"

    @classmethod
    def from_mapping(cls, data: Optional[dict]) -> "CampaignConfig":
        data = dict(data or {})
        _only(data, TOP_KEYS, "config")
        blocks = {}
        for name, keys in (("scenario", SCENARIO_KEYS), ("protocol", PROTOCOL_KEYS),
                           ("sweep", SWEEP_KEYS), ("mcs", MCS_KEYS)):
            block = data.get(name) or {}
            if not isinstance(block, dict):
                raise ConfigError(f"{name}: expected a mapping")
            _only(block, keys, name)
            blocks[name] = dict(block)
        schedule = data.get("schedule") or []
        if not isinstance(schedule, list):
            raise ConfigError("schedule: expected a list of changes")
        cfg = cls(schedule=list(schedule), **blocks)
        if "seed" in data:
            cfg.seed = data["seed"]
        if "workers" in data:
            cfg.workers = data["workers"]
        if "out" in data:
            cfg.out = str(data["out"])
        cfg.check_run_fields()
        return cfg

    @classmethod
    def load(cls, path: Optional[str]) -> "CampaignConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_mapping(yaml.safe_load(text))
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None

    def check_run_fields(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {self.seed!r}")
        if isinstance(self.workers, bool) or not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers: expected an integer >= 1, got {self.workers!r}")

    def with_overrides(self, **kw) -> "CampaignConfig":
        cfg = dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})
        cfg.check_run_fields()
        return cfg

    # Resolved objects.

    def build_scenario(self, default_num_tx: int = 2) -> ScenarioConfig:
        s = self.scenario
        kw: dict[str, Any] = {"num_tx": s.get("num_tx", default_num_tx)}
        if "distances_um" in s:
            kw["distances"] = _tuple(s["distances_um"], "scenario.distances_um", UM)
        if "rx_radius_um" in s:
            kw["rx_radius"] = _num(s["rx_radius_um"], "scenario.rx_radius_um") * UM
        for key in ("diffusion", "symbol_period", "snr_db", "n_tx_max", "jitter"):
            if key in s:
                kw[key] = _num(s[key], f"scenario.{key}")
        for key in ("isi_length", "noise_ref"):
            if key in s:
                kw[key] = s[key]
        for key in ("n_tx", "offsets"):
            if key in s:
                kw[key] = _tuple(s[key], f"scenario.{key}")
        if "jitter_policy" in s:
            kw["jitter_policy"] = s["jitter_policy"]
        try:
            return ScenarioConfig(**kw)
        except (ScenarioError, ValueError, TypeError) as exc:
            raise ConfigError(f"scenario: {exc}") from None

    def build_protocol(self) -> tuple[ProtocolConfig, int]:
        p = dict(self.protocol)
        n_seeds = p.pop("n_seeds", 100)
        if isinstance(n_seeds, bool) or not isinstance(n_seeds, int) or n_seeds < 1:
            raise ConfigError(f"protocol.n_seeds: expected an integer >= 1, got {n_seeds!r}")
        try:
            return ProtocolConfig(**p), n_seeds
        except (ProtocolConfigError, TypeError) as exc:
            raise ConfigError(f"protocol: {exc}") from None

    def build_schedule(self) -> list[ScheduleChange]:
        out = []
        for n, item in enumerate(self.schedule):
            where = f"schedule[{n}]"
            if not isinstance(item, dict):
                raise ConfigError(f"{where}: expected a mapping")
            _only(item, ("iteration", "parameter", "value", "tx"), where)
            try:
                param = item["parameter"]
                value = _num(item["value"], f"{where}.value")
                if param == "distance_um":
                    param, value = "distance", value * UM
                out.append(ScheduleChange(item["iteration"], param, value, item.get("tx", 0)))
            except KeyError as exc:
                raise ConfigError(f"{where}: missing field {exc.args[0]}") from None
            except ProtocolConfigError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        return out

    def sweep_spec(self, parameter: str, grid) -> SweepSpec:
        s = self.sweep
        parameter = s.get("parameter", parameter)
        if "grid" in s:
            grid = s["grid"]
        elif {"start", "step", "stop"} <= set(s):
            try:
                return SweepSpec.from_range(parameter, _num(s["start"], "sweep.start"), _num(s["step"], "sweep.step"),
                                            _num(s["stop"], "sweep.stop"), **self._case_kw())
            except SweepError as exc:
                raise ConfigError(f"sweep: {exc}") from None
        try:
            return SweepSpec(parameter, tuple(_num(g, "sweep.grid") for g in grid), **self._case_kw())
        except SweepError as exc:
            raise ConfigError(f"sweep: {exc}") from None

    def _case_kw(self) -> dict:
        kw = {}
        if "cases" in self.sweep:
            kw["cases"] = tuple(self.sweep["cases"])
        if "random_samples" in self.sweep:
            kw["random_samples"] = self.sweep["random_samples"]
        return kw

    def sweep_list(self, key: str, default) -> list:
        if key not in self.sweep:
            return list(default)
        vals = self.sweep[key]
        if not isinstance(vals, (list, tuple)) or not vals:
            raise ConfigError(f"sweep.{key}: expected a non-empty list")
        return [_num(v, f"sweep.{key}") for v in vals]

    def run_plan(self, seed: int, workers: int, **defaults) -> RunPlan:
        kw = {**defaults, **self.mcs}
        try:
            return RunPlan(seed=seed, workers=workers, **kw)
        except (PlanError, TypeError) as exc:
            raise ConfigError(f"mcs: {exc}") from None

    def resolved(self) -> dict:
        """JSON-safe snapshot of every block, embedded in all outputs."""
        return _jsonable({
            "seed": self.seed, "scenario": self.scenario, "protocol": self.protocol, "sweep": self.sweep,
            "schedule": self.schedule, "mcs": self.mcs,
        })


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def scenario_dict(s: ScenarioConfig) -> dict:
    """SI-unit scenario snapshot for output headers."""
    return _jsonable(dataclasses.asdict(s))
