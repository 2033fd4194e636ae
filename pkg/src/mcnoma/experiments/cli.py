"""Command-line campaign driver.

Every command writes into ``--out``. CSV files carry a header row and a
sidecar ``<name>.json`` holding the resolved configuration and master seed;
JSON summaries embed both directly. Outputs never depend on ``--workers``.

Exit status: 0 success, 2 configuration error, 3 enumeration-cap refusal,
4 agreement-suite failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .. import __version__
from ..analytic_bep import EnumerationCapError
from ..mcs import PlanError, agreement_cell, default_matrix
from ..optimizer import (
    SweepError,
    compare_ma,
    offset_grid,
    offset_heatmap,
    optimal_result,
    optimize_ntx_pair,
    threshold_sweep,
)
from ..protocol import ProtocolConfigError, run_seed_ensemble
from ..scenario import ScenarioError
from ..streams import child_seed
from . import recipes
from .config import CampaignConfig, ConfigError, scenario_dict

logger = logging.getLogger("mcnoma")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3
EXIT_AGREEMENT = 4

# Simulator thresholds far above any mean: every bit decodes as 0.
CONTROL_SHIFT = 10**9


# Output helpers.


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if math.isfinite(f) else ("nan" if math.isnan(f) else ("inf" if f > 0 else "-inf"))
    return x


class Writer:
    def __init__(self, out: Path, meta: dict):
        self.out = out
        self.meta = meta
        out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        body = {"meta": self.meta, **payload}
        path.write_text(json.dumps(_json_safe(body), sort_keys=True, indent=2) + "\n")
        return path

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence], extra: Optional[dict] = None) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        side = {"meta": self.meta, "columns": list(header), **(extra or {})}
        path.with_suffix(".json").write_text(json.dumps(_json_safe(side), sort_keys=True, indent=2) + "\n")
        return path


def _tau_columns(k: int) -> list[str]:
    cols = []
    for j in range(k):
        cols += [f"tau_{j + 1}_{b:0{j}b}" if j else "tau_1" for b in range(2**j)]
    return cols


# Subcommands.


def cmd_analytic(cfg: CampaignConfig, w: Writer, args) -> int:
    scen = cfg.build_scenario()
    results, rows = {}, []
    for scheme in ("noma", "mdma", "tdma"):
        res, taus = optimal_result(scen, scheme)
        flat = taus.flat() if scheme == "noma" else np.asarray(taus)
        results[scheme] = {**res.as_dict(), "thresholds": flat.tolist()}
        for j in range(scen.num_tx):
            rows.append((scheme, j + 1, res.p_e[j], res.p_j0[j], res.p_j1[j], res.mi[j]))
    w.json("analytic.json", {"scenario": scenario_dict(scen), "results": results})
    w.csv("analytic_tx.csv", ("scheme", "tx", "p_e", "p_j0", "p_j1", "mi"), rows)
    return EXIT_OK


def cmd_sweep_threshold(cfg: CampaignConfig, w: Writer, args) -> int:
    scen = cfg.build_scenario()
    if "n_tx" not in cfg.scenario and scen.num_tx == 2:
        # Unequal budgets; equal ones leave a flat P_e = 1/4 floor with no unique optimum.
        scen = scen.replace(n_tx=(scen.n_tx_max, 0.5 * scen.n_tx_max))
    t1 = cfg.sweep_list("tau1_grid", []) or None
    t2 = cfg.sweep_list("tau2_grid", []) or None
    sw = threshold_sweep(scen, None if t1 is None else np.asarray(t1, dtype=int),
                         None if t2 is None else np.asarray(t2, dtype=int))
    rows = [("tau_1", int(t), p) for t, p in zip(sw.tau1, sw.p_e1)]
    rows += [("tau_2_0", int(t), p) for t, p in zip(sw.tau2_0, sw.p_e2)]
    summary = {"tau1_star": sw.tau1_star, "tau2_shift": sw.shift,
               "tau2_0_star": int(sw.tau2_0[int(np.argmin(sw.p_e2))]), "scenario": scenario_dict(scen)}
    w.csv("threshold_sweep.csv", ("stage", "tau", "p_e"), rows, summary)
    return EXIT_OK


def cmd_sweep_ntx(cfg: CampaignConfig, w: Writer, args) -> int:
    scen = cfg.build_scenario()
    n_max = scen.n_tx_max
    default = np.linspace(0.0, n_max, 21)
    n2 = cfg.sweep_list("ntx2_grid", default)
    dn = cfg.sweep_list("delta_grid", default)
    hm = optimize_ntx_pair(scen, n2, dn, cfg.workers)
    rows = []
    for r, d in enumerate(hm.delta_n):
        for c, n in enumerate(hm.n_tx2):
            flat = hm.trees.get((r, c), [math.nan] * 3)
            rows.append((n, d, n + d, hm.p_e_sys[r, c], *flat))
    summary = {"argmin_delta_n": hm.argmin_delta.tolist(), "min_p_e_sys": hm.argmin_p_e.tolist(),
               "n_tx_2": hm.n_tx2.tolist(), "scenario": scenario_dict(scen)}
    w.csv("ntx_heatmap.csv", ("n_tx_2", "delta_n", "n_tx_1", "p_e_sys", *_tau_columns(2)), rows, summary)
    return EXIT_OK


def cmd_sweep_offset(cfg: CampaignConfig, w: Writer, args) -> int:
    scen = cfg.build_scenario()
    points = int(cfg.sweep.get("offset_points", 33))
    hm = offset_heatmap(scen, offset_grid(scen.symbol_period, points), cfg.workers)
    n = len(hm.offsets)
    rows = [(hm.offsets[a], hm.offsets[b], hm.p_e_sys[a, b], *hm.trees[a, b]) for a in range(n) for b in range(n)]
    w.csv("offset_heatmap.csv", ("t_off_1", "t_off_2", "p_e_sys", *_tau_columns(2)), rows,
          {"scenario": scenario_dict(scen)})
    return EXIT_OK


def cmd_compare_ma(cfg: CampaignConfig, w: Writer, args) -> int:
    recipe = recipes.COMPARE[args.recipe]
    scen = cfg.build_scenario()
    spec = cfg.sweep_spec(recipe.parameter, recipe.grid)
    rows = compare_ma(scen, spec, cfg.seed, cfg.workers)
    w.csv(f"compare_ma_{args.recipe}.csv", ("parameter", "value", "scheme", "case", "mi_sys", "p_e_sys", "samples"),
          [(r.parameter, r.value, r.scheme, r.case, r.mi_sys, r.p_e_sys, r.samples) for r in rows],
          {"recipe": args.recipe, "scenario": scenario_dict(scen), "axes": recipe.axes})
    return EXIT_OK


def cmd_protocol(cfg: CampaignConfig, w: Writer, args) -> int:
    recipe = recipes.PROTOCOL[args.recipe]
    scen = cfg.build_scenario(default_num_tx=4)
    pcfg, n_seeds = cfg.build_protocol()
    schedule = cfg.build_schedule() if cfg.schedule else recipe.schedule(pcfg.n_iter, scen)
    scen = recipe.prepare(scen)
    seeds = [child_seed(cfg.seed, i) for i in range(n_seeds)]
    stats = run_seed_ensemble(scen, pcfg, schedule, seeds, cfg.workers)
    k = scen.num_tx
    header = ("iteration", "p_e_sys", *[f"p_e_{j + 1}" for j in range(k)], "beacon",
              *[f"t_off_{j + 1}" for j in range(k)], "n_tx_2", "i_wcam", "tau_digest")
    for i, (s, tr) in enumerate(zip(seeds, stats.trajectories)):
        n_tx_2 = tr.n_tx[:, 1] if k > 1 else np.full(len(tr), math.nan)
        rows = ((it, tr.p_e_sys[it], *tr.p_e[it], tr.beacon[it], *tr.offsets[it], n_tx_2[it], tr.i_wcam[it],
                 tr.digest(it)) for it in range(len(tr)))
        w.csv(f"trajectories/seed_{i:04d}.csv", header, rows, {"run_index": i, "run_seed": s})
    cols = ["iteration", "mean", "median", "p5", "p25", "p75", "p95", "beacon_rate"]
    series = [stats.mean, stats.median, *(stats.percentiles[q] for q in (5, 25, 75, 95)), stats.beacon_rate]
    if stats.offset_diff_mean is not None:
        cols += ["offset_diff_mean", "offset_diff_p5", "offset_diff_p95"]
        series += [stats.offset_diff_mean, stats.offset_diff_p5, stats.offset_diff_p95]
    n_iter = pcfg.n_iter
    w.csv("ensemble.csv", cols, ([it, *(s[it] for s in series)] for it in range(n_iter)),
          {"recipe": args.recipe, "run_seeds": seeds})
    tail = max(1, min(100, n_iter))
    w.json("protocol.json", {
        "recipe": args.recipe,
        "scenario": scenario_dict(scen),
        "protocol": _json_safe(pcfg.__dict__),
        "schedule": [c.__dict__ for c in schedule],
        "n_seeds": n_seeds,
        "final_mean_p_e_sys": float(np.mean(stats.mean[-tail:])) if n_iter else None,
        "beacons_per_seed": [int(t.beacon.sum()) for t in stats.trajectories],
    })
    return EXIT_OK


def cmd_validate(cfg: CampaignConfig, w: Writer, args) -> int:
    plan = cfg.run_plan(cfg.seed, cfg.workers, n_symbols=200_000)
    base = cfg.build_scenario()
    cells = []
    for k, L, snr in default_matrix():
        scen = base.replace(num_tx=k, isi_length=L, snr_db=snr, distances=(base.distances[0],) * k,
                            n_tx=None, offsets=None, noise_ref=0)
        cells.append(("matrix", agreement_cell(scen, plan)))
    control = agreement_cell(base.replace(num_tx=2, distances=(base.distances[0],) * 2, n_tx=None, offsets=None,
                                          noise_ref=0), plan, threshold_shift=CONTROL_SHIFT)
    cells.append(("control", control))
    matrix = [c for kind, c in cells if kind == "matrix"]
    frac = sum(c.agree for c in matrix) / len(matrix)
    passed = frac >= 0.95 and not control.agree
    rows = [(kind, c.num_tx, c.isi_length, c.snr_db, c.p_analytic, c.p_hat, c.lo, c.hi, c.trials, c.agree)
            for kind, c in cells]
    w.csv("validate.csv", ("kind", "num_tx", "isi_length", "snr_db", "p_analytic", "p_hat", "lo", "hi",
                           "trials", "agree"), rows)
    w.json("validate.json", {"agree_fraction": frac, "control_flagged": not control.agree, "passed": passed,
                             "cells": [dict(kind=kind, **c.as_dict()) for kind, c in cells]})
    for kind, c in cells:
        logger.info("%s K=%d L=%d SNR=%s p=%.4g p_hat=%.4g %s", kind, c.num_tx, c.isi_length, c.snr_db,
                    c.p_analytic, c.p_hat, "agree" if c.agree else "DISAGREE")
    return EXIT_OK if passed else EXIT_AGREEMENT


COMMANDS = {
    "analytic": (cmd_analytic, "BEP and mutual information for NOMA, MDMA and TDMA with optimal thresholds"),
    "sweep-threshold": (cmd_sweep_threshold, "P_e of each TX over its threshold (K = 2)"),
    "sweep-ntx": (cmd_sweep_ntx, "P_e,sys heatmap over N_TX,2 and N_TX,1 - N_TX,2 (K = 2)"),
    "sweep-offset": (cmd_sweep_offset, "P_e,sys heatmap over both TX offsets (K = 2)"),
    "compare-ma": (cmd_compare_ma, "I_sys of MDMA, TDMA and NOMA offset cases over a sweep"),
    "protocol": (cmd_protocol, "pilot-driven adaptation over an ensemble of seeds"),
    "validate": (cmd_validate, "analytic versus Monte-Carlo agreement suite with a negative control"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML campaign file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--num-tx", type=int, help="override scenario.num_tx")
    common.add_argument("--isi-length", type=int, help="override scenario.isi_length")
    common.add_argument("--snr-db", type=float, help="override scenario.snr_db")
    common.add_argument("--distance-um", type=float, help="override every TX distance (micrometres)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="mcnoma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if name == "compare-ma":
            p.add_argument("--recipe", choices=sorted(recipes.COMPARE), default="fig7")
        if name == "protocol":
            p.add_argument("--recipe", choices=sorted(recipes.PROTOCOL), default="default")
            p.add_argument("--seeds", type=int, help="number of seeds (overrides protocol.n_seeds)")
            p.add_argument("--iterations", type=int, help="override protocol.n_iter")
    return parser


def _apply_overrides(cfg: CampaignConfig, args) -> CampaignConfig:
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, out=args.out)
    scen = dict(cfg.scenario)
    for flag, key in (("num_tx", "num_tx"), ("isi_length", "isi_length"), ("snr_db", "snr_db"),
                      ("distance_um", "distances_um")):
        val = getattr(args, flag)
        if val is not None:
            scen[key] = val
    cfg.scenario = scen
    proto = dict(cfg.protocol)
    if getattr(args, "seeds", None) is not None:
        proto["n_seeds"] = args.seeds
    if getattr(args, "iterations", None) is not None:
        proto["n_iter"] = args.iterations
    cfg.protocol = proto
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    fn, _ = COMMANDS[args.command]
    try:
        cfg = _apply_overrides(CampaignConfig.load(args.config), args)
        meta = {"command": args.command, "seed": cfg.seed, "config": cfg.resolved(), "version": __version__}
        if hasattr(args, "recipe"):
            meta["recipe"] = args.recipe
        return fn(cfg, Writer(Path(cfg.out), meta), args)
    except EnumerationCapError as exc:
        logger.error("%s", exc)
        return EXIT_CAP
    except (ConfigError, ScenarioError, SweepError, PlanError, ProtocolConfigError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG

