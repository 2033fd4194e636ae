import csv
import json

import pytest
import yaml

from mcnoma.experiments import cli
from mcnoma.experiments.config import CampaignConfig, ConfigError
from mcnoma.mcs import AgreementCell

# Small campaign per command, so the whole CLI surface runs in seconds.
SMALL = {
    "analytic": ({}, []),
    "sweep-threshold": ({"sweep": {"tau1_grid": [0, 100, 200, 300], "tau2_grid": [0, 50, 100]}}, []),
    "sweep-ntx": ({"sweep": {"ntx2_grid": [2.5e5, 5e5], "delta_grid": [0, 5e5]}}, []),
    "sweep-offset": ({"sweep": {"offset_points": 4}}, []),
    "compare-ma": ({"sweep": {"grid": [0, 20], "cases": ["s", "r", "e"], "random_samples": 2}}, ["--recipe", "fig7"]),
    "protocol": ({"protocol": {"n_eval": 50}}, ["--seeds", "3", "--iterations", "4", "--num-tx", "2"]),
    "validate": ({"mcs": {"n_symbols": 5000, "batch_size": 2048}}, []),
}


def _run(tmp_path, command, cfg: dict, extra=(), workers=1, name="out"):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / name
    code = cli.main([command, "--config", str(path), "--out", str(out), "--workers", str(workers), "--seed", "7",
                     *extra])
    return code, out


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("command", sorted(SMALL))
def test_command_outputs_are_deterministic(tmp_path, command):
    cfg, extra = SMALL[command]
    code_a, a = _run(tmp_path, command, cfg, extra, workers=1, name="a")
    code_b, b = _run(tmp_path, command, cfg, extra, workers=1, name="b")
    code_c, c = _run(tmp_path, command, cfg, extra, workers=2, name="c")
    assert code_a == code_b == code_c
    assert code_a in (cli.EXIT_OK, cli.EXIT_AGREEMENT)
    snap = _snapshot(a)
    assert snap and snap == _snapshot(b) == _snapshot(c)


def test_csv_files_have_sidecars_and_headers(tmp_path):
    code, out = _run(tmp_path, "sweep-offset", SMALL["sweep-offset"][0])
    assert code == 0
    with (out / "offset_heatmap.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t_off_1", "t_off_2", "p_e_sys", "tau_1", "tau_2_0", "tau_2_1"]
    assert len(rows) == 1 + 16
    side = json.loads((out / "offset_heatmap.json").read_text())
    assert side["meta"]["seed"] == 7 and side["meta"]["command"] == "sweep-offset"
    assert side["columns"] == rows[0]
    assert "workers" not in side["meta"]["config"]


def test_analytic_outputs(tmp_path):
    code, out = _run(tmp_path, "analytic", {})
    assert code == 0
    summary = json.loads((out / "analytic.json").read_text())
    assert set(summary["results"]) == {"noma", "mdma", "tdma"}
    with (out / "analytic_tx.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and {r["scheme"] for r in rows} == {"noma", "mdma", "tdma"}


def test_protocol_outputs(tmp_path):
    cfg, extra = SMALL["protocol"]
    code, out = _run(tmp_path, "protocol", cfg, extra)
    assert code == 0
    assert sorted(p.name for p in (out / "trajectories").glob("*.csv")) == [f"seed_000{i}.csv" for i in range(3)]
    with (out / "ensemble.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and "offset_diff_p95" in rows[0]
    info = json.loads((out / "protocol.json").read_text())
    assert info["n_seeds"] == 3 and len(info["beacons_per_seed"]) == 3


def test_validate_reports_control(tmp_path):
    code, out = _run(tmp_path, "validate", SMALL["validate"][0])
    info = json.loads((out / "validate.json").read_text())
    assert info["control_flagged"]
    kinds = [c["kind"] for c in info["cells"]]
    assert kinds.count("matrix") == 12 and kinds.count("control") == 1
    assert code == (cli.EXIT_OK if info["passed"] else cli.EXIT_AGREEMENT)


def test_validate_agreement_failure_exit_code(tmp_path, monkeypatch):
    def fake(scen, plan, threshold_shift=0):
        return AgreementCell(scen.num_tx, scen.isi_length, scen.snr_db, 0.1, 0.5, 0.09, 0.11, 100, False)

    monkeypatch.setattr(cli, "agreement_cell", fake)
    code, _ = _run(tmp_path, "validate", {})
    assert code == cli.EXIT_AGREEMENT


def test_enumeration_cap_exit_code(tmp_path):
    code, _ = _run(tmp_path, "analytic", {}, ["--num-tx", "6", "--isi-length", "6"])
    assert code == cli.EXIT_CAP


@pytest.mark.parametrize("command,cfg", [
    ("analytic", {"scenario": {"colour": 1}}),
    ("analytic", {"bogus": 1}),
    ("analytic", {"scenario": {"num_tx": 0}}),
    ("analytic", {"scenario": {"distances_um": "far"}}),
    ("sweep-ntx", {"sweep": {"ntx2_grid": []}}),
    ("compare-ma", {"sweep": {"grid": []}}),
    ("compare-ma", {"sweep": {"grid": [0], "cases": ["x"]}}),
    ("validate", {"mcs": {"n_symbols": 0}}),
    ("protocol", {"protocol": {"n_pilot": 0}}),
    ("protocol", {"schedule": [{"iteration": 5000, "parameter": "snr_db", "value": 0}]}),
    ("protocol", {"schedule": [{"iteration": 1, "parameter": "snr_db"}]}),
    ("analytic", {"seed": -3}),
])
def test_config_errors_exit_2(tmp_path, command, cfg):
    code, _ = _run(tmp_path, command, cfg)
    assert code == cli.EXIT_CONFIG


def test_unreadable_config_exit_2(tmp_path):
    assert cli.main(["analytic", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: [unclosed")
    assert cli.main(["analytic", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_config_unit_conversion():
    cfg = CampaignConfig.from_mapping({
        "scenario": {"num_tx": 2, "distances_um": [10, 12], "rx_radius_um": 1.2, "snr_db": "inf"},
        "schedule": [{"iteration": 3, "parameter": "distance_um", "value": 10, "tx": 1}],
    })
    scen = cfg.build_scenario()
    assert scen.distances == pytest.approx((10e-6, 12e-6))
    assert scen.rx_radius == pytest.approx(1.2e-6)
    change = cfg.build_schedule()[0]
    assert change.parameter == "distance" and change.value == pytest.approx(1e-5) and change.tx == 1
    with pytest.raises(ConfigError):
        CampaignConfig.from_mapping({"workers": 0})


def test_recipe_schedules(tmp_path):
    from mcnoma.experiments import recipes
    from mcnoma.scenario import ScenarioConfig

    scen = ScenarioConfig(num_tx=4)
    b = recipes.PROTOCOL["fig13b"].schedule(1000, scen)
    assert [c.iteration for c in b] == [250, 500, 750]
    assert [c.value for c in b] == pytest.approx([100 / 3, 200 / 3, 100])
    a = recipes.PROTOCOL["fig13a"].schedule(999, scen)
    assert [c.parameter for c in a] == ["distance", "distance"]
