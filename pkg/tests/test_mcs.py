import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcnoma.analytic_bep import build_gain_matrix
from mcnoma.ma_schemes import ThresholdTree
from mcnoma.mcs import (
    EmpiricalResult,
    PlanError,
    RunPlan,
    agreement_cell,
    default_matrix,
    empirical_mi,
    run_mcs,
    wilson_interval,
)
from mcnoma.scenario import ScenarioConfig

SMALL = dict(n_symbols=20_000, batch_size=4096)


def test_deterministic_and_worker_invariant():
    scen = ScenarioConfig(num_tx=2, snr_db=0)
    tree = ThresholdTree([[300], [150, 460]])
    a = run_mcs(scen, tree, RunPlan(seed=3, **SMALL))
    b = run_mcs(scen, tree, RunPlan(seed=3, workers=3, **SMALL))
    c = run_mcs(scen, tree, RunPlan(seed=4, **SMALL))
    assert np.array_equal(a.joint, b.joint)
    assert not np.array_equal(a.joint, c.joint)
    assert a.trials.tolist() == [20_000, 20_000]


def test_tdma_worker_invariant_and_trial_split():
    scen = ScenarioConfig(num_tx=3, snr_db=5)
    plan = RunPlan(scheme="tdma", seed=1, n_symbols=9000, batch_size=1000)
    a = run_mcs(scen, [150, 150, 150], plan)
    b = run_mcs(scen, [150, 150, 150], RunPlan(scheme="tdma", seed=1, n_symbols=9000, batch_size=1000, workers=2))
    assert np.array_equal(a.joint, b.joint)
    assert a.trials.tolist() == [3000, 3000, 3000]


def test_silent_transmitters_decode_at_chance():
    scen = ScenarioConfig(num_tx=2, n_tx=(0.0, 0.0))
    res = run_mcs(scen, ThresholdTree.constant(2, 1), RunPlan(n_symbols=50_000))
    assert res.p_hat == pytest.approx([0.5, 0.5], abs=0.01)
    assert res.joint[:, :, 1].sum() == 0


def test_single_link_closed_form():
    lam_unit = build_gain_matrix(ScenarioConfig(num_tx=1, isi_length=0)).desired[0] / 1e6
    scen = ScenarioConfig(num_tx=1, isi_length=0, n_tx=(5.0 / lam_unit,))
    res = run_mcs(scen, ThresholdTree([[1]]), RunPlan(n_symbols=200_000, seed=11))
    p = math.exp(-5) / 2
    assert res.within_3sigma(p)


def test_jitter_policies_run():
    for policy in ("per_symbol", "per_iteration", "fixed"):
        scen = ScenarioConfig(num_tx=2, offsets=(0.0, 0.5), jitter=0.05, jitter_policy=policy)
        res = run_mcs(scen, ThresholdTree([[150], [150, 150]]), RunPlan(n_symbols=5000, batch_size=2048))
        assert res.total_trials == 10_000


def test_plan_validation():
    with pytest.raises(PlanError):
        RunPlan(n_symbols=0)
    with pytest.raises(PlanError):
        RunPlan(scheme="cdma")
    with pytest.raises(PlanError):
        RunPlan(adaptive=True, min_errors=0)
    with pytest.raises(PlanError):
        RunPlan(workers=0)
    with pytest.raises(PlanError):
        RunPlan(seed=-1)
    with pytest.raises(PlanError):
        RunPlan(warmup=0).warmup_for(2)
    with pytest.raises(PlanError):
        run_mcs(ScenarioConfig(num_tx=2), ThresholdTree.constant(3, 1), RunPlan())
    with pytest.raises(PlanError):
        run_mcs(ScenarioConfig(num_tx=2), [1, 1, 1], RunPlan(scheme="mdma"))


def test_adaptive_stops_after_enough_errors():
    scen = ScenarioConfig(num_tx=2, snr_db=-10)
    plan = RunPlan(adaptive=True, min_errors=200, max_symbols=10**7, batch_size=2048)
    res = run_mcs(scen, ThresholdTree([[200], [100, 400]]), plan)
    assert np.all(res.errors >= 200)
    assert res.slots < 10**7


def test_adaptive_respects_cap():
    plan = RunPlan(adaptive=True, min_errors=10**6, max_symbols=5000, batch_size=1024)
    res = run_mcs(ScenarioConfig(num_tx=1, isi_length=0), ThresholdTree([[1]]), plan)
    assert res.total_trials == 5000


def test_wilson_interval_known_value():
    lo, hi = wilson_interval(10, 100)
    assert float(lo) == pytest.approx(0.05522, abs=1e-4)
    assert float(hi) == pytest.approx(0.17437, abs=1e-4)
    lo0, hi0 = wilson_interval(0, 50)
    assert float(lo0) == pytest.approx(0.0, abs=1e-12) and 0 < float(hi0) < 0.1


@given(k=st.integers(0, 1000), extra=st.integers(1, 1000))
def test_wilson_contains_estimate(k, extra):
    n = k + extra
    lo, hi = wilson_interval(k, n)
    assert float(lo) <= k / n <= float(hi)


def test_empirical_mi():
    perfect = EmpiricalResult("noma", np.array([0]), np.array([100]), np.array([[[50, 0], [0, 50]]]))
    assert empirical_mi(perfect)[0] == pytest.approx(1.0)
    coin = EmpiricalResult("noma", np.array([50]), np.array([100]), np.array([[[25, 25], [25, 25]]]))
    assert empirical_mi(coin)[0] == pytest.approx(0.0, abs=1e-12)
    empty = EmpiricalResult("noma", np.array([0]), np.array([0]), np.zeros((1, 2, 2), dtype=int))
    with pytest.raises(PlanError):
        empirical_mi(empty)


def test_three_sigma_band():
    res = EmpiricalResult("noma", np.array([10]), np.array([10_000]), np.zeros((1, 2, 2)))
    lo, hi = res.three_sigma(0.001)
    assert hi - 0.001 == pytest.approx(3 * math.sqrt(0.001 * 0.999 / 10_000))
    assert res.within_3sigma(0.001)


def test_agreement_cell_and_negative_control():
    scen = ScenarioConfig(num_tx=2, snr_db=10)
    plan = RunPlan(n_symbols=50_000, seed=2)
    cell = agreement_cell(scen, plan)
    assert cell.agree
    bad = agreement_cell(scen, plan, threshold_shift=10**9)
    assert not bad.agree
    assert bad.p_hat == pytest.approx(0.5, abs=0.01)


def test_default_matrix_shape():
    m = default_matrix()
    assert len(m) == 12
    assert {k for k, _, _ in m} == {2, 3, 4}
