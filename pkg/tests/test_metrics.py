"""Tests for SLATAH, PDM, SLAV and the result tables."""

import numpy as np
import pandas as pd
import pytest

from rlvm.cluster import SlotAccounting
from rlvm.config import ClusterConfig, SimulationConfig
from rlvm.metrics import (
    PER_SLOT_COLUMNS,
    SUMMARY_COLUMNS,
    EpisodeMetrics,
    median_by_method,
    pdm,
    per_slot_frame,
    slatah,
    summarize,
    summary_frame,
    summary_row,
    target_checks,
)
from rlvm.simulator import run_episode
from rlvm.trace import SynthSpec, synth_request


def slot(t, chi, upsilon, ec=10.0, migrations=(), failed=()):
    return SlotAccounting(
        slot=t,
        ec_host=ec,
        mc=0.0,
        slavc=0.0,
        ec_total=ec,
        chi=tuple(chi),
        upsilon=tuple(upsilon),
        migrations=tuple(migrations),
        failed=tuple(failed),
    )


def test_slatah_example():
    """Host 0 overloaded 1 of 2 active slots, host 1 never active: (0.5 + 0) / 2."""
    accounting = [slot(0, (1, 0), (1, 0)), slot(1, (1, 0), (0, 0))]
    assert slatah(accounting, 2) == pytest.approx(0.25)


def test_slatah_two_host_example():
    """Six slots, both hosts always active: host 0 overloaded in 3, host 1 in none."""
    accounting = [slot(t, (1, 1), (int(t < 3), 0)) for t in range(6)]
    assert slatah(accounting, 2) == pytest.approx((3 / 6 + 0 / 6) / 2)
    assert slatah(accounting, 2) == pytest.approx(0.25)


def random_episode(seed: int, method: str):
    rng = np.random.default_rng(seed)
    request = synth_request(
        SynthSpec(
            vm_count=int(rng.integers(4, 9)),
            slot_count=12,
            pattern="square-wave",
            baseline=200.0,
            amplitude=float(rng.uniform(800.0, 1700.0)),
            period=4,
            phase_jitter=True,
            seed=seed,
        )
    )
    config = SimulationConfig(cluster=ClusterConfig(count=int(rng.integers(2, 5)), capacity_mhz=4000.0))
    return run_episode(request, config, method, seed=seed)


@pytest.mark.parametrize("method", ["lr-mmt-ff", "lr-mmt-random", "lr-mmt-pabfd"])
@pytest.mark.parametrize("seed", range(8))
def test_metric_identities_on_random_episodes(seed, method):
    result = random_episode(seed, method)
    metrics = result.metrics
    assert metrics.slav == metrics.slatah * metrics.pdm
    assert 0.0 <= metrics.slatah <= 1.0
    assert (metrics.pdm == 0.0) == (metrics.migrations == 0)
    assert metrics.total_ec == pytest.approx(metrics.ec_host + metrics.mc + metrics.slavc, rel=1e-12)
    for record in result.accounting:
        assert record.ec_total == pytest.approx(record.ec_host + record.mc + record.slavc, rel=1e-12)
    assert metrics.migrations == sum(record.migration_count for record in result.accounting)


def test_slatah_empty():
    assert slatah([], 3) == 0.0
    assert slatah([slot(0, (1,), (0,))], 0) == 0.0


def test_pdm_example(make_request):
    """One migration of a 1000 MHz VM out of 1000 MHz demand over 10 slots, among 2 VMs."""
    request = make_request({"a": [1000.0] * 10, "b": [500.0] * 10}, d_vm=1000.0)
    accounting = [slot(t, (1,), (0,), migrations=[("a", 0, 1)] if t == 3 else []) for t in range(10)]
    assert pdm(accounting, request) == pytest.approx(0.1 * 1000.0 / (1000.0 * 10) / 2)


def test_pdm_no_migrations(make_request):
    request = make_request({"a": [100.0, 100.0]})
    assert pdm([slot(0, (1,), (0,)), slot(1, (1,), (0,))], request) == 0.0


def test_summarize_folds_slots(make_request):
    """Host 0 is overloaded in its only active slot and host 1 never is."""
    request = make_request({"a": [1000.0, 1000.0], "b": [500.0, 500.0]}, d_vm=1000.0)
    accounting = [
        slot(0, (1, 1), (1, 0), ec=100.0, migrations=[("a", 0, 1)]),
        slot(1, (0, 1), (0, 0), ec=50.0, failed=["b"]),
    ]
    metrics = summarize(accounting, request, host_count=2)
    assert metrics.total_ec == 150.0
    assert metrics.migrations == 1
    assert metrics.failed_placements == 1
    assert metrics.slatah == pytest.approx((1.0 + 0.0) / 2)
    assert metrics.pdm == pytest.approx(0.1 * 1000.0 / 2000.0 / 2)
    assert metrics.slav == pytest.approx(metrics.slatah * metrics.pdm)
    assert metrics.per_slot == ((0, 100.0, 1, 1), (1, 50.0, 0, 0))


def test_summarize_empty(make_request):
    assert summarize([], make_request({"a": [1.0]}), 1) == EpisodeMetrics()


def test_frames_have_fixed_columns():
    frame = per_slot_frame([slot(0, (1, 1), (0, 1))])
    assert list(frame.columns) == list(PER_SLOT_COLUMNS)
    assert frame.loc[0, "active_hosts"] == 2
    assert frame.loc[0, "overloaded_hosts"] == 1

    row = summary_row(EpisodeMetrics(total_ec=5.0, migrations=2), "lr-mmt-ff", "r1", 3)
    assert list(summary_frame([row]).columns) == list(SUMMARY_COLUMNS)


def test_median_by_method():
    rows = [
        summary_row(EpisodeMetrics(total_ec=ec, migrations=m), method, "r1", seed)
        for seed, (method, ec, m) in enumerate(
            [("b", 3.0, 1), ("b", 1.0, 3), ("b", 2.0, 2), ("a", 10.0, 0)]
        )
    ]
    medians = median_by_method(summary_frame(rows))
    assert list(medians["method"]) == ["b", "a"]
    b = medians[medians["method"] == "b"].iloc[0]
    assert b["total_ec"] == 2.0
    assert b["migrations"] == 2
    assert isinstance(medians, pd.DataFrame)


def medians_of(cells):
    rows = [
        summary_row(EpisodeMetrics(total_ec=ec, slav=slav, migrations=m), method, "spike", 0)
        for method, ec, slav, m in cells
    ]
    return median_by_method(summary_frame(rows))


def targets_by_name(frame):
    return dict(zip(frame["target"], frame["passed"]))


def test_target_checks_pass():
    medians = medians_of(
        [
            ("rl-pabfd", 101.0, 0.004, 9),
            ("lr-mmt-pabfd", 100.0, 0.010, 12),
            ("lr-mmt-ff", 110.0, 0.020, 9),
            ("lr-mmt-random", 120.0, 0.030, 30),
        ]
    )
    targets = target_checks(medians)
    assert list(targets["request"]) == ["spike"] * 3
    assert targets_by_name(targets) == {"ec_order": True, "slav": True, "migrations": True}
    assert targets.set_index("target").loc["migrations", "reference"] == 9.0


def test_target_checks_fail():
    medians = medians_of(
        [
            ("rl-pabfd", 105.0, 0.0095, 11),
            ("lr-mmt-pabfd", 100.0, 0.010, 12),
            ("lr-mmt-ff", 99.0, 0.020, 9),
            ("lr-mmt-random", 120.0, 0.030, 30),
        ]
    )
    assert targets_by_name(target_checks(medians)) == {"ec_order": False, "slav": False, "migrations": False}


def test_target_checks_need_baseline_violations():
    medians = medians_of(
        [
            ("rl-pabfd", 90.0, 0.0, 0),
            ("lr-mmt-pabfd", 100.0, 0.0, 0),
            ("lr-mmt-ff", 100.0, 0.0, 0),
            ("lr-mmt-random", 100.0, 0.0, 0),
        ]
    )
    assert not targets_by_name(target_checks(medians))["slav"]


def test_target_checks_skip_partial_requests():
    medians = medians_of([("lr-mmt-pabfd", 100.0, 0.01, 3), ("lr-mmt-ff", 110.0, 0.02, 4)])
    assert target_checks(medians).empty
