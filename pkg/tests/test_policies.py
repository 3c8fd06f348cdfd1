"""Tests for LR detection, MMT selection and the three placers."""

import numpy as np
import pytest

from rlvm.cluster import (
    HostSpec,
    MigrationSet,
    PlacementProblem,
    placement_problem,
    validate_placement_result,
)
from rlvm.config import DetectionConfig, SimulationConfig
from rlvm.policies import (
    baseline_step,
    ff_place,
    lr_overload_predict,
    make_detector,
    make_placer,
    mmt_select,
    pabfd_place,
    random_place,
    tricube_weights,
)

LR = DetectionConfig(window=6, safety=1.2)


def test_lr_all_zeros():
    predicted, overloaded = lr_overload_predict([0.0] * 6, LR)
    assert predicted == pytest.approx(0.0, abs=1e-12)
    assert not overloaded


def test_lr_exact_line():
    """On exactly linear data the weights do not matter."""
    predicted, overloaded = lr_overload_predict([0.5, 0.6, 0.7, 0.8, 0.9, 1.0], LR)
    assert predicted == pytest.approx(1.1, rel=1e-9)
    assert overloaded


def test_lr_constant():
    predicted, overloaded = lr_overload_predict([0.4] * 10, LR)
    assert predicted == pytest.approx(0.4, rel=1e-9)
    assert not overloaded


def test_lr_uses_last_window_only():
    history = [5.0, 5.0, 5.0] + [0.1 * k for k in range(1, 7)]
    predicted, _ = lr_overload_predict(history, LR)
    assert predicted == pytest.approx(0.7, rel=1e-9)


def test_lr_short_history_threshold():
    assert lr_overload_predict([0.9], LR) == (0.9, True)
    assert lr_overload_predict([0.2, 0.5], LR) == (0.5, False)


def test_lr_linear_randomized():
    rng = np.random.default_rng(3)
    for _ in range(50):
        slope, intercept = rng.uniform(-0.1, 0.1), rng.uniform(0.2, 0.8)
        history = [intercept + slope * k for k in range(10)]
        predicted, _ = lr_overload_predict(history, DetectionConfig(window=10))
        assert predicted == pytest.approx(intercept + slope * 10, abs=1e-9)


def test_tricube_weights_favor_recent():
    weights = tricube_weights(10)
    assert weights[-1] == 1.0
    assert np.all(np.diff(weights) > 0)


def mmt_state(make_request, make_state, usages, rams):
    request = make_request(usages, ram=rams)
    return make_state(request, {vm: 0 for vm in usages}, host_count=2, capacity=1000, bandwidth=1000)


def test_mmt_single_vm(make_request, make_state):
    state = mmt_state(make_request, make_state, {"a": [900]}, {"a": 100.0})
    assert mmt_select(state, 0, make_detector(LR)) == ["a"]


def test_mmt_stops_when_flag_clears(make_request, make_state):
    state = mmt_state(
        make_request,
        make_state,
        {"x": [300], "y": [300], "z": [300]},
        {"x": 2000.0, "y": 500.0, "z": 1000.0},
    )
    assert mmt_select(state, 0, make_detector(LR)) == ["y"]


def test_mmt_host_not_flagged(make_request, make_state, caplog):
    state = mmt_state(make_request, make_state, {"a": [100]}, {"a": 100.0})
    assert mmt_select(state, 0, make_detector(LR)) == []
    assert "not flagged" in caplog.text


def test_mmt_pick_order_by_migration_time(make_request, make_state):
    usages = {"a": [400], "b": [400], "c": [400]}
    rams = {"a": 300.0, "b": 100.0, "c": 200.0}
    # every pick leaves the host at or above 1/1.2 of capacity until it is empty
    state = make_state(make_request(usages, ram=rams), {vm: 0 for vm in usages}, host_count=2, capacity=450)
    picked = mmt_select(state, 0, make_detector(LR))
    assert picked == ["b", "c", "a"]


def problem(loads, capacity=1000.0, base=100.0, vms=(), occupancy=None):
    """``loads`` already include each VM's share on its source host."""
    hosts = tuple(HostSpec(j, capacity, base, 1000.0) for j in range(len(loads)))
    occupancy = occupancy if occupancy is not None else [1 if load > 0 else 0 for load in loads]
    return PlacementProblem(hosts, list(loads), list(occupancy), list(vms), 0)


def test_pabfd_single_feasible_host():
    assert pabfd_place(problem([300, 950, 500], vms=[("v", 0, 300.0)])) == {"v": 2}


def test_pabfd_prefers_active_host():
    """Waking an empty host costs its base power on top."""
    assert pabfd_place(problem([0, 200, 300], vms=[("v", 2, 300.0)])) == {"v": 1}


def test_pabfd_no_feasible_host():
    assert pabfd_place(problem([800, 900], vms=[("v", 0, 300.0)])) == {}


def test_pabfd_sequential_commitment():
    """The second VM sees the load the first one added."""
    prob = problem([500, 0, 600], vms=[("a", 2, 300.0), ("b", 2, 300.0)], occupancy=[1, 0, 2])
    assert pabfd_place(prob) == {"a": 0, "b": 1}


def test_unplaced_vm_keeps_its_share_on_the_source():
    """c cannot move onto host 0 while a, which found no host, is still there."""
    prob = problem([960, 950], vms=[("a", 0, 960.0), ("c", 1, 50.0)], occupancy=[1, 2])
    assert pabfd_place(prob) == {}
    assert ff_place(prob) == {}


def test_placed_vm_frees_its_source():
    prob = problem([400, 700], vms=[("a", 1, 500.0), ("b", 0, 400.0)], occupancy=[1, 2])
    assert ff_place(prob) == {"a": 0, "b": 1}


def brute_force_pabfd(prob):
    loads = list(prob.loads)
    occupancy = list(prob.occupancy)
    allocation = {}
    for vm_id, source, ec in prob.vms:
        best = None
        for j, host in enumerate(prob.hosts):
            if j == source or loads[j] + ec >= host.capacity_mhz:
                continue
            power = (host.base_power if occupancy[j] == 0 else 0.0) + ec
            if best is None or power < best[0]:
                best = (power, j)
        if best is not None:
            allocation[vm_id] = best[1]
            loads[best[1]] += ec
            occupancy[best[1]] += 1
            loads[source] -= ec
            occupancy[source] -= 1
    return allocation


def test_pabfd_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        host_count = int(rng.integers(1, 9))
        vm_count = int(rng.integers(0, 13))
        loads = [float(rng.choice([0.0, rng.uniform(0, 900)])) for _ in range(host_count)]
        occupancy = [1 if load > 0 else 0 for load in loads]
        vms = []
        for i in range(vm_count):
            source, ec = int(rng.integers(host_count)), float(rng.uniform(0, 500))
            loads[source] += ec
            occupancy[source] += 1
            vms.append((f"v{i}", source, ec))
        bases = rng.choice([0.0, 50.0, 100.0])
        prob = problem(loads, base=float(bases), vms=vms, occupancy=occupancy)
        assert pabfd_place(prob) == brute_force_pabfd(prob)


def test_ff_examples():
    assert ff_place(problem([950, 100, 100], vms=[("v", 2, 100.0)])) == {"v": 1}
    assert ff_place(problem([950, 990, 100], vms=[("v", 2, 100.0)])) == {}
    assert ff_place(problem([100], vms=[("v", 0, 100.0)])) == {}


def test_random_single_feasible_host():
    for seed in range(20):
        assert random_place(problem([950, 100, 100], vms=[("v", 2, 100.0)]), seed) == {"v": 1}


def test_random_uniform_over_feasible_hosts():
    prob = problem([100, 100, 990], vms=[("v", 2, 100.0)])
    counts = [0, 0]
    for seed in range(10_000):
        counts[random_place(prob, seed)["v"]] += 1
    assert abs(counts[0] - 5000) <= 300
    assert abs(counts[1] - 5000) <= 300


def test_random_depends_only_on_seed():
    prob = problem([100, 100, 100, 100, 300], vms=[(f"v{i}", 4, 50.0) for i in range(6)])
    assert random_place(prob, 3) == random_place(prob, 3)
    assert make_placer("random", 4)(prob) == make_placer("random", 4)(prob)


def test_placer_output_passes_constraints(make_request, make_state):
    rng = np.random.default_rng(5)
    for _ in range(40):
        host_count = int(rng.integers(2, 6))
        usages = {f"v{i}": [float(rng.uniform(0, 900))] for i in range(int(rng.integers(1, 10)))}
        assignment = {vm: int(rng.integers(host_count)) for vm in usages}
        state = make_state(make_request(usages), assignment, host_count, capacity=2500)
        mig = MigrationSet.from_vms(state.placement, [vm for vm in usages if rng.random() < 0.5])
        for name in ("random", "ff", "pabfd"):
            allocation = make_placer(name, 1)(placement_problem(state, mig))
            report = validate_placement_result(state.placement, mig, allocation, state)
            assert report.c2
            assert report.c3
            assert not report.moved_unselected


def test_stranded_vm_does_not_overload_its_source(make_request, make_state):
    request = make_request({"a": [960], "b": [900], "c": [50]})
    state = make_state(request, {"a": 0, "b": 1, "c": 1}, host_count=2, capacity=1000)
    mig = MigrationSet((("a", 0), ("c", 1)))
    allocation = pabfd_place(placement_problem(state, mig))
    assert allocation == {}
    report = validate_placement_result(state.placement, mig, allocation, state)
    assert report.c3


def test_baseline_step_no_flag(make_request, make_state):
    state = make_state(make_request({"a": [100], "b": [200]}), {"a": 0, "b": 1}, host_count=2)
    mig, _ = baseline_step(state, "lr-mmt-pabfd", SimulationConfig())
    assert len(mig) == 0


def test_baseline_step_one_flagged_host(make_request, make_state):
    request = make_request({"a": [500], "b": [400], "c": [100]}, ram={"a": 10.0, "b": 20.0, "c": 5.0})
    state = make_state(request, {"a": 0, "b": 0, "c": 1}, host_count=2, capacity=1000)
    config = SimulationConfig()
    mig, _ = baseline_step(state, "lr-mmt-ff", config)
    expected = mmt_select(state, 0, make_detector(config.detection))
    assert list(mig.vm_ids) == expected
    assert all(source == 0 for _, source in mig.entries)


def test_baseline_step_deterministic(make_request, make_state):
    request = make_request({"a": [500], "b": [450], "c": [100]})
    state = make_state(request, {"a": 0, "b": 0, "c": 1}, host_count=3)
    for combo in ("lr-mmt-ff", "lr-mmt-pabfd"):
        first = baseline_step(state, combo, SimulationConfig())
        second = baseline_step(state, combo, SimulationConfig())
        assert first[0] == second[0]
