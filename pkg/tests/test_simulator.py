"""Episode-level tests on the spike benchmark."""

import pytest

from rlvm.config import SimulationConfig
from rlvm.simulator import run_episode
from rlvm.trace import spike_benchmark

BASELINES = ("lr-mmt-random", "lr-mmt-ff", "lr-mmt-pabfd")


@pytest.mark.parametrize("method", BASELINES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_baselines_violate_sla_on_spikes(seed, method):
    """Detection only sees past slots, so a group's spike overloads its hosts before anyone reacts."""
    request = spike_benchmark(seed, slot_count=48)
    result = run_episode(request, SimulationConfig(), method, seed=seed)
    metrics = result.metrics
    assert any(record.overloaded_hosts for record in result.accounting)
    assert metrics.slatah > 0
    assert metrics.migrations > 0
    assert metrics.slav > 0
    assert metrics.slavc > 0


def test_first_spike_lands_before_any_migration():
    request = spike_benchmark(0, slot_count=48)
    result = run_episode(request, SimulationConfig(), "lr-mmt-pabfd")
    first_overload = next(r.slot for r in result.accounting if r.overloaded_hosts)
    first_migration = next(r.slot for r in result.accounting if r.migration_count)
    assert first_overload < first_migration


def test_spike_episode_is_reproducible():
    request = spike_benchmark(4, slot_count=24)
    first = run_episode(request, SimulationConfig(), "lr-mmt-random", seed=4)
    second = run_episode(request, SimulationConfig(), "lr-mmt-random", seed=4)
    assert first.metrics == second.metrics
    assert first.accounting == second.accounting
